"""Spatio-temporal Hawkes processes over soft decision-tree partitions of the plane."""
from .domain import Event, EventSequence, HistoryWindow, SpatialRegion, history
from .intensity import (HawkesParams, Model, Poisson, SelfCorrecting, hawkes_model, intensities, intensity_at,
                        raw_subregion_intensities, single_region_tree)
from .learn import Objective, TrainingError, init_model, log_likelihood, train, train_parallel_horizons
from .quadrature import GridSpec, QuadratureSpec, compensator, expected_count_grid, predict_next
from .simulate import SimConfig, thin_simulate
from .tree import DecisionTree, scores

__version__ = "0.1.0"

__all__ = [
    "DecisionTree", "Event", "EventSequence", "GridSpec", "HawkesParams", "HistoryWindow", "Model", "Objective",
    "Poisson", "QuadratureSpec", "SelfCorrecting", "SimConfig", "SpatialRegion", "TrainingError", "compensator",
    "expected_count_grid", "hawkes_model", "history", "init_model", "intensities", "intensity_at", "log_likelihood",
    "predict_next", "raw_subregion_intensities", "scores", "single_region_tree", "thin_simulate", "train",
    "train_parallel_horizons",
]
