"""Command-line interface.

    soft-tree-hawkes {simulate,train,predict-counts,predict-next,evaluate,sweep}
        [--config PATH] [--seed N] [--threads N] [--out DIR]

Every command is a pure function of (config, input files, seed). Failures
print one JSON object on stderr and exit with a code from ``EXIT_CODES``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from .config import config_hash, load_config, resolve
from .domain import EventSequence, SpatialRegion
from .evaluate import (ExperimentConfig, MetricReport, baseline_next_event_losses, count_scores,
                       next_event_losses, run_sweep, write_reports, _concat)
from .ingest import ConfigError, NormalizationSpec, filter_years, normalize, parse_csv, read_events, split, write_events
from .intensity import Model, Poisson, SelfCorrecting, hawkes_model
from .learn import (Objective, TrainingError, init_model, log_likelihood, select_hyperparameters, train,
                    train_parallel_horizons)
from .quadrature import GridSpec, QuadratureSpec, expected_count_grid, predict_next
from .simulate import SimConfig, ThinningError, thin_simulate
from .tree import DecisionTree

log = logging.getLogger("soft_tree_hawkes")

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "config": 3,
    "missing_file": 4,
    "checkpoint_version": 5,
    "checkpoint": 6,
    "data": 7,
    "training": 8,
    "simulation": 9,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---- shared helpers ---------------------------------------------------------

def _region(cfg: dict) -> SpatialRegion:
    return SpatialRegion(*cfg["region"])


def build_model(mcfg: dict) -> Model:
    """Model with explicit parameters from the ``model`` config section.

    The depth follows from the number of tree nodes; ``model.depth`` is the
    depth used when a model is initialized for training.
    """
    nu = float(mcfg["nu"])
    nodes = np.asarray(mcfg.get("tree", []), dtype=float).reshape(-1, 3)
    depth = int(round(math.log2(len(nodes) + 1)))
    if 2 ** depth - 1 != len(nodes):
        raise ConfigError(f"model.tree has {len(nodes)} nodes; a full tree needs 2^depth - 1")
    tree = DecisionTree(depth, nodes[:, :2], nodes[:, 2])
    kind = mcfg["kind"]
    try:
        if kind == "poisson":
            return Model(tree, Poisson(float(mcfg["rate"])), nu)
        if kind == "self_correcting":
            return Model(tree, SelfCorrecting(float(mcfg["sc_mu"]), float(mcfg["sc_alpha"])), nu)
        return hawkes_model(tree, mcfg["mu"], mcfg["gamma"], mcfg["Gamma"], nu)
    except KeyError as exc:
        raise ConfigError(f"model section lacks {exc.args[0]!r} for kind {kind}") from exc
    except ValueError as exc:
        raise ConfigError(f"model section: {exc}") from exc


def load_data(cfg: dict) -> tuple[EventSequence, NormalizationSpec | None]:
    data = cfg["data"]
    if "events" in data:
        seq = read_events(resolve(cfg, data["events"]), _region(cfg))
        norm = NormalizationSpec.from_dict(data["normalization"]) if "normalization" in data else None
        return seq, norm
    if "catalog" in data:
        if "normalization" not in data:
            raise ConfigError("data.catalog needs data.normalization")
        parsed = parse_csv(resolve(cfg, data["catalog"]), data.get("columns"), data.get("time_format"))
        for err in parsed.errors:
            log.warning("catalog line %d: %s", err.line, err.message)
        records = parsed.records
        if "years" in data:
            records = filter_years(records, *data["years"])
        spec = NormalizationSpec.from_dict(data["normalization"])
        result = normalize(records, spec)
        return result.sequence, replace(spec, origin=result.origin)
    raise ConfigError("config needs data.events or data.catalog")


def _quad(cfg: dict, seq: EventSequence | None = None) -> QuadratureSpec:
    q = dict(cfg["quadrature"])
    if "t_max" not in q:
        # ten mean inter-event gaps of the reference data
        gap = float(np.mean(np.diff(seq.times))) if seq is not None and len(seq) > 1 else 1.0
        q["t_max"] = 10.0 * gap if gap > 0 else 10.0
    return QuadratureSpec(**q)


def _objectives(cfg: dict) -> list[Objective]:
    o = dict(cfg["objective"])
    o.pop("horizons", None)
    alphas = o.pop("alpha")
    return [Objective(alpha=float(a), **o) for a in (alphas if isinstance(alphas, list) else [alphas])]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(cfg: dict, args) -> ckpt.Checkpoint:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return ckpt.load(args.checkpoint)


def _fit(cfg: dict, train_seq: EventSequence, val_seq: EventSequence, seed: int):
    mcfg = cfg["model"]
    if mcfg["kind"] != "hawkes":
        raise ConfigError("only hawkes models are trainable")
    rng = np.random.default_rng(seed)
    if mcfg.get("init") == "params":
        model = build_model(mcfg)
    else:
        model = init_model(int(mcfg["depth"]), train_seq, float(mcfg["nu"]), rng)
    objectives = _objectives(cfg)
    horizons = cfg["objective"].get("horizons") or []
    if len(objectives) > 1:
        if horizons:
            raise ConfigError("alpha selection is only supported for the plain objective")
        _, res = select_hyperparameters([(model, o) for o in objectives], train_seq, val_seq, seed)
        return res, objectives
    obj = objectives[0]
    if len(horizons) > 1:
        res = train_parallel_horizons(model, train_seq, val_seq, [float(h) for h in horizons], obj, rng)
    else:
        res = train(model, train_seq, val_seq, obj, rng, horizon=float(horizons[0]) if horizons else None)
    return res, objectives


def _write_trace(res, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_ll,val_ll,grad_norm\n")
        for r in res.trace:
            fh.write(f"{r.epoch},{r.train_ll!r},{r.val_ll!r},{r.grad_norm!r}\n")


# ---- commands ----------------------------------------------------------------

def cmd_simulate(cfg: dict, args) -> None:
    if "simulate" not in cfg:
        raise ConfigError("config needs a simulate section")
    model = build_model(cfg["model"])
    sc = cfg["simulate"]
    sim = SimConfig(_region(cfg), float(sc["t_end"]), seed=cfg["seed"], resolution=sc.get("resolution", 128),
                    max_events=sc.get("max_events"))
    seq = thin_simulate(model, sim)
    out = _out(args)
    write_events(seq, out / "events.csv")
    ckpt.save(ckpt.Checkpoint(model, sim.region, quadrature=_quad(cfg, seq),
                              training={"source": "simulate", "config_hash": config_hash(cfg)}),
              out / "model.json")
    log.info("simulated %d events", len(seq))


def cmd_train(cfg: dict, args) -> None:
    seq, norm = load_data(cfg)
    train_seq, val_seq, _ = split(seq, *cfg["data"]["split"])
    res, objectives = _fit(cfg, train_seq, val_seq, cfg["seed"])
    out = _out(args)
    meta = {"config_hash": config_hash(cfg), "seed": cfg["seed"], "best_val_ll": res.best_val_ll,
            "best_epoch": res.best_epoch, "iterations": res.iterations, "n_train": len(train_seq)}
    ckpt.save(ckpt.Checkpoint(res.model, seq.region, norm, _quad(cfg, train_seq), meta), out / "checkpoint.json")
    _write_trace(res, out / "trace.csv")
    log.info("best validation log-likelihood %.6f at epoch %d", res.best_val_ll, res.best_epoch)


def _history(cfg: dict, args, region: SpatialRegion) -> EventSequence:
    path = args.events or cfg["data"].get("events")
    if path is None:
        raise ConfigError("need --events or data.events for the history")
    return read_events(path if args.events else resolve(cfg, path), region)


def cmd_predict_counts(cfg: dict, args) -> None:
    ck = _load_checkpoint(cfg, args)
    hist = _history(cfg, args, ck.region)
    horizon = args.horizon or cfg.get("predict", {}).get("horizon")
    if horizon is None:
        raise ConfigError("need --horizon or predict.horizon")
    t_start = args.t_start if args.t_start is not None else cfg.get("predict", {}).get("t_start", hist.t_end)
    grid = GridSpec(ck.region, *(args.grid or (cfg["grid"]["n_x"], cfg["grid"]["n_y"])))
    quad = ck.quadrature or _quad(cfg, hist)
    counts = expected_count_grid(ck.model, float(t_start), float(horizon), hist, grid, quad)
    counts.to_csv(_out(args) / "counts.csv")


def cmd_predict_next(cfg: dict, args) -> None:
    ck = _load_checkpoint(cfg, args)
    hist = _history(cfg, args, ck.region)
    if len(hist) == 0:
        raise ValueError("history is empty")
    quad = ck.quadrature or _quad(cfg, hist)
    t_prev = float(hist.times[-1])
    p = predict_next(ck.model, t_prev, hist, quad, region=ck.region)
    line = {"t": p.t, "x": p.x, "y": p.y, "captured_mass": p.mass}
    norm = ck.normalization
    if norm is not None and norm.origin is not None:
        lat, lon = norm.to_latlon(p.x, p.y)
        line.update(time=norm.to_datetime(p.t, norm.origin).isoformat(), lat=float(lat), lon=float(lon))
    else:
        line.update(time=None, lat=None, lon=None)
    text = json.dumps(line)
    print(text)
    if args.out:
        (_out(args) / "prediction.json").write_text(text + "\n")


def cmd_evaluate(cfg: dict, args) -> None:
    seq, _ = load_data(cfg)
    train_seq, val_seq, test_seq = split(seq, *cfg["data"]["split"])
    if args.checkpoint:
        ck = ckpt.load(args.checkpoint)
        model, quad = ck.model, ck.quadrature or _quad(cfg, train_seq)
    else:
        res, _ = _fit(cfg, train_seq, val_seq, cfg["seed"])
        model, quad = res.model, _quad(cfg, train_seq)
    context = _concat(train_seq, val_seq)
    nll = -log_likelihood(model, test_seq, quad, context=context) / max(len(test_seq), 1)
    mse_t = mse_l = math.nan
    extra = {}
    if cfg["evaluate"]["next_event"]:
        mse_t, mse_l, low = next_event_losses(model, test_seq, quad, context=context)
        extra = {"model": {"mse_t": mse_t, "mse_l": mse_l, "low_mass": low},
                 **{k: {"mse_t": a, "mse_l": b} for k, (a, b) in
                    baseline_next_event_losses(train_seq, test_seq, context).items()}}
    grid = GridSpec(seq.region, cfg["grid"]["n_x"], cfg["grid"]["n_y"])
    rows = []
    for h in cfg["evaluate"]["horizons"]:
        sc = count_scores(model, seq, (train_seq.t_start, train_seq.t_end), (test_seq.t_start, test_seq.t_end),
                          float(h), grid, quad)
        rows.append(MetricReport("evaluate", None, cfg["seed"], h, sc.rmse, sc.baseline_rmse, sc.avg_cell_count,
                                 sc.avg_frame_count, nll, mse_t, mse_l))
    out = _out(args)
    write_reports(rows, out / "report.csv", out / "report.json", out / "report_long.csv")
    if extra:
        (out / "next_event.json").write_text(json.dumps(extra, indent=2) + "\n")


def _sweep_value(variable: str, v):
    if variable == "mode":
        if v not in ("parallel", "separate"):
            raise ConfigError(f"mode sweep values are 'parallel' or 'separate', not {v!r}")
        return v
    if variable == "depth":
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"depth values must be nonnegative integers, not {v!r}")
        return v
    if not isinstance(v, (int, float)) or v <= 0:
        raise ConfigError(f"{variable} values must be positive numbers, not {v!r}")
    return v


def cmd_sweep(cfg: dict, args) -> None:
    sw = cfg["sweep"] if "sweep" in cfg else None
    if sw is None:
        raise ConfigError("config needs a sweep section")
    values = [_sweep_value(sw["variable"], v) for v in sw["values"]]
    seeds = sw.get("seeds", [cfg["seed"]])
    if "simulate" in cfg:
        truth = build_model(cfg["model"])
        sc = cfg["simulate"]

        def dataset(seed):
            return thin_simulate(truth, SimConfig(_region(cfg), float(sc["t_end"]), seed=seed,
                                                  resolution=sc.get("resolution", 128),
                                                  max_events=sc.get("max_events")))
    else:
        seq, _ = load_data(cfg)

        def dataset(seed):
            return seq
    objectives = _objectives(cfg)
    if len(objectives) > 1:
        raise ConfigError("sweeps take a single alpha")
    out = _out(args)
    cache_dir = out / "checkpoints"
    cache_dir.mkdir(exist_ok=True)
    paths = {(sw["variable"], repr(v), s): cache_dir / f"{sw['variable']}-{v}-{s}.json" for v in values for s in seeds}
    cache = {key: ckpt.load(p).model for key, p in paths.items() if p.exists()}
    known = set(cache)
    region = _region(cfg)
    quad = cfg["quadrature"]
    ec = ExperimentConfig(
        sw["variable"], values, seeds, dataset, grid_shape=(cfg["grid"]["n_x"], cfg["grid"]["n_y"]),
        quad=QuadratureSpec(**{"t_max": 10.0, **quad}), objective=objectives[0],
        depth=int(cfg["model"]["depth"]), nu=float(cfg["model"]["nu"]), horizon_unit=sw.get("horizon_unit", 1.0),
        eval_horizons=sw.get("eval_horizons", [1]), train_horizons=sw.get("train_horizons", [1, 2, 4, 8]),
        fractions=tuple(cfg["data"]["split"]), next_event=cfg["evaluate"]["next_event"],
        workers=args.threads, checkpoint_cache=cache)
    reports = run_sweep(ec)
    for key, model in cache.items():
        if key not in known:
            ckpt.save(ckpt.Checkpoint(model, region, training={"config_hash": config_hash(cfg), "seed": key[2]}),
                      paths[key])
    write_reports(reports, out / "report.csv", out / "report.json", out / "report_long.csv")
    for r in reports:
        log.info("%s=%s seed %d h=%s rmse %.4f baseline %.4f (%.1fs) %s", r.sweep, r.value, r.seed, r.horizon,
                 r.rmse, r.baseline_rmse, r.runtime, r.status)


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict-counts": cmd_predict_counts,
    "predict-next": cmd_predict_next,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--config", help="YAML or JSON run configuration")
    shared.add_argument("--seed", type=int, help="override the config seed")
    shared.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker/BLAS threads")
    shared.add_argument("--out", default=".", help="output directory")
    shared.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="soft-tree-hawkes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[shared])
        if name in ("predict-counts", "predict-next", "evaluate"):
            p.add_argument("--checkpoint", help="checkpoint JSON")
        if name in ("predict-counts", "predict-next"):
            p.add_argument("--events", help="history event CSV (t,x,y)")
        if name == "predict-counts":
            p.add_argument("--horizon", type=float)
            p.add_argument("--t-start", type=float, dest="t_start")
            p.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NY"))
    return parser


def _classify(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, FileNotFoundError):
        return "missing_file"
    if isinstance(exc, ckpt.CheckpointVersionError):
        return "checkpoint_version"
    if isinstance(exc, ckpt.CheckpointError):
        return "checkpoint"
    if isinstance(exc, TrainingError):
        return "training"
    if isinstance(exc, ThinningError):
        return "simulation"
    if isinstance(exc, ValueError):
        return "data"
    return "internal"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load_config(args.config, {"seed": args.seed})
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](cfg, args)
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        kind = _classify(exc)
        sys.stderr.write(json.dumps({"error": kind, "code": EXIT_CODES[kind], "type": type(exc).__name__,
                                     "message": str(exc)}) + "\n")
        if kind == "internal":
            logging.getLogger("soft_tree_hawkes").debug("internal error", exc_info=True)
        return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
