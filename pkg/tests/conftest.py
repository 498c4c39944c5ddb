import numpy as np
import pytest

from soft_tree_hawkes import DecisionTree, SpatialRegion, hawkes_model

UNIT = SpatialRegion(0.0, 1.0, 0.0, 1.0)
BOX = SpatialRegion(-10.0, 10.0, -10.0, 10.0)


def random_hawkes(rng: np.random.Generator, depth: int, region: SpatialRegion = BOX, nu: float = 3.0):
    """A random Hawkes model whose tree splits are soft over ``region``."""
    K = 2 ** depth
    scale = 1.0 / max(region.x_hi - region.x_lo, region.y_hi - region.y_lo)
    w = rng.normal(0.0, 4.0 * scale, (K - 1, 2))
    cx, cy = region.center
    b = w @ np.array([cx, cy]) + rng.normal(0.0, 0.3, K - 1)
    tree = DecisionTree(depth, w, b)
    return hawkes_model(tree, rng.normal(0.0, 1.0, K), rng.uniform(0.3, 2.0, K),
                        rng.normal(0.0, 0.5, (K, K)), nu)


def random_events(rng: np.random.Generator, n: int, t_end: float, region: SpatialRegion = BOX):
    t = np.sort(rng.uniform(0.0, t_end, n))
    x = rng.uniform(region.x_lo, region.x_hi, n)
    y = rng.uniform(region.y_lo, region.y_hi, n)
    return t, np.column_stack([x, y])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}
# sub-criteria marked xfail in the acceptance suite
EXPECTED_FAIL = {"7-mode"}


def record(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = (ok, detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    lines: dict[str, list] = {}
    for key, (ok, detail) in ACCEPTANCE.items():
        lines.setdefault(key.split("-")[0], []).append((key, ok, detail))
    terminalreporter.section("acceptance criteria")
    for crit in sorted(lines, key=int):
        parts = lines[crit]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{k}: {'pass' if o else 'FAIL'} {d}" if len(parts) > 1 else d for k, o, d in parts)
        failing = [p[0] for p in parts if not p[1]]
        note = "  (xfail: known gap)" if failing and set(failing) <= EXPECTED_FAIL else ""
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}{note}")
