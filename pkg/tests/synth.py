"""Synthetic datasets with injected correlations for protocol tests."""

import numpy as np

from fairgate import data

SCHEMA = data.parse_schema("""\
missing: ?
column: s | numeric | max 4
column: a | numeric | max 4
column: b | numeric | max 4
column: c | categorical | u, v, w
target: y | 1 | 0
""")
SENSITIVE = frozenset({"s"})
UNPROTECTED = frozenset({"a", "b", "c"})


def partition() -> data.FeaturePartition:
    return data.FeaturePartition(SENSITIVE, UNPROTECTED)


def make(rng: np.random.Generator, n: int) -> data.Dataset:
    """Each unprotected feature gets a random dose of the sensitive one."""
    s = rng.uniform(0, 4, n)
    w = rng.uniform(0, 1.2, 3)
    a = np.clip(w[0] * s + rng.normal(0, 1, n), 0, 4)
    b = np.clip(w[1] * s + rng.uniform(0, 4, n), 0, 4)
    c = np.where(w[2] * s + rng.normal(0, 1, n) > 1.5, 0, rng.integers(1, 3, n))
    beta = rng.normal(0, 0.5, 4)
    z = beta[0] * a + beta[1] * b + beta[2] * (c == 0) + beta[3] * s
    y = (z + rng.logistic(0, 1, n) > np.median(z)).astype(np.int64)
    return data.Dataset(SCHEMA, {"s": s, "a": a, "b": b, "c": c}, y, n)


def indicator(d: data.Dataset, col: data.Column) -> np.ndarray:
    x = np.asarray(d.columns[col.feature], dtype=float)
    if col.level is None:
        return x
    return (x == d.schema.feature(col.feature).levels.index(col.level)).astype(float)


def correlations(d: data.Dataset, cols) -> dict:
    s = np.asarray(d.columns["s"], dtype=float)
    return {c: abs(np.corrcoef(indicator(d, c), s)[0, 1]) for c in cols if not c.is_intercept}


def correlation_screen(d: data.Dataset, threshold: float):
    """Flag the single active column most correlated with s, if above ``threshold``."""

    def screen(model, loo):
        r = {c: v for c, v in correlations(d, model.columns).items() if v > threshold}
        return frozenset({max(r, key=r.get)}) if r else frozenset()

    return screen


def expected_rounds(d: data.Dataset, threshold: float) -> int:
    """One column leaves per round, so rounds = columns over threshold + 1."""
    cols = data.design_for(d, sorted(UNPROTECTED), None, True).columns
    return sum(v > threshold for v in correlations(d, cols).values()) + 1


def float_windows(values: np.ndarray, width: int = 4):
    """Byte strings of ``width`` consecutive float64 values, as a packed column would hold them."""
    raw = np.ascontiguousarray(values, dtype="<f8").tobytes()
    step = 8 * width
    return [raw[i : i + step] for i in range(0, len(raw) - step + 1, step)]
