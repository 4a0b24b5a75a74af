"""Tabular data: schemas, the Adult loader, Select, one-hot encoding, recodes.

Datasets are column-oriented and immutable.  Categorical columns are held as
integer codes into the schema's level list; numeric columns as float64.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
INTERCEPT = "(intercept)"


class DataError(ValueError):
    """Input data could not be parsed or does not fit its schema."""


class MalformedRow(DataError):
    pass


class UnknownLevel(DataError):
    pass


class UnknownLabel(DataError):
    pass


@dataclass(frozen=True)
class Feature:
    label: str
    kind: str
    levels: tuple[str, ...] = ()
    bound: float | None = None  # public a-priori magnitude bound (numeric only)

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"feature {self.label!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise DataError(f"categorical feature {self.label!r} needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise DataError(f"categorical feature {self.label!r} repeats a level")


@dataclass(frozen=True)
class Target:
    label: str
    positive: str
    negative: str | None = None


@dataclass(frozen=True)
class Schema:
    """Ordered feature list plus the binary target designation."""

    features: tuple[Feature, ...]
    target: Target | None = None
    missing_token: str = "?"
    target_position: int | None = None  # CSV field index of the target; default last

    def __post_init__(self):
        labels = [f.label for f in self.features]
        if len(set(labels)) != len(labels):
            raise DataError("feature labels must be unique")
        if self.target is not None and self.target.label in labels:
            raise DataError("target label collides with a feature label")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.features)

    def feature(self, label: str) -> Feature:
        for f in self.features:
            if f.label == label:
                return f
        raise UnknownLabel(f"unknown feature {label!r}")

    def to_text(self) -> str:
        lines = [f"missing: {self.missing_token}"]
        for f in self.features:
            if f.kind == NUMERIC:
                extra = f" | max {f.bound:g}" if f.bound is not None else ""
                lines.append(f"column: {f.label} | numeric{extra}")
            else:
                lines.append(f"column: {f.label} | categorical | {', '.join(f.levels)}")
        if self.target is not None:
            neg = f" | {self.target.negative}" if self.target.negative else ""
            lines.append(f"target: {self.target.label} | {self.target.positive}{neg}")
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> Schema:
    """Parse the key:value schema descriptor format (see ``schemas/adult.schema``).

    The order of ``column:`` and ``target:`` lines is the CSV field order.
    """
    features: list[Feature] = []
    target = target_pos = None
    missing = "?"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise DataError(f"schema line {lineno}: expected 'key: value'")
        key = key.strip()
        parts = [p.strip() for p in value.split("|")]
        if key == "missing":
            missing = value.strip()
        elif key == "column":
            if len(parts) < 2:
                raise DataError(f"schema line {lineno}: column needs a label and a kind")
            label, kind = parts[0], parts[1]
            if kind == NUMERIC:
                bound = None
                if len(parts) > 2:
                    word, _, num = parts[2].partition(" ")
                    if word != "max":
                        raise DataError(f"schema line {lineno}: expected 'max <bound>'")
                    bound = float(num)
                features.append(Feature(label, NUMERIC, bound=bound))
            elif kind == CATEGORICAL:
                if len(parts) != 3:
                    raise DataError(f"schema line {lineno}: categorical column needs a level list")
                levels = tuple(v.strip() for v in parts[2].split(",") if v.strip())
                features.append(Feature(label, CATEGORICAL, levels))
            else:
                raise DataError(f"schema line {lineno}: unknown kind {kind!r}")
        elif key == "target":
            if target is not None:
                raise DataError(f"schema line {lineno}: second target")
            if len(parts) < 2:
                raise DataError(f"schema line {lineno}: target needs a label and a positive value")
            target = Target(parts[0], parts[1], parts[2] if len(parts) > 2 else None)
            target_pos = len(features)
        else:
            raise DataError(f"schema line {lineno}: unknown key {key!r}")
    return Schema(tuple(features), target, missing, target_pos)


def load_schema(path: str | Path) -> Schema:
    return parse_schema(Path(path).read_text())


def adult_schema() -> Schema:
    return parse_schema(resources.files("fairgate.schemas").joinpath("adult.schema").read_text())


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    columns: dict[str, np.ndarray]
    target: np.ndarray | None
    row_count: int

    def __post_init__(self):
        if set(self.columns) != set(self.schema.labels):
            raise DataError("dataset columns do not match the schema")
        for label, col in self.columns.items():
            if col.shape != (self.row_count,):
                raise DataError(f"column {label!r} has the wrong length")
            col.flags.writeable = False
        if self.target is not None:
            if self.target.shape != (self.row_count,):
                raise DataError("target has the wrong length")
            self.target.flags.writeable = False

    @property
    def labels(self) -> tuple[str, ...]:
        return self.schema.labels

    def values(self, label: str) -> np.ndarray:
        """Decoded values of one feature (strings for categoricals)."""
        f = self.schema.feature(label)
        col = self.columns[label]
        if f.kind == NUMERIC:
            return col
        return np.asarray(f.levels, dtype=object)[col]

    @property
    def rows(self) -> list[tuple]:
        cols = [self.values(lbl) for lbl in self.labels]
        return [tuple(c[i] for c in cols) for i in range(self.row_count)]

    def head(self, n: int) -> "Dataset":
        n = min(n, self.row_count)
        cols = {k: v[:n].copy() for k, v in self.columns.items()}
        tgt = None if self.target is None else self.target[:n].copy()
        return Dataset(self.schema, cols, tgt, n)


def load_csv(path: str | Path, schema: Schema, missing_token: str | None = None) -> Dataset:
    """Read a headerless comma-separated file laid out as ``schema``.

    Rows holding the missing-value token in any field are dropped.  Lines
    beginning with ``|`` are comments (the Adult test file starts with one).
    A trailing ``.`` on the target value is ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    token = schema.missing_token if missing_token is None else missing_token
    target_pos = schema.target_position
    if target_pos is None:
        target_pos = len(schema.features)
    width = len(schema.features) + (schema.target is not None)
    level_index = [
        {lvl: i for i, lvl in enumerate(f.levels)} if f.kind == CATEGORICAL else None
        for f in schema.features
    ]
    raw: list[list] = [[] for _ in schema.features]
    target: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        for lineno, fields in enumerate(reader, 1):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if fields[0].startswith("|"):
                continue
            fields = [v.strip() for v in fields]
            if len(fields) != width:
                raise MalformedRow(f"{path.name}:{lineno}: expected {width} fields, got {len(fields)}")
            if token and token in fields:
                continue
            if schema.target is not None:
                tval = fields.pop(target_pos).rstrip(".")
                t = schema.target
                if tval == t.positive:
                    target.append(1)
                elif t.negative is None or tval == t.negative:
                    target.append(0)
                else:
                    raise MalformedRow(f"{path.name}:{lineno}: bad target value {tval!r}")
            for j, (f, v) in enumerate(zip(schema.features, fields)):
                if f.kind == NUMERIC:
                    try:
                        raw[j].append(float(v))
                    except ValueError:
                        raise MalformedRow(f"{path.name}:{lineno}: {f.label} is not numeric: {v!r}") from None
                else:
                    try:
                        raw[j].append(level_index[j][v])
                    except KeyError:
                        raise UnknownLevel(f"{path.name}:{lineno}: {f.label} has unknown level {v!r}") from None
    n = len(raw[0]) if raw else len(target)
    if n == 0:
        raise MalformedRow(f"{path.name}: no data rows")
    cols = {
        f.label: np.asarray(vals, dtype=np.float64 if f.kind == NUMERIC else np.int32)
        for f, vals in zip(schema.features, raw)
    }
    tgt = np.asarray(target, dtype=np.int8) if schema.target is not None else None
    return Dataset(schema, cols, tgt, n)


def load_adult(path: str | Path, missing_token: str = "?") -> Dataset:
    return load_csv(path, adult_schema(), missing_token)


def select(subset: Iterable[str], d: Dataset) -> Dataset:
    """Restrict ``d`` to the features in ``subset``, keeping schema order."""
    subset = set(subset)
    unknown = subset - set(d.labels)
    if unknown:
        raise UnknownLabel(f"unknown feature(s): {sorted(unknown)}")
    feats = tuple(f for f in d.schema.features if f.label in subset)
    schema = replace(d.schema, features=feats)
    return Dataset(schema, {f.label: d.columns[f.label] for f in feats}, d.target, d.row_count)


# --- design matrices ---------------------------------------------------------

@dataclass(frozen=True)
class Column:
    """One design-matrix column: a numeric feature, a dummy, or the intercept."""

    feature: str
    level: str | None = None

    @property
    def is_intercept(self) -> bool:
        return self.feature == INTERCEPT

    @property
    def key(self) -> str:
        return self.feature if self.level is None else f"{self.feature}={self.level}"


INTERCEPT_COLUMN = Column(INTERCEPT)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    columns: tuple[Column, ...]
    target: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise DataError("design values do not match the column list")
        if self.target.shape != (self.values.shape[0],):
            raise DataError("target length differs from row count")
        self.values.flags.writeable = False
        self.target.flags.writeable = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def labels(self) -> list[str]:
        """Display names: the level (or feature) name, qualified on collision."""
        return column_labels(self.columns)

    def index(self, col: Column) -> int:
        return self.columns.index(col)

    def drop(self, cols: Iterable[Column]) -> "DesignMatrix":
        cols = set(cols)
        keep = [i for i, c in enumerate(self.columns) if c not in cols]
        return DesignMatrix(self.values[:, keep].copy(), tuple(self.columns[i] for i in keep), self.target)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([c.key for c in self.columns] + ["target"])
            for row, t in zip(self.values, self.target):
                w.writerow([repr(float(v)) for v in row] + [int(t)])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(c.key for c in self.columns).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(np.ascontiguousarray(self.target).tobytes())
        return h.hexdigest()


def column_labels(columns: Sequence[Column]) -> list[str]:
    short = [c.feature if c.level is None else c.level for c in columns]
    counts: dict[str, int] = {}
    for s in short:
        counts[s] = counts.get(s, 0) + 1
    return [s if counts[s] == 1 else c.key for s, c in zip(short, columns)]


DROP_FIRST = "first"
DROP_NONE = "none"


def encoded_columns(schema: Schema, drop_policy: str = DROP_FIRST, intercept: bool = True,
                    strict: bool = False) -> tuple[Column, ...]:
    if drop_policy not in (DROP_FIRST, DROP_NONE):
        raise ValueError(f"unknown drop policy {drop_policy!r}")
    cols = [INTERCEPT_COLUMN] if intercept else []
    for f in schema.features:
        if f.kind == NUMERIC:
            cols.append(Column(f.label))
            continue
        levels = sorted(f.levels)
        if len(levels) < 2 and strict:
            raise DataError(f"categorical feature {f.label!r} has a single level")
        if drop_policy == DROP_FIRST:
            levels = levels[1:]
        cols.extend(Column(f.label, lvl) for lvl in levels)
    return tuple(cols)


def encode(d: Dataset, drop_policy: str = DROP_FIRST, intercept: bool = True, strict: bool = False) -> DesignMatrix:
    """One-hot encode ``d``.

    Numeric features are copied verbatim.  A categorical feature with m
    levels becomes m-1 dummies under the default policy, dropping its
    alphabetically first level.
    """
    if d.target is None:
        raise DataError("dataset has no target column")
    cols = encoded_columns(d.schema, drop_policy, intercept, strict)
    out = np.zeros((d.row_count, len(cols)))
    j = 0
    if intercept:
        out[:, 0] = 1.0
        j = 1
    for f in d.schema.features:
        col = d.columns[f.label]
        if f.kind == NUMERIC:
            out[:, j] = col
            j += 1
            continue
        levels = sorted(f.levels)
        if drop_policy == DROP_FIRST:
            levels = levels[1:]
        code_of = {lvl: i for i, lvl in enumerate(f.levels)}
        for lvl in levels:
            out[:, j] = col == code_of[lvl]
            j += 1
    return DesignMatrix(out, cols, d.target.astype(np.float64))


# --- recodes -------------------------------------------------------------------

MARITAL = "marital-status"
_UNMARRIED = {"Never-married", "Divorced", "Separated", "Widowed"}


def recode_marital(d: Dataset) -> Dataset:
    """Collapse marital status into {Married, Unmarried}."""
    if MARITAL not in d.labels:
        raise UnknownLabel(f"dataset has no {MARITAL!r} feature")
    f = d.schema.feature(MARITAL)
    if f.kind != CATEGORICAL:
        raise DataError(f"{MARITAL!r} is not categorical")
    mapping = []
    for lvl in f.levels:
        if lvl.startswith("Married-") or lvl == "Married":
            mapping.append(0)
        elif lvl in _UNMARRIED or lvl == "Unmarried":
            mapping.append(1)
        else:
            raise UnknownLevel(f"cannot recode marital level {lvl!r}")
    new_f = Feature(MARITAL, CATEGORICAL, ("Married", "Unmarried"))
    feats = tuple(new_f if g.label == MARITAL else g for g in d.schema.features)
    cols = dict(d.columns)
    cols[MARITAL] = np.asarray(mapping, dtype=np.int32)[d.columns[MARITAL]]
    return Dataset(replace(d.schema, features=feats), cols, d.target, d.row_count)


RECODERS: dict[str, Callable[[Dataset], Dataset]] = {MARITAL: recode_marital}


# --- partitions and profiles -------------------------------------------------

@dataclass(frozen=True)
class FeaturePartition:
    """Split of schema labels into sensitive (S_P), unprotected (S_U) and protected.

    ``removed`` holds individual dummy columns taken out of training while
    the rest of their feature stays unprotected.
    """

    sensitive: frozenset[str]
    unprotected: frozenset[str]
    protected: frozenset[str] = frozenset()
    removed: frozenset[Column] = frozenset()

    def __post_init__(self):
        for name in ("sensitive", "unprotected", "protected", "removed"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.sensitive & self.unprotected:
            raise DataError("a feature cannot be both sensitive and unprotected")
        if self.protected & self.sensitive:
            raise DataError("a sensitive feature cannot also be protected")
        if self.protected & self.unprotected:
            raise DataError("a feature cannot be both protected and unprotected")

    def validate(self, labels: Iterable[str]) -> None:
        labels = set(labels)
        union = self.sensitive | self.unprotected | self.protected
        if union != labels:
            missing, extra = labels - union, union - labels
            raise DataError(f"partition does not cover the schema (missing {sorted(missing)}, unknown {sorted(extra)})")

    def remove(self, cols: Iterable[Column], schema: Schema, drop_policy: str = DROP_FIRST) -> "FeaturePartition":
        """Take columns out of training; a feature with no columns left becomes protected."""
        removed = set(self.removed) | {c for c in cols if c.feature in self.unprotected}
        unprotected, protected = set(self.unprotected), set(self.protected)
        for label in sorted(self.unprotected):
            remaining = [c for c in encoded_columns(select_schema(schema, [label]), drop_policy, False)
                         if c not in removed]
            if not remaining:
                unprotected.discard(label)
                protected.add(label)
                removed -= {c for c in removed if c.feature == label}
        return FeaturePartition(self.sensitive, frozenset(unprotected), frozenset(protected), frozenset(removed))

    def forget_columns_of(self, label: str) -> "FeaturePartition":
        return replace(self, removed=frozenset(c for c in self.removed if c.feature != label))


def select_schema(schema: Schema, labels: Iterable[str]) -> Schema:
    labels = set(labels)
    return replace(schema, features=tuple(f for f in schema.features if f.label in labels))


@dataclass(frozen=True)
class Profile:
    """A named dataset recipe: which features, which is sensitive, how to encode."""

    name: str
    unprotected: tuple[str, ...]
    sensitive: tuple[str, ...]
    intercept: bool
    max_rows: int | None = None

    @property
    def features(self) -> tuple[str, ...]:
        return self.unprotected + self.sensitive

    def apply(self, d: Dataset) -> Dataset:
        d = select(self.features, d)
        return d.head(self.max_rows) if self.max_rows is not None else d

    def partition(self) -> FeaturePartition:
        return FeaturePartition(frozenset(self.sensitive), frozenset(self.unprotected))


ADULT_UNPROTECTED = (
    "workclass", "education", "education-num", "marital-status",
    "occupation", "relationship", "hours-per-week", "native-country",
)

PROFILES = {
    # 87 non-intercept columns; no intercept (see README "Model specification")
    "full": Profile("full", ADULT_UNPROTECTED, ("age",), intercept=False),
    # intercept + 7 columns for encrypted desk-scale sessions (8 + age)
    "subsample": Profile("subsample", ("education-num", "hours-per-week", "relationship"), ("age",),
                         intercept=True, max_rows=1024),
}


def design_for(d: Dataset, labels: Iterable[str], partition: FeaturePartition | None = None,
               intercept: bool = True) -> DesignMatrix:
    """Encode the features in ``labels`` with the partition's removed columns dropped."""
    dm = encode(select(labels, d), intercept=intercept)
    if partition is not None and partition.removed:
        dm = dm.drop(partition.removed)
    return dm
