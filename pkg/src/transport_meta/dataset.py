"""Composite dataset: trial rows plus a covariate-only sample of the target population.

One row per individual.  Stratum ``S = 0`` is the target sample (baseline
covariates only); strata ``S = 1..m`` are the randomized trials, which carry
assigned treatment ``Z`` and outcome ``Y`` and, optionally, a received
treatment ``A`` plus post-assignment covariates ``L``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import (
    ConfigError,
    EmptyStratum,
    MissingColumn,
    NonNumericValue,
    TargetRowHasOutcome,
    TrialRowMissingOutcome,
    UnknownStratum,
)

TARGET = 0


@dataclass(frozen=True)
class SchemaConfig:
    """Names the CSV columns that make up a composite dataset.

    ``categorical`` covariates are expanded to 0/1 indicator columns at
    ingestion: levels are ordered lexicographically and the first level is
    dropped as the reference.  ``target_has_outcomes`` relaxes the rule that
    target rows carry no Z/Y; the benchmark outcome data are stored apart
    from the analysis columns so estimators can never touch them.
    """

    covariates: tuple[str, ...]
    s_col: str = "S"
    z_col: str = "Z"
    y_col: str = "Y"
    id_col: str = "id"
    categorical: tuple[str, ...] = ()
    a_col: str | None = None
    l_cols: tuple[str, ...] = ()
    declared_trials: tuple[int, ...] | None = None
    target_has_outcomes: bool = False

    def __post_init__(self):
        unknown = set(self.categorical) - set(self.covariates)
        if unknown:
            raise MissingColumn(f"categorical columns not among covariates: {sorted(unknown)}")


@dataclass(frozen=True)
class Row:
    """A read-only view of one individual."""

    id: str
    S: int
    Z: str | None
    Y: float | None
    X: np.ndarray
    A: str | None = None
    L: np.ndarray | None = None


class CompositeDataset:
    """Immutable, column-oriented container for all strata.

    Attributes
    ----------
    n : int
        Total rows.
    m : int
        Number of trials; stratum labels are exactly ``{0, 1, ..., m}``.
    n_s : dict
        Row counts per stratum.
    covariate_names : tuple of str
        Names after indicator expansion, identical order for every row.
    """

    def __init__(self, *, ids, s, z_codes, y, x, covariate_names, z_labels,
                 a_codes=None, a_labels=(), l=None, l_names=(),
                 bench_z_codes=None, bench_y=None):
        self.ids = tuple(ids)
        self.s = np.asarray(s, dtype=np.int64)
        self.z_codes = np.asarray(z_codes, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.float64)
        self.x = np.asarray(x, dtype=np.float64)
        self.covariate_names = tuple(covariate_names)
        self.z_labels = tuple(z_labels)
        self.a_codes = None if a_codes is None else np.asarray(a_codes, dtype=np.int64)
        self.a_labels = tuple(a_labels)
        self.l = None if l is None else np.asarray(l, dtype=np.float64)
        self.l_names = tuple(l_names)
        self.bench_z_codes = None if bench_z_codes is None else np.asarray(bench_z_codes, dtype=np.int64)
        self.bench_y = None if bench_y is None else np.asarray(bench_y, dtype=np.float64)
        self.n = len(self.s)
        self.m = int(self.s.max(initial=0))
        self.n_s = {int(k): int(v) for k, v in zip(*np.unique(self.s, return_counts=True))}
        for arr in (self.s, self.z_codes, self.y, self.x, self.a_codes, self.l,
                    self.bench_z_codes, self.bench_y):
            if arr is not None:
                arr.setflags(write=False)

    # -- basic structure ---------------------------------------------------

    @property
    def has_adherence(self) -> bool:
        return self.a_codes is not None

    @property
    def trials(self) -> tuple[int, ...]:
        return tuple(range(1, self.m + 1))

    def z_code(self, label: str) -> int:
        try:
            return self.z_labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown treatment label {label!r}; have {self.z_labels}") from None

    def a_code(self, label: str) -> int:
        try:
            return self.a_labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown received-treatment label {label!r}; have {self.a_labels}") from None

    def trial_arms(self, trial: int) -> tuple[str, ...]:
        codes = np.unique(self.z_codes[self.s == trial])
        return tuple(self.z_labels[c] for c in codes if c >= 0)

    # -- views -------------------------------------------------------------

    def stratum_view(self, selector) -> np.ndarray:
        """Row indices for ``"target"``, ``"pooled"`` trials, or one trial id."""
        if selector == "target":
            idx = np.flatnonzero(self.s == TARGET)
        elif selector == "pooled":
            idx = np.flatnonzero(self.s > TARGET)
        elif isinstance(selector, (int, np.integer)):
            if not 1 <= selector <= self.m:
                raise UnknownStratum(f"no trial {selector}; trials are 1..{self.m}")
            idx = np.flatnonzero(self.s == selector)
        else:
            raise UnknownStratum(f"bad stratum selector {selector!r}")
        idx.setflags(write=False)
        return idx

    def columns(self, include_l: bool = False) -> dict[str, np.ndarray]:
        """Covariate columns by name, the mapping design specs resolve against."""
        cols = {name: self.x[:, j] for j, name in enumerate(self.covariate_names)}
        if include_l and self.l is not None:
            for j, name in enumerate(self.l_names):
                cols[name] = self.l[:, j]
        return cols

    def row(self, i: int) -> Row:
        zc = self.z_codes[i]
        ac = None if self.a_codes is None else self.a_codes[i]
        return Row(
            id=self.ids[i],
            S=int(self.s[i]),
            Z=None if zc < 0 else self.z_labels[zc],
            Y=None if np.isnan(self.y[i]) else float(self.y[i]),
            X=self.x[i],
            A=None if ac is None or ac < 0 else self.a_labels[ac],
            L=None if self.l is None else self.l[i],
        )

    @property
    def rows(self) -> Iterator[Row]:
        return (self.row(i) for i in range(self.n))

    # -- resampling --------------------------------------------------------

    def subset(self, indices: np.ndarray) -> "CompositeDataset":
        """New dataset from row indices (with repeats allowed); no revalidation."""
        idx = np.asarray(indices, dtype=np.int64)
        return CompositeDataset(
            ids=[self.ids[i] for i in idx],
            s=self.s[idx],
            z_codes=self.z_codes[idx],
            y=self.y[idx],
            x=self.x[idx],
            covariate_names=self.covariate_names,
            z_labels=self.z_labels,
            a_codes=None if self.a_codes is None else self.a_codes[idx],
            a_labels=self.a_labels,
            l=None if self.l is None else self.l[idx],
            l_names=self.l_names,
            bench_z_codes=None if self.bench_z_codes is None else self.bench_z_codes[idx],
            bench_y=None if self.bench_y is None else self.bench_y[idx],
        )


def stratum_view(data: CompositeDataset, selector) -> np.ndarray:
    return data.stratum_view(selector)


# -- ingestion --------------------------------------------------------------


def _parse_float(value: str, column: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise NonNumericValue(f"line {line}: column {column!r} has non-numeric value {value!r}") from None


def ingest_csv(path, schema: SchemaConfig) -> CompositeDataset:
    """Read and validate a composite-data CSV.

    The file needs a header row; empty cells mean "absent".  Target rows
    (S=0) must have empty Z/Y/A/L cells unless ``schema.target_has_outcomes``
    permits Z/Y, in which case those values are kept on benchmark-only
    columns.  Complete-case is enforced: a missing covariate is an error.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        raw_rows = [r for r in reader if any(cell.strip() for cell in r)]

    col_index = {name: j for j, name in enumerate(header)}
    needed = [schema.id_col, schema.s_col, schema.z_col, schema.y_col, *schema.covariates]
    if schema.a_col:
        needed.append(schema.a_col)
    needed.extend(schema.l_cols)
    missing = [c for c in needed if c not in col_index]
    if missing:
        raise MissingColumn(f"{path}: missing columns {missing}")

    def cell(row, name):
        j = col_index[name]
        return row[j].strip() if j < len(row) else ""

    numeric_covs = [c for c in schema.covariates if c not in schema.categorical]

    # First pass: collect categorical levels deterministically.
    cat_levels: dict[str, list[str]] = {}
    for c in schema.categorical:
        levels = sorted({cell(r, c) for r in raw_rows})
        if "" in levels:
            raise NonNumericValue(f"column {c!r}: empty categorical value (complete-case required)")
        if len(levels) < 2:
            raise NonNumericValue(f"categorical column {c!r} has a single level {levels}; drop it")
        cat_levels[c] = levels

    expanded_names: list[str] = []
    for c in schema.covariates:
        if c in schema.categorical:
            for level in cat_levels[c][1:]:
                name = f"{c}_{level}"
                if name in expanded_names or name in numeric_covs:
                    raise MissingColumn(f"indicator column name collision: {name!r}")
                expanded_names.append(name)
        else:
            expanded_names.append(c)

    ids, s_vals, z_raw, y_vals, x_rows = [], [], [], [], []
    a_raw, l_rows = [], []
    bench_z_raw, bench_y = [], []
    has_a = schema.a_col is not None
    has_l = bool(schema.l_cols)

    for lineno, row in enumerate(raw_rows, start=2):
        sid = cell(row, schema.id_col)
        s_txt = cell(row, schema.s_col)
        if not s_txt:
            raise NonNumericValue(f"line {lineno}: empty stratum column {schema.s_col!r}")
        try:
            s = int(s_txt)
        except ValueError:
            raise NonNumericValue(f"line {lineno}: stratum {s_txt!r} is not an integer") from None
        if s < 0:
            raise NonNumericValue(f"line {lineno}: stratum {s} is negative")

        z_txt = cell(row, schema.z_col)
        y_txt = cell(row, schema.y_col)
        a_txt = cell(row, schema.a_col) if has_a else ""
        l_txts = [cell(row, c) for c in schema.l_cols]

        if s == TARGET:
            if (z_txt or y_txt) and not schema.target_has_outcomes:
                raise TargetRowHasOutcome(
                    f"line {lineno}: target row (S=0) carries Z={z_txt!r} Y={y_txt!r}"
                )
            if a_txt or any(l_txts):
                raise TargetRowHasOutcome(f"line {lineno}: target row (S=0) carries A/L data")
            bench_z_raw.append(z_txt or None)
            bench_y.append(_parse_float(y_txt, schema.y_col, lineno) if y_txt else np.nan)
            z_raw.append(None)
            y_vals.append(np.nan)
            a_raw.append(None)
            l_rows.append([np.nan] * len(schema.l_cols))
        else:
            if not z_txt or not y_txt:
                raise TrialRowMissingOutcome(
                    f"line {lineno}: trial row (S={s}) missing " +
                    ("treatment" if not z_txt else "outcome")
                )
            if has_a and not a_txt:
                raise TrialRowMissingOutcome(f"line {lineno}: trial row (S={s}) missing received treatment")
            if has_l and not all(l_txts):
                raise TrialRowMissingOutcome(f"line {lineno}: trial row (S={s}) missing post-assignment covariate")
            z_raw.append(z_txt)
            y_vals.append(_parse_float(y_txt, schema.y_col, lineno))
            a_raw.append(a_txt if has_a else None)
            l_rows.append([_parse_float(t, c, lineno) for t, c in zip(l_txts, schema.l_cols)]
                          if has_l else [])
            bench_z_raw.append(None)
            bench_y.append(np.nan)

        x_row = []
        for c in schema.covariates:
            v = cell(row, c)
            if not v:
                raise NonNumericValue(f"line {lineno}: missing covariate {c!r} (complete-case required)")
            if c in schema.categorical:
                x_row.extend(1.0 if v == level else 0.0 for level in cat_levels[c][1:])
            else:
                x_row.append(_parse_float(v, c, lineno))
        x_rows.append(x_row)
        ids.append(sid)
        s_vals.append(s)

    if not s_vals:
        raise EmptyStratum(f"{path}: no data rows")
    s_arr = np.array(s_vals, dtype=np.int64)
    present = set(int(v) for v in np.unique(s_arr))
    if TARGET not in present:
        raise EmptyStratum("no target rows (S=0)")
    m = max(present)
    expected = set(range(m + 1))
    if schema.declared_trials is not None:
        expected |= set(schema.declared_trials)
    empty = sorted(expected - present)
    if empty:
        raise EmptyStratum(f"declared strata with zero rows: {empty}")

    z_label_set = sorted({z for z in z_raw if z is not None} |
                         {z for z in bench_z_raw if z is not None})
    z_labels = tuple(z_label_set)
    z_map = {lab: i for i, lab in enumerate(z_labels)}
    z_codes = np.array([z_map.get(z, -1) if z is not None else -1 for z in z_raw])
    bench_z_codes = np.array([z_map.get(z, -1) if z is not None else -1 for z in bench_z_raw])

    if has_a:
        a_label_set = sorted({a for a in a_raw if a is not None} | set(z_labels))
        a_labels = tuple(a_label_set)
        a_map = {lab: i for i, lab in enumerate(a_labels)}
        a_codes = np.array([a_map.get(a, -1) if a is not None else -1 for a in a_raw])
    else:
        a_labels, a_codes = (), None

    return CompositeDataset(
        ids=ids,
        s=s_arr,
        z_codes=z_codes,
        y=np.array(y_vals),
        x=np.array(x_rows, dtype=np.float64).reshape(len(ids), len(expanded_names)),
        covariate_names=expanded_names,
        z_labels=z_labels,
        a_codes=a_codes,
        a_labels=a_labels,
        l=np.array(l_rows, dtype=np.float64) if has_l else None,
        l_names=schema.l_cols,
        bench_z_codes=bench_z_codes if schema.target_has_outcomes else None,
        bench_y=np.array(bench_y) if schema.target_has_outcomes else None,
    )
