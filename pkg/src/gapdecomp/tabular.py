"""Typed tabular data, causal role maps, and design-matrix construction.

A Dataset is a small immutable column store. Columns are either numeric
(float64, with a "binary" refinement when every value is 0/1) or
categorical (string levels). Design matrices are built from explicit
feature formulas so that every model in the pipeline states exactly
which columns, interactions and transforms it uses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"

_FLOAT_FMT = "%.17g"


class DataError(ValueError):
    """Raised for malformed input data or role violations."""


def _format_float(x) -> str:
    return _FLOAT_FMT % float(x)


def _is_binary(values: np.ndarray) -> bool:
    u = np.unique(values)
    return u.size <= 2 and bool(np.isin(u, (0.0, 1.0)).all())


@dataclass(frozen=True)
class Dataset:
    """Immutable named-column table.

    data maps column name -> float64 array (numeric) or str array
    (categorical). kinds maps name -> CONTINUOUS | BINARY | CATEGORICAL.
    levels holds the sorted distinct labels of categorical columns.
    """

    columns: tuple
    data: dict
    kinds: dict
    levels: dict
    n: int

    @staticmethod
    def from_arrays(mapping, kinds=None) -> "Dataset":
        names = tuple(mapping)
        if not names:
            raise DataError("dataset needs at least one column")
        data, got_kinds, levels = {}, {}, {}
        n = None
        for name in names:
            arr = np.asarray(mapping[name])
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            want = None if kinds is None else kinds.get(name)
            if want == CATEGORICAL or (want is None and not np.issubdtype(arr.dtype, np.number)
                                       and not np.issubdtype(arr.dtype, np.bool_)):
                vals = np.asarray([str(v) for v in arr], dtype=object)
                data[name] = vals
                got_kinds[name] = CATEGORICAL
                levels[name] = tuple(sorted(set(vals.tolist())))
            else:
                vals = arr.astype(np.float64)
                if not np.isfinite(vals).all():
                    raise DataError(f"column {name!r} contains non-finite values")
                data[name] = vals
                if want in (CONTINUOUS, BINARY):
                    if want == BINARY and not _is_binary(vals):
                        raise DataError(f"column {name!r} declared binary but has other values")
                    got_kinds[name] = want
                else:
                    got_kinds[name] = BINARY if _is_binary(vals) else CONTINUOUS
        return Dataset(names, data, got_kinds, levels, int(n))

    def with_columns(self, mapping) -> "Dataset":
        """Return a copy with columns replaced or appended."""
        merged = dict(self.data)
        kinds = dict(self.kinds)
        for name, arr in mapping.items():
            vals = np.asarray(arr, dtype=np.float64)
            if vals.shape == ():
                vals = np.full(self.n, float(vals))
            if vals.shape[0] != self.n:
                raise DataError(f"replacement column {name!r} has wrong length")
            merged[name] = vals
            kinds[name] = BINARY if _is_binary(vals) else CONTINUOUS
        names = tuple(self.columns) + tuple(c for c in mapping if c not in self.columns)
        return Dataset(names, merged, kinds, dict(self.levels), self.n)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        data = {c: self.data[c][rows] for c in self.columns}
        n = int(data[self.columns[0]].shape[0])
        return Dataset(self.columns, data, dict(self.kinds), dict(self.levels), n)

    def numeric(self, name) -> np.ndarray:
        if self.kinds.get(name) == CATEGORICAL:
            raise DataError(f"column {name!r} is categorical, expected numeric")
        if name not in self.data:
            raise DataError(f"unknown column {name!r}")
        return self.data[name]

    def column_levels(self, name) -> tuple:
        """Distinct values of a column, for grouping. Numeric levels are floats."""
        if self.kinds[name] == CATEGORICAL:
            return self.levels[name]
        return tuple(np.unique(self.data[name]).tolist())


@dataclass(frozen=True)
class LoadReport:
    path: str
    n_rows: int
    n_cols: int
    kinds: dict
    n_dropped_missing: int

    def to_json(self) -> str:
        return json.dumps({
            "path": self.path,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "kinds": self.kinds,
            "n_dropped_missing": self.n_dropped_missing,
        }, indent=2, sort_keys=True)


def load_csv(path, kinds=None, missing="error"):
    """Load a CSV file into a Dataset plus a LoadReport.

    Empty cells are missing values. missing="error" names the first
    offending row and column; missing="drop" removes incomplete rows and
    records how many were dropped. Numeric parsing uses float() so that
    values written with %.17g round-trip exactly.
    """
    if missing not in ("error", "drop"):
        raise DataError(f"unknown missing policy {missing!r}")
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot read data file {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        raw_rows = list(reader)
    ncol = len(header)
    keep, dropped = [], 0
    for rnum, row in enumerate(raw_rows, start=2):
        if len(row) != ncol:
            raise DataError(f"{path}: line {rnum} has {len(row)} cells, expected {ncol}")
        if any(cell == "" for cell in row):
            if missing == "error":
                col = header[[c == "" for c in row].index(True)]
                raise DataError(f"{path}: missing value at line {rnum}, column {col!r}")
            dropped += 1
            continue
        keep.append(row)
    if not keep:
        raise DataError(f"{path}: no complete rows")
    cols = list(zip(*keep))
    mapping = {}
    for name, cells in zip(header, cols):
        want = None if kinds is None else kinds.get(name)
        if want == CATEGORICAL:
            mapping[name] = np.asarray(cells, dtype=object)
            continue
        try:
            mapping[name] = np.asarray([float(c) for c in cells], dtype=np.float64)
        except ValueError:
            if want in (CONTINUOUS, BINARY):
                raise DataError(f"{path}: column {name!r} declared numeric but not parseable")
            mapping[name] = np.asarray(cells, dtype=object)
    ds = Dataset.from_arrays(mapping, kinds=kinds)
    report = LoadReport(str(path), ds.n, len(header), dict(ds.kinds), dropped)
    return ds, report


def write_csv(ds: Dataset, path) -> None:
    """Write a Dataset with %.17g floats so reloads are bit-exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.columns)
        cols = []
        for name in ds.columns:
            if ds.kinds[name] == CATEGORICAL:
                cols.append(ds.data[name].tolist())
            else:
                cols.append([_format_float(v) for v in ds.data[name]])
        writer.writerows(zip(*cols))


@dataclass(frozen=True)
class RoleMap:
    """Assignment of dataset columns to causal roles.

    group: column holding the population labels; reference: the level the
    equalizing interventions borrow from. baseline covariates precede the
    group, pre_confounders precede the system factor, intermediate
    confounders sit between the two target factors.
    """

    group: str
    reference: object
    system_factor: str
    individual_factor: str
    outcome: str
    baseline: tuple = ()
    pre_confounders: tuple = ()
    intermediate_confounders: tuple = ()
    cluster: str = None

    def validate(self, ds: Dataset) -> None:
        single = [self.group, self.system_factor, self.individual_factor, self.outcome]
        lists = [self.baseline, self.pre_confounders, self.intermediate_confounders]
        named = single + [c for l in lists for c in l]
        if self.cluster is not None:
            named.append(self.cluster)
        for c in named:
            if c not in ds.data:
                raise DataError(f"role column {c!r} not in dataset")
        main = single + [c for l in lists for c in l]
        if len(set(main)) != len(main):
            raise DataError("role lists overlap: each column may hold one role")
        levels = ds.column_levels(self.group)
        if len(levels) < 2:
            raise DataError("group column needs at least 2 levels")
        if self.reference_level(ds) not in levels:
            raise DataError(f"reference level {self.reference!r} not found in group column")
        for fac in (self.system_factor, self.individual_factor):
            if ds.kinds[fac] != BINARY:
                raise DataError(f"target factor {fac!r} must be binary 0/1")
        if ds.kinds[self.outcome] == CATEGORICAL:
            raise DataError("outcome must be numeric")

    def reference_level(self, ds: Dataset):
        if ds.kinds[self.group] == CATEGORICAL:
            return str(self.reference)
        return float(self.reference)

    def comparison_levels(self, ds: Dataset) -> tuple:
        ref = self.reference_level(ds)
        return tuple(l for l in ds.column_levels(self.group) if l != ref)

    def group_mask(self, ds: Dataset, level) -> np.ndarray:
        return ds.data[self.group] == level


# ---------------------------------------------------------------------------
# feature formulas

def _t_exp_half(x):
    return np.exp(x) / 2.0


def _t_exp_damp10(x, y):
    return y / (1.0 + np.exp(x)) + 10.0


def _t_cross_cube(x, y):
    return (x * y / 25.0 + 0.6) ** 3


TRANSFORMS = {
    "exp_half": (_t_exp_half, 1),
    "exp_damp10": (_t_exp_damp10, 2),
    "cross_cube": (_t_cross_cube, 2),
}


@dataclass(frozen=True)
class FeatureFormula:
    """Ordered term list plus an intercept flag.

    Term encodings:
      ("col", name)                raw column (categoricals expand to
                                   len(levels)-1 indicators, first level
                                   as reference)
      ("center", name)             numeric column minus its sample mean
      ("inter", (a, b[, c]))       product of 2 or 3 numeric columns
      ("transform", fname, (c,...)) registered transform of 1-2 columns
    """

    terms: tuple
    intercept: bool = True

    def validate(self) -> None:
        for t in self.terms:
            tag = t[0]
            if tag == "col" or tag == "center":
                if len(t) != 2 or not isinstance(t[1], str):
                    raise DataError(f"malformed term {t!r}")
            elif tag == "inter":
                cols = t[1]
                if len(t) != 2 or not 2 <= len(cols) <= 3:
                    raise DataError(f"interaction takes 2 or 3 columns: {t!r}")
            elif tag == "transform":
                if len(t) != 3 or t[1] not in TRANSFORMS:
                    raise DataError(f"unknown transform term {t!r}")
                if len(t[2]) != TRANSFORMS[t[1]][1]:
                    raise DataError(f"transform {t[1]!r} arity mismatch in {t!r}")
            else:
                raise DataError(f"unknown term tag {t!r}")

    def to_json_obj(self):
        return {"terms": [list(t[:1]) + [list(x) if isinstance(x, tuple) else x for x in t[1:]]
                          for t in self.terms],
                "intercept": self.intercept}

    @staticmethod
    def from_json_obj(obj) -> "FeatureFormula":
        terms = []
        for raw in obj["terms"]:
            tag = raw[0]
            if tag in ("col", "center"):
                terms.append((tag, raw[1]))
            elif tag == "inter":
                terms.append((tag, tuple(raw[1])))
            elif tag == "transform":
                terms.append((tag, raw[1], tuple(raw[2])))
            else:
                raise DataError(f"unknown term tag {tag!r}")
        f = FeatureFormula(tuple(terms), bool(obj.get("intercept", True)))
        f.validate()
        return f


def cols(*names, intercept=True) -> FeatureFormula:
    """Shorthand formula of raw columns."""
    return FeatureFormula(tuple(("col", n) for n in names), intercept)


def _expand_term(ds: Dataset, term):
    """Return (list of column vectors, list of names) for one term."""
    tag = term[0]
    if tag == "col":
        name = term[1]
        if name not in ds.data:
            raise DataError(f"formula references unknown column {name!r}")
        if ds.kinds[name] == CATEGORICAL:
            lv = ds.levels[name]
            vecs = [(ds.data[name] == l).astype(np.float64) for l in lv[1:]]
            return vecs, [f"{name}={l}" for l in lv[1:]]
        return [ds.data[name]], [name]
    if tag == "center":
        x = ds.numeric(term[1])
        return [x - x.mean()], [f"center({term[1]})"]
    if tag == "inter":
        names = term[1]
        prod = ds.numeric(names[0]).copy()
        for nm in names[1:]:
            prod = prod * ds.numeric(nm)
        return [prod], [":".join(names)]
    if tag == "transform":
        fn, arity = TRANSFORMS[term[1]]
        args = [ds.numeric(nm) for nm in term[2]]
        return [fn(*args)], [f"{term[1]}({','.join(term[2])})"]
    raise DataError(f"unknown term tag {tag!r}")


def build_design(ds: Dataset, formula: FeatureFormula):
    """Materialize a formula as (n x p float64 matrix, column names).

    Deterministic: identical input bytes give identical output bytes.
    """
    formula.validate()
    vecs, names = [], []
    if formula.intercept:
        vecs.append(np.ones(ds.n))
        names.append("const")
    for term in formula.terms:
        v, nm = _expand_term(ds, term)
        vecs.extend(v)
        names.extend(nm)
    if not vecs:
        raise DataError("formula produced an empty design")
    X = np.column_stack(vecs)
    if not np.isfinite(X).all():
        raise DataError("design matrix contains non-finite values")
    return X, names
