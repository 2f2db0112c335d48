"""Survey data model, CSV/JSON I/O, the surrogate survey, and index splits.

A ``SurveyTable`` is stored column-wise: categorical and binary columns as
int64 category codes (positions in the column's category list), numeric
columns as float64.  ``rows()`` gives the record view.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from popsyn import _kernels
from popsyn.errors import (
    BadK,
    BadValue,
    EmptyInput,
    EmptyTable,
    MissingColumn,
    OutOfRange,
    SchemaMismatch,
)
from popsyn.rng import Rng

NUMERIC = "numeric"
BINARY = "binary"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, BINARY, CATEGORICAL)

_LABEL_RE = re.compile(r"^[A-Za-z0-9_]+$")


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple = ()
    numeric_min: float | None = None
    numeric_max: float | None = None
    integer: bool = False

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.name or not _LABEL_RE.match(self.name):
            raise ValueError(f"bad column name {self.name!r}")
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name}: unknown kind {self.kind!r}")
        if self.kind == NUMERIC:
            if self.categories:
                raise ValueError(f"numeric column {self.name} cannot have categories")
            if self.numeric_min is None or self.numeric_max is None:
                raise ValueError(f"numeric column {self.name} needs min and max")
            if not float(self.numeric_min) < float(self.numeric_max):
                raise ValueError(f"column {self.name}: min must be < max")
            object.__setattr__(self, "numeric_min", float(self.numeric_min))
            object.__setattr__(self, "numeric_max", float(self.numeric_max))
            if self.integer and (self.numeric_min != math.floor(self.numeric_min)
                                 or self.numeric_max != math.floor(self.numeric_max)):
                raise ValueError(f"integer column {self.name} needs integral bounds")
        else:
            if self.kind == BINARY and len(self.categories) != 2:
                raise ValueError(f"binary column {self.name} needs exactly 2 categories")
            if self.kind == CATEGORICAL and len(self.categories) < 2:
                raise ValueError(f"categorical column {self.name} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"column {self.name}: duplicate category labels")
            for c in self.categories:
                if not isinstance(c, str) or not _LABEL_RE.match(c):
                    raise ValueError(f"column {self.name}: bad category label {c!r}")
            if self.integer:
                raise ValueError(f"column {self.name}: only numeric columns can be integer")

    @property
    def is_numeric(self):
        return self.kind == NUMERIC

    def to_json(self):
        d = {"name": self.name, "kind": self.kind}
        if self.is_numeric:
            d["min"] = _json_number(self.numeric_min)
            d["max"] = _json_number(self.numeric_max)
            if self.integer:
                d["integer"] = True
        else:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=tuple(d.get("categories", ())),
            numeric_min=d.get("min"),
            numeric_max=d.get("max"),
            integer=bool(d.get("integer", False)),
        )


@dataclass(frozen=True)
class SurveySchema:
    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return {"columns": [c.to_json() for c in self.columns]}

    @classmethod
    def from_json(cls, d):
        if "columns" not in d:
            raise ValueError("schema document needs a 'columns' array")
        return cls(tuple(ColumnSpec.from_json(c) for c in d["columns"]))

    def fingerprint(self):
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_schema(path):
    with open(path) as fh:
        return SurveySchema.from_json(json.load(fh))


def save_schema(schema, path):
    with open(path, "w") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


class SurveyTable:
    """Column-wise survey records conforming to a ``SurveySchema``."""

    def __init__(self, schema, data, validate=True):
        self.schema = schema
        self.data = {}
        for col in schema.columns:
            if col.name not in data:
                raise SchemaMismatch(f"missing column data for {col.name}")
            dtype = np.float64 if col.is_numeric else np.int64
            self.data[col.name] = np.asarray(data[col.name], dtype=dtype).reshape(-1)
        lengths = {len(v) for v in self.data.values()}
        if len(lengths) > 1:
            raise SchemaMismatch("column arrays have different lengths")
        self._n = lengths.pop() if lengths else 0
        if validate:
            self.validate()

    @classmethod
    def empty(cls, schema):
        return cls(schema, {c.name: [] for c in schema.columns})

    @classmethod
    def from_rows(cls, schema, rows):
        """Build from records of category labels / reals in schema order."""
        cols = {c.name: [] for c in schema.columns}
        for r, rec in enumerate(rows):
            if len(rec) != len(schema.columns):
                raise BadValue(f"row {r}: expected {len(schema.columns)} fields", row=r)
            for col, v in zip(schema.columns, rec):
                cols[col.name].append(_parse_value(col, v, r))
        return cls(schema, cols)

    @property
    def n_rows(self):
        return self._n

    def __len__(self):
        return self._n

    def validate(self):
        for col in self.schema.columns:
            v = self.data[col.name]
            if col.is_numeric:
                bad = ~np.isfinite(v) | (v < col.numeric_min) | (v > col.numeric_max)
                if bad.any():
                    r = int(np.argmax(bad))
                    raise OutOfRange(
                        f"row {r}, column {col.name}: {v[r]!r} outside "
                        f"[{col.numeric_min}, {col.numeric_max}]", row=r, column=col.name)
                if col.integer and (v != np.floor(v)).any():
                    r = int(np.argmax(v != np.floor(v)))
                    raise BadValue(f"row {r}, column {col.name}: {v[r]!r} is not an integer",
                                   row=r, column=col.name)
            else:
                bad = (v < 0) | (v >= len(col.categories))
                if bad.any():
                    r = int(np.argmax(bad))
                    raise BadValue(f"row {r}, column {col.name}: code {v[r]} out of vocabulary",
                                   row=r, column=col.name)

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return SurveyTable(self.schema, {k: v[idx] for k, v in self.data.items()}, validate=False)

    def labels(self, name):
        col = self.schema.column(name)
        return [col.categories[c] for c in self.data[name]]

    def rows(self):
        out = []
        for i in range(self._n):
            rec = []
            for col in self.schema.columns:
                v = self.data[col.name][i]
                if col.is_numeric:
                    rec.append(int(v) if col.integer else float(v))
                else:
                    rec.append(col.categories[v])
            out.append(tuple(rec))
        return out

    def __eq__(self, other):
        if not isinstance(other, SurveyTable):
            return NotImplemented
        return (self.schema == other.schema and self._n == other._n
                and all(np.array_equal(self.data[k], other.data[k]) for k in self.data))

    def __repr__(self):
        return f"SurveyTable({self._n} rows, columns={self.schema.names})"


def _parse_value(col, v, row):
    if col.is_numeric:
        if isinstance(v, str):
            try:
                x = float(v.strip())
            except ValueError:
                raise BadValue(f"row {row}, column {col.name}: cannot parse {v!r}",
                               row=row, column=col.name) from None
        else:
            x = float(v)
        if not math.isfinite(x):
            raise BadValue(f"row {row}, column {col.name}: non-finite value", row=row, column=col.name)
        if x < col.numeric_min or x > col.numeric_max:
            raise OutOfRange(f"row {row}, column {col.name}: {x!r} outside "
                             f"[{col.numeric_min}, {col.numeric_max}]", row=row, column=col.name)
        return x
    label = v.strip() if isinstance(v, str) else v
    try:
        return col.categories.index(label)
    except ValueError:
        raise BadValue(f"row {row}, column {col.name}: {v!r} not in {list(col.categories)}",
                       row=row, column=col.name) from None


def format_number(x):
    """Integers print without a decimal point; other reals as shortest repr."""
    x = float(x)
    if x == math.floor(x) and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(x)


def _json_number(x):
    x = float(x)
    return int(x) if x == math.floor(x) and abs(x) < 2 ** 53 else x


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def load_csv(path, schema):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, header expected") from None
        if header != schema.names:
            missing = [n for n in schema.names if n not in header]
            raise MissingColumn(f"{path}: header {header} does not match schema "
                                f"{schema.names} (missing: {missing})")
        rows = [rec for rec in reader if rec and any(f.strip() for f in rec)]
    return SurveyTable.from_rows(schema, rows)


def write_table(table, fh):
    cols = table.schema.columns
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(table.schema.names)
    arrays = [table.data[c.name] for c in cols]
    for i in range(table.n_rows):
        w.writerow([
            format_number(a[i]) if c.is_numeric else c.categories[a[i]]
            for c, a in zip(cols, arrays)
        ])


def save_csv(table, path):
    with open(path, "w", newline="") as fh:
        write_table(table, fh)


# --------------------------------------------------------------------------
# numeric binning shared by the marginal oracle and the evaluation vectors
# --------------------------------------------------------------------------

def numeric_bins(values, col, bins=10):
    """Equal-width bin index over [min, max]; the top edge joins the last bin."""
    return _kernels.bin_index(values, col.numeric_min, col.numeric_max, bins)


# --------------------------------------------------------------------------
# surrogate survey
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SurrogateProfile:
    """Conditional tables of the surrogate survey.

    Generative process per record (five uniforms u0..u4 per row, row-major):
    sex ~ sex_probs (u0); age band ~ band_probs[sex] (u1); age uniform over
    the band's integers (u2); PERMIT ~ permit_probs[sex, band] (u3);
    P_STATUT ~ statut_probs[sex, band] (u4).  Categorical draws use the
    inverse CDF.
    """

    sex_labels: tuple
    sex_probs: np.ndarray
    bands: tuple  # (name, lo, hi) with inclusive integer bounds
    band_probs: np.ndarray  # (sex, band)
    permit_labels: tuple
    permit_probs: np.ndarray  # (sex, band, permit)
    statut_labels: tuple
    statut_probs: np.ndarray  # (sex, band, statut)
    age_min: int = 5
    age_max: int = 95
    _schema: SurveySchema = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.sex_labels = tuple(self.sex_labels)
        self.permit_labels = tuple(self.permit_labels)
        self.statut_labels = tuple(self.statut_labels)
        self.bands = tuple((str(b[0]), int(b[1]), int(b[2])) for b in self.bands)
        self.sex_probs = np.asarray(self.sex_probs, dtype=np.float64)
        self.band_probs = np.asarray(self.band_probs, dtype=np.float64)
        self.permit_probs = np.asarray(self.permit_probs, dtype=np.float64)
        self.statut_probs = np.asarray(self.statut_probs, dtype=np.float64)
        ns, nb = len(self.sex_labels), len(self.bands)
        expect = {
            "sex_probs": (ns,),
            "band_probs": (ns, nb),
            "permit_probs": (ns, nb, len(self.permit_labels)),
            "statut_probs": (ns, nb, len(self.statut_labels)),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            if (arr < 0).any() or not np.allclose(arr.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError(f"{name}: rows must be probability vectors")
        for name, lo, hi in self.bands:
            if not self.age_min <= lo <= hi <= self.age_max:
                raise ValueError(f"band {name} [{lo}, {hi}] outside age range")
        self._schema = SurveySchema((
            ColumnSpec("P_AGE", NUMERIC, numeric_min=self.age_min,
                       numeric_max=self.age_max, integer=True),
            ColumnSpec("P_SEX", BINARY if ns == 2 else CATEGORICAL, self.sex_labels),
            ColumnSpec("PERMIT", CATEGORICAL, self.permit_labels),
            ColumnSpec("P_STATUT", CATEGORICAL, self.statut_labels),
        ))

    @property
    def schema(self):
        return self._schema

    @classmethod
    def default(cls):
        return cls(
            sex_labels=("M", "F"),
            sex_probs=[0.49, 0.51],
            bands=(("child", 5, 17), ("adult", 18, 64), ("senior", 65, 95)),
            band_probs=[[0.17, 0.64, 0.19],
                        [0.16, 0.62, 0.22]],
            permit_labels=("FULL", "LEARNER", "NONE"),
            permit_probs=[
                [[0.03, 0.07, 0.90], [0.86, 0.02, 0.12], [0.78, 0.00, 0.22]],
                [[0.02, 0.06, 0.92], [0.78, 0.03, 0.19], [0.55, 0.00, 0.45]],
            ],
            statut_labels=("WORKER", "STUDENT", "RETIRED", "OTHER"),
            statut_probs=[
                [[0.02, 0.95, 0.00, 0.03], [0.72, 0.10, 0.06, 0.12], [0.10, 0.00, 0.85, 0.05]],
                [[0.02, 0.95, 0.00, 0.03], [0.66, 0.12, 0.07, 0.15], [0.06, 0.00, 0.86, 0.08]],
            ],
        )

    @classmethod
    def uniform(cls):
        """Every attribute independent and uniform (single age band)."""
        return cls(
            sex_labels=("M", "F"),
            sex_probs=[0.5, 0.5],
            bands=(("all", 5, 94),),
            band_probs=[[1.0], [1.0]],
            permit_labels=("FULL", "LEARNER", "NONE"),
            permit_probs=np.full((2, 1, 3), 1 / 3),
            statut_labels=("WORKER", "STUDENT", "RETIRED", "OTHER"),
            statut_probs=np.full((2, 1, 4), 0.25),
        )

    def to_json(self):
        return {
            "sex_labels": list(self.sex_labels),
            "sex_probs": self.sex_probs.tolist(),
            "age_min": self.age_min,
            "age_max": self.age_max,
            "bands": [{"name": n, "lo": lo, "hi": hi} for n, lo, hi in self.bands],
            "band_probs": self.band_probs.tolist(),
            "permit_labels": list(self.permit_labels),
            "permit_probs": self.permit_probs.tolist(),
            "statut_labels": list(self.statut_labels),
            "statut_probs": self.statut_probs.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            sex_labels=d["sex_labels"],
            sex_probs=d["sex_probs"],
            bands=tuple((b["name"], b["lo"], b["hi"]) for b in d["bands"]),
            band_probs=d["band_probs"],
            permit_labels=d["permit_labels"],
            permit_probs=d["permit_probs"],
            statut_labels=d["statut_labels"],
            statut_probs=d["statut_probs"],
            age_min=d.get("age_min", 5),
            age_max=d.get("age_max", 95),
        )


def load_profile(path):
    with open(path) as fh:
        return SurrogateProfile.from_json(json.load(fh))


def save_profile(profile, path):
    with open(path, "w") as fh:
        json.dump(profile.to_json(), fh, indent=2)
        fh.write("\n")


def generate_surrogate(n, seed, profile=None):
    profile = profile or SurrogateProfile.default()
    if n < 0:
        raise ValueError("n must be >= 0")
    schema = profile.schema
    if n == 0:
        return SurveyTable.empty(schema)
    u = Rng(seed).uniform((n, 5))
    sex = _kernels.categorical(np.broadcast_to(profile.sex_probs, (n, len(profile.sex_probs))), u[:, 0])
    band = _kernels.categorical(profile.band_probs[sex], u[:, 1])
    lo = np.array([b[1] for b in profile.bands], dtype=np.float64)[band]
    width = np.array([b[2] - b[1] + 1 for b in profile.bands], dtype=np.float64)[band]
    age = lo + np.minimum(np.floor(u[:, 2] * width), width - 1)
    permit = _kernels.categorical(profile.permit_probs[sex, band], u[:, 3])
    statut = _kernels.categorical(profile.statut_probs[sex, band], u[:, 4])
    return SurveyTable(schema, {"P_AGE": age, "P_SEX": sex, "PERMIT": permit, "P_STATUT": statut})


def true_marginals(profile=None, bins=10):
    """Exact per-column marginals; the numeric column as ``bins`` equal-width bins."""
    profile = profile or SurrogateProfile.default()
    joint = profile.sex_probs[:, None] * profile.band_probs  # (sex, band)
    age_col = profile.schema.column("P_AGE")
    age = np.zeros(bins)
    for b, (_, lo, hi) in enumerate(profile.bands):
        ages = np.arange(lo, hi + 1, dtype=np.float64)
        idx = numeric_bins(ages, age_col, bins)
        np.add.at(age, idx, joint[:, b].sum() / len(ages))
    return {
        "P_AGE": age,
        "P_SEX": profile.sex_probs.copy(),
        "PERMIT": np.einsum("sb,sbk->k", joint, profile.permit_probs),
        "P_STATUT": np.einsum("sb,sbk->k", joint, profile.statut_probs),
    }


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitHandle:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int


def split_holdout(table, test_fraction=0.2, seed=0):
    n = table.n_rows if isinstance(table, SurveyTable) else int(table)
    if n == 0:
        raise EmptyTable("cannot split an empty table")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = Rng(seed).permutation(n)
    n_test = round_half_up(test_fraction * n)
    return SplitHandle(np.sort(perm[n_test:]), np.sort(perm[:n_test]), seed)


def subsample(indices, fraction, seed):
    """Uniform draw without replacement; output keeps the input order."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise EmptyInput("cannot subsample an empty index list")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return indices.copy()
    k = max(1, round_half_up(fraction * len(indices)))
    pick = np.sort(Rng(seed).permutation(len(indices))[:k])
    return indices[pick]


def kfold(indices, k, seed):
    indices = np.asarray(indices, dtype=np.int64)
    if not 2 <= k <= len(indices):
        raise BadK(f"k={k} must satisfy 2 <= k <= {len(indices)}")
    folds = [np.sort(f) for f in np.array_split(Rng(seed).permutation(len(indices)), k)]
    out = []
    for i, val in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        out.append((indices[train], indices[val]))
    return out
