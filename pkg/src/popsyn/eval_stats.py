"""Distribution-level errors, bootstrap resampling, percentile intervals and
the dataset x model x fraction x round experiment runner."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from popsyn import _kernels
from popsyn.codec import build_layout, encode
from popsyn.errors import (
    EmptyData,
    EmptyInput,
    EmptyList,
    EmptyTable,
    LengthMismatch,
    TooFewSamples,
)
from popsyn.generators import TrainConfig, init_model, synthesize, train_model
from popsyn.rng import Rng, derive_seed
from popsyn.survey_data import numeric_bins, split_holdout, subsample, true_marginals

METRICS = ("mae", "mse", "rmse")
MODEL_IDS = {"gan": 0, "vae": 1}
CI_MODES = ("bootstrap-models", "resynthesis-draws")

# stream tags for derive_seed
_SPLIT = 101
_RESYNTH = 102
_R_SUBSAMPLE, _R_BOOT, _R_TRAIN, _R_SYNTH = 1, 2, 3, 4


# --------------------------------------------------------------------------
# evaluation vectors and metrics
# --------------------------------------------------------------------------

@dataclass
class EvalVector:
    values: np.ndarray
    blocks: tuple  # (name, size) per attribute, or a single ("joint", size)
    provenance: str = ""

    def __len__(self):
        return len(self.values)


def _column_codes(table, col, bins):
    v = table.data[col.name]
    if col.is_numeric:
        return numeric_bins(v, col, bins), bins
    return v, len(col.categories)


def eval_vector(table, bins=10, mode="marginal", provenance=""):
    """Relative-frequency vector of ``table``.

    ``marginal``: per-column frequencies concatenated in schema order
    (categories in schema order; numerics in ``bins`` equal-width bins).
    ``joint``: the full contingency table over all columns, C order.
    """
    n = table.n_rows
    if n == 0:
        raise EmptyTable("cannot build an evaluation vector from an empty table")
    if mode == "marginal":
        parts, blocks = [], []
        for col in table.schema.columns:
            codes, k = _column_codes(table, col, bins)
            parts.append(np.bincount(codes, minlength=k) / n)
            blocks.append((col.name, k))
        return EvalVector(np.concatenate(parts), tuple(blocks), provenance)
    if mode == "joint":
        flat = np.zeros(n, dtype=np.int64)
        size = 1
        for col in table.schema.columns:
            codes, k = _column_codes(table, col, bins)
            flat = flat * k + codes
            size *= k
        return EvalVector(np.bincount(flat, minlength=size) / n, (("joint", size),), provenance)
    raise ValueError(f"unknown eval mode {mode!r}")


def truth_vector(profile=None, bins=10, mode="marginal"):
    """Exact evaluation vector of the surrogate profile (analytic oracle)."""
    from popsyn.survey_data import SurrogateProfile

    profile = profile or SurrogateProfile.default()
    schema = profile.schema
    if mode == "marginal":
        m = true_marginals(profile, bins)
        return EvalVector(np.concatenate([m[c.name] for c in schema.columns]),
                          tuple((c.name, len(m[c.name])) for c in schema.columns), "truth")
    if mode != "joint":
        raise ValueError(f"unknown eval mode {mode!r}")
    age_col = schema.column("P_AGE")
    ns, nb = len(profile.sex_labels), len(profile.bands)
    # P(age bin | band)
    age_given_band = np.zeros((nb, bins))
    for b, (_, lo, hi) in enumerate(profile.bands):
        ages = np.arange(lo, hi + 1, dtype=np.float64)
        np.add.at(age_given_band[b], numeric_bins(ages, age_col, bins), 1.0 / len(ages))
    joint = np.einsum("s,sb,ba,sbp,sbq->aspq", profile.sex_probs, profile.band_probs,
                      age_given_band, profile.permit_probs, profile.statut_probs)
    return EvalVector(joint.reshape(-1), (("joint", joint.size),), "truth")


def _as_array(x):
    return np.asarray(x.values if isinstance(x, EvalVector) else x, dtype=np.float64)


def _pair(x, y):
    a, b = _as_array(x), _as_array(y)
    if a.shape != b.shape:
        raise LengthMismatch(f"vector lengths {a.shape} vs {b.shape}")
    if a.size == 0:
        raise LengthMismatch("empty vectors")
    return a, b


def mae(x, y):
    a, b = _pair(x, y)
    return float(np.mean(np.abs(a - b)))


def mse(x, y):
    a, b = _pair(x, y)
    return float(np.mean((a - b) ** 2))


def rmse(x, y):
    return math.sqrt(mse(x, y))


@dataclass(frozen=True)
class ErrorTriple:
    mae: float
    mse: float
    rmse: float

    @classmethod
    def between(cls, x, y):
        m = mse(x, y)
        return cls(mae(x, y), m, math.sqrt(m))

    def get(self, metric):
        return getattr(self, metric)


# --------------------------------------------------------------------------
# bootstrap and intervals
# --------------------------------------------------------------------------

def bootstrap_resample(indices, seed):
    """``n`` draws with replacement; returns ``(sample, out_of_bag)``."""
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    if n == 0:
        raise EmptyInput("cannot resample an empty index list")
    draws = Rng(seed).integers(n, n)
    drawn = _kernels.drawn_mask(draws, n)
    return indices[draws], indices[~drawn]


def bootstrap_replicates(values, statistic, rounds, seed):
    """``statistic`` over ``rounds`` resamples of ``values``, one stream for all."""
    values = np.asarray(values)
    n = len(values)
    if n == 0:
        raise EmptyInput("no values to resample")
    draws = Rng(seed).integers(n, (rounds, n))
    return np.array([statistic(values[d]) for d in draws])


def mean_error(errors):
    errors = list(errors)
    if not errors:
        raise EmptyList("mean of an empty error list")
    return math.fsum(errors) / len(errors)


@dataclass(frozen=True)
class ConfidenceInterval:
    mean: float
    lower: float
    upper: float
    level: float = 0.95
    rounds: int = 0


def percentile(values, q):
    """Linear interpolation between order statistics at position ``q * (n - 1)``."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))


def percentile_ci(errors, level=0.95):
    errors = list(errors)
    if len(errors) < 2:
        raise TooFewSamples("a percentile interval needs at least 2 values")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    return ConfidenceInterval(mean_error(errors), percentile(errors, tail),
                              percentile(errors, 1.0 - tail), level, len(errors))


def _interval(errors, level):
    if len(errors) == 1:
        return ConfidenceInterval(errors[0], errors[0], errors[0], level, 1)
    return percentile_ci(errors, level)


# --------------------------------------------------------------------------
# bootstrap rounds over a dataset
# --------------------------------------------------------------------------

@dataclass
class RoundTrace:
    """What one round touched; handed to the optional ``observer``."""
    round: int
    seed: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    subsample: np.ndarray
    sample: np.ndarray
    evaluated_on: np.ndarray
    used_test_fallback: bool


def round_seed(master_seed, dataset_index, model, fraction_index, round_index):
    return derive_seed(master_seed, dataset_index, MODEL_IDS[model], fraction_index, round_index)


def _split(dataset, master_seed, dataset_index, test_fraction):
    return split_holdout(dataset, test_fraction, derive_seed(master_seed, _SPLIT, dataset_index))


def _bootstrap_round(dataset, encoded, split, model_kind, fraction, config, seed, j,
                     bins, mode, reference, observer):
    sub = subsample(split.train_indices, fraction, derive_seed(seed, _R_SUBSAMPLE))
    sample, oob = bootstrap_resample(sub, derive_seed(seed, _R_BOOT))
    fallback = len(oob) == 0
    eval_idx = split.test_indices if fallback else oob
    if len(eval_idx) == 0:
        raise EmptyData("no out-of-bag rows and an empty test set")
    cfg = config.replace(seed=derive_seed(seed, _R_TRAIN))
    model = init_model(model_kind, encoded.layout, cfg)
    train_model(model, encoded.data[sample], cfg)
    synth = synthesize(model, len(eval_idx), derive_seed(seed, _R_SYNTH))
    ref = reference if reference is not None else eval_vector(dataset.take(eval_idx), bins, mode)
    triple = ErrorTriple.between(eval_vector(synth, bins, mode), ref)
    if observer is not None:
        observer(RoundTrace(j, seed, split.train_indices, split.test_indices, sub, sample,
                            eval_idx, fallback))
    return triple, model


def bootstrap_errors(dataset, model_kind, fraction, rounds, config=None, master_seed=0, *,
                     test_fraction=0.2, dataset_index=0, fraction_index=0, bins=10,
                     mode="marginal", reference=None, observer=None):
    """Error triples of ``rounds`` independently trained models.

    Round ``j``: subsample the training split to ``fraction``, resample it with
    replacement, train a fresh model, synthesize as many rows as the
    out-of-bag set and score frequency vectors against it (or against
    ``reference`` when given).  The held-out test split is never resampled;
    it is only scored when a round has no out-of-bag rows.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if dataset.n_rows == 0:
        raise EmptyData("empty dataset")
    config = config or TrainConfig()
    split = _split(dataset, master_seed, dataset_index, test_fraction)
    encoded = encode(dataset, build_layout(dataset.schema))
    out = []
    for j in range(rounds):
        seed = round_seed(master_seed, dataset_index, model_kind, fraction_index, j)
        triple, _ = _bootstrap_round(dataset, encoded, split, model_kind, fraction, config,
                                     seed, j, bins, mode, reference, observer)
        out.append(triple)
    return out


def resynthesis_errors(dataset, model_kind, fraction, draws, config=None, master_seed=0, *,
                       test_fraction=0.2, dataset_index=0, fraction_index=0, bins=10,
                       mode="marginal"):
    """One model on the subsampled training split, ``draws`` synthetic
    populations of test-set size, each scored against the test split."""
    config = config or TrainConfig()
    split = _split(dataset, master_seed, dataset_index, test_fraction)
    if len(split.test_indices) == 0:
        raise EmptyData("empty test split")
    base = derive_seed(master_seed, _RESYNTH, dataset_index, MODEL_IDS[model_kind], fraction_index)
    sub = subsample(split.train_indices, fraction, derive_seed(base, _R_SUBSAMPLE))
    encoded = encode(dataset, build_layout(dataset.schema))
    cfg = config.replace(seed=derive_seed(base, _R_TRAIN))
    model = init_model(model_kind, encoded.layout, cfg)
    train_model(model, encoded.data[sub], cfg)
    ref = eval_vector(dataset.take(split.test_indices), bins, mode)
    out = []
    for j in range(draws):
        seed = derive_seed(base, _R_SYNTH, j)
        synth = synthesize(model, len(split.test_indices), seed)
        out.append((ErrorTriple.between(eval_vector(synth, bins, mode), ref), seed))
    return out, model


# --------------------------------------------------------------------------
# experiment grid
# --------------------------------------------------------------------------

@dataclass
class ExperimentPlan:
    datasets: dict  # name -> SurveyTable, in report order
    models: tuple = ("gan", "vae")
    fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    rounds: int = 16
    ci_mode: str = "bootstrap-models"
    master_seed: int = 0
    level: float = 0.95
    test_fraction: float = 0.2
    bins: int = 10
    eval_mode: str = "marginal"
    train: dict = field(default_factory=dict)  # model -> TrainConfig
    workers: int = 1
    keep_models: bool = False

    def __post_init__(self):
        self.models = tuple(self.models)
        self.fractions = tuple(float(f) for f in self.fractions)
        if not self.datasets:
            raise ValueError("plan needs at least one dataset")
        if not self.models or any(m not in MODEL_IDS for m in self.models):
            raise ValueError(f"models must be a non-empty subset of {sorted(MODEL_IDS)}")
        if not self.fractions or any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if len(set(self.fractions)) != len(self.fractions):
            raise ValueError("duplicate fractions")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.ci_mode not in CI_MODES:
            raise ValueError(f"ci_mode must be one of {CI_MODES}")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    def config_for(self, model):
        return self.train.get(model) or TrainConfig()

    @property
    def ci_fraction(self):
        return max(self.fractions)


@dataclass(frozen=True)
class RoundRecord:
    dataset: str
    model: str
    fraction: float
    round: int
    mae: float
    mse: float
    rmse: float
    seed: int


@dataclass
class ExperimentReport:
    datasets: tuple
    models: tuple
    fractions: tuple
    level: float
    cells: dict  # (dataset, model, fraction) -> ErrorTriple
    intervals: dict  # (dataset, model, metric) -> ConfidenceInterval
    records: list
    models_out: dict = field(default_factory=dict)  # (dataset, model) -> trained model

    def records_for(self, dataset, model, fraction):
        return [r for r in self.records
                if r.dataset == dataset and r.model == model and r.fraction == fraction]


def report_from_records(records, datasets, models, fractions, level):
    """Aggregate raw round records into grid cells and intervals.

    A grid cell holds the round means of MAE and MSE and ``sqrt`` of the mean
    MSE.  Intervals are taken over the per-round values at the largest
    fraction; their means are plain averages of those values.
    """
    datasets, models = tuple(datasets), tuple(models)
    fractions = tuple(sorted(float(f) for f in fractions))
    ci_fraction = max(fractions)
    by_cell = {}
    for r in records:
        by_cell.setdefault((r.dataset, r.model, r.fraction), []).append(r)
    cells, intervals = {}, {}
    for d in datasets:
        for m in models:
            for f in fractions:
                rs = by_cell.get((d, m, f))
                if not rs:
                    raise EmptyData(f"no round records for {(d, m, f)}")
                mean_mse = mean_error(r.mse for r in rs)
                cells[(d, m, f)] = ErrorTriple(mean_error(r.mae for r in rs), mean_mse,
                                               math.sqrt(mean_mse))
            rs = sorted(by_cell[(d, m, ci_fraction)], key=lambda r: r.round)
            for metric in METRICS:
                intervals[(d, m, metric)] = _interval([getattr(r, metric) for r in rs], level)
    return ExperimentReport(datasets, models, fractions, level, cells, intervals, list(records))


def _run_round_task(args):
    (dataset, name, d_idx, model, frac, f_idx, j, cfg, master, plan_opts, keep) = args
    split = _split(dataset, master, d_idx, plan_opts["test_fraction"])
    encoded = encode(dataset, build_layout(dataset.schema))
    seed = round_seed(master, d_idx, model, f_idx, j)
    triple, trained = _bootstrap_round(dataset, encoded, split, model, frac, cfg, seed, j,
                                       plan_opts["bins"], plan_opts["eval_mode"], None, None)
    rec = RoundRecord(name, model, frac, j, triple.mae, triple.mse, triple.rmse, seed)
    return [rec], (trained if keep else None)


def _run_resynth_task(args):
    (dataset, name, d_idx, model, frac, f_idx, rounds, cfg, master, plan_opts, keep) = args
    triples, trained = resynthesis_errors(
        dataset, model, frac, rounds, cfg, master, test_fraction=plan_opts["test_fraction"],
        dataset_index=d_idx, fraction_index=f_idx, bins=plan_opts["bins"],
        mode=plan_opts["eval_mode"])
    recs = [RoundRecord(name, model, frac, j, t.mae, t.mse, t.rmse, s)
            for j, (t, s) in enumerate(triples)]
    return recs, (trained if keep else None)


def run_experiment(plan):
    """Fill the whole grid; results are assembled in canonical order, so the
    worker count never changes the report."""
    opts = {"test_fraction": plan.test_fraction, "bins": plan.bins, "eval_mode": plan.eval_mode}
    tasks, keys = [], []
    for d_idx, (name, table) in enumerate(plan.datasets.items()):
        for model in plan.models:
            cfg = plan.config_for(model)
            for f_idx, frac in enumerate(plan.fractions):
                keep_cell = plan.keep_models and frac == plan.ci_fraction
                if plan.ci_mode == "bootstrap-models":
                    for j in range(plan.rounds):
                        tasks.append((table, name, d_idx, model, frac, f_idx, j, cfg,
                                      plan.master_seed, opts, keep_cell and j == 0))
                        keys.append((name, model))
                else:
                    tasks.append((table, name, d_idx, model, frac, f_idx, plan.rounds, cfg,
                                  plan.master_seed, opts, keep_cell))
                    keys.append((name, model))
    fn = _run_round_task if plan.ci_mode == "bootstrap-models" else _run_resynth_task
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(fn, tasks))
    else:
        results = [fn(t) for t in tasks]
    records, kept = [], {}
    for key, (recs, trained) in zip(keys, results):
        records.extend(recs)
        if trained is not None:
            kept[key] = trained
    report = report_from_records(records, plan.datasets.keys(), plan.models, plan.fractions,
                                 plan.level)
    report.models_out = kept
    return report


# --------------------------------------------------------------------------
# raw record CSV
# --------------------------------------------------------------------------

RAW_FIELDS = ("dataset", "model", "fraction", "round", "mae", "mse", "rmse", "seed")


def write_raw_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RAW_FIELDS)
        for r in records:
            w.writerow([r.dataset, r.model, repr(r.fraction), r.round, repr(r.mae),
                        repr(r.mse), repr(r.rmse), r.seed])


def read_raw_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RAW_FIELDS:
            raise EmptyData(f"{path}: expected header {','.join(RAW_FIELDS)}")
        return [RoundRecord(d, m, float(f), int(j), float(a), float(s), float(r), int(seed))
                for d, m, f, j, a, s, r, seed in reader]
