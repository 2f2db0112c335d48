"""``popsyn`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from popsyn.checkpoint import load_checkpoint, save_checkpoint
from popsyn.codec import build_layout, encode
from popsyn.errors import DataError, PopsynError
from popsyn.eval_stats import (
    CI_MODES,
    METRICS,
    ErrorTriple,
    ExperimentPlan,
    RoundRecord,
    bootstrap_errors,
    eval_vector,
    percentile_ci,
    read_raw_csv,
    report_from_records,
    round_seed,
    run_experiment,
    write_raw_csv,
)
from popsyn.generators import TrainConfig, init_model, synthesize, train_model
from popsyn.report import emit_grid_report, emit_plot_data, safe_name
from popsyn.survey_data import (
    SurrogateProfile,
    generate_surrogate,
    load_csv,
    load_profile,
    load_schema,
    save_csv,
    save_schema,
    write_table,
)

log = logging.getLogger("popsyn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

@dataclass
class DatasetSource:
    id: str
    data: Path | None = None
    schema: Path | None = None
    surrogate: dict | None = None

    def load(self):
        if self.surrogate is not None:
            s = self.surrogate
            profile = load_profile(s["profile"]) if s.get("profile") else SurrogateProfile.default()
            return generate_surrogate(int(s["rows"]), int(s.get("seed", 0)), profile)
        return load_csv(self.data, load_schema(self.schema))


@dataclass
class RunConfig:
    datasets: list
    output: Path | None = None
    models: tuple = ("gan", "vae")
    fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    rounds: int = 16
    level: float = 0.95
    ci_mode: str = "bootstrap-models"
    test_fraction: float = 0.2
    bins: int = 10
    eval_mode: str = "marginal"
    workers: int = 1
    formats: tuple = ("csv", "markdown")
    train: dict = field(default_factory=dict)

    def validate(self):
        if not self.datasets:
            raise DataError("config lists no datasets")
        ids = [d.id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise DataError("dataset ids must be unique")
        for d in self.datasets:
            if d.surrogate is None:
                for p in (d.data, d.schema):
                    if p is None or not Path(p).exists():
                        raise DataError(f"dataset {d.id}: file {p} does not exist")
            elif d.surrogate.get("profile") and not Path(d.surrogate["profile"]).exists():
                raise DataError(f"dataset {d.id}: profile {d.surrogate['profile']} does not exist")
        if self.ci_mode not in CI_MODES:
            raise DataError(f"ci_mode must be one of {CI_MODES}")


_RUN_KEYS = {"datasets", "output", "models", "fractions", "rounds", "level", "ci_mode",
             "test_fraction", "bins", "eval_mode", "workers", "formats", "train", "seed"}


def load_run_config(path):
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - _RUN_KEYS
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    base = path.parent

    def rel(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    sources = []
    for d in doc.get("datasets", []):
        sur = d.get("surrogate")
        if sur is not None and sur.get("profile"):
            sur = dict(sur, profile=str(rel(sur["profile"])))
        sources.append(DatasetSource(str(d["id"]), rel(d.get("data")), rel(d.get("schema")), sur))
    cfg = RunConfig(datasets=sources)
    for key in ("models", "fractions", "formats"):
        if key in doc:
            setattr(cfg, key, tuple(doc[key]))
    for key in ("rounds", "level", "ci_mode", "test_fraction", "bins", "eval_mode", "workers"):
        if key in doc:
            setattr(cfg, key, doc[key])
    if "output" in doc:
        cfg.output = rel(doc["output"])
    cfg.train = {m: TrainConfig.from_json(c) for m, c in doc.get("train", {}).items()}
    return cfg, doc.get("seed")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _train_config(args):
    cfg = TrainConfig.from_json(json.loads(Path(args.train_config).read_text())) \
        if args.train_config else TrainConfig()
    over = {}
    for name in ("epochs", "batch_size", "noise_dim", "latent_dim"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if args.seed is not None:
        over["seed"] = args.seed
    return cfg.replace(**over) if over else cfg


def cmd_gen_surrogate(args):
    profile = load_profile(args.profile) if args.profile else SurrogateProfile.default()
    table = generate_surrogate(args.rows, args.seed, profile)
    save_csv(table, args.out)
    if args.schema_out:
        save_schema(table.schema, args.schema_out)
    log.info("wrote %d rows to %s", table.n_rows, args.out)
    return EXIT_OK


def cmd_train(args):
    schema = load_schema(args.schema)
    table = load_csv(args.data, schema)
    cfg = _train_config(args)
    layout = build_layout(schema)
    model = init_model(args.model, layout, cfg)
    train_log = train_model(model, encode(table, layout), cfg)
    save_checkpoint(model, args.out)
    if train_log.records:
        log.info("trained %s for %d epochs; final losses %s", args.model, len(train_log),
                 train_log.records[-1].losses)
    return EXIT_OK


def cmd_synthesize(args):
    schema = load_schema(args.schema) if args.schema else None
    model = load_checkpoint(args.model, schema)
    table = synthesize(model, args.count, args.seed)
    if args.out:
        save_csv(table, args.out)
    else:
        write_table(table, sys.stdout)
    return EXIT_OK


def cmd_evaluate(args):
    schema = load_schema(args.schema)
    real = eval_vector(load_csv(args.real, schema), args.bins, args.mode)
    synth = eval_vector(load_csv(args.synthetic, schema), args.bins, args.mode)
    t = ErrorTriple.between(synth, real)
    print(f"mae={t.mae:.4f} mse={t.mse:.4f} rmse={t.rmse:.4f}")
    return EXIT_OK


def cmd_bootstrap(args):
    schema = load_schema(args.schema)
    table = load_csv(args.data, schema)
    cfg = _train_config(args)
    master = args.seed if args.seed is not None else 0
    triples = bootstrap_errors(table, args.model, args.fraction, args.rounds, cfg, master,
                               test_fraction=args.test_fraction, bins=args.bins, mode=args.mode)
    records = [RoundRecord(Path(args.data).stem, args.model, args.fraction, j, t.mae, t.mse,
                           t.rmse, round_seed(master, 0, args.model, 0, j))
               for j, t in enumerate(triples)]
    if args.out:
        write_raw_csv(records, args.out)
    for metric in METRICS:
        vals = [t.get(metric) for t in triples]
        if len(vals) >= 2:
            ci = percentile_ci(vals, args.level)
            print(f"{metric} mean={ci.mean:.4f} lower={ci.lower:.4f} upper={ci.upper:.4f}")
        else:
            print(f"{metric} mean={vals[0]:.4f}")
    return EXIT_OK


def _write_outputs(report, outdir, formats):
    emit_grid_report(report, formats, outdir / "report")
    emit_plot_data(report, outdir / "plotdata")


def cmd_sweep(args):
    cfg, cfg_seed = load_run_config(args.config)
    for key in ("rounds", "level", "workers", "ci_mode"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    if args.fractions:
        cfg.fractions = tuple(float(x) for x in args.fractions.split(","))
    if args.models:
        cfg.models = tuple(m.strip() for m in args.models.split(","))
    cfg.validate()
    outdir = Path(args.out) if args.out else cfg.output
    if outdir is None:
        raise UsageError("sweep needs --out or an 'output' entry in the config")
    datasets = {d.id: d.load() for d in cfg.datasets}
    plan = ExperimentPlan(
        datasets=datasets, models=cfg.models, fractions=cfg.fractions, rounds=cfg.rounds,
        ci_mode=cfg.ci_mode, master_seed=args.seed, level=cfg.level,
        test_fraction=cfg.test_fraction, bins=cfg.bins, eval_mode=cfg.eval_mode,
        train=cfg.train, workers=cfg.workers, keep_models=True,
    )
    report = run_experiment(plan)
    for sub in ("report", "checkpoints", "plotdata", "raw"):
        (outdir / sub).mkdir(parents=True, exist_ok=True)
    write_raw_csv(report.records, outdir / "raw" / "rounds.csv")
    _write_outputs(report, outdir, cfg.formats)
    for (d, m), model in sorted(report.models_out.items()):
        save_checkpoint(model, outdir / "checkpoints" / f"{safe_name(d)}_{m}.json")
    log.info("sweep finished: %d round records in %s", len(report.records), outdir)
    return EXIT_OK


def cmd_report(args):
    records = read_raw_csv(args.raw)
    datasets = list(dict.fromkeys(r.dataset for r in records))
    models = list(dict.fromkeys(r.model for r in records))
    fractions = sorted({r.fraction for r in records})
    report = report_from_records(records, datasets, models, fractions, args.level)
    formats = tuple(args.formats.split(","))
    _write_outputs(report, Path(args.out), formats)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--train-config", help="JSON file of training hyperparameters")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--noise-dim", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="popsyn", description="Tabular GAN/VAE population synthesis "
                     "with bootstrap robustness evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-surrogate", help="write a surrogate survey CSV")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.add_argument("--profile", help="surrogate profile JSON")
    p.set_defaults(func=cmd_gen_surrogate)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    p.add_argument("--model", choices=("gan", "vae"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="draw a synthetic population from a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema", help="verify the checkpoint against this schema")
    p.add_argument("--out", help="output CSV (stdout when omitted)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="MAE/MSE/RMSE between two tables")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--mode", choices=("marginal", "joint"), default="marginal")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bootstrap", help="bootstrap error rounds for one model and fraction")
    p.add_argument("--model", choices=("gan", "vae"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--rounds", type=int, default=16)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--mode", choices=("marginal", "joint"), default="marginal")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", help="raw round CSV")
    _add_train_flags(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("sweep", help="run the full dataset x model x fraction grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--rounds", type=int)
    p.add_argument("--fractions", help="comma-separated, e.g. 0.25,0.5,0.75,1")
    p.add_argument("--models", help="comma-separated subset of gan,vae")
    p.add_argument("--level", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--ci-mode", choices=CI_MODES)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="rebuild report tables and plot data from raw records")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--formats", default="csv,markdown")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"popsyn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PopsynError, Exception) as exc:  # noqa: BLE001 - mapped to an exit code
        print(f"popsyn: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
