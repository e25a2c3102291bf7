"""Train, sample and evaluate target-aware DPP GANs for tabular design data.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import core
from .benchmark import get_problem, make_synthetic_dataset, run_benchmark
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DtaiganError, ValidationError
from .gan import GanConfig, GeneratorModel, generate_designs, normalize_variant, train, write_log
from .metrics import PER_DESIGN_COLUMNS, evaluate_all, write_kde
from .nn import Surrogates, train_surrogates

KDE_METRICS = PER_DESIGN_COLUMNS[1:]


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _stamp(cfg: ExperimentConfig, seed) -> str:
    return f"config_digest={cfg.digest()} seed={seed}"


def _schema(args, cfg: ExperimentConfig) -> core.Schema:
    if getattr(args, "schema", None):
        return core.load_schema(args.schema)
    if getattr(args, "problem", None):
        return get_problem(args.problem).schema
    if cfg.schema is not None:
        return core.Schema.from_dict(cfg.schema)
    raise ConfigError("no schema: pass --schema, --problem, or a config with a schema section")


def _targets(data, cfg: ExperimentConfig):
    t = cfg.targets
    return core.compute_targets(data, t.percentile, t.alpha, t.beta)


def cmd_make_data(args, cfg):
    problem = get_problem(args.problem)
    data = make_synthetic_dataset(problem, args.n, args.seed)
    core.write_dataset(args.out, data, comment=_stamp(cfg, args.seed))
    if args.schema_out:
        _write_json(args.schema_out, problem.schema.to_dict())


def cmd_train_surrogates(args, cfg):
    data = core.load_dataset(args.data, _schema(args, cfg))
    norm = core.fit_normalizer(data)
    reg, clf = cfg.surrogate.regressor, cfg.surrogate.classifier
    if args.seed is not None:
        reg, clf = replace(reg, seed=args.seed), replace(clf, seed=args.seed + 1)
    surrogates = train_surrogates(data, norm, reg, clf)
    doc = surrogates.to_dict()
    doc.update(config_digest=cfg.digest(), seed=reg.seed)
    _write_json(args.out, doc)
    logging.info("surrogate held-out metrics: %s", surrogates.metrics)


def cmd_train(args, cfg):
    data = core.load_dataset(args.data, _schema(args, cfg))
    surrogates = Surrogates.from_dict(_read_json(args.surrogates))
    gcfg: GanConfig = replace(cfg.gan, variant=normalize_variant(args.variant))
    if args.seed is not None:
        gcfg = replace(gcfg, seed=args.seed)
    if args.steps is not None:
        gcfg = replace(gcfg, steps=args.steps)
    targets = _targets(data, cfg)
    model, log = train(data, surrogates, targets, gcfg)
    doc = model.to_dict()
    doc.update(config_digest=cfg.digest(), seed=gcfg.seed, variant=gcfg.variant)
    _write_json(args.out, doc)
    if args.log:
        write_log(args.log, log, comment=_stamp(cfg, gcfg.seed))


def cmd_generate(args, cfg):
    model = GeneratorModel.from_dict(_read_json(args.model))
    designs = generate_designs(model, args.n, args.seed)
    core.write_designs(args.out, model.schema, designs, comment=_stamp(cfg, args.seed))


def cmd_evaluate(args, cfg):
    schema = _schema(args, cfg)
    data = core.load_dataset(args.data, schema)
    designs = core.load_designs(args.designs, schema)
    n = args.n if args.n is not None else cfg.metrics.n_eval
    if designs.shape[0] < n:
        raise ValidationError(f"{args.designs} holds {designs.shape[0]} designs, fewer than --n {n}")
    designs = designs[:n]
    norm = core.fit_normalizer(data)
    targets = _targets(data, cfg)
    oracle = get_problem(args.problem).oracle if args.problem else None
    surrogates = Surrogates.from_dict(_read_json(args.surrogates)) if args.surrogates else None
    report = evaluate_all(designs, data, targets, norm, oracle=oracle, surrogates=surrogates, cfg=cfg.metrics)
    out = Path(args.out_dir)
    report.write(out, extra={"config_digest": cfg.digest(), "seed": args.seed, "targets": targets.to_dict()})
    for metric in args.kde or []:
        write_kde(out / f"kde_{metric}.csv", report.per_design[metric].astype(float),
                  cfg.metrics.kde_points, comment=_stamp(cfg, args.seed))


def cmd_benchmark(args, cfg):
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        cfg = replace(cfg, benchmark=replace(cfg.benchmark, seeds=seeds))
    summary, rows = run_benchmark(cfg, args.out_dir, threads=args.threads)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        logging.warning("%d cell(s) failed; see results.csv", len(failed))


def _kde_list(text):
    metrics = [m for m in text.split(",") if m]
    for m in metrics:
        if m not in KDE_METRICS:
            raise argparse.ArgumentTypeError(f"unknown KDE metric {m!r}; choose from {KDE_METRICS}")
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtaigan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    p.add_argument("--problem", default="ring8")
    p.add_argument("--n", type=int, default=4500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.set_defaults(func=cmd_make_data)

    def data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--schema", help="schema JSON")
        p.add_argument("--problem", help="built-in problem id (schema and oracle)")

    p = sub.add_parser("train-surrogates", help="fit the performance regressor and feasibility classifier")
    data_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_surrogates)

    p = sub.add_parser("train", help="train a generator variant")
    data_args(p)
    p.add_argument("--surrogates", required=True)
    p.add_argument("--variant", default="proposed")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample designs from a trained generator")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score designs and write report.json / per_design.csv")
    data_args(p)
    p.add_argument("--designs", required=True)
    p.add_argument("--surrogates", help="used when no --problem oracle is available")
    p.add_argument("--n", type=int, help="evaluation count (default from config, 250)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kde", type=_kde_list, help=f"comma list of {','.join(KDE_METRICS)}")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run the full comparison")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help="comma list overriding config seeds")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    command = "dtaigan"
    try:
        args = parser.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        args.func(args, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except DtaiganError as exc:
        print(f"dtaigan {command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"dtaigan {command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with stage context
        print(f"dtaigan {command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
