"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .blackbox import OpaquePolicy, run_blackbox, write_dominance_report, conditional_dominance_report, \
    write_policy_registration
from .core import Dataset, PatchedModel, rowdot
from .debias import check_consistency
from .errors import ConfigError, EnsembleError
from .oracle import SolveStats, region_from_json, solve_batch
from .synthlab import LabelMean, generate, load_models, save_models
from .whitebox import ensemble_metrics, run_whitebox


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--alpha", type=float, default=None, help=f"consistency tolerance (default {harness.DEFAULT_ALPHA})")
    p.add_argument("--config", type=Path, default=None, help="JSON file with ExperimentConfig fields")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _config(args, experiment=None) -> harness.ExperimentConfig:
    over = {"seed": args.seed, "alpha": args.alpha, "experiment": experiment}
    if args.config is not None:
        cfg = harness.load_config(args.config, **over)
    else:
        cfg = harness.ExperimentConfig(**{k: v for k, v in over.items() if v is not None})
    return cfg


def _out(args) -> Path:
    out = args.out or Path(".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from exc
    return out


def _load_data(path: Path) -> Dataset:
    try:
        return Dataset.from_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc


def _region(args, train: Dataset, cfg):
    if getattr(args, "region", None) is not None:
        try:
            obj = json.loads(Path(args.region).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read region {args.region}: {exc}") from exc
        return region_from_json(obj, labels=train.labels)
    return harness.build_region(cfg, train)


def cmd_generate(args):
    cfg = _config(args)
    out = _out(args)
    train, debias = generate(cfg.generator)
    train.to_csv(out / "train.csv")
    debias.to_csv(out / "debias.csv")
    print(f"wrote {out / 'train.csv'} ({train.n} rows) and {out / 'debias.csv'} ({debias.n} rows)")


def cmd_train_base(args):
    cfg = _config(args, args.experiment)
    out = _out(args)
    train = _load_data(args.train)
    models = harness.train_base(cfg, train)
    save_models(models, out / "models.json")
    save_models([LabelMean.fit(train)], out / "label_mean.json")
    print(f"wrote {len(models)} {cfg.specialization} specialists to {out / 'models.json'}")


def _bases(path):
    try:
        return load_models(path)
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot read models {path}: {exc}") from exc


def cmd_ensemble(args):
    cfg = _config(args, args.experiment)
    out = _out(args)
    train, debias = _load_data(args.train), _load_data(args.debias)
    region = _region(args, train, cfg)
    bases = _bases(args.models)
    stats = SolveStats()
    M = debias.M
    if args.method == "wb":
        models = [PatchedModel(b, M, f"h{i}").bind(debias) for i, b in enumerate(bases)]
        ens, info = run_whitebox(models, debias, region, cfg.alpha, stats=stats)
        for i, tr in enumerate(info.traces):
            tr.to_csv(out / f"wb_trace_h{i}.csv")
        with (out / "wb_rounds.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["round", "model", "realized_payoff", "self_assessed_payoff", "selection_freq"])
            for rm in info.rounds:
                for i in range(len(models)):
                    w.writerow([rm.round, i, repr(float(rm.model_realized[i])),
                                repr(float(rm.model_self_assessed[i])), repr(float(rm.selection_freq[i]))])
        with (out / "policy_variance.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["round", "sample_rank", "avg_variance"])
            for rm in info.rounds:
                for r, v in enumerate(rm.sample_variance):
                    w.writerow([rm.round, r, repr(float(v))])
        worst = max(check_consistency(debias, m, f, cfg.alpha).max_score
                    for m, f in zip(ens.models, info.final_families))
        harness.save_ensemble(out / "ensemble_wb.json", "wb", cfg.alpha, ens.bucketing, region, ens.models)
        met = ensemble_metrics(ens, debias)
        print(f"white box: {info.outer_rounds} rounds, {info.n_patches} patches, {stats.calls} oracle solves, "
              f"realized {met['realized']:.6f}, self-assessed {met['self_assessed']:.6f}, "
              f"max consistency score {worst:.3g}")
    else:
        policies = []
        for i, b in enumerate(bases):
            acts = solve_batch(region, PatchedModel(b, M).bind(debias).values)
            policies.append(OpaquePolicy(f"pi{i}", acts, harness.policy_callable(b, M, region),
                                         f"induced by {args.models.name}[{i}]"))
        write_policy_registration(policies, out / "policies.csv")
        h, info = run_blackbox(PatchedModel(LabelMean.fit(train), M, "h0"), policies, debias, region,
                               cfg.alpha, stats=stats)
        info.trace.to_csv(out / "bb_trace.csv")
        rows = conditional_dominance_report(h, policies, debias, region, info.bucketing, cfg.alpha, cfg.mass_floor)
        write_dominance_report(rows, out / "dominance_report.csv")
        harness.save_ensemble(out / "ensemble_bb.json", "bb", cfg.alpha, info.bucketing, region, [h], bases)
        acts = solve_batch(region, h.values)
        print(f"black box: {info.rounds} rounds, {info.n_patches} patches, {stats.calls} oracle solves, "
              f"realized {rowdot(acts, debias.labels).mean():.6f}, "
              f"max consistency score {info.trace.terminal_max_score:.3g}, "
              f"flagged dominance rows {sum(r.flag for r in rows)}")


def cmd_evaluate(args):
    _config(args)
    out = _out(args)
    data = _load_data(args.data)
    ens = harness.load_ensemble(args.ensemble)
    region = ens["region"]
    if ens["method"] == "wb":
        res = harness.evaluate(ens["ensemble"], data, region)
    else:
        res = harness.evaluate(ens["models"][0], data, region, ens["bucketing"], context=ens["context"])
    clair = harness.clairvoyant_payoff(data, region)
    rows = [("realized", res["realized"]), ("self_assessed", res["self_assessed"]), ("clairvoyant", clair)]
    with (out / "evaluation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["metric", "value"])
        for k, v in rows:
            w.writerow([k, "" if v is None else repr(float(v))])
    with (out / "action_histogram.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["coord", "bucket", "mass"])
        for j, row in enumerate(res["histogram"]):
            for b in np.flatnonzero(row):
                w.writerow([j, int(b), repr(float(row[b]))])
    for k, v in rows:
        print(f"{k}: {'n/a' if v is None else f'{v:.6f}'}")


def cmd_report(args):
    _config(args)
    out = _out(args)
    report = harness.load_run(args.run)
    for p in harness.emit_report(report, out):
        print(p)


def cmd_experiment(args):
    cfg = _config(args, args.experiment)
    out = _out(args)
    report = harness.run_experiment(cfg)
    harness.write_run_artifacts(report, out)
    if args.timing:
        harness.write_timing(report, out / "timing.json")
    wb, bb = report.whitebox, report.blackbox
    print(f"experiment {cfg.experiment} (seed {cfg.seed}, alpha {cfg.alpha:g})")
    print(f"  clairvoyant {report.clairvoyant:.6f}  best initial {report.best_initial:.6f}")
    for name, r in (("white box", wb), ("black box", bb)):
        print(f"  {name}: realized {r.final_realized:.6f}  self-assessed {r.final_self_assessed:.6f}  "
              f"patches {r.n_patches}  solves {r.solves}  wall {r.wall_seconds:.2f}s")
    flagged = sum(1 for row in report.dominance if row[-1])
    print(f"  flagged dominance rows: {flagged}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcensemble", description="Debias and ensemble predictors for linear downstream objectives.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write train/debias datasets")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-base", help="train the specialist base models")
    _common(p)
    p.add_argument("--train", type=Path, required=True, help="training dataset CSV")
    p.add_argument("--experiment", choices=sorted(harness.TABLE), default=None,
                   help="picks the specialization (A/C coordinate, B/D group)")
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("ensemble", help="run white-box (wb) or black-box (bb) ensembling")
    p.add_argument("method", choices=["wb", "bb"])
    _common(p)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--debias", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True, help="models.json from train-base")
    p.add_argument("--region", type=Path, default=None, help="region JSON (default: from the experiment)")
    p.add_argument("--experiment", choices=sorted(harness.TABLE), default=None)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="evaluate a saved ensemble on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ensemble", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render report files from a saved run.json")
    _common(p)
    p.add_argument("--run", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="run one experiment end to end")
    p.add_argument("experiment", choices=sorted(harness.TABLE))
    _common(p)
    p.add_argument("--timing", action="store_true", help="also write timing.json (not deterministic)")
    p.set_defaults(func=cmd_experiment)
    return parser


def _mark_failed(args, exc) -> None:
    """Leave a marker next to whatever partial output was flushed."""
    out = getattr(args, "out", None)
    if out is not None and Path(out).is_dir():
        (Path(out) / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except EnsembleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _mark_failed(args, exc)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
