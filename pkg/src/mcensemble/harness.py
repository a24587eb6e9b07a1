"""Experiment matrix, evaluation, persistence and report emission.

Experiments A-D cross two kinds of specialist base models (per label
coordinate, per group) with two downstream regions (covariance-constrained
simplex, capped box).  Each run trains the specialists, runs both ensemblers
on the same debias sample and records payoff series, consistency tables and
the quantities the guarantees are stated in.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .blackbox import (OpaquePolicy, blackbox_context, conditional_dominance_report, payoff_path,
                       run_blackbox, write_policy_registration)
from .core import (Bucketing, Dataset, Patch, PatchedModel, ConditioningEvent, descriptor_from_json,
                   describe, predict, rowdot)
from .debias import check_consistency
from .errors import ConfigError
from .oracle import CovarianceConstrained, LinearCapped, SolveStats, region_from_json, solve_batch
from .synthlab import (GBTParams, GeneratorConfig, LabelMean, base_from_json, generate,
                       make_coordinate_specialists, make_group_specialists)
from .whitebox import WhiteBoxEnsemble, ensemble_metrics, run_whitebox, swap_payoff

DEFAULT_ALPHA = 1e-5
TABLE = {"A": ("coordinate", "covariance"), "B": ("group", "covariance"),
         "C": ("coordinate", "linear_capped"), "D": ("group", "linear_capped")}
DEFAULT_CAPS = (((0, 1), 0.5), ((1, 2), 0.6))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "A"
    specialization: str | None = None
    region: str | None = None
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    gbt: GBTParams = field(default_factory=GBTParams)
    generator: GeneratorConfig | None = None
    out_dir: str | None = None
    risk_factor: float = 2.0
    caps: tuple = DEFAULT_CAPS
    mass_floor: float = 0.05

    def __post_init__(self):
        exp = str(self.experiment).upper()
        if exp not in TABLE:
            raise ConfigError(f"unknown experiment {self.experiment!r} (expected one of A, B, C, D)")
        spec, reg = TABLE[exp]
        if self.specialization not in (None, spec) or self.region not in (None, reg):
            raise ConfigError(f"experiment {exp} is ({spec}, {reg}); got "
                              f"({self.specialization}, {self.region})")
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ConfigError("alpha must be a positive finite number")
        if not self.mass_floor > 0:
            raise ConfigError("mass_floor must be positive")
        gen = self.generator or GeneratorConfig(seed=self.seed)
        if gen.seed != self.seed:
            gen = GeneratorConfig(**dict(asdict(gen), seed=self.seed))
        object.__setattr__(self, "experiment", exp)
        object.__setattr__(self, "specialization", spec)
        object.__setattr__(self, "region", reg)
        object.__setattr__(self, "generator", gen)
        object.__setattr__(self, "caps", tuple((tuple(int(i) for i in idx), float(c)) for idx, c in self.caps))

    def to_json(self) -> dict:
        out = asdict(self)
        out["caps"] = [[list(idx), c] for idx, c in self.caps]
        return out

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        kw = dict(obj)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            if isinstance(kw.get("gbt"), dict):
                kw["gbt"] = GBTParams(**kw["gbt"])
            if isinstance(kw.get("generator"), dict):
                kw["generator"] = GeneratorConfig(**kw["generator"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kw)


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_json(obj, **overrides)


def build_region(cfg: ExperimentConfig, train: Dataset):
    if cfg.region == "covariance":
        return CovarianceConstrained.from_labels(train.labels, risk_factor=cfg.risk_factor)
    return LinearCapped(train.d, cfg.caps)


def train_base(cfg: ExperimentConfig, train: Dataset) -> list:
    if cfg.specialization == "coordinate":
        return make_coordinate_specialists(train, cfg.gbt)
    return make_group_specialists(train, cfg.gbt)


def policy_callable(base, M, region, stats=None):
    def act(features, group_id):
        H = np.minimum(np.maximum(base.predict(features, group_id), 0.0), M)
        return solve_batch(region, H, stats)
    return act


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def action_histogram(actions: np.ndarray, bucketing: Bucketing) -> np.ndarray:
    """d x num_buckets matrix of the fraction of samples per bucket, per coordinate."""
    n, d = actions.shape
    return np.vstack([np.bincount(bucketing.index(actions[:, j]), minlength=bucketing.num_buckets) / n
                      for j in range(d)])


def evaluate(policy, dataset: Dataset, region, bucketing: Bucketing | None = None, context=None, stats=None) -> dict:
    """Realized payoff, self-assessed payoff (model-backed policies) and action histograms.

    ``policy`` may be an action table, an :class:`OpaquePolicy`, a
    :class:`WhiteBoxEnsemble` or a :class:`PatchedModel` (replayed with ``context``).
    """
    preds = None
    if isinstance(policy, WhiteBoxEnsemble):
        m = ensemble_metrics(policy, dataset, stats)
        acts = np.stack(m["actions"])[m["argmax"], np.arange(dataset.n)]
        out = {"realized": m["realized"], "self_assessed": m["self_assessed"]}
        bucketing = bucketing or policy.bucketing
    else:
        if isinstance(policy, PatchedModel):
            if policy.is_bound_to(dataset):
                preds = policy.values
            else:
                preds = predict(policy, dataset.features, dataset.group_id, context)
            acts = solve_batch(region, preds, stats)
        elif isinstance(policy, OpaquePolicy):
            acts = policy.action_table
        else:
            acts = np.asarray(policy, dtype=np.float64)
        out = {"realized": float(rowdot(acts, dataset.labels).mean()),
               "self_assessed": None if preds is None else float(rowdot(acts, preds).mean())}
    if bucketing is not None:
        out["histogram"] = action_histogram(acts, bucketing)
    out["actions"] = acts
    return out


def clairvoyant_payoff(dataset: Dataset, region, stats=None) -> float:
    """Payoff of solving the oracle on the true labels at every sample."""
    return float(rowdot(solve_batch(region, dataset.labels, stats), dataset.labels).mean())


# --------------------------------------------------------------------------
# experiment run
# --------------------------------------------------------------------------

@dataclass
class MethodResult:
    predicted: list           # payoff series (white box: per outer round, black box: per patch)
    realized: list
    n_patches: int
    rounds: int
    solves: int
    solve_seconds: float
    wall_seconds: float
    final_realized: float
    final_self_assessed: float
    consistency: list         # (model, descriptor, mass, score)
    max_consistency: float
    extra: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config: dict
    clairvoyant: float
    initial_payoffs: list
    best_initial: float
    whitebox: MethodResult
    blackbox: MethodResult
    wb_rounds: list           # (round, model, realized, self_assessed, selection_freq)
    wb_variance: list         # (round, sample_rank, avg_variance)
    dominance: list           # DominanceRow-like tuples
    checks: dict
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["dominance"] = [list(r) for r in self.dominance]
        return out

    @classmethod
    def from_json(cls, obj) -> "RunReport":
        obj = dict(obj)
        obj["whitebox"] = MethodResult(**obj["whitebox"])
        obj["blackbox"] = MethodResult(**obj["blackbox"])
        obj["dominance"] = [tuple(r) for r in obj["dominance"]]
        return cls(**obj)


def _variance_rounds(n_rounds: int, limit: int = 21) -> list:
    if n_rounds <= limit:
        return list(range(n_rounds))
    return sorted({int(round(x)) for x in np.linspace(0, n_rounds - 1, limit)})


def guarantee_checks(cfg: ExperimentConfig, k: int, d: int, M: float, wb_metrics: dict, wb_info,
                 bb: MethodResult, labels: np.ndarray, policy_payoffs, rng_seed: int) -> dict:
    """Evaluate the guarantee inequalities with the run's constants."""
    a = cfg.alpha
    wb_gap_bound = 2 * d * math.sqrt(a * k * M)
    bb_gap_bound = 2 * d * math.sqrt(a * M)
    acts, argmax = wb_metrics["actions"], wb_metrics["argmax"]
    if k <= 4:
        phis = [list(p) for p in itertools.product(range(k), repeat=k)]
    else:
        rng = np.random.default_rng(rng_seed)
        phis = [list(range(k))] + [[c] * k for c in range(k)] + \
               [rng.integers(0, k, size=k).tolist() for _ in range(100)]
    swap_best = max(swap_payoff(acts, argmax, labels, phi) for phi in phis)
    return {
        "wb_self_consistency_gap": abs(wb_metrics["self_assessed"] - wb_metrics["realized"]),
        "wb_self_consistency_bound": wb_gap_bound,
        "bb_self_consistency_gap": abs(bb.final_self_assessed - bb.final_realized),
        "bb_self_consistency_bound": bb_gap_bound,
        "wb_pointwise_max_self_assessed": wb_metrics["pointwise_max_self_assessed"],
        "wb_pointwise_max_bound": wb_gap_bound,
        "wb_swap_maps": len(phis),
        "wb_swap_best_payoff": swap_best,
        "wb_swap_bound": 4 * d * math.sqrt(a * k * M),
        "bb_best_policy_payoff": max(policy_payoffs),
        "bb_policy_bound": 4 * d * math.sqrt(a * M),
        "wb_update_invocations": wb_info.invocations,
        "wb_invocation_limit": k * d * M * M / (a * a),
        "patch_limit": d * M * M / (a * a),
    }


def run_experiment(cfg: ExperimentConfig, data=None, base=None) -> RunReport:
    """Generate data, train specialists, run both ensemblers and collect the report."""
    train, debias = data if data is not None else generate(cfg.generator)
    region = build_region(cfg, train)
    base = base if base is not None else train_base(cfg, train)
    k, d, M = len(base), debias.d, debias.M
    clair = clairvoyant_payoff(debias, region)

    init_models = [PatchedModel(b, M, f"h{i}").bind(debias) for i, b in enumerate(base)]
    init_actions = [solve_batch(region, m.values) for m in init_models]
    init_payoffs = [float(rowdot(a, debias.labels).mean()) for a in init_actions]
    best_initial = max(init_payoffs)

    # white box
    wb_stats = SolveStats()
    t0 = time.perf_counter()
    ensemble, wb_info = run_whitebox([m.copy() for m in init_models], debias, region, cfg.alpha, stats=wb_stats)
    wb_wall = time.perf_counter() - t0
    wbm = ensemble_metrics(ensemble, debias)
    wb_cons = []
    for i, (m, fam) in enumerate(zip(ensemble.models, wb_info.final_families)):
        rep = check_consistency(debias, m, fam, cfg.alpha)
        wb_cons += [(f"h{i}", describe(dsc), mass, score) for dsc, mass, score in rep.rows]
    wb_rounds, wb_var = [], []
    keep_var = set(_variance_rounds(len(wb_info.rounds)))
    for rm in wb_info.rounds:
        for i in range(k):
            wb_rounds.append((rm.round, i, float(rm.model_realized[i]), float(rm.model_self_assessed[i]),
                              float(rm.selection_freq[i])))
        if rm.round in keep_var:
            wb_var += [(rm.round, r, float(v)) for r, v in enumerate(rm.sample_variance)]
    whitebox = MethodResult(
        predicted=[rm.self_assessed for rm in wb_info.rounds],
        realized=[rm.realized for rm in wb_info.rounds],
        n_patches=wb_info.n_patches, rounds=wb_info.outer_rounds,
        solves=wb_stats.calls, solve_seconds=wb_stats.seconds, wall_seconds=wb_wall,
        final_realized=wbm["realized"], final_self_assessed=wbm["self_assessed"],
        consistency=wb_cons, max_consistency=max((c[3] for c in wb_cons), default=0.0),
        extra={"selection_freq": wbm["selection_freq"].tolist(), "invocations": wb_info.invocations,
               "bucket_width": wb_info.bucketing.effective_width,
               "num_buckets": wb_info.bucketing.num_buckets},
    )

    # black box
    policies = [OpaquePolicy(f"pi{i}", a, policy_callable(b, M, region), f"induced by specialist {i}")
                for i, (a, b) in enumerate(zip(init_actions, base))]
    h0 = PatchedModel(LabelMean.fit(train), M, "h0")
    bb_stats = SolveStats()
    t0 = time.perf_counter()
    h, bb_info = run_blackbox(h0, policies, debias, region, cfg.alpha, stats=bb_stats)
    bb_wall = time.perf_counter() - t0
    bb_eval = evaluate(h, debias, region)
    rep = check_consistency(debias, h, bb_info.final_family, cfg.alpha)
    bb_cons = [("h", describe(dsc), mass, score) for dsc, mass, score in rep.rows]
    predicted, realized = payoff_path(h, debias, region)
    blackbox = MethodResult(
        predicted=predicted, realized=realized,
        n_patches=bb_info.n_patches, rounds=bb_info.rounds,
        solves=bb_stats.calls, solve_seconds=bb_stats.seconds, wall_seconds=bb_wall,
        final_realized=bb_eval["realized"], final_self_assessed=bb_eval["self_assessed"],
        consistency=bb_cons, max_consistency=rep.max_score,
        extra={"bucket_width": bb_info.bucketing.effective_width,
               "num_buckets": bb_info.bucketing.num_buckets},
    )
    dom = conditional_dominance_report(h, policies, debias, region, bb_info.bucketing, cfg.alpha, cfg.mass_floor)
    dominance = [(r.cond_policy, r.coord, r.bucket, r.mass, r.comparison_policy, r.lhs, r.rhs, r.slack, r.flag)
                 for r in dom]
    checks = guarantee_checks(cfg, k, d, M, wbm, wb_info, blackbox, debias.labels, init_payoffs, cfg.seed)
    meta = {
        "x_axis": {"whitebox": "outer round (0 = initial models)", "blackbox": "patch index (0 = naive model)"},
        "variance_rounds": sorted(keep_var),
        "region": region.to_json(),
    }
    report = RunReport(cfg.to_json(), clair, init_payoffs, best_initial, whitebox, blackbox,
                       wb_rounds, wb_var, dominance, checks, meta)
    report._artifacts = {"ensemble": ensemble, "model": h, "policies": policies, "region": region,
                         "debias": debias, "train": train, "wb_info": wb_info, "bb_info": bb_info}
    return report


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _writer(fh):
    return csv.writer(fh, lineterminator="\r\n")


def _num(x) -> str:
    return repr(float(x))


def patched_model_to_json(model: PatchedModel) -> dict:
    return {"name": model.name, "M": model.M, "base": model.base.to_json(),
            "patches": [{"round": p.round, "descriptor": p.event.descriptor.to_json(),
                         "delta": [float(v) for v in p.delta]} for p in model.patches]}


def patched_model_from_json(obj) -> PatchedModel:
    """Rebuild a patch chain for replay; member sets of the original sample are not stored."""
    m = PatchedModel(base_from_json(obj["base"]), obj["M"], obj["name"])
    for p in obj["patches"]:
        ev = ConditioningEvent(np.zeros(0, dtype=np.int64), descriptor_from_json(p["descriptor"]), 1)
        m.add_patch(Patch(ev, np.array(p["delta"], dtype=np.float64), int(p["round"])))
    return m


def save_ensemble(path, method: str, alpha: float, bucketing: Bucketing, region, models, policy_bases=()):
    obj = {"method": method, "alpha": alpha,
           "bucketing": {"width": bucketing.width, "num_buckets": bucketing.num_buckets},
           "region": region.to_json(), "models": [patched_model_to_json(m) for m in models],
           "policy_bases": [b.to_json() for b in policy_bases]}
    Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")


def load_ensemble(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read ensemble {path}: {exc}") from exc
    region = region_from_json(obj["region"])
    b = Bucketing(obj["bucketing"]["width"], obj["bucketing"]["num_buckets"])
    models = [patched_model_from_json(m) for m in obj["models"]]
    out = {"method": obj["method"], "alpha": obj["alpha"], "bucketing": b, "region": region, "models": models}
    if obj["method"] == "wb":
        out["ensemble"] = WhiteBoxEnsemble(models, region, b, obj["alpha"],
                                           max((p.round for m in models for p in m.patches), default=-1) + 1)
    else:
        bases = [base_from_json(o) for o in obj["policy_bases"]]
        M = models[0].M
        out["policies"] = [OpaquePolicy(f"pi{i}", np.zeros((0, region.d)), policy_callable(bb, M, region))
                           for i, bb in enumerate(bases)]
        out["context"] = blackbox_context(out["policies"], region, b)
    return out


# --------------------------------------------------------------------------
# report emission
# --------------------------------------------------------------------------

def emit_report(report: RunReport, out_dir) -> list:
    """Write the CSV/SVG/JSON report files; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def table(name, header, rows):
        path = out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = _writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    wb, bb = report.whitebox, report.blackbox
    rows = [(t, "whitebox", _num(p), _num(r), _num(report.best_initial))
            for t, (p, r) in enumerate(zip(wb.predicted, wb.realized))]
    rows += [(t, "blackbox", _num(p), _num(r), _num(report.best_initial))
             for t, (p, r) in enumerate(zip(bb.predicted, bb.realized))]
    table("payoff_convergence.csv", ["round", "method", "predicted", "realized", "best_initial"], rows)
    table("selection_freq.csv", ["round", "model", "selection_freq"],
          [(t, m, _num(f)) for t, m, _, _, f in report.wb_rounds])
    table("wb_rounds.csv", ["round", "model", "realized_payoff", "self_assessed_payoff", "selection_freq"],
          [(t, m, _num(r), _num(s), _num(f)) for t, m, r, s, f in report.wb_rounds])
    table("policy_variance.csv", ["round", "sample_rank", "avg_variance"],
          [(t, r, _num(v)) for t, r, v in report.wb_variance])
    table("consistency_final.csv", ["method", "model", "descriptor", "mass", "score"],
          [("whitebox", m, dsc, _num(ms), _num(s)) for m, dsc, ms, s in wb.consistency]
          + [("blackbox", m, dsc, _num(ms), _num(s)) for m, dsc, ms, s in bb.consistency])
    table("dominance_report.csv", ["cond_policy", "coord", "bucket", "mass", "comparison_policy",
                                   "lhs", "rhs", "slack", "flag"],
          [(c, j, b, _num(ms), p, _num(l), _num(r), _num(s), int(f)) for c, j, b, ms, p, l, r, s, f in report.dominance])
    summary = [("clairvoyant", _num(report.clairvoyant)), ("best_initial", _num(report.best_initial))]
    summary += [(f"initial_payoff_{i}", _num(v)) for i, v in enumerate(report.initial_payoffs)]
    for name, res in (("whitebox", wb), ("blackbox", bb)):
        summary += [(f"{name}_final_realized", _num(res.final_realized)),
                    (f"{name}_final_self_assessed", _num(res.final_self_assessed)),
                    (f"{name}_patches", res.n_patches), (f"{name}_rounds", res.rounds),
                    (f"{name}_oracle_solves", res.solves),
                    (f"{name}_max_consistency_score", _num(res.max_consistency))]
    summary += [(k, _num(v) if isinstance(v, float) else v) for k, v in sorted(report.checks.items())]
    summary += [("alpha", _num(report.config["alpha"]))]
    table("summary.csv", ["metric", "value"], summary)
    meta = dict(report.meta, config=report.config)
    (out / "report_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    written.append(out / "report_meta.json")
    svg = out / "payoff_convergence.svg"
    svg.write_text(render_svg(report), encoding="utf-8")
    written.append(svg)
    return written


def write_timing(report: RunReport, path) -> None:
    """Wall-clock figures vary run to run, so they live outside the deterministic report."""
    obj = {m: {"wall_seconds": r.wall_seconds, "solve_seconds": r.solve_seconds,
               "other_seconds": r.wall_seconds - r.solve_seconds}
           for m, r in (("whitebox", report.whitebox), ("blackbox", report.blackbox))}
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")


_PANEL_W, _PANEL_H, _PAD = 420, 300, 50


def _panel(x0, title, predicted, realized, best_initial, clairvoyant, lo, hi, colour):
    parts = [f'<g class="panel" data-method="{title}" transform="translate({x0},0)">',
             f'<text x="{_PAD}" y="24" font-size="14">{title}</text>',
             f'<rect x="{_PAD}" y="{_PAD}" width="{_PANEL_W - 2 * _PAD}" height="{_PANEL_H - 2 * _PAD}" '
             f'fill="none" stroke="#888"/>']
    n = len(realized)
    span = hi - lo if hi > lo else 1.0
    iw, ih = _PANEL_W - 2 * _PAD, _PANEL_H - 2 * _PAD

    def px(i):
        return _PAD + (iw * i / (n - 1) if n > 1 else iw / 2)

    def py(v):
        return _PAD + ih * (1 - (v - lo) / span)

    for name, val, dash in (("best_initial", best_initial, "2,3"), ("clairvoyant", clairvoyant, "8,3")):
        parts.append(f'<line class="{name}" data-value="{val!r}" x1="{_PAD}" x2="{_PAD + iw}" '
                     f'y1="{py(val):.2f}" y2="{py(val):.2f}" stroke="#555" stroke-dasharray="{dash}"/>')
    for name, series, dash in (("predicted", predicted, ' stroke-dasharray="6,4"'), ("realized", realized, "")):
        if not series:
            continue
        pts = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(series))
        parts.append(f'<polyline class="{name}" data-first="{series[0]!r}" data-last="{series[-1]!r}" '
                     f'data-length="{len(series)}" points="{pts}" fill="none" stroke="{colour}"{dash}/>')
    if n:
        parts.append(f'<text x="{_PAD}" y="{_PANEL_H - 30}" font-size="10">0</text>')
        parts.append(f'<text x="{_PAD + iw}" y="{_PANEL_H - 30}" font-size="10" text-anchor="end">{n - 1}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def render_svg(report: RunReport) -> str:
    """Two panels (white box per outer round, black box per patch): dashed predicted, solid realized."""
    wb, bb = report.whitebox, report.blackbox
    vals = list(wb.predicted) + list(wb.realized) + list(bb.predicted) + list(bb.realized)
    vals += [report.best_initial, report.clairvoyant]
    lo, hi = min(vals), max(vals)
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * _PANEL_W}" height="{_PANEL_H}" '
        f'viewBox="0 0 {2 * _PANEL_W} {_PANEL_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        _panel(0, "whitebox", wb.predicted, wb.realized, report.best_initial, report.clairvoyant, lo, hi, "#1b9e77"),
        _panel(_PANEL_W, "blackbox", bb.predicted, bb.realized, report.best_initial, report.clairvoyant, lo, hi,
               "#1f78b4"),
        "</svg>",
    ]
    return "\n".join(body) + "\n"


def save_run(report: RunReport, out_dir) -> Path:
    """run.json with wall-clock fields zeroed so the file is reproducible (see write_timing)."""
    obj = report.to_json()
    for method in ("whitebox", "blackbox"):
        obj[method]["solve_seconds"] = 0.0
        obj[method]["wall_seconds"] = 0.0
    path = Path(out_dir) / "run.json"
    path.write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")
    return path


def load_run(path) -> RunReport:
    try:
        return RunReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ConfigError(f"cannot read run file {path}: {exc}") from exc


def write_run_artifacts(report: RunReport, out_dir) -> None:
    """Everything a full experiment leaves behind: report files, traces, ensembles and registrations."""
    out = Path(out_dir)
    emit_report(report, out)
    save_run(report, out)
    art = getattr(report, "_artifacts", None)
    if not art:
        return
    for i, tr in enumerate(art["wb_info"].traces):
        tr.to_csv(out / f"wb_trace_h{i}.csv")
    art["bb_info"].trace.to_csv(out / "bb_trace.csv")
    write_policy_registration(art["policies"], out / "policies.csv")
    ens = art["ensemble"]
    save_ensemble(out / "ensemble_wb.json", "wb", report.config["alpha"], ens.bucketing, art["region"], ens.models)
    save_ensemble(out / "ensemble_bb.json", "bb", report.config["alpha"], art["bb_info"].bucketing, art["region"],
                  [art["model"]], [m.base for m in ens.models])
