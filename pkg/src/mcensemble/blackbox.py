"""Black-box ensembling: debias one model against the level sets of opaque policies.

The only access to each existing policy is its action on every sample point
(plus, optionally, a callable for fresh points).  A single model is debiased
on the level sets of its own induced policy together with the level sets of
every registered policy; the induced policy of the result weakly dominates
each of them, up to the slack terms reported by the dominance check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (Bucketing, Dataset, EventFamily, PatchedModel, ReplayContext, level_set_partitions,
                   make_bucketing, predict, rowdot)
from .debias import DebiasTrace, family_scores, patch_bound, update
from .errors import ConfigError, InvariantViolation
from .oracle import FEAS_TOL, SolveStats, solve_batch


@dataclass(eq=False)
class OpaquePolicy:
    """A policy known only through its actions on the sample (and maybe a callable)."""

    id: str
    action_table: np.ndarray
    fn: Callable | None = None
    provenance: str = ""

    def __post_init__(self):
        a = np.array(self.action_table, dtype=np.float64)
        if a.ndim != 2:
            raise ConfigError(f"policy {self.id!r}: action table must be n x d")
        if not np.isfinite(a).all():
            raise ConfigError(f"policy {self.id!r}: non-finite actions")
        a.setflags(write=False)
        self.action_table = a
        if not self.id or self.id == "self":
            raise ConfigError("policy id must be nonempty and not 'self'")

    def __call__(self, features, group_id):
        if self.fn is None:
            raise ConfigError(f"policy {self.id!r} has no callable for fresh points")
        return self.fn(features, group_id)


def register_policy(policy: OpaquePolicy, region, n: int | None = None) -> OpaquePolicy:
    """Check every stored action is feasible (and the table matches the sample size)."""
    if n is not None and policy.action_table.shape[0] != n:
        raise ConfigError(f"policy {policy.id!r}: {policy.action_table.shape[0]} rows, sample has {n}")
    if policy.action_table.shape[1] != region.d:
        raise ConfigError(f"policy {policy.id!r}: action dimension {policy.action_table.shape[1]} "
                          f"does not match d={region.d}")
    res = region.residuals(policy.action_table)
    if res.max(initial=0.0) > FEAS_TOL:
        bad = int(np.argmax(res))
        raise ConfigError(f"policy {policy.id!r}: infeasible action on row {bad} (residual {res[bad]:.3g})")
    return policy


def write_policy_registration(policies, path) -> None:
    """Every policy's action table: one row per (policy, sample) with the d action coordinates."""
    d = policies[0].action_table.shape[1] if policies else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["policy_id", "provenance", "row"] + [f"a{j}" for j in range(d)])
        for p in policies:
            for r, a in enumerate(p.action_table):
                w.writerow([p.id, p.provenance, r] + [repr(float(v)) for v in a])


def read_policy_registration(path) -> list:
    """Inverse of :func:`write_policy_registration` (callables are not persisted)."""
    tables: dict = {}
    prov: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or header[:3] != ["policy_id", "provenance", "row"]:
            raise ConfigError(f"{path}: not a policy registration file")
        for rec in rd:
            pid = rec[0]
            prov.setdefault(pid, rec[1])
            rows = tables.setdefault(pid, [])
            if int(rec[2]) != len(rows):
                raise ConfigError(f"{path}: rows of policy {pid!r} out of order")
            rows.append([float(v) for v in rec[3:]])
    return [OpaquePolicy(pid, np.array(rows, dtype=np.float64).reshape(len(rows), -1), None, prov[pid])
            for pid, rows in tables.items()]


def black_box_event_family(own_actions: np.ndarray, policies, bucketing: Bucketing,
                           opaque: EventFamily | None = None, ranks=None) -> EventFamily:
    """Own-policy level sets followed by each opaque policy's level sets.

    ``ranks`` may carry the tie-break ranks of an earlier family with the same
    policies and bucketing (the descriptors never change, only the cells).
    """
    own = level_set_partitions(own_actions, bucketing, "self", 0)
    if opaque is None:
        opaque = _opaque_family(policies, bucketing)
    if opaque is None:
        return own
    return EventFamily.concat([own, opaque], ranks=ranks)


def _opaque_family(policies, bucketing):
    parts = [level_set_partitions(p.action_table, bucketing, p.id, q)
             for q, p in enumerate(policies, start=1)]
    return EventFamily.concat(parts) if parts else None


@dataclass
class BlackBoxInfo:
    trace: DebiasTrace
    bucketing: Bucketing
    stats: SolveStats
    rounds: int = 0
    final_family: EventFamily | None = None
    round_max_scores: list = field(default_factory=list)

    @property
    def n_patches(self) -> int:
        return self.trace.n_patches


def run_blackbox(h0: PatchedModel, policies, dataset: Dataset, region, alpha: float,
                 bucketing: Bucketing | None = None, stats: SolveStats | None = None):
    """Debias ``h0`` until it is consistent on its own and every policy's level sets.

    Returns (model, info).  The model is patched in place.
    """
    b = bucketing if bucketing is not None else make_bucketing(alpha, dataset.M, 1)
    stats = stats if stats is not None else SolveStats()
    for p in policies:
        register_policy(p, region, dataset.n)
    if h0.values is None:
        h0.bind(dataset)
    opaque = _opaque_family(policies, b)
    limit = patch_bound(dataset.d, dataset.M, alpha)
    info = BlackBoxInfo(DebiasTrace(), b, stats)
    ranks = None
    t = 0
    while True:
        own = solve_batch(region, h0.values, stats)
        fam = black_box_event_family(own, policies, b, opaque, ranks)
        ranks = fam.ranks
        top = float(family_scores(dataset, h0, fam)[0].max(initial=0.0))
        info.round_max_scores.append(top)
        info.final_family = fam
        if not top > alpha:
            break
        _, trace = update(dataset, h0, fam, alpha, round=t)
        info.trace.extend(trace)
        if info.trace.n_patches > limit:
            raise InvariantViolation(f"{info.trace.n_patches} patches exceed d*M^2/alpha^2 = {limit:.6g}")
        t += 1
    info.trace.terminal_max_score = info.round_max_scores[-1]
    info.rounds = t
    return h0, info


def blackbox_context(policies, region, bucketing: Bucketing, stats=None) -> ReplayContext:
    return ReplayContext(bucketing, own_actions=lambda H: solve_batch(region, H, stats),
                         policies={p.id: p for p in policies})


def blackbox_act(model: PatchedModel, policies, region, bucketing, features, group_id, stats=None):
    """Actions of the debiased model's induced policy on fresh points."""
    H = predict(model, features, group_id, blackbox_context(policies, region, bucketing, stats))
    return solve_batch(region, H, stats)


@dataclass(frozen=True)
class DominanceRow:
    cond_policy: str
    coord: int
    bucket: int
    mass: float
    comparison_policy: str
    lhs: float
    rhs: float
    slack: float
    flag: bool


def conditional_dominance_report(model: PatchedModel, policies, dataset: Dataset, region,
                                 bucketing: Bucketing, alpha: float, mass_floor: float = 0.05,
                                 stats=None) -> list:
    """Compare the model's realized payoff with every policy on every heavy level set.

    For each conditioning policy, coordinate and bucket with mass at least
    ``mass_floor``, report the mean realized payoff of the model's policy
    (lhs) against each comparison policy (rhs).  A row is flagged when
    lhs < rhs - slack with slack = 2*alpha*d/mass + 2*w*M*d, w the bucket width.
    """
    n, d = dataset.n, dataset.d
    own = solve_batch(region, model.values, stats)
    tables = [("self", own)] + [(p.id, p.action_table) for p in policies]
    payoffs = {pid: rowdot(a, dataset.labels) for pid, a in tables}
    w = bucketing.effective_width
    rows = []
    for cid, acts in tables:
        for j in range(d):
            idx = bucketing.index(acts[:, j])
            counts = np.bincount(idx, minlength=bucketing.num_buckets)
            for bkt in np.flatnonzero(counts):
                mass = counts[bkt] / n
                if mass < mass_floor:
                    continue
                members = idx == bkt
                lhs = float(payoffs["self"][members].mean())
                slack = 2 * alpha * d / mass + 2 * w * dataset.M * d
                for pid, _ in tables:
                    rhs = float(payoffs[pid][members].mean())
                    rows.append(DominanceRow(cid, j, int(bkt), float(mass), pid, lhs, rhs, slack,
                                             bool(lhs < rhs - slack)))
    return rows


def write_dominance_report(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["cond_policy", "coord", "bucket", "mass", "comparison_policy", "lhs", "rhs", "slack", "flag"])
        for r in rows:
            w.writerow([r.cond_policy, r.coord, r.bucket, repr(r.mass), r.comparison_policy,
                        repr(r.lhs), repr(r.rhs), repr(r.slack), int(r.flag)])


def payoff_path(model: PatchedModel, dataset: Dataset, region, stats=None):
    """(predicted, realized) mean payoffs on the sample after 0, 1, ..., P patches.

    Patches are re-applied to the base predictions in order; only the rows a
    patch touches are re-solved, so the cost is the total patched mass.
    """
    H = np.ascontiguousarray(model.base_predict(dataset.features, dataset.group_id))
    Y = dataset.labels
    acts = solve_batch(region, H, stats)
    sa = rowdot(acts, H)
    re = rowdot(acts, Y)
    predicted, realized = [float(sa.mean())], [float(re.mean())]
    for patch in model.patches:
        m = patch.event.member_indices
        H[m] = np.minimum(np.maximum(H[m] + patch.delta, 0.0), model.M)
        acts[m] = solve_batch(region, H[m], stats)
        sa[m] = rowdot(acts[m], H[m])
        re[m] = rowdot(acts[m], Y[m])
        predicted.append(float(sa.mean()))
        realized.append(float(re.mean()))
    return predicted, realized
