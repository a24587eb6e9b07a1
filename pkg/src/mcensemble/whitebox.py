"""White-box ensembling: debias k models jointly, then act as the most optimistic one.

Each model is made consistent on the level sets of its own induced policy
intersected with the regions where each model has the highest self-assessed
payoff.  The ensemble plays, at every x, the action of the model whose
self-assessment pi_i(x) . h_i(x) is largest (lowest index on ties).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import (ArgmaxRegion, Bucketing, ConditioningEvent, Dataset, EventFamily, Intersection,
                   PolicyLevelSet, ReplayContext, apply_round, make_bucketing, rowdot)
from .debias import DebiasTrace, family_scores, patch_bound, update
from .errors import InvariantViolation
from .oracle import SolveStats, solve_batch


@dataclass(frozen=True)
class SelfAssessment:
    S: np.ndarray        # n x k, S[x, i] = pi_i(x) . h_i(x)
    argmax: np.ndarray   # n, lowest index attaining the row max


def self_assessment(actions, preds) -> SelfAssessment:
    S = np.column_stack([rowdot(a, h) for a, h in zip(actions, preds)])
    return SelfAssessment(S, np.argmax(S, axis=1))


def max_model_level_sets(models, dataset: Dataset, region, stats=None) -> list:
    """Nonempty argmax regions {x : i*(x) = m}; together they partition the sample."""
    acts = [solve_batch(region, m.values, stats) for m in models]
    sa = self_assessment(acts, [m.values for m in models])
    return [ConditioningEvent(np.flatnonzero(sa.argmax == m), ArgmaxRegion(m), dataset.n)
            for m in range(len(models)) if np.any(sa.argmax == m)]


@lru_cache(maxsize=64)
def _template(i: int, d: int, N: int, k: int):
    descs = [[Intersection(PolicyLevelSet("self", j, b, i), ArgmaxRegion(m))
              for b in range(N) for m in range(k)] for j in range(d)]
    probe = EventFamily(np.zeros((d, 1), dtype=np.int64), descs, 1)
    return descs, probe.ranks


def white_box_event_family(actions_i: np.ndarray, argmax: np.ndarray, k: int,
                           bucketing: Bucketing, i: int = 0) -> EventFamily:
    """Own-policy level sets x argmax regions for model ``i``; cell id = bucket * k + m."""
    n, d = actions_i.shape
    N = bucketing.num_buckets
    cells = np.vstack([bucketing.index(actions_i[:, j]) * k + argmax for j in range(d)])
    descs, ranks = _template(i, d, N, k)
    return EventFamily(cells, descs, n, ranks=ranks)


@dataclass
class RoundMetrics:
    round: int
    model_realized: np.ndarray      # k
    model_self_assessed: np.ndarray  # k
    realized: float
    self_assessed: float
    selection_freq: np.ndarray      # k
    sample_variance: np.ndarray     # n, sorted ascending
    max_scores: np.ndarray          # k, max consistency score on this round's families


def round_metrics(t, actions, preds, labels, max_scores=None) -> RoundMetrics:
    k = len(actions)
    sa = self_assessment(actions, preds)
    n = labels.shape[0]
    realized_i = np.array([rowdot(a, labels).mean() for a in actions])
    chosen = np.stack(actions)[sa.argmax, np.arange(n)]
    var = np.stack(actions).var(axis=0).mean(axis=1)
    return RoundMetrics(
        round=t,
        model_realized=realized_i,
        model_self_assessed=sa.S.mean(axis=0),
        realized=float(rowdot(chosen, labels).mean()),
        self_assessed=float(sa.S[np.arange(n), sa.argmax].mean()),
        selection_freq=np.bincount(sa.argmax, minlength=k) / n,
        sample_variance=np.sort(var),
        max_scores=np.zeros(k) if max_scores is None else np.asarray(max_scores, dtype=float),
    )


@dataclass
class WhiteBoxEnsemble:
    models: list
    region: object
    bucketing: Bucketing
    alpha: float
    outer_round: int = 0

    @property
    def k(self) -> int:
        return len(self.models)

    def sample_actions(self, stats=None):
        return [solve_batch(self.region, m.values, stats) for m in self.models]

    def replay(self, features, group_id, stats=None):
        """Joint replay of all k patch chains on fresh points -> (preds, actions)."""
        M = self.models[0].M
        H = [np.ascontiguousarray(m.base_predict(features, group_id)) for m in self.models]
        by_model = []
        for m in self.models:
            rounds: dict = {}
            for p in m.patches:
                rounds.setdefault(p.round, []).append(p)
            by_model.append(rounds)
        all_rounds = sorted({r for rounds in by_model for r in rounds})
        for r in all_rounds:
            acts = [solve_batch(self.region, h, stats) for h in H]
            istar = self_assessment(acts, H).argmax
            for i, rounds in enumerate(by_model):
                if r not in rounds:
                    continue
                ctx = ReplayContext(self.bucketing, own_actions=lambda _h, a=acts[i]: a,
                                    argmax={r: istar})
                apply_round(H[i], rounds[r], r, features, group_id, ctx, M)
        return H, [solve_batch(self.region, h, stats) for h in H]


def run_whitebox(models, dataset: Dataset, region, alpha: float, bucketing: Bucketing | None = None,
                 stats: SolveStats | None = None, max_rounds: int | None = None):
    """Debias all models until each is consistent on its freshly recomputed family.

    Returns (ensemble, info) where info holds per-model traces, per-round
    metrics, the terminal families and update-invocation counts.
    """
    k = len(models)
    b = bucketing if bucketing is not None else make_bucketing(alpha, dataset.M, k)
    stats = stats if stats is not None else SolveStats()
    for m in models:
        if m.values is None:
            m.bind(dataset)
    limit = k * patch_bound(dataset.d, dataset.M, alpha)
    info = WhiteBoxInfo(traces=[DebiasTrace() for _ in models], bucketing=b, stats=stats)
    cache: dict = {}

    def actions_of(i):
        m = models[i]
        if cache.get(i, (None,))[0] != m.version:
            cache[i] = (m.version, solve_batch(region, m.values, stats))
        return cache[i][1]

    t = 0
    while True:
        acts = [actions_of(i) for i in range(k)]
        istar = self_assessment(acts, [m.values for m in models]).argmax
        fams = [white_box_event_family(acts[i], istar, k, b, i) for i in range(k)]
        top = np.array([family_scores(dataset, models[i], fams[i])[0].max(initial=0.0) for i in range(k)])
        info.rounds.append(round_metrics(t, acts, [m.values for m in models], dataset.labels, top))
        info.final_families = fams
        violators = [i for i in range(k) if top[i] > alpha]
        if not violators:
            break
        if max_rounds is not None and t >= max_rounds:
            info.converged = False
            break
        for i in violators:
            _, trace = update(dataset, models[i], fams[i], alpha, round=t)
            info.traces[i].extend(trace)
            info.invocations += 1
            if info.invocations > limit:
                raise InvariantViolation(f"{info.invocations} update invocations exceed "
                                         f"k*d*M^2/alpha^2 = {limit:.6g}")
        t += 1
    info.outer_rounds = t
    return WhiteBoxEnsemble(list(models), region, b, alpha, t), info


@dataclass
class WhiteBoxInfo:
    traces: list
    bucketing: Bucketing
    stats: SolveStats
    rounds: list = field(default_factory=list)
    final_families: list = field(default_factory=list)
    invocations: int = 0
    outer_rounds: int = 0
    converged: bool = True

    @property
    def n_patches(self) -> int:
        return sum(t.n_patches for t in self.traces)


def ensemble_act(ensemble: WhiteBoxEnsemble, features, group_id, stats=None) -> np.ndarray:
    """Action of the model with the highest self-assessment at each point."""
    H, acts = ensemble.replay(features, group_id, stats)
    istar = self_assessment(acts, H).argmax
    return np.stack(acts)[istar, np.arange(len(istar))]


def ensemble_metrics(ensemble: WhiteBoxEnsemble, dataset: Dataset, stats=None) -> dict:
    """Realized / self-assessed payoff, selection frequencies and per-sample policy variance."""
    if all(m.is_bound_to(dataset) for m in ensemble.models):
        H = [m.values for m in ensemble.models]
        acts = ensemble.sample_actions(stats)
    else:
        H, acts = ensemble.replay(dataset.features, dataset.group_id, stats)
    rm = round_metrics(ensemble.outer_round, acts, H, dataset.labels)
    sa = self_assessment(acts, H)
    return {
        "realized": rm.realized,
        "self_assessed": rm.self_assessed,
        "pointwise_max_self_assessed": float(sa.S.max(axis=1).mean()),
        "selection_freq": rm.selection_freq,
        "policy_variance": np.stack(acts).var(axis=0).mean(axis=1),
        "model_realized": rm.model_realized,
        "model_self_assessed": rm.model_self_assessed,
        "actions": acts,
        "argmax": sa.argmax,
    }


def swap_payoff(actions, argmax: np.ndarray, labels: np.ndarray, phi) -> float:
    """Mean payoff of playing model phi(i*(x))'s action instead of model i*(x)'s."""
    phi = np.asarray(phi)
    stacked = np.stack(actions)
    chosen = stacked[phi[argmax], np.arange(len(argmax))]
    return float(rowdot(chosen, labels).mean())
