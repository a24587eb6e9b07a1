"""Iterative debiasing against a family of conditioning events.

While some event C has Pr[C] * ||E[y - h(x) | C]||_inf > alpha, shift h by the
conditional mean residual on C.  Each shift lowers the mean squared error by
Pr[C] * ||bias||_2^2 (before clamping), which bounds the number of shifts by
d * M^2 / alpha^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .core import ConditioningEvent, Dataset, EventFamily, Patch, PatchedModel, describe
from .errors import InvariantViolation, StaleReportError


@dataclass(frozen=True, eq=False)
class ViolationReport:
    event: ConditioningEvent
    bias: np.ndarray
    mass: float
    score: float
    model_version: int | None = None


@dataclass(frozen=True)
class PatchRecord:
    round: int
    descriptor: object
    delta: np.ndarray
    mass: float
    score: float
    sq_err_before: float
    sq_err_after: float


@dataclass
class DebiasTrace:
    records: list = field(default_factory=list)
    terminal_max_score: float = 0.0

    @property
    def n_patches(self) -> int:
        return len(self.records)

    def extend(self, other: "DebiasTrace") -> None:
        self.records.extend(other.records)
        self.terminal_max_score = other.terminal_max_score

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["round", "descriptor", "mass", "score", "sq_err_before", "sq_err_after"])
            for r in self.records:
                w.writerow([r.round, describe(r.descriptor), repr(r.mass), repr(r.score),
                            repr(r.sq_err_before), repr(r.sq_err_after)])


def patch_bound(d: int, M: float, alpha: float) -> float:
    """Maximum number of patches a single model can receive."""
    return d * M * M / (alpha * alpha)


def _as_family(events) -> EventFamily:
    return events if isinstance(events, EventFamily) else EventFamily.from_events(list(events))


def _values(model: PatchedModel) -> np.ndarray:
    if model.values is None:
        raise ValueError(f"model {model.name!r} is not bound to the sample")
    return model.values


def family_scores(dataset: Dataset, model: PatchedModel, family: EventFamily):
    """(scores, sums, counts) for every event of the family (empty events score 0)."""
    k = _backend.kernels()
    sums, counts = k.cell_sums(_values(model), dataset.labels, family.cells, family.ncells)
    return k.event_scores(sums, counts, dataset.n), sums, counts


def event_bias(dataset: Dataset, model: PatchedModel, event: ConditioningEvent) -> ViolationReport:
    if len(event.member_indices) == 0:
        raise ValueError("empty conditioning event")
    scores, sums, counts = family_scores(dataset, model, EventFamily.from_events([event]))
    bias = sums[0] / np.float64(counts[0])
    return ViolationReport(event, bias, event.mass, float(scores[0]), model.version)


def find_violation(dataset: Dataset, model: PatchedModel, events, alpha: float):
    """Highest-scoring event if its score exceeds alpha; ties go to the smallest descriptor key."""
    family = _as_family(events)
    scores, sums, counts = family_scores(dataset, model, family)
    if not scores.size:
        return None
    top = scores.max()
    if not top > alpha:
        return None
    cand = np.flatnonzero(scores == top)
    g = int(cand[np.argmin(family.ranks[cand])])
    ev = family.event(g)
    return ViolationReport(ev, sums[g] / np.float64(counts[g]), ev.mass, float(top), model.version)


def apply_patch(dataset: Dataset, model: PatchedModel, report: ViolationReport, round: int = 0):
    """Shift predictions on the report's event by its bias; returns (model, squared-error drop)."""
    if report.model_version is not None and report.model_version != model.version:
        raise StaleReportError(f"report computed at version {report.model_version}, "
                               f"model is at {model.version}")
    old, new = _backend.kernels().patch_members(
        _values(model), dataset.labels, report.event.member_indices, report.bias, model.M)
    model.add_patch(Patch(report.event, np.array(report.bias, dtype=np.float64), round))
    return model, (old - new) / dataset.n


def update(dataset: Dataset, model: PatchedModel, events, alpha: float, round: int = 0):
    """Patch the worst violator until every event scores <= alpha (member sets frozen)."""
    family = _as_family(events)
    bound = patch_bound(dataset.d, model.M, alpha)
    H = _values(model)
    sel, deltas, scores, before, after, _, overflow = _backend.kernels().update_loop(
        H, dataset.labels, family.cells, family.ncells, family.ranks, float(alpha), model.M,
        int(min(math.ceil(bound) + 1, 2 ** 62)))
    if overflow or len(sel) > bound:
        raise InvariantViolation(f"{len(sel)} patches exceed the bound d*M^2/alpha^2 = {bound:.6g}")
    trace = DebiasTrace()
    events: dict = {}  # member sets are frozen for the whole call
    for g, delta, s, b, a in zip(sel.tolist(), deltas, scores.tolist(), before.tolist(), after.tolist()):
        ev = events.get(g)
        if ev is None:
            ev = events[g] = family.event(g)
        model.add_patch(Patch(ev, delta, round))
        trace.records.append(PatchRecord(round, ev.descriptor, delta, ev.mass, s, b, a))
    final, _, _ = family_scores(dataset, model, family)
    trace.terminal_max_score = float(final.max(initial=0.0))
    return model, trace


@dataclass
class ConsistencyReport:
    rows: list  # (descriptor, mass, score)
    max_score: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.max_score <= self.alpha

    def to_rows(self):
        return [(describe(d), m, s) for d, m, s in self.rows]


def check_consistency(dataset: Dataset, model: PatchedModel, events, alpha: float) -> ConsistencyReport:
    family = _as_family(events)
    scores, _, counts = family_scores(dataset, model, family)
    rows = [(family.descriptor(g), counts[g] / dataset.n, float(scores[g]))
            for g in range(len(family)) if counts[g] > 0]
    return ConsistencyReport(rows, float(scores.max(initial=0.0)), alpha)
