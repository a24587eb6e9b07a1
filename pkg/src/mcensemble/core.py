"""Shared domain types: datasets, bucketing of [0, 1], conditioning events, patched models."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ReplayContextError


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature rows, bounded labels in [0, M]^d and an integer group column."""

    features: np.ndarray
    labels: np.ndarray
    group_id: np.ndarray
    M: float
    n_groups: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        Y = np.ascontiguousarray(self.labels, dtype=np.float64)
        g = np.ascontiguousarray(self.group_id, dtype=np.int64)
        if X.ndim != 2 or Y.ndim != 2 or g.ndim != 1:
            raise ConfigError("features and labels must be 2-D, group_id 1-D")
        if not (X.shape[0] == Y.shape[0] == g.shape[0]) or min(X.shape + Y.shape) == 0:
            raise ConfigError(f"inconsistent shapes {X.shape}, {Y.shape}, {g.shape}")
        if not self.M > 0:
            raise ConfigError("label bound M must be positive")
        if Y.min() < 0 or Y.max() > self.M:
            raise ConfigError(f"labels must lie in [0, {self.M}]")
        if self.n_groups < 1 or g.min() < 0 or g.max() >= self.n_groups:
            raise ConfigError(f"group ids must lie in [0, {self.n_groups})")
        for a in (X, Y, g):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "group_id", g)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.labels.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.group_id[idx],
                       self.M, self.n_groups, dict(self.meta))

    def to_csv(self, path) -> None:
        """Write ``f0..f{p-1},g,y0..y{d-1}`` rows plus a JSON metadata sidecar."""
        path = Path(path)
        header = [f"f{j}" for j in range(self.p)] + ["g"] + [f"y{j}" for j in range(self.d)]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for x, g, y in zip(self.features.tolist(), self.group_id.tolist(), self.labels.tolist()):
                w.writerow([repr(v) for v in x] + [str(g)] + [repr(v) for v in y])
        meta = {"n": self.n, "p": self.p, "d": self.d, "M": self.M, "n_groups": self.n_groups}
        meta.update({k: v for k, v in self.meta.items() if k not in meta})
        meta.setdefault("seed", None)
        meta.setdefault("label_affine", {"scale": 1.0, "shift": 0.0})
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        p, d = int(meta["p"]), int(meta["d"])
        expected = [f"f{j}" for j in range(p)] + ["g"] + [f"y{j}" for j in range(d)]
        if header != expected:
            raise ConfigError(f"{path}: unexpected header {header[:3]}...")
        arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), p + 1 + d)
        extra = {k: v for k, v in meta.items() if k not in ("n", "p", "d", "M", "n_groups")}
        return cls(arr[:, :p], arr[:, p + 1:], arr[:, p].astype(np.int64), float(meta["M"]),
                   int(meta["n_groups"]), extra)


def sidecar_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(".json")


# --------------------------------------------------------------------------
# bucketing of the unit interval
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Bucketing:
    """Equal-width partition of [0, 1]; intervals are half-open except the last."""

    width: float
    num_buckets: int

    @property
    def effective_width(self) -> float:
        return 1.0 / self.num_buckets

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.num_buckets + 1) / self.num_buckets

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        return (e[:-1] + e[1:]) / 2

    def index(self, values) -> np.ndarray:
        """Vectorized :func:`bucket_of`; values must lie in [0, 1]."""
        v = np.asarray(values, dtype=np.float64)
        if v.size and (v.min() < 0.0 or v.max() > 1.0 or np.isnan(v).any()):
            raise ValueError("bucketed values must lie in [0, 1]")
        N = self.num_buckets
        j = np.minimum(np.floor(v * N).astype(np.int64), N - 1)
        # align with the float edges j/N exactly
        edges = self.edges
        j = np.where(v < edges[j], j - 1, j)
        j = np.where((j < N - 1) & (v >= edges[np.minimum(j + 1, N)]), j + 1, j)
        return j


def make_bucketing(alpha: float, M: float, k_scale: int = 1) -> Bucketing:
    """Bucketing of nominal width sqrt(alpha * k_scale / M), rounded to an exact partition."""
    if not (alpha > 0 and M > 0 and k_scale >= 1):
        raise ConfigError("need alpha > 0, M > 0, k_scale >= 1")
    if alpha * k_scale > M:
        raise ConfigError(f"alpha * k_scale = {alpha * k_scale} exceeds M = {M}: bucket width > 1")
    w = math.sqrt(alpha * k_scale / M)
    # guard against 1/w landing a hair above an integer from rounding
    ratio = 1.0 / w
    n = round(ratio)
    num = n if abs(ratio - n) <= 1e-9 * ratio else math.ceil(ratio)
    return Bucketing(width=w, num_buckets=max(1, num))


def bucket_of(value: float, b: Bucketing) -> int:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"value {value} outside [0, 1]")
    return int(b.index(np.array([value]))[0])


# --------------------------------------------------------------------------
# conditioning events
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AllPoints:
    def key(self):
        return (0, 0, 0, 0)

    def to_json(self):
        return {"kind": "all"}


@dataclass(frozen=True)
class PolicyLevelSet:
    """{x : policy(x)[coord] in bucket}.  ``policy`` is "self" for the model's own policy."""

    policy: str
    coord: int
    bucket: int
    policy_index: int = 0

    def key(self):
        return (1, self.policy_index, self.coord, self.bucket)

    def to_json(self):
        return {"kind": "level", "policy": self.policy, "coord": self.coord,
                "bucket": self.bucket, "policy_index": self.policy_index}


@dataclass(frozen=True)
class ArgmaxRegion:
    """Points where ``model`` has the highest self-assessed payoff (lowest index on ties)."""

    model: int

    def key(self):
        return (2, self.model, 0, 0)

    def to_json(self):
        return {"kind": "argmax", "model": self.model}


@dataclass(frozen=True)
class Intersection:
    left: object
    right: object

    def key(self):
        parts = [self.left, self.right]
        level = next((p for p in parts if isinstance(p, PolicyLevelSet)), None)
        arg = next((p for p in parts if isinstance(p, ArgmaxRegion)), None)
        if level is not None and arg is not None:
            return (3, arg.model, level.coord, level.bucket)
        lk, rk = self.left.key(), self.right.key()
        return (3,) + tuple(max(a, b) for a, b in zip(lk[1:], rk[1:]))

    def to_json(self):
        return {"kind": "and", "left": self.left.to_json(), "right": self.right.to_json()}


def descriptor_from_json(obj):
    kind = obj["kind"]
    if kind == "all":
        return AllPoints()
    if kind == "level":
        return PolicyLevelSet(obj["policy"], int(obj["coord"]), int(obj["bucket"]),
                              int(obj.get("policy_index", 0)))
    if kind == "argmax":
        return ArgmaxRegion(int(obj["model"]))
    if kind == "and":
        return Intersection(descriptor_from_json(obj["left"]), descriptor_from_json(obj["right"]))
    raise ConfigError(f"unknown descriptor kind {kind!r}")


def describe(desc) -> str:
    if isinstance(desc, AllPoints):
        return "all"
    if isinstance(desc, PolicyLevelSet):
        return f"level[{desc.policy}:{desc.coord}:{desc.bucket}]"
    if isinstance(desc, ArgmaxRegion):
        return f"argmax[{desc.model}]"
    return f"{describe(desc.left)}&{describe(desc.right)}"


@dataclass(frozen=True, eq=False)
class ConditioningEvent:
    """A frozen set of sample indices together with the predicate that produced it."""

    member_indices: np.ndarray
    descriptor: object
    n: int

    def __post_init__(self):
        idx = np.asarray(self.member_indices, dtype=np.int64).ravel()
        if idx.size > 1 and not np.all(idx[1:] > idx[:-1]):
            idx = np.unique(idx)
        else:
            idx = idx.copy()
        if idx.size and (idx[0] < 0 or idx[-1] >= self.n):
            raise ValueError("member index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "member_indices", idx)

    @property
    def mass(self) -> float:
        return len(self.member_indices) / self.n

    @property
    def key(self):
        return self.descriptor.key()


class EventFamily:
    """A collection of conditioning events stored as labelled partitions of the sample.

    Row ``p`` of ``cells`` assigns every sample to a cell id of partition ``p``
    (or -1 for none); each nonempty cell is one event.  Arbitrary overlapping
    events are represented as one single-cell partition each.
    """

    def __init__(self, cells, descriptors: Sequence[Sequence[object]], n: int, ranks=None):
        cells = np.ascontiguousarray(np.atleast_2d(cells), dtype=np.int64)
        if cells.shape[1] != n:
            raise ValueError("cell rows must have one entry per sample")
        self.cells = cells
        self.cells.setflags(write=False)
        self.descriptors = [list(d) for d in descriptors]
        self.ncells = np.array([len(d) for d in self.descriptors], dtype=np.int64)
        self.n = n
        if len(self.descriptors) != cells.shape[0]:
            raise ValueError("one descriptor list per partition")
        if cells.size and cells.max() >= self.ncells.max(initial=0):
            raise ValueError("cell id without a descriptor")
        if ranks is None:
            keys = [d.key() for ds in self.descriptors for d in ds]
            order = sorted(range(len(keys)), key=lambda g: (keys[g], g))
            ranks = np.empty(len(keys), dtype=np.int64)
            ranks[order] = np.arange(len(keys))
        elif len(ranks) != int(self.ncells.sum()):
            raise ValueError("one rank per event")
        self.ranks = np.asarray(ranks, dtype=np.int64)
        self.offsets = np.zeros(len(self.ncells) + 1, dtype=np.int64)
        np.cumsum(self.ncells, out=self.offsets[1:])

    @classmethod
    def from_events(cls, events: Sequence[ConditioningEvent]) -> "EventFamily":
        if not events:
            raise ValueError("empty event family")
        n = events[0].n
        cells = np.full((len(events), n), -1, dtype=np.int64)
        for p, ev in enumerate(events):
            cells[p, ev.member_indices] = 0
        return cls(cells, [[ev.descriptor] for ev in events], n)

    @classmethod
    def concat(cls, families: Sequence["EventFamily"], ranks=None) -> "EventFamily":
        cells = np.vstack([f.cells for f in families])
        descs = [d for f in families for d in f.descriptors]
        return cls(cells, descs, families[0].n, ranks=ranks)

    def __len__(self):
        return int(self.ncells.sum())

    def locate(self, g: int):
        p = int(np.searchsorted(self.offsets, g, side="right") - 1)
        return p, int(g - self.offsets[p])

    def descriptor(self, g: int):
        p, c = self.locate(g)
        return self.descriptors[p][c]

    def event(self, g: int) -> ConditioningEvent:
        p, c = self.locate(g)
        return ConditioningEvent(np.flatnonzero(self.cells[p] == c), self.descriptors[p][c], self.n)

    def counts(self) -> np.ndarray:
        out = np.zeros(len(self), dtype=np.int64)
        for p in range(self.cells.shape[0]):
            c = self.cells[p]
            out[self.offsets[p]:self.offsets[p + 1]] = np.bincount(c[c >= 0], minlength=int(self.ncells[p]))
        return out

    def events(self) -> list:
        """Nonempty events in storage order; zero-mass cells are pruned."""
        counts = self.counts()
        return [self.event(g) for g in range(len(self)) if counts[g] > 0]


def level_set_partitions(actions: np.ndarray, bucketing: Bucketing, policy: str,
                         policy_index: int = 0) -> EventFamily:
    """Level sets of a policy: one partition per action coordinate."""
    n, d = actions.shape
    cells = np.vstack([bucketing.index(actions[:, j]) for j in range(d)])
    descs, ranks = _level_template(policy, policy_index, d, bucketing.num_buckets)
    return EventFamily(cells, descs, n, ranks=ranks)


@lru_cache(maxsize=256)
def _level_template(policy: str, policy_index: int, d: int, N: int):
    descs = [[PolicyLevelSet(policy, j, b, policy_index) for b in range(N)] for j in range(d)]
    probe = EventFamily(np.zeros((d, 1), dtype=np.int64), descs, 1)
    return descs, probe.ranks


# --------------------------------------------------------------------------
# patched models
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Patch:
    event: ConditioningEvent
    delta: np.ndarray
    round: int


class PatchedModel:
    """A base predictor plus an ordered list of additive patches on conditioning events.

    ``values`` holds the current clamped predictions on the sample the model
    is bound to; patches are appended by the debiasing loop and replayed by
    :func:`predict` on fresh points.
    """

    def __init__(self, base, M: float, name: str = "h"):
        self.base = base
        self.M = float(M)
        self.name = name
        self.patches: list[Patch] = []
        self.version = 0
        self.values: np.ndarray | None = None
        self.sample: Dataset | None = None

    def base_predict(self, features, group_id) -> np.ndarray:
        raw = np.asarray(self.base.predict(features, group_id), dtype=np.float64)
        return np.minimum(np.maximum(raw, 0.0), self.M)

    def bind(self, dataset: Dataset) -> "PatchedModel":
        if self.patches:
            raise ValueError("bind before patching")
        self.values = np.ascontiguousarray(self.base_predict(dataset.features, dataset.group_id))
        self.sample = dataset
        self.version += 1
        return self

    def add_patch(self, patch: Patch) -> None:
        self.patches.append(patch)
        self.version += 1

    def is_bound_to(self, dataset) -> bool:
        return self.values is not None and self.sample is dataset

    def rounds(self) -> list:
        return sorted({p.round for p in self.patches})

    def copy(self) -> "PatchedModel":
        out = PatchedModel(self.base, self.M, self.name)
        out.patches = list(self.patches)
        out.version = self.version
        out.values = None if self.values is None else self.values.copy()
        out.sample = self.sample
        return out


@dataclass
class ReplayContext:
    """What descriptor evaluation needs on fresh points.

    ``own_actions(H)`` maps a prediction matrix to the induced actions (the
    oracle); ``policies`` holds callables for opaque policies keyed by id;
    ``argmax[round]`` is the precomputed argmax-model index per fresh point.
    """

    bucketing: Bucketing | None = None
    own_actions: Callable | None = None
    policies: dict = field(default_factory=dict)
    argmax: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)


def _holds(desc, rnd, features, group_id, H_start, ctx: ReplayContext, own_cache: dict):
    n = H_start.shape[0]
    if isinstance(desc, AllPoints):
        return np.ones(n, dtype=bool)
    if isinstance(desc, Intersection):
        return (_holds(desc.left, rnd, features, group_id, H_start, ctx, own_cache)
                & _holds(desc.right, rnd, features, group_id, H_start, ctx, own_cache))
    if isinstance(desc, ArgmaxRegion):
        if ctx.argmax is None or rnd not in ctx.argmax:
            raise ReplayContextError(f"argmax-region patch at round {rnd} needs sibling models")
        return np.asarray(ctx.argmax[rnd]) == desc.model
    if isinstance(desc, PolicyLevelSet):
        if ctx.bucketing is None:
            raise ReplayContextError("level-set patch needs the bucketing")
        if desc.policy == "self":
            if ctx.own_actions is None:
                raise ReplayContextError("own-policy level-set patch needs the oracle")
            if "own" not in own_cache:
                own_cache["own"] = ctx.own_actions(H_start)
            acts = own_cache["own"]
        else:
            fn = ctx.policies.get(desc.policy)
            if fn is None:
                raise ReplayContextError(f"no callable registered for policy {desc.policy!r}")
            key = ("policy", desc.policy)
            if key not in ctx._cache:
                ctx._cache[key] = np.asarray(fn(features, group_id), dtype=np.float64)
            acts = ctx._cache[key]
        return ctx.bucketing.index(acts[:, desc.coord]) == desc.bucket
    raise ReplayContextError(f"cannot evaluate descriptor {desc!r}")


def apply_round(H: np.ndarray, patches: Sequence[Patch], rnd: int, features, group_id,
                ctx: ReplayContext, M: float) -> None:
    """Apply one round's patches in order; membership is evaluated at the round-start state."""
    H_start = H.copy()
    own_cache: dict = {}
    for patch in patches:
        mask = _holds(patch.event.descriptor, rnd, features, group_id, H_start, ctx, own_cache)
        if mask.any():
            H[mask] = np.minimum(np.maximum(H[mask] + patch.delta, 0.0), M)


def predict(model: PatchedModel, features, group_id, context: ReplayContext | None = None) -> np.ndarray:
    """Replay the model's patch chain on fresh points."""
    H = np.ascontiguousarray(model.base_predict(features, group_id))
    if not model.patches:
        return H
    ctx = context if context is not None else ReplayContext()
    ctx._cache.clear()
    by_round: dict = {}
    for p in model.patches:
        by_round.setdefault(p.round, []).append(p)
    for rnd in sorted(by_round):
        apply_round(H, by_round[rnd], rnd, features, group_id, ctx, model.M)
    return H


def rowdot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise inner products accumulated left to right (batch-size independent)."""
    out = A[:, 0] * B[:, 0]
    for j in range(1, A.shape[1]):
        out = out + A[:, j] * B[:, j]
    return out
