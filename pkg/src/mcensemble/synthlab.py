"""Seeded synthetic data and specialist base models.

Features are multivariate normal with a random SPD covariance plus a uniform
categorical group; labels are a noisy linear function of the features,
affinely mapped into [0, M]^d.  Base models are least-squares gradient boosted
regression trees, either specialised to one label coordinate or to one group.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import Dataset
from .errors import ConfigError


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_train: int = 10000
    n_debias: int = 400
    p: int = 20
    d: int = 4
    n_groups: int = 5
    noise_scale: float = 0.1   # noise std as a fraction of each signal coordinate's std
    M: float = 1.0
    cov_eps: float = 0.1
    upper_quantile: float = 0.999

    def __post_init__(self):
        for name in ("n_train", "n_debias", "p", "d", "n_groups"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.noise_scale < 0 or not self.M > 0:
            raise ConfigError("noise_scale must be >= 0 and M > 0")
        if not self.cov_eps > 0:
            raise ConfigError("cov_eps must be positive (it keeps the covariance nondegenerate)")
        if not 0 < self.upper_quantile <= 1:
            raise ConfigError("upper_quantile must lie in (0, 1]")


@dataclass(frozen=True)
class _Process:
    cov: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    noise_std: np.ndarray


def _process(cfg: GeneratorConfig, rng) -> _Process:
    G = rng.standard_normal((cfg.p, cfg.p))
    cov = G @ G.T + cfg.cov_eps * np.eye(cfg.p)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("degenerate feature covariance") from exc
    W = rng.standard_normal((cfg.p, cfg.d))
    signal_std = np.sqrt(np.einsum("ij,ik,kj->j", W, cov, W))
    return _Process(cov, chol, W, cfg.noise_scale * signal_std)


def _draw(proc: _Process, cfg: GeneratorConfig, n: int, rng):
    X = rng.standard_normal((n, cfg.p)) @ proc.chol.T
    g = rng.integers(0, cfg.n_groups, size=n)
    raw = X @ proc.weights + rng.standard_normal((n, cfg.d)) * proc.noise_std
    return X, g, raw


def generate(cfg: GeneratorConfig):
    """(train, debias) datasets; both share one process and one label map, with separate streams."""
    s_proc, s_train, s_debias = np.random.SeedSequence(cfg.seed).spawn(3)
    proc = _process(cfg, np.random.default_rng(s_proc))
    Xt, gt, rt = _draw(proc, cfg, cfg.n_train, np.random.default_rng(s_train))
    Xd, gd, rd = _draw(proc, cfg, cfg.n_debias, np.random.default_rng(s_debias))
    lo = float(rt.min())
    hi = float(np.quantile(rt, cfg.upper_quantile))
    if not hi > lo:
        raise ConfigError("labels are constant; cannot map them into [0, M]")
    scale = cfg.M / (hi - lo)
    shift = -lo * scale

    def to_range(raw):
        return np.clip(raw * scale + shift, 0.0, cfg.M)

    meta = {"seed": cfg.seed, "label_affine": {"scale": scale, "shift": shift}}
    train = Dataset(Xt, to_range(rt), gt, cfg.M, cfg.n_groups, dict(meta, split="train"))
    debias = Dataset(Xd, to_range(rd), gd, cfg.M, cfg.n_groups, dict(meta, split="debias"))
    return train, debias


# --------------------------------------------------------------------------
# gradient boosted regression trees
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GBTParams:
    depth: int = 3
    learning_rate: float = 0.1
    n_estimators: int = 50
    min_leaf: int = 5

    def __post_init__(self):
        if self.depth < 0 or self.n_estimators < 0 or self.min_leaf < 1 or not self.learning_rate > 0:
            raise ConfigError(f"invalid boosting parameters {self}")


def _best_split(X, g, r, idx, orders, min_leaf):
    """(gain, feature, threshold, is_group) of the best split of node ``idx``, or None."""
    n = len(idx)
    total = r[idx].sum()
    base = total * total / n
    best = None
    in_node = np.zeros(len(r), dtype=bool)
    in_node[idx] = True
    p = X.shape[1]
    for f in range(p):
        o = orders[f][in_node[orders[f]]]
        v = X[o, f]
        cs = np.cumsum(r[o])
        nl = np.arange(1, n)
        ok = (v[:-1] < v[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        sl = cs[:-1]
        gain = np.where(ok, sl * sl / nl + (total - sl) ** 2 / (n - nl), -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            thr = 0.5 * (v[i] + v[i + 1])
            if not thr < v[i + 1]:
                thr = v[i]
            best = (float(gain[i]), f, float(thr), False)
    if g is not None:
        gi = g[idx]
        ri = r[idx]
        for c in np.unique(gi):
            m = gi == c
            nl = int(m.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            sl = ri[m].sum()
            gain = sl * sl / nl + (total - sl) ** 2 / (n - nl)
            if best is None or gain > best[0]:
                best = (float(gain), p, float(c), True)
    if best is None or not best[0] > base * (1 + 1e-12) + 1e-300:
        return None
    return best


def _grow(X, g, r, idx, orders, depth, min_leaf):
    split = None if depth == 0 or len(idx) < 2 * min_leaf else _best_split(X, g, r, idx, orders, min_leaf)
    if split is None:
        return {"value": float(r[idx].mean())}
    _, f, thr, is_group = split
    col = g[idx] if is_group else X[idx, f]
    left = col == thr if is_group else col <= thr
    return {"feature": int(f), "op": "eq" if is_group else "le", "threshold": thr,
            "left": _grow(X, g, r, idx[left], orders, depth - 1, min_leaf),
            "right": _grow(X, g, r, idx[~left], orders, depth - 1, min_leaf)}


def _tree_predict(node, X, g, out, idx):
    if "value" in node:
        out[idx] = node["value"]
        return
    f = node["feature"]
    col = g[idx] if f == X.shape[1] else X[idx, f]
    left = col == node["threshold"] if node["op"] == "eq" else col <= node["threshold"]
    _tree_predict(node["left"], X, g, out, idx[left])
    _tree_predict(node["right"], X, g, out, idx[~left])


class GradientBoostedTrees:
    """Scalar least-squares boosting; feature index p denotes the group column."""

    def __init__(self, init: float, learning_rate: float, trees: list, p: int):
        self.init = float(init)
        self.learning_rate = float(learning_rate)
        self.trees = trees
        self.p = int(p)

    @classmethod
    def fit(cls, X, g, y, params: GBTParams = GBTParams()) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        g = None if g is None else np.asarray(g, dtype=np.int64)
        if len(y) == 0:
            raise ConfigError("cannot fit boosted trees on an empty sample")
        orders = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
        model = cls(y.mean(), params.learning_rate, [], X.shape[1])
        f = np.full(len(y), model.init)
        idx = np.arange(len(y))
        for _ in range(params.n_estimators):
            tree = _grow(X, g, y - f, idx, orders, params.depth, params.min_leaf)
            model.trees.append(tree)
            step = np.empty(len(y))
            _tree_predict(tree, X, g, step, idx)
            f = f + params.learning_rate * step
        return model

    def predict(self, X, g=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        g = np.zeros(len(X), dtype=np.int64) if g is None else np.asarray(g, dtype=np.int64)
        out = np.full(len(X), self.init)
        idx = np.arange(len(X))
        step = np.empty(len(X))
        for tree in self.trees:
            _tree_predict(tree, X, g, step, idx)
            out = out + self.learning_rate * step
        return out

    def to_json(self) -> dict:
        return {"init": self.init, "learning_rate": self.learning_rate, "p": self.p, "trees": self.trees}

    @classmethod
    def from_json(cls, obj) -> "GradientBoostedTrees":
        return cls(obj["init"], obj["learning_rate"], obj["trees"], obj["p"])


# --------------------------------------------------------------------------
# base predictors
# --------------------------------------------------------------------------

class LabelMean:
    kind = "label_mean"

    def __init__(self, mean):
        self.mean = np.array(mean, dtype=np.float64)

    @classmethod
    def fit(cls, train: Dataset) -> "LabelMean":
        return cls(train.labels.mean(axis=0))

    def predict(self, features, group_id=None) -> np.ndarray:
        return np.tile(self.mean, (len(features), 1))

    def to_json(self):
        return {"kind": self.kind, "mean": self.mean.tolist()}


class CoordinateSpecialist:
    """Boosted regressor on one coordinate, the training-label mean on the others."""

    kind = "coordinate"

    def __init__(self, coord: int, regressor: GradientBoostedTrees, mean):
        self.coord = int(coord)
        self.regressor = regressor
        self.mean = np.array(mean, dtype=np.float64)

    def predict(self, features, group_id) -> np.ndarray:
        out = np.tile(self.mean, (len(features), 1))
        out[:, self.coord] = self.regressor.predict(features, group_id)
        return out

    def to_json(self):
        return {"kind": self.kind, "coord": self.coord, "mean": self.mean.tolist(),
                "regressor": self.regressor.to_json()}


class GroupSpecialist:
    """Per-coordinate boosted regressors inside one group, the global label mean elsewhere."""

    kind = "group"

    def __init__(self, group: int, regressors: list, mean):
        self.group = int(group)
        self.regressors = regressors
        self.mean = np.array(mean, dtype=np.float64)

    def predict(self, features, group_id) -> np.ndarray:
        out = np.tile(self.mean, (len(features), 1))
        rows = np.flatnonzero(np.asarray(group_id) == self.group)
        if rows.size:
            Xg = np.asarray(features)[rows]
            gg = np.asarray(group_id)[rows]
            for j, reg in enumerate(self.regressors):
                out[rows, j] = reg.predict(Xg, gg)
        return out

    def to_json(self):
        return {"kind": self.kind, "group": self.group, "mean": self.mean.tolist(),
                "regressors": [r.to_json() for r in self.regressors]}


def base_from_json(obj):
    kind = obj.get("kind")
    if kind == "label_mean":
        return LabelMean(obj["mean"])
    if kind == "coordinate":
        return CoordinateSpecialist(obj["coord"], GradientBoostedTrees.from_json(obj["regressor"]), obj["mean"])
    if kind == "group":
        return GroupSpecialist(obj["group"], [GradientBoostedTrees.from_json(r) for r in obj["regressors"]],
                               obj["mean"])
    raise ConfigError(f"unknown base model kind {kind!r}")


def save_models(models, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([m.to_json() for m in models], fh, sort_keys=True)


def load_models(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [base_from_json(o) for o in json.load(fh)]


def train_gbt(train: Dataset, coord: int, mask=None, params: GBTParams = GBTParams()) -> GradientBoostedTrees:
    rows = np.arange(train.n) if mask is None else np.flatnonzero(mask)
    if rows.size == 0:
        raise ConfigError("empty training mask")
    return GradientBoostedTrees.fit(train.features[rows], train.group_id[rows],
                                    train.labels[rows, coord], params)


def make_coordinate_specialists(train: Dataset, params: GBTParams = GBTParams()) -> list:
    mean = train.labels.mean(axis=0)
    return [CoordinateSpecialist(j, train_gbt(train, j, None, params), mean) for j in range(train.d)]


def make_group_specialists(train: Dataset, params: GBTParams = GBTParams()) -> list:
    mean = train.labels.mean(axis=0)
    out = []
    for grp in range(train.n_groups):
        mask = train.group_id == grp
        if not mask.any():
            raise ConfigError(f"group {grp} has no training rows")
        out.append(GroupSpecialist(grp, [train_gbt(train, j, mask, params) for j in range(train.d)], mean))
    return out


def config_dict(cfg) -> dict:
    return asdict(cfg)
