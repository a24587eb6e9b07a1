"""Downstream optimization oracle: argmax of a linear objective over a feasible region.

Two regions are built in.  ``LinearCapped`` (box plus caps on sums of
coordinate subsets) is solved by a tableau simplex with Bland's rule.
``CovarianceConstrained`` (probability simplex plus a quadratic risk cap) is
solved exactly by enumerating supports: on each face the optimum is either
the face's minimum-variance point or the closed-form stationary point with
the risk constraint active.  Both run through the selected kernel backend.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import PatchedModel, ReplayContext, predict
from .errors import ConfigError, NumericalError

FEAS_TOL = 1e-8


@dataclass
class SolveStats:
    calls: int = 0
    seconds: float = 0.0

    def add(self, other: "SolveStats") -> None:
        self.calls += other.calls
        self.seconds += other.seconds


@dataclass(frozen=True)
class OracleResult:
    action: np.ndarray
    objective: float
    status: str = "Optimal"


class LinearCapped:
    kind = "linear_capped"

    def __init__(self, d: int, caps=(((0, 1), 0.5), ((1, 2), 0.6))):
        self.d = int(d)
        caps = tuple((tuple(int(i) for i in idx), float(cap)) for idx, cap in caps)
        for idx, cap in caps:
            if not idx or min(idx) < 0 or max(idx) >= self.d:
                raise ConfigError(f"cap index set {idx} out of range for d={self.d}")
            if not 0 < cap <= self.d:
                raise ConfigError(f"cap value {cap} must lie in (0, d]")
        self.caps = caps
        rows = []
        for idx, _ in caps:
            r = np.zeros(self.d)
            r[list(idx)] = 1.0
            rows.append(r)
        self.A = np.vstack(rows + [np.eye(self.d)]) if rows else np.eye(self.d)
        self.b = np.array([c for _, c in caps] + [1.0] * self.d)

    def _solve(self, coeffs):
        actions, status = _backend.kernels().lp_solve_batch(coeffs, self.A, self.b)
        if status.any():
            bad = int(np.flatnonzero(status)[0])
            raise NumericalError(f"simplex failed (status {int(status[bad])}) on row {bad}: "
                                 f"coeffs={coeffs[bad].tolist()}")
        return actions

    def residuals(self, actions) -> np.ndarray:
        a = np.atleast_2d(actions)
        viol = [np.maximum(-a, 0).max(axis=1), np.maximum(a - 1, 0).max(axis=1)]
        for idx, cap in self.caps:
            viol.append(np.maximum(a[:, list(idx)].sum(axis=1) - cap, 0))
        return np.max(np.vstack(viol), axis=0)

    def vertices(self) -> np.ndarray:
        """All basic feasible solutions by brute force (test oracle; small d only)."""
        A, b, d = self.A, self.b, self.d
        G = np.vstack([A, -np.eye(d)])
        h = np.concatenate([b, np.zeros(d)])
        out = []
        for rows in itertools.combinations(range(G.shape[0]), d):
            sub = G[list(rows)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            x = np.linalg.solve(sub, h[list(rows)])
            if np.all(G @ x <= h + 1e-9):
                out.append(x)
        return np.unique(np.round(np.array(out), 12), axis=0)

    def to_json(self):
        return {"kind": self.kind, "d": self.d, "caps": [[list(idx), cap] for idx, cap in self.caps]}


class CovarianceConstrained:
    kind = "covariance"

    def __init__(self, cov, risk_bound: float | None = None, risk_factor: float = 2.0):
        C = np.asarray(cov, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ConfigError("covariance must be square")
        if not np.allclose(C, C.T, atol=1e-10):
            raise ConfigError("covariance must be symmetric")
        C = (C + C.T) / 2
        w, V = np.linalg.eigh(C)
        if w.min() < -1e-8:
            raise ConfigError(f"covariance not PSD (min eigenvalue {w.min():.3g})")
        floor = 1e-12 * max(w.max(), 1e-300)
        if w.min() < floor:
            C = (V * np.maximum(w, floor)) @ V.T
            C = (C + C.T) / 2
        self.cov = C
        self.d = C.shape[0]
        self._build_supports()
        self.min_risk = self._min_variance()
        if risk_bound is None:
            risk_bound = risk_factor * self.min_risk
        risk_bound = float(risk_bound)
        if risk_bound < self.min_risk * (1 - 1e-12):
            raise ConfigError(f"risk bound {risk_bound:.6g} below the simplex minimum "
                              f"{self.min_risk:.6g}: empty feasible set")
        self.risk_bound = risk_bound

    @classmethod
    def from_labels(cls, labels, risk_bound=None, risk_factor=2.0):
        return cls(np.cov(np.asarray(labels, dtype=np.float64), rowvar=False), risk_bound, risk_factor)

    def _build_supports(self):
        d = self.d
        S = 2 ** d - 1
        self.sup_size = np.zeros(S, dtype=np.int64)
        self.sup_idx = np.zeros((S, d), dtype=np.int64)
        self.sup_kinv = np.zeros((S, d, d))
        self.sup_u = np.zeros((S, d))
        self.sup_A = np.zeros(S)
        for s, mask in enumerate(range(1, 2 ** d)):
            idx = [j for j in range(d) if mask >> j & 1]
            k = len(idx)
            K = self.cov[np.ix_(idx, idx)]
            Kinv = np.linalg.inv(K)
            u = np.linalg.solve(K, np.ones(k))
            self.sup_size[s] = k
            self.sup_idx[s, :k] = idx
            self.sup_kinv[s, :k, :k] = Kinv
            self.sup_u[s, :k] = u
            self.sup_A[s] = u.sum()

    def _min_variance(self) -> float:
        best = np.inf
        for s in range(len(self.sup_size)):
            k = self.sup_size[s]
            p = self.sup_u[s, :k] / self.sup_A[s]
            if p.min() < -1e-12:
                continue
            p = np.maximum(p, 0)
            idx = self.sup_idx[s, :k]
            best = min(best, float(p @ self.cov[np.ix_(idx, idx)] @ p))
        return best

    def _solve(self, coeffs):
        actions, status = _backend.kernels().cov_solve_batch(
            coeffs, self.cov, self.risk_bound, self.sup_size, self.sup_idx,
            self.sup_kinv, self.sup_u, self.sup_A)
        if status.any():
            bad = int(np.flatnonzero(status)[0])
            raise NumericalError(f"no certified candidate for row {bad}: coeffs={coeffs[bad].tolist()}, "
                                 f"risk_bound={self.risk_bound}, min_risk={self.min_risk}")
        return actions

    def residuals(self, actions) -> np.ndarray:
        a = np.atleast_2d(actions)
        risk = np.einsum("ni,ij,nj->n", a, self.cov, a)
        viol = [np.maximum(-a, 0).max(axis=1), np.maximum(a - 1, 0).max(axis=1),
                np.abs(a.sum(axis=1) - 1), np.maximum(risk - self.risk_bound, 0)]
        return np.max(np.vstack(viol), axis=0)

    def to_json(self):
        return {"kind": self.kind, "risk_bound": self.risk_bound, "cov": self.cov.tolist()}


def region_from_json(obj, labels=None):
    kind = obj.get("kind")
    if kind == "linear_capped":
        caps = obj.get("caps", [[[0, 1], 0.5], [[1, 2], 0.6]])
        d = obj.get("d") or (labels.shape[1] if labels is not None else None)
        if d is None:
            raise ConfigError("linear_capped region needs d (or a dataset)")
        return LinearCapped(int(d), caps)
    if kind == "covariance":
        if "cov" in obj:
            return CovarianceConstrained(obj["cov"], obj.get("risk_bound"), obj.get("risk_factor", 2.0))
        if labels is None:
            raise ConfigError("covariance region needs labels to estimate the covariance")
        return CovarianceConstrained.from_labels(labels, obj.get("risk_bound"), obj.get("risk_factor", 2.0))
    raise ConfigError(f"unknown region kind {kind!r}")


def solve_batch(region, coeffs, stats: SolveStats | None = None) -> np.ndarray:
    """Maximizers for each row of ``coeffs``; actions are clipped into [0, 1]."""
    coeffs = np.ascontiguousarray(np.atleast_2d(coeffs), dtype=np.float64)
    if coeffs.shape[1] != region.d:
        raise ConfigError(f"coefficients have {coeffs.shape[1]} columns, region has d={region.d}")
    if not np.isfinite(coeffs).all():
        raise ConfigError("non-finite objective coefficients")
    t0 = time.perf_counter()
    actions = region._solve(coeffs)
    np.clip(actions, 0.0, 1.0, out=actions)
    if stats is not None:
        stats.calls += coeffs.shape[0]
        stats.seconds += time.perf_counter() - t0
    return actions


def solve(region, coeffs) -> OracleResult:
    c = np.asarray(coeffs, dtype=np.float64).reshape(1, -1)
    a = solve_batch(region, c)[0]
    return OracleResult(a, float(a @ c[0]))


def verify_feasibility(region, action):
    r = float(region.residuals(np.asarray(action, dtype=np.float64))[0])
    return r <= FEAS_TOL, r


def kkt_residual(region: CovarianceConstrained, coeffs, action, support_tol=1e-9) -> float:
    """Largest violation of the KKT conditions at ``action`` (stationarity, dual sign, slackness)."""
    c = np.asarray(coeffs, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    C, rho = region.cov, region.risk_bound
    g = 2 * C @ a
    S = a > support_tol
    active = a @ C @ a >= rho - 1e-9 * max(rho, 1.0)
    if active:
        design = np.column_stack([g[S], np.ones(S.sum())])
        (lam, nu), *_ = np.linalg.lstsq(design, c[S], rcond=None)
    else:
        lam, nu = 0.0, float(np.mean(c[S]))
    stat = np.abs(c[S] - lam * g[S] - nu).max()
    dual = np.maximum(c[~S] - lam * g[~S] - nu, 0).max(initial=0.0)
    return float(max(stat, dual, max(-lam, 0.0)))


class InducedPolicy:
    """x -> argmax_a a . h(x), with per-sample actions cached per model version."""

    def __init__(self, region, model: PatchedModel, context: ReplayContext | None = None,
                 stats: SolveStats | None = None):
        self.region = region
        self.model = model
        self.context = context
        self.stats = stats
        self._cached_version = None
        self._cached = None

    def __call__(self, features, group_id) -> np.ndarray:
        H = predict(self.model, features, group_id, self.context)
        return solve_batch(self.region, H, self.stats)

    def sample_actions(self) -> np.ndarray:
        if self.model.values is None:
            raise ValueError("model is not bound to a sample")
        if self._cached_version != self.model.version:
            self._cached = solve_batch(self.region, self.model.values, self.stats)
            self._cached_version = self.model.version
        return self._cached


def induced_policy(region, model: PatchedModel, context=None, stats=None) -> InducedPolicy:
    return InducedPolicy(region, model, context, stats)
