"""Independent reference solvers used only by the tests."""

import itertools

import numpy as np


def lp_vertices(caps, d):
    """All basic feasible points of {0 <= a <= 1, sum_{i in S} a_i <= cap} by brute force."""
    rows, rhs = [], []
    for idx, cap in caps:
        r = np.zeros(d)
        r[list(idx)] = 1
        rows.append(r)
        rhs.append(cap)
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1
        rows += [e, -e]
        rhs += [1.0, 0.0]
    G, h = np.array(rows), np.array(rhs)
    pts = []
    for sub in itertools.combinations(range(len(G)), d):
        A = G[list(sub)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, h[list(sub)])
        if np.all(G @ x <= h + 1e-9):
            pts.append(x)
    return np.array(pts)


def simplex_grid(d, step):
    """Every point of the simplex whose coordinates are multiples of ``step``."""
    m = int(round(1 / step))
    out = []
    for comp in itertools.combinations(range(m + d - 1), d - 1):
        parts = np.diff(np.concatenate([[-1], comp, [m + d - 1]])) - 1
        out.append(parts / m)
    return np.array(out)


def kkt_stationarity(C, rho, c, a, tol=1e-9):
    """Residual of c = lam * 2Ca + nu on the support, with sign conditions off it."""
    S = a > tol
    g = 2 * C @ a
    active = a @ C @ a >= rho * (1 - 1e-9)
    if active:
        lam, nu = np.linalg.lstsq(np.column_stack([g[S], np.ones(S.sum())]), c[S], rcond=None)[0]
    else:
        lam, nu = 0.0, c[S].mean()
    r = c - lam * g - nu
    return max(np.abs(r[S]).max(), np.maximum(r[~S], 0).max(initial=0), max(-lam, 0))
