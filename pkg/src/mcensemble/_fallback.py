"""Pure-Python / numpy implementations of the hot kernels.

Signatures and floating-point operation order mirror ``_kernels.pyx`` so the
two backends agree bit for bit on the same machine.  Every reduction is an
explicit sequential sum (``np.bincount`` and ``np.cumsum`` accumulate in index
order); numpy's pairwise ``sum`` is avoided on purpose.
"""

import numpy as np

LP_OK, LP_UNBOUNDED, LP_ITERLIMIT = 0, 1, 2
COV_OK, COV_INFEASIBLE = 0, 1

_EPS = 1e-12
_MAX_PIVOTS = 10000
_NEG_TOL = 1e-12
_VAR_RTOL = 1e-9
_FLAT_RTOL = 1e-10


# --------------------------------------------------------------------------
# linear program: maximize c.x  s.t.  A x <= b, x >= 0   (b >= 0)
# --------------------------------------------------------------------------

def _lp_one(c, A, b, d, m):
    ncol = d + m
    T = [list(A[r]) + [1.0 if k == r else 0.0 for k in range(m)] for r in range(m)]
    rhs = list(b)
    z = list(c) + [0.0] * m
    basis = [d + r for r in range(m)]
    for _ in range(_MAX_PIVOTS):
        # Bland: lowest-index improving column
        j = -1
        for k in range(ncol):
            if z[k] > _EPS:
                j = k
                break
        if j < 0:
            x = [0.0] * d
            for r in range(m):
                if basis[r] < d:
                    x[basis[r]] = rhs[r] if rhs[r] > 0.0 else 0.0
            return x, LP_OK
        r_best = -1
        best = 0.0
        for r in range(m):
            a = T[r][j]
            if a > _EPS:
                ratio = rhs[r] / a
                if r_best < 0 or ratio < best - _EPS:
                    r_best = r
                    best = ratio
                elif ratio <= best + _EPS and basis[r] < basis[r_best]:
                    r_best = r
                    best = ratio
        if r_best < 0:
            return [0.0] * d, LP_UNBOUNDED
        row = T[r_best]
        piv = row[j]
        for k in range(ncol):
            row[k] = row[k] / piv
        rhs[r_best] = rhs[r_best] / piv
        for r in range(m):
            if r != r_best:
                f = T[r][j]
                if f != 0.0:
                    other = T[r]
                    for k in range(ncol):
                        other[k] = other[k] - f * row[k]
                    rhs[r] = rhs[r] - f * rhs[r_best]
        f = z[j]
        for k in range(ncol):
            z[k] = z[k] - f * row[k]
        basis[r_best] = j
    return [0.0] * d, LP_ITERLIMIT


def lp_solve_batch(coeffs, A, b):
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    n, d = coeffs.shape
    m = A.shape[0]
    A_rows = np.asarray(A, dtype=np.float64).tolist()
    b_list = np.asarray(b, dtype=np.float64).tolist()
    out = np.zeros((n, d))
    status = np.zeros(n, dtype=np.int8)
    for s, c in enumerate(coeffs.tolist()):
        x, st = _lp_one(c, A_rows, b_list, d, m)
        out[s] = x
        status[s] = st
    return out, status


# --------------------------------------------------------------------------
# max c.x  s.t.  sum x = 1, x >= 0, x'Cx <= rho  (support enumeration)
# --------------------------------------------------------------------------

def cov_solve_batch(coeffs, C, rho, sup_size, sup_idx, sup_kinv, sup_u, sup_A):
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    n, d = coeffs.shape
    best_obj = np.full(n, -np.inf)
    best = np.zeros((n, d))
    cols = [coeffs[:, a] for a in range(d)]
    var_cap = rho + rho * _VAR_RTOL
    for s in range(len(sup_size)):
        k = int(sup_size[s])
        idx = [int(t) for t in sup_idx[s, :k]]
        A = float(sup_A[s])
        u = [float(t) for t in sup_u[s, :k]]

        # the face's minimum-variance point, independent of the coefficients
        p = [u[a] / A for a in range(k)]
        if min(p) >= -_NEG_TOL:
            p = [pa if pa > 0.0 else 0.0 for pa in p]
            var = 0.0
            for a in range(k):
                for bb in range(k):
                    var = var + p[a] * C[idx[a], idx[bb]] * p[bb]
            if var <= var_cap:
                obj = np.zeros(n)
                for a in range(k):
                    obj = obj + cols[idx[a]] * p[a]
                take = obj > best_obj
                if take.any():
                    best_obj = np.where(take, obj, best_obj)
                    cand = np.zeros(d)
                    for a in range(k):
                        cand[idx[a]] = p[a]
                    best[take] = cand

        # risk constraint active: stationarity on the face solved in closed form
        gap = rho * A - 1.0
        if gap <= 0.0:
            continue
        K = sup_kinv[s]
        cs = [cols[idx[a]] for a in range(k)]
        v = []
        for a in range(k):
            acc = np.zeros(n)
            for bb in range(k):
                acc = acc + K[a, bb] * cs[bb]
            v.append(acc)
        B = np.zeros(n)
        Cc = np.zeros(n)
        for a in range(k):
            B = B + u[a] * cs[a]
            Cc = Cc + cs[a] * v[a]
        num = A * Cc - B * B
        # coefficients (nearly) constant on the face: flat objective, covered by the minimum-variance point
        flat = ~(num > _FLAT_RTOL * (A * Cc))
        disc = num / gap
        disc = np.where(disc > 0.0, disc, 0.0)
        sq = np.sqrt(disc)
        ok = (sq > 0.0) & ~flat
        if not ok.any():
            continue
        safe = np.where(ok, sq, 1.0)
        nu = (B - sq) / A
        pis = []
        for a in range(k):
            pa = (v[a] - nu * u[a]) / safe
            ok = ok & (pa >= -_NEG_TOL)
            pis.append(np.where(pa > 0.0, pa, 0.0))
        var = np.zeros(n)
        for a in range(k):
            for bb in range(k):
                var = var + pis[a] * C[idx[a], idx[bb]] * pis[bb]
        obj = np.zeros(n)
        for a in range(k):
            obj = obj + cs[a] * pis[a]
        take = ok & (var <= var_cap) & (obj > best_obj)
        if take.any():
            best_obj = np.where(take, obj, best_obj)
            rows = np.flatnonzero(take)
            best[rows] = 0.0
            for a in range(k):
                best[rows, idx[a]] = pis[a][rows]
    status = np.where(np.isfinite(best_obj), COV_OK, COV_INFEASIBLE).astype(np.int8)
    return best, status


# --------------------------------------------------------------------------
# conditioning-event statistics and the debiasing loop
# --------------------------------------------------------------------------

def _offsets(ncells):
    offs = np.zeros(len(ncells) + 1, dtype=np.int64)
    np.cumsum(ncells, out=offs[1:])
    return offs


def cell_sums(H, Y, cells, ncells):
    """Per-event residual sums (y - h) and member counts, events stacked by partition."""
    n, d = H.shape
    offs = _offsets(ncells)
    R = Y - H
    sums = np.zeros((int(offs[-1]), d))
    counts = np.zeros(int(offs[-1]), dtype=np.int64)
    for p in range(cells.shape[0]):
        c = cells[p]
        keep = c >= 0
        cc = c[keep]
        lo, hi = offs[p], offs[p + 1]
        counts[lo:hi] = np.bincount(cc, minlength=int(ncells[p]))
        Rk = R[keep]
        for j in range(d):
            sums[lo:hi, j] = np.bincount(cc, weights=Rk[:, j], minlength=int(ncells[p]))
    return sums, counts


def event_scores(sums, counts, n):
    score = np.zeros(len(counts))
    nz = counts > 0
    if nz.any():
        mass = counts[nz] / n
        bias = sums[nz] / counts[nz][:, None].astype(np.float64)
        score[nz] = mass * np.max(np.abs(bias), axis=1)
    return score


def _seq_sq(E):
    flat = (E * E).ravel()
    return float(np.cumsum(flat)[-1]) if flat.size else 0.0


def patch_members(H, Y, members, delta, M):
    """Shift rows ``members`` of H by delta, clamp to [0, M]; return (old, new) sq sums."""
    old = _seq_sq(H[members] - Y[members])
    H[members] = np.minimum(np.maximum(H[members] + delta, 0.0), M)
    new = _seq_sq(H[members] - Y[members])
    return old, new


def update_loop(H, Y, cells, ncells, ranks, alpha, M, max_patches):
    """Worst-violation-first debiasing on a frozen event family (H updated in place).

    Event sums are updated incrementally after each patch and recomputed from
    scratch before stopping.  Returns (events, deltas, scores, sq_before,
    sq_after, drops, overflow); squared errors are sample means.
    """
    n, d = H.shape
    offs = _offsets(ncells)
    part_of = np.repeat(np.arange(len(ncells)), ncells)
    total = _seq_sq(H - Y)
    sel, deltas, scores, before, after, drops = [], [], [], [], [], []
    overflow = False
    sums, counts = cell_sums(H, Y, cells, ncells)
    score = event_scores(sums, counts, n)
    overlap = {}  # event -> (overlapping cells, overlap sizes); member sets are frozen
    fresh = True
    while True:
        top = score.max() if score.size else 0.0
        if top <= alpha:
            if fresh:
                break
            sums, counts = cell_sums(H, Y, cells, ncells)
            score = event_scores(sums, counts, n)
            fresh = True
            continue
        if len(sel) >= max_patches:
            overflow = True
            break
        cand = np.flatnonzero(score == top)
        g = int(cand[np.argmin(ranks[cand])])
        p = int(part_of[g])
        members = np.flatnonzero(cells[p] == g - offs[p])
        delta = sums[g] / np.float64(counts[g])
        hold = H[members]
        raw = hold + delta
        clamped = bool(((raw < 0.0) | (raw > M)).any())
        old, new = patch_members(H, Y, members, delta, M)
        if clamped:
            diff = hold - H[members]
            for q in range(cells.shape[0]):
                c = cells[q, members]
                keep = c >= 0
                idx = offs[q] + c[keep]
                for j in range(d):
                    col = sums[:, j].copy()
                    np.add.at(col, idx, diff[keep, j])
                    sums[:, j] = col
        else:
            # every member moved by exactly delta: shift each overlapping cell by its overlap count
            if g not in overlap:
                c = cells[:, members]
                ids, cnt = np.unique((offs[:-1, None] + c)[c >= 0], return_counts=True)
                overlap[g] = (ids, cnt.astype(np.float64))
            ids, cnt = overlap[g]
            sums[ids] -= cnt[:, None] * delta
        score = event_scores(sums, counts, n)
        fresh = False
        sel.append(g)
        deltas.append(delta)
        scores.append(top)
        before.append(total / n)
        total = total - old + new
        after.append(total / n)
        drops.append((old - new) / n)
    return (
        np.asarray(sel, dtype=np.int64),
        np.asarray(deltas, dtype=np.float64).reshape(-1, d),
        np.asarray(scores, dtype=np.float64),
        np.asarray(before, dtype=np.float64),
        np.asarray(after, dtype=np.float64),
        np.asarray(drops, dtype=np.float64),
        overflow,
    )
