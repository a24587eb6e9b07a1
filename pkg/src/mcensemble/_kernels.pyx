# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: batched oracle solves and the frozen-family debias loop.

Operation order matches ``_fallback.py`` exactly; see that module for the
reference semantics of each function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

LP_OK, LP_UNBOUNDED, LP_ITERLIMIT = 0, 1, 2
COV_OK, COV_INFEASIBLE = 0, 1

cdef double _EPS = 1e-12
cdef int _MAX_PIVOTS = 10000
cdef double _NEG_TOL = 1e-12
cdef double _VAR_RTOL = 1e-9
cdef double _FLAT_RTOL = 1e-10


cdef int _lp_one(const double[:] c, const double[:, :] A, const double[:] b,
                 double[:, :] T, double[:] rhs, double[:] z, long[:] basis,
                 double[:] x) noexcept nogil:
    cdef Py_ssize_t d = c.shape[0]
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t ncol = d + m
    cdef Py_ssize_t r, k, j, r_best, it
    cdef double a, ratio, best, piv, f
    for r in range(m):
        for k in range(d):
            T[r, k] = A[r, k]
        for k in range(m):
            T[r, d + k] = 1.0 if k == r else 0.0
        rhs[r] = b[r]
        basis[r] = d + r
    for k in range(d):
        z[k] = c[k]
    for k in range(m):
        z[d + k] = 0.0
    for it in range(_MAX_PIVOTS):
        j = -1
        for k in range(ncol):
            if z[k] > _EPS:
                j = k
                break
        if j < 0:
            for k in range(d):
                x[k] = 0.0
            for r in range(m):
                if basis[r] < d:
                    x[basis[r]] = rhs[r] if rhs[r] > 0.0 else 0.0
            return 0
        r_best = -1
        best = 0.0
        for r in range(m):
            a = T[r, j]
            if a > _EPS:
                ratio = rhs[r] / a
                if r_best < 0 or ratio < best - _EPS:
                    r_best = r
                    best = ratio
                elif ratio <= best + _EPS and basis[r] < basis[r_best]:
                    r_best = r
                    best = ratio
        if r_best < 0:
            for k in range(d):
                x[k] = 0.0
            return 1
        piv = T[r_best, j]
        for k in range(ncol):
            T[r_best, k] = T[r_best, k] / piv
        rhs[r_best] = rhs[r_best] / piv
        for r in range(m):
            if r != r_best:
                f = T[r, j]
                if f != 0.0:
                    for k in range(ncol):
                        T[r, k] = T[r, k] - f * T[r_best, k]
                    rhs[r] = rhs[r] - f * rhs[r_best]
        f = z[j]
        for k in range(ncol):
            z[k] = z[k] - f * T[r_best, k]
        basis[r_best] = j
    for k in range(d):
        x[k] = 0.0
    return 2


def lp_solve_batch(coeffs, A, b):
    cdef const double[:, :] C = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef const double[:, :] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:] bm = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = C.shape[0], d = C.shape[1], m = Am.shape[0]
    out_arr = np.zeros((n, d))
    status_arr = np.zeros(n, dtype=np.int8)
    cdef double[:, :] out = out_arr
    cdef signed char[:] status = status_arr
    cdef double[:, :] T = np.zeros((m, d + m))
    cdef double[:] rhs = np.zeros(m)
    cdef double[:] z = np.zeros(d + m)
    cdef long[:] basis = np.zeros(m, dtype=np.int_)
    cdef Py_ssize_t s
    with nogil:
        for s in range(n):
            status[s] = _lp_one(C[s], Am, bm, T, rhs, z, basis, out[s])
    return out_arr, status_arr


def cov_solve_batch(coeffs, C, double rho, sup_size, sup_idx, sup_kinv, sup_u, sup_A):
    cdef const double[:, :] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef const double[:, :] Cm = np.ascontiguousarray(C, dtype=np.float64)
    cdef const long[:] ssize = np.ascontiguousarray(sup_size, dtype=np.int_)
    cdef const long[:, :] sidx = np.ascontiguousarray(sup_idx, dtype=np.int_)
    cdef const double[:, :, :] skinv = np.ascontiguousarray(sup_kinv, dtype=np.float64)
    cdef const double[:, :] su = np.ascontiguousarray(sup_u, dtype=np.float64)
    cdef const double[:] sA = np.ascontiguousarray(sup_A, dtype=np.float64)
    cdef Py_ssize_t n = cf.shape[0], d = cf.shape[1], S = ssize.shape[0]
    out_arr = np.zeros((n, d))
    status_arr = np.zeros(n, dtype=np.int8)
    cdef double[:, :] out = out_arr
    cdef signed char[:] status = status_arr
    cdef double[:] v = np.zeros(d)
    cdef double[:] pis = np.zeros(d)
    cdef signed char[:] pok = np.zeros(S, dtype=np.int8)
    cdef double[:, :] pmin = np.zeros((S, d))
    cdef Py_ssize_t i, s, k, a, bb
    cdef double A, gap, var, obj, best_obj, B, Cc, disc, sq, nu, pa, acc
    cdef double var_cap = rho + rho * _VAR_RTOL
    cdef bint ok, found

    # minimum-variance point of each face does not depend on the coefficients
    for s in range(S):
        k = ssize[s]
        A = sA[s]
        ok = True
        for a in range(k):
            pa = su[s, a] / A
            if pa < -_NEG_TOL:
                ok = False
            pmin[s, a] = pa if pa > 0.0 else 0.0
        if ok:
            var = 0.0
            for a in range(k):
                for bb in range(k):
                    var = var + pmin[s, a] * Cm[sidx[s, a], sidx[s, bb]] * pmin[s, bb]
            ok = var <= var_cap
        pok[s] = ok

    with nogil:
        for i in range(n):
            best_obj = -INFINITY
            found = False
            for s in range(S):
                k = ssize[s]
                A = sA[s]
                if pok[s]:
                    obj = 0.0
                    for a in range(k):
                        obj = obj + cf[i, sidx[s, a]] * pmin[s, a]
                    if obj > best_obj:
                        best_obj = obj
                        found = True
                        for a in range(d):
                            out[i, a] = 0.0
                        for a in range(k):
                            out[i, sidx[s, a]] = pmin[s, a]
                gap = rho * A - 1.0
                if gap <= 0.0:
                    continue
                for a in range(k):
                    acc = 0.0
                    for bb in range(k):
                        acc = acc + skinv[s, a, bb] * cf[i, sidx[s, bb]]
                    v[a] = acc
                B = 0.0
                Cc = 0.0
                for a in range(k):
                    B = B + su[s, a] * cf[i, sidx[s, a]]
                    Cc = Cc + cf[i, sidx[s, a]] * v[a]
                disc = A * Cc - B * B
                # coefficients (nearly) constant on the face: the objective is flat there and the
                # minimum-variance candidate already covers it
                if not disc > _FLAT_RTOL * (A * Cc):
                    continue
                disc = disc / gap
                if not disc > 0.0:
                    continue
                sq = sqrt(disc)
                if not sq > 0.0:
                    continue
                nu = (B - sq) / A
                ok = True
                for a in range(k):
                    pa = (v[a] - nu * su[s, a]) / sq
                    if not pa >= -_NEG_TOL:
                        ok = False
                    pis[a] = pa if pa > 0.0 else 0.0
                if not ok:
                    continue
                var = 0.0
                for a in range(k):
                    for bb in range(k):
                        var = var + pis[a] * Cm[sidx[s, a], sidx[s, bb]] * pis[bb]
                if not var <= var_cap:
                    continue
                obj = 0.0
                for a in range(k):
                    obj = obj + cf[i, sidx[s, a]] * pis[a]
                if obj > best_obj:
                    best_obj = obj
                    found = True
                    for a in range(d):
                        out[i, a] = 0.0
                    for a in range(k):
                        out[i, sidx[s, a]] = pis[a]
            status[i] = 0 if found else 1
    return out_arr, status_arr


def _offsets(ncells):
    offs = np.zeros(len(ncells) + 1, dtype=np.int64)
    np.cumsum(ncells, out=offs[1:])
    return offs


cdef void _cell_sums(const double[:, :] H, const double[:, :] Y, const cnp.int64_t[:, :] cells,
                     const cnp.int64_t[:] offs, double[:, :] sums, cnp.int64_t[:] counts) noexcept nogil:
    cdef Py_ssize_t P = cells.shape[0], n = H.shape[0], d = H.shape[1]
    cdef Py_ssize_t p, i, j, g
    cdef cnp.int64_t c
    for g in range(sums.shape[0]):
        counts[g] = 0
        for j in range(d):
            sums[g, j] = 0.0
    for p in range(P):
        for i in range(n):
            c = cells[p, i]
            if c < 0:
                continue
            g = offs[p] + c
            counts[g] += 1
            for j in range(d):
                sums[g, j] = sums[g, j] + (Y[i, j] - H[i, j])


cdef void _scores(const double[:, :] sums, const cnp.int64_t[:] counts, Py_ssize_t n,
                  double[:] score) noexcept nogil:
    cdef Py_ssize_t g, j, d = sums.shape[1]
    cdef double mass, mx, bj, cnt
    for g in range(counts.shape[0]):
        if counts[g] == 0:
            score[g] = 0.0
            continue
        cnt = <double>counts[g]
        mass = cnt / <double>n
        mx = 0.0
        for j in range(d):
            bj = fabs(sums[g, j] / cnt)
            if bj > mx:
                mx = bj
        score[g] = mass * mx


def cell_sums(H, Y, cells, ncells):
    cdef const double[:, :] Hm = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, :] Ym = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const cnp.int64_t[:, :] cm = np.ascontiguousarray(cells, dtype=np.int64)
    offs_arr = _offsets(ncells)
    cdef const cnp.int64_t[:] offs = offs_arr
    sums_arr = np.zeros((int(offs_arr[-1]), Hm.shape[1]))
    counts_arr = np.zeros(int(offs_arr[-1]), dtype=np.int64)
    cdef double[:, :] sums = sums_arr
    cdef cnp.int64_t[:] counts = counts_arr
    with nogil:
        _cell_sums(Hm, Ym, cm, offs, sums, counts)
    return sums_arr, counts_arr


def event_scores(sums, counts, n):
    cdef const double[:, :] sm = np.ascontiguousarray(sums, dtype=np.float64)
    cdef const cnp.int64_t[:] cm = np.ascontiguousarray(counts, dtype=np.int64)
    out = np.zeros(cm.shape[0])
    cdef double[:] om = out
    _scores(sm, cm, n, om)
    return out


cdef void _patch(double[:, :] H, const double[:, :] Y, const cnp.int64_t[:] cells_p,
                 cnp.int64_t cell, const double[:] delta, double M,
                 double* old, double* new) noexcept nogil:
    cdef Py_ssize_t i, j, n = H.shape[0], d = H.shape[1]
    cdef double e, h, o = 0.0, w = 0.0
    for i in range(n):
        if cells_p[i] != cell:
            continue
        for j in range(d):
            e = H[i, j] - Y[i, j]
            o = o + e * e
    for i in range(n):
        if cells_p[i] != cell:
            continue
        for j in range(d):
            h = H[i, j] + delta[j]
            if h < 0.0:
                h = 0.0
            if h > M:
                h = M
            H[i, j] = h
    for i in range(n):
        if cells_p[i] != cell:
            continue
        for j in range(d):
            e = H[i, j] - Y[i, j]
            w = w + e * e
    old[0] = o
    new[0] = w


def patch_members(H, Y, members, delta, double M):
    cdef double[:, :] Hm = H
    cdef const double[:, :] Ym = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[:] dm = np.ascontiguousarray(delta, dtype=np.float64)
    mask = np.full(Hm.shape[0], -1, dtype=np.int64)
    mask[np.asarray(members, dtype=np.int64)] = 0
    cdef const cnp.int64_t[:] mm = mask
    cdef double o, w
    _patch(Hm, Ym, mm, 0, dm, M, &o, &w)
    return o, w


cdef inline bint _better(const double* score, const cnp.int64_t* rk, cnp.int64_t a, cnp.int64_t b) noexcept nogil:
    # higher score wins, ties go to the smaller rank
    if b < 0:
        return True
    if a < 0:
        return False
    return score[a] > score[b] or (score[a] == score[b] and rk[a] < rk[b])


cdef void _tree_build(cnp.int64_t* tree, Py_ssize_t size, Py_ssize_t m, const cnp.int64_t* leaf,
                      const double* score, const cnp.int64_t* rk) noexcept nogil:
    # leaves hold event ids (nonempty events only); internal nodes hold the better child
    cdef Py_ssize_t v
    for v in range(size):
        tree[size + v] = leaf[v] if v < m else -1
    for v in range(size - 1, 0, -1):
        if _better(score, rk, tree[2 * v], tree[2 * v + 1]):
            tree[v] = tree[2 * v]
        else:
            tree[v] = tree[2 * v + 1]


cdef void _tree_fix(cnp.int64_t* tree, Py_ssize_t size, Py_ssize_t leafpos,
                    const double* score, const cnp.int64_t* rk) noexcept nogil:
    cdef Py_ssize_t v = (size + leafpos) // 2
    while v >= 1:
        if _better(score, rk, tree[2 * v], tree[2 * v + 1]):
            tree[v] = tree[2 * v]
        else:
            tree[v] = tree[2 * v + 1]
        v //= 2


cdef inline double _score_one(const double* row, Py_ssize_t d, cnp.int64_t count, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double cnt, mx = 0.0, bj
    if count == 0:
        return 0.0
    cnt = <double>count
    # division by cnt > 0 is monotone, so dividing the largest |sum| once gives the same max
    for j in range(d):
        bj = fabs(row[j])
        if bj > mx:
            mx = bj
    return (cnt / <double>n) * (mx / cnt)


def update_loop(H, Y, cells, ncells, ranks, double alpha, double M, long max_patches):
    cdef double[:, :] Hm = H
    cdef const double[:, :] Ym = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const cnp.int64_t[:, :] cm = np.ascontiguousarray(cells, dtype=np.int64)
    cdef const cnp.int64_t[:, :] cT = np.ascontiguousarray(np.asarray(cells, dtype=np.int64).T)
    cdef const cnp.int64_t[:] rk = np.ascontiguousarray(ranks, dtype=np.int64)
    offs_arr = _offsets(ncells)
    part_arr = np.repeat(np.arange(len(ncells), dtype=np.int64), ncells)
    cdef const cnp.int64_t[:] offs = offs_arr
    cdef const cnp.int64_t[:] part_of = part_arr
    cdef Py_ssize_t G = int(offs_arr[-1]), n = Hm.shape[0], d = Hm.shape[1], P = cm.shape[0]
    cdef double[:, :] sums = np.zeros((G, d))
    cdef cnp.int64_t[:] counts = np.zeros(G, dtype=np.int64)
    cdef double[:] score = np.zeros(G)
    cdef double[:] delta = np.zeros(d)
    cdef double[:] hold = np.zeros(d)
    cdef Py_ssize_t i, j, g, q, best_g
    cdef double top, total = 0.0, e, o, w, cnt, h
    cdef cnp.int64_t p, c, cell
    cdef bint fresh = True
    with nogil:
        _cell_sums(Hm, Ym, cm, offs, sums, counts)
        _scores(sums, counts, n, score)
    # counts never change (member sets are frozen), so only nonempty events enter the tree
    nz_arr = np.flatnonzero(np.asarray(counts)).astype(np.int64)
    pos_arr = np.full(max(G, 1), -1, dtype=np.int64)
    pos_arr[nz_arr] = np.arange(len(nz_arr))
    cdef const cnp.int64_t[:] nz = nz_arr if len(nz_arr) else np.zeros(1, dtype=np.int64)
    cdef const cnp.int64_t[:] pos = pos_arr
    cdef Py_ssize_t m = len(nz_arr)
    cdef Py_ssize_t size = 1
    while size < m:
        size *= 2
    cdef cnp.int64_t[:] tree = np.full(2 * size, -1, dtype=np.int64)
    cdef cnp.int64_t[:] touched = np.zeros(max(G, 1), dtype=np.int64)
    cdef signed char[:] mark = np.zeros(max(G, 1), dtype=np.int8)
    cdef Py_ssize_t ntouched, t, logsize = 1
    while (1 << logsize) < size:
        logsize += 1
    # members of each event in ascending row order (CSR)
    mptr_arr = np.zeros(G + 1, dtype=np.int64)
    np.cumsum(np.asarray(counts), out=mptr_arr[1:])
    cdef const cnp.int64_t[:] mptr = mptr_arr
    cdef cnp.int64_t[:] fill = mptr_arr[:G].copy() if G else np.zeros(1, dtype=np.int64)
    cdef cnp.int64_t[:] midx = np.zeros(max(int(mptr_arr[G]), 1), dtype=np.int64)
    for p in range(P):
        for i in range(n):
            c = cm[p, i]
            if c >= 0:
                g = offs[p] + c
                midx[fill[g]] = i
                fill[g] += 1
    # per selected event: the cells it overlaps and the overlap sizes, built on first use
    cdef cnp.int64_t[:] prof_ptr = np.full(max(G, 1), -1, dtype=np.int64)
    cdef cnp.int64_t[:] prof_len = np.zeros(max(G, 1), dtype=np.int64)
    cdef cnp.int64_t[:] prof_g = np.zeros(max(int(mptr_arr[G]) * P, 1), dtype=np.int64)
    cdef cnp.int64_t[:] prof_c = np.zeros(max(int(mptr_arr[G]) * P, 1), dtype=np.int64)
    cdef cnp.int64_t[:] tmpc = np.zeros(max(G, 1), dtype=np.int64)
    cdef Py_ssize_t used = 0, L, k, ms, me
    cdef bint clamped
    cdef double cntd
    hbuf_arr = np.zeros((max(n, 1), d))
    cdef double[:, :] hbuf = hbuf_arr
    sel, scores, before, after, drops = [], [], [], [], []
    cdef Py_ssize_t cap = 1024
    dbuf = np.zeros((cap, d))
    cdef double[:, :] dm = dbuf
    overflow = False
    for i in range(n):
        for j in range(d):
            e = Hm[i, j] - Ym[i, j]
            total = total + e * e
    if m > 0:
        _tree_build(&tree[0], size, m, &nz[0], &score[0], &rk[0])
    while True:
        best_g = tree[1] if m > 0 else -1
        top = score[best_g] if best_g >= 0 else 0.0
        if best_g < 0 or top <= alpha:
            if fresh:
                break
            # incremental sums drift; certify termination on exact sums
            with nogil:
                _cell_sums(Hm, Ym, cm, offs, sums, counts)
                _scores(sums, counts, n, score)
                _tree_build(&tree[0], size, m, &nz[0], &score[0], &rk[0])
            fresh = True
            continue
        if len(sel) >= max_patches:
            overflow = True
            break
        p = part_of[best_g]
        cell = best_g - offs[p]
        cnt = <double>counts[best_g]
        for j in range(d):
            delta[j] = sums[best_g, j] / cnt
        with nogil:
            o = 0.0
            w = 0.0
            ntouched = 0
            clamped = False
            ms = mptr[best_g]
            me = mptr[best_g + 1]
            for k in range(ms, me):
                i = midx[k]
                for j in range(d):
                    e = Hm[i, j] - Ym[i, j]
                    o = o + e * e
                    hbuf[k - ms, j] = Hm[i, j]
                    h = Hm[i, j] + delta[j]
                    if h < 0.0:
                        h = 0.0
                        clamped = True
                    if h > M:
                        h = M
                        clamped = True
                    Hm[i, j] = h
                    e = h - Ym[i, j]
                    w = w + e * e
            if clamped:
                for k in range(ms, me):
                    i = midx[k]
                    for q in range(P):
                        c = cT[i, q]
                        if c < 0:
                            continue
                        g = offs[q] + c
                        for j in range(d):
                            sums[g, j] = sums[g, j] + (hbuf[k - ms, j] - Hm[i, j])
                        if not mark[g]:
                            mark[g] = 1
                            touched[ntouched] = g
                            ntouched += 1
            else:
                # every member moved by exactly delta: shift each overlapping cell by its overlap count
                if prof_ptr[best_g] < 0:
                    prof_ptr[best_g] = used
                    L = 0
                    for k in range(ms, me):
                        i = midx[k]
                        for q in range(P):
                            c = cT[i, q]
                            if c < 0:
                                continue
                            g = offs[q] + c
                            if tmpc[g] == 0:
                                prof_g[used + L] = g
                                L += 1
                            tmpc[g] += 1
                    for t in range(L):
                        g = prof_g[used + t]
                        prof_c[used + t] = tmpc[g]
                        tmpc[g] = 0
                    prof_len[best_g] = L
                    used += L
                for t in range(prof_ptr[best_g], prof_ptr[best_g] + prof_len[best_g]):
                    g = prof_g[t]
                    cntd = <double>prof_c[t]
                    for j in range(d):
                        sums[g, j] = sums[g, j] - cntd * delta[j]
                    mark[g] = 1
                    touched[ntouched] = g
                    ntouched += 1
            for t in range(ntouched):
                g = touched[t]
                mark[g] = 0
                score[g] = _score_one(&sums[g, 0], d, counts[g], n)
            if ntouched * logsize > size:
                _tree_build(&tree[0], size, m, &nz[0], &score[0], &rk[0])
            else:
                for t in range(ntouched):
                    _tree_fix(&tree[0], size, pos[touched[t]], &score[0], &rk[0])
        fresh = False
        sel.append(best_g)
        if len(sel) > cap:
            cap *= 2
            grown = np.zeros((cap, d))
            grown[:len(sel) - 1] = dbuf[:len(sel) - 1]
            dbuf = grown
            dm = dbuf
        for j in range(d):
            dm[len(sel) - 1, j] = delta[j]
        scores.append(top)
        before.append(total / n)
        total = total - o + w
        after.append(total / n)
        drops.append((o - w) / n)
    return (
        np.asarray(sel, dtype=np.int64),
        dbuf[:len(sel)].copy(),
        np.asarray(scores, dtype=np.float64),
        np.asarray(before, dtype=np.float64),
        np.asarray(after, dtype=np.float64),
        np.asarray(drops, dtype=np.float64),
        overflow,
    )
