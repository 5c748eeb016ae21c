"""Numba kernels behind the coordinate-descent solver.

All kernels work on plain arrays prepared by :mod:`netlasso.solver`: a
Fortran-ordered standardized design, lexicographically sorted pair arrays
with memoized squared product-column norms, and a CSR-style adjacency
(``row_ptr``/``row_idx``) linking each SNP to the allowed pairs involving
it. Interaction columns are always formed on the fly; nothing here
allocates per-iteration temporaries.

The scalar update rules mirror the public reference implementations in
``solver.py`` exactly; tests hold the two paths together.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# --- scalar coordinate updates ----------------------------------------------


@njit(cache=True)
def _root_main(bhat, lam1, wjj, cj, nr_tol, nr_max_iter):
    """Solve a*(1 + lam1*wjj^2 / sqrt(wjj^2*a^2*bhat^2 + cj)) = 1, a in (0,1).

    Requires cj > 0. The left side is strictly increasing with negative
    value at 0 and positive at 1, so Newton from 0.5 with a maintained
    bracket always lands on the unique root; any step leaving the bracket
    is replaced by its midpoint.
    """
    lo = 0.0
    hi = 1.0
    a = 0.5
    w2 = wjj * wjj
    b2 = bhat * bhat
    for _ in range(nr_max_iter):
        h = 1.0 / np.sqrt(w2 * a * a * b2 + cj)
        g = a + lam1 * w2 * a * h - 1.0
        if g > 0.0:
            hi = a
        else:
            lo = a
        gp = 1.0 + lam1 * w2 * cj * h * h * h
        step = g / gp
        a_new = a - step
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) < nr_tol:
            return a_new
        a = a_new
    # Bisection fallback: the bracket is always valid.
    for _ in range(100):
        if hi - lo < 1e-15:
            break
        a = 0.5 * (lo + hi)
        h = 1.0 / np.sqrt(w2 * a * a * b2 + cj)
        g = a + lam1 * w2 * a * h - 1.0
        if g > 0.0:
            hi = a
        else:
            lo = a
    return 0.5 * (lo + hi)


@njit(cache=True)
def _shrink_main_scalar(bhat, lam1, wjj, cj, nr_tol, nr_max_iter):
    """One main-effect coordinate update on the unit-norm column scale.

    cj aggregates the squared, weighted, scaled interaction coefficients of
    the SNP's group. With an empty group (cj = 0) this is plain soft
    thresholding at lam1*wjj; otherwise the group term contributes a smooth
    shrinkage solved for via the scaling factor a.
    """
    if cj == 0.0:
        mag = abs(bhat) - lam1 * wjj
        if mag <= 0.0:
            return 0.0
        return np.sign(bhat) * mag
    if bhat == 0.0:
        return 0.0
    a = _root_main(bhat, lam1, wjj, cj, nr_tol, nr_max_iter)
    return a * bhat


@njit(cache=True)
def _root_inter(b, lam1, w, s, c1, c2, rhs, nr_tol, nr_max_iter):
    """Solve a*b*(1 + lam1*w^2*(h1 + h2)) = rhs for a in (0, 1].

    h_i = 1/sqrt(w^2*s*a^2*b^2 + c_i); a c_i of exactly zero turns its term
    into the constant lam1*w/sqrt(s) with zero derivative. The caller
    guarantees rhs exceeds the a -> 0 limit of the left side, so a root
    exists; strict monotonicity makes it unique.
    """
    lo = 0.0
    hi = 1.0
    a = 0.5
    w2 = w * w
    sqrt_s = np.sqrt(s)
    const1 = lam1 * w / sqrt_s
    for _ in range(nr_max_iter):
        u = w2 * s * a * a * b * b
        g = a * b - rhs
        gp = b
        if c1 == 0.0:
            g += const1
        else:
            h = 1.0 / np.sqrt(u + c1)
            g += lam1 * w2 * a * b * h
            gp += lam1 * w2 * b * c1 * h * h * h
        if c2 == 0.0:
            g += const1
        else:
            h = 1.0 / np.sqrt(u + c2)
            g += lam1 * w2 * a * b * h
            gp += lam1 * w2 * b * c2 * h * h * h
        if g > 0.0:
            hi = a
        else:
            lo = a
        a_new = a - g / gp
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) < nr_tol:
            return a_new
        a = a_new
    for _ in range(100):
        if hi - lo < 1e-15:
            break
        a = 0.5 * (lo + hi)
        u = w2 * s * a * a * b * b
        g = a * b - rhs
        if c1 == 0.0:
            g += const1
        else:
            g += lam1 * w2 * a * b / np.sqrt(u + c1)
        if c2 == 0.0:
            g += const1
        else:
            g += lam1 * w2 * a * b / np.sqrt(u + c2)
        if g > 0.0:
            hi = a
        else:
            lo = a
    return 0.5 * (lo + hi)


@njit(cache=True)
def _shrink_inter_scalar(bhat, lam1, lam2, w, s, c1, c2, nr_tol, nr_max_iter):
    """One interaction coordinate update on the unit-norm column scale.

    bhat is the least-squares coordinate solution, s the squared norm of the
    product column, c1/c2 the group remainders of the pair's two rows
    (excluding the pair itself). The lam2 soft threshold is applied first;
    a surviving value is then scaled down by the group penalty, in closed
    form when both remainders vanish and by root finding otherwise.
    """
    sqrt_s = np.sqrt(s)
    b = abs(bhat)
    rhs = b - lam2 * w / sqrt_s
    if rhs <= 0.0:
        return 0.0
    if c1 == 0.0 and c2 == 0.0:
        a = 1.0 - (2.0 * lam1 + lam2) * w / (sqrt_s * b)
        if a <= 0.0:
            return 0.0
        return a * bhat
    limit0 = lam1 * w / sqrt_s * ((c1 == 0.0) + (c2 == 0.0))
    if rhs <= limit0:
        return 0.0
    a = _root_inter(b, lam1, w, s, c1, c2, rhs, nr_tol, nr_max_iter)
    return a * bhat


# --- residual / objective helpers --------------------------------------------


@njit(cache=True)
def _recompute_resid(x, y, pairs, beta_m, beta_p, resid):
    """resid <- y - X_main beta_m - X_pairs beta_p, from scratch."""
    n = y.shape[0]
    for i in range(n):
        resid[i] = y[i]
    for j in range(beta_m.shape[0]):
        bj = beta_m[j]
        if bj != 0.0:
            for i in range(n):
                resid[i] -= x[i, j] * bj
    for t in range(beta_p.shape[0]):
        bt = beta_p[t]
        if bt != 0.0:
            j = pairs[t, 0]
            k = pairs[t, 1]
            for i in range(n):
                resid[i] -= x[i, j] * x[i, k] * bt
    return resid


@njit(cache=True)
def _objective_value(resid, pair_w, s_pair, row_ptr, row_idx,
                     w_diag, lam1, lam2, beta_m, beta_p):
    """Penalized objective given a consistent residual."""
    obj = 0.0
    for i in range(resid.shape[0]):
        obj += resid[i] * resid[i]
    obj *= 0.5
    p = beta_m.shape[0]
    for j in range(p):
        g = w_diag[j] * w_diag[j] * beta_m[j] * beta_m[j]
        for ptr in range(row_ptr[j], row_ptr[j + 1]):
            t = row_idx[ptr]
            bt = beta_p[t]
            if bt != 0.0:
                g += pair_w[t] * pair_w[t] * s_pair[t] * bt * bt
        obj += lam1 * np.sqrt(g)
    for t in range(beta_p.shape[0]):
        bt = beta_p[t]
        if bt != 0.0:
            obj += lam2 * pair_w[t] * np.sqrt(s_pair[t]) * abs(bt)
    return obj


@njit(cache=True)
def _group_remainder(row_ptr, row_idx, pair_w, s_pair, beta_p, j, skip_t):
    """Sum of w^2*s*beta^2 over row j's pairs, excluding pair skip_t."""
    c = 0.0
    for ptr in range(row_ptr[j], row_ptr[j + 1]):
        t = row_idx[ptr]
        if t == skip_t:
            continue
        bt = beta_p[t]
        if bt != 0.0:
            c += pair_w[t] * pair_w[t] * s_pair[t] * bt * bt
    return c


# --- coordinate-descent cycle -------------------------------------------------


@njit(cache=True)
def _cd_cycle(x, resid, pairs, pair_w, s_pair, row_ptr, row_idx, w_diag,
              lam1, lam2, beta_m, beta_p, order_m, order_p,
              nr_tol, nr_max_iter, check_obj):
    """One full pass over mains then pairs; returns (max |delta|, max objective rise).

    The residual is maintained incrementally. With check_obj the objective is
    evaluated around every single coordinate update (slow; used by tests to
    assert per-update monotonicity).
    """
    n = resid.shape[0]
    max_delta = 0.0
    max_rise = 0.0
    obj_prev = 0.0
    if check_obj:
        obj_prev = _objective_value(resid, pair_w, s_pair, row_ptr, row_idx,
                                    w_diag, lam1, lam2, beta_m, beta_p)

    for oi in range(order_m.shape[0]):
        j = order_m[oi]
        old = beta_m[j]
        bhat = old
        for i in range(n):
            bhat += x[i, j] * resid[i]
        cj = _group_remainder(row_ptr, row_idx, pair_w, s_pair, beta_p, j, -1)
        new = _shrink_main_scalar(bhat, lam1, w_diag[j], cj,
                                  nr_tol, nr_max_iter)
        if new != old:
            d = new - old
            beta_m[j] = new
            for i in range(n):
                resid[i] -= x[i, j] * d
            if abs(d) > max_delta:
                max_delta = abs(d)
        if check_obj:
            obj_now = _objective_value(resid, pair_w, s_pair, row_ptr,
                                       row_idx, w_diag, lam1, lam2,
                                       beta_m, beta_p)
            if obj_now - obj_prev > max_rise:
                max_rise = obj_now - obj_prev
            obj_prev = obj_now

    for oi in range(order_p.shape[0]):
        t = order_p[oi]
        j = pairs[t, 0]
        k = pairs[t, 1]
        old = beta_p[t]
        s = s_pair[t]
        g = s * old
        for i in range(n):
            g += x[i, j] * x[i, k] * resid[i]
        bhat = g / s
        c1 = w_diag[j] * w_diag[j] * beta_m[j] * beta_m[j] + _group_remainder(
            row_ptr, row_idx, pair_w, s_pair, beta_p, j, t)
        c2 = w_diag[k] * w_diag[k] * beta_m[k] * beta_m[k] + _group_remainder(
            row_ptr, row_idx, pair_w, s_pair, beta_p, k, t)
        new = _shrink_inter_scalar(bhat, lam1, lam2, pair_w[t], s, c1, c2,
                                   nr_tol, nr_max_iter)
        if new != old:
            d = new - old
            beta_p[t] = new
            for i in range(n):
                resid[i] -= x[i, j] * x[i, k] * d
            if abs(d) > max_delta:
                max_delta = abs(d)
        if check_obj:
            obj_now = _objective_value(resid, pair_w, s_pair, row_ptr,
                                       row_idx, w_diag, lam1, lam2,
                                       beta_m, beta_p)
            if obj_now - obj_prev > max_rise:
                max_rise = obj_now - obj_prev
            obj_prev = obj_now

    return max_delta, max_rise


# --- KKT scan -----------------------------------------------------------------


@njit(cache=True)
def _row_fully_zero(row_ptr, row_idx, beta_m, beta_p, j):
    """True when SNP j's main and every pair in its row are zero."""
    if beta_m[j] != 0.0:
        return False
    for ptr in range(row_ptr[j], row_ptr[j + 1]):
        if beta_p[row_idx[ptr]] != 0.0:
            return False
    return True


@njit(cache=True)
def _kkt_scan(x, y, pairs, pair_w, s_pair, row_ptr, row_idx, w_diag,
              lam1, lam2, beta_m, beta_p, slack, stat_slack,
              nr_tol, nr_max_iter):
    """Full-problem optimality scan with a freshly recomputed residual.

    Zero coordinates are tested against their subgradient bounds (the bound
    depends on how much of the pair's two rows is active); nonzero
    coordinates are tested by re-running their own update and requiring the
    result to stay put within stat_slack. Zero mains whose group holds an
    active interaction have entry threshold zero and are skipped: they are
    updatable, not violations.
    """
    n = y.shape[0]
    p = beta_m.shape[0]
    q = beta_p.shape[0]
    resid = np.empty(n)
    _recompute_resid(x, y, pairs, beta_m, beta_p, resid)

    viol_m = np.zeros(p, dtype=np.uint8)
    viol_p = np.zeros(q, dtype=np.uint8)

    for j in range(p):
        grad = 0.0
        for i in range(n):
            grad += x[i, j] * resid[i]
        if beta_m[j] == 0.0:
            group_zero = True
            for ptr in range(row_ptr[j], row_ptr[j + 1]):
                if beta_p[row_idx[ptr]] != 0.0:
                    group_zero = False
                    break
            if group_zero:
                if abs(grad) > lam1 * w_diag[j] + slack:
                    viol_m[j] = 1
            # active group: threshold 0, coordinate merely updatable
        else:
            bhat = grad + beta_m[j]
            cj = _group_remainder(row_ptr, row_idx, pair_w, s_pair,
                                  beta_p, j, -1)
            new = _shrink_main_scalar(bhat, lam1, w_diag[j], cj,
                                      nr_tol, nr_max_iter)
            if abs(new - beta_m[j]) > stat_slack:
                viol_m[j] = 1

    for t in range(q):
        j = pairs[t, 0]
        k = pairs[t, 1]
        grad = 0.0
        for i in range(n):
            grad += x[i, j] * x[i, k] * resid[i]
        s = s_pair[t]
        if beta_p[t] == 0.0:
            zj = _row_fully_zero(row_ptr, row_idx, beta_m, beta_p, j)
            zk = _row_fully_zero(row_ptr, row_idx, beta_m, beta_p, k)
            if zj and zk:
                thr = (2.0 * lam1 + lam2) * pair_w[t] * np.sqrt(s)
            elif zj or zk:
                thr = (lam1 + lam2) * pair_w[t] * np.sqrt(s)
            else:
                thr = lam2 * pair_w[t] * np.sqrt(s)
            if abs(grad) > thr + slack:
                viol_p[t] = 1
        else:
            bhat = (grad + s * beta_p[t]) / s
            c1 = w_diag[j] * w_diag[j] * beta_m[j] * beta_m[j] + \
                _group_remainder(row_ptr, row_idx, pair_w, s_pair,
                                 beta_p, j, t)
            c2 = w_diag[k] * w_diag[k] * beta_m[k] * beta_m[k] + \
                _group_remainder(row_ptr, row_idx, pair_w, s_pair,
                                 beta_p, k, t)
            new = _shrink_inter_scalar(bhat, lam1, lam2, pair_w[t], s,
                                       c1, c2, nr_tol, nr_max_iter)
            if abs(new - beta_p[t]) > stat_slack:
                viol_p[t] = 1

    return viol_m, viol_p


@njit(cache=True)
def _prescreen_scores(x, y):
    """|x_j . y| per column (columns are unit norm, y is unit norm)."""
    n, p = x.shape
    out = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += x[i, j] * y[i]
        out[j] = abs(s)
    return out


@njit(cache=True)
def _pair_sq_norms(x, pairs):
    """Squared norms of the product columns, memoized once per fit."""
    q = pairs.shape[0]
    n = x.shape[0]
    out = np.empty(q)
    for t in range(q):
        j = pairs[t, 0]
        k = pairs[t, 1]
        s = 0.0
        for i in range(n):
            v = x[i, j] * x[i, k]
            s += v * v
        out[t] = s
    return out
