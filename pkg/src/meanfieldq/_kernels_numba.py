"""Numba @njit build of the hot kernels.

Signature-for-signature twin of `_kernels_numpy`; see that module for the
semantics of each kernel.  fastmath stays off so both builds follow the same
IEEE evaluation rules; cache=True keeps recompilation out of repeat runs.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BACKEND_NAME = "numba"

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(inline="always")
def _act_scalar(z, act_id):
    if act_id == 0:
        t = math.tanh(z)
        return t, 1.0 - t * t
    s = 1.0 / (1.0 + math.exp(-z))
    return s, s * (1.0 - s)


@njit(inline="always")
def _bisect_right(arr, v):
    lo = 0
    hi = arr.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if v < arr[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(**_JIT)
def forward_table(c, w, zetas, act_id):
    n, d = w.shape
    m = zetas.shape[0]
    out = np.zeros(m)
    for i in range(n):
        for j in range(m):
            z = 0.0
            for t in range(d):
                z += w[i, t] * zetas[j, t]
            s, _ = _act_scalar(z, act_id)
            out[j] += c[i] * s
    return out / np.sqrt(n)


@njit(**_JIT)
def chain_path(p_cum, n_actions, x0, acts, u_trn):
    total = acts.shape[0]
    xs = np.empty(total, dtype=np.int64)
    xnext = np.empty(total, dtype=np.int64)
    x = x0
    for k in range(total):
        xs[k] = x
        pair = x * n_actions + acts[k]
        x = _bisect_right(p_cum[pair], u_trn[k])
        xnext[k] = x
    return xs, acts, xnext


@njit(inline="always")
def _unit_forward(c, w, i, zeta, act_id):
    z = 0.0
    for t in range(zeta.shape[0]):
        z += w[i, t] * zeta[t]
    s, d1 = _act_scalar(z, act_id)
    return c[i] * s, s, d1


@njit(**_JIT)
def _moments_row(c_col, w, out):
    n = c_col.shape[0]
    d = w.shape[1]
    mc = 0.0
    mc2 = 0.0
    mw1 = 0.0
    mwn = 0.0
    mcw = 0.0
    for i in range(n):
        mc += c_col[i]
        mc2 += c_col[i] * c_col[i]
        mw1 += w[i, 0]
        row = 0.0
        for t in range(d):
            row += w[i, t] * w[i, t]
        mwn += row
        mcw += c_col[i] * w[i, 0]
    out[0] = 1.0
    out[1] = mc / n
    out[2] = mc2 / n
    out[3] = mw1 / n
    out[4] = mwn / n
    out[5] = mcw / n


@njit(**_JIT)
def train_infinite(c, w, zetas, r_flat, p_cum, n_actions, gamma, alpha,
                   x0, acts, u_trn, snap_steps, act_id):
    n, d = w.shape
    steps = acts.shape[0]
    m = zetas.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, m))
    moments = np.empty((n_snap, 6))
    sig = np.empty(n)
    sigp = np.empty(n)
    ptr = 0
    x = x0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = forward_table(c, w, zetas, act_id)
            _moments_row(c, w, moments[ptr])
            ptr += 1
        a = acts[k]
        pair = x * n_actions + a
        q_pred = 0.0
        for i in range(n):
            z = 0.0
            for t in range(d):
                z += w[i, t] * zetas[pair, t]
            s, d1 = _act_scalar(z, act_id)
            sig[i] = s
            sigp[i] = d1
            q_pred += c[i] * s
        q_pred /= root_n
        xn = _bisect_right(p_cum[pair], u_trn[k])
        q_max = -np.inf
        for ap in range(n_actions):
            nxt_pair = xn * n_actions + ap
            q_a = 0.0
            for i in range(n):
                z = 0.0
                for t in range(d):
                    z += w[i, t] * zetas[nxt_pair, t]
                s, _ = _act_scalar(z, act_id)
                q_a += c[i] * s
            q_a /= root_n
            if q_a > q_max:
                q_max = q_a
        dres = r_flat[pair] + gamma * q_max - q_pred
        coef = scale * dres
        for i in range(n):
            w_coef = coef * c[i] * sigp[i]
            c[i] += coef * sig[i]
            for t in range(d):
                w[i, t] += w_coef * zetas[pair, t]
        x = xn
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = forward_table(c, w, zetas, act_id)
        _moments_row(c, w, moments[ptr])
    return tables, moments


@njit(**_JIT)
def _finite_table(c, w, zetas, term_table, act_id):
    n, d = w.shape
    j_hor = c.shape[1]
    m = zetas.shape[0]
    out = np.zeros((j_hor + 1, m))
    root_n = np.sqrt(n)
    for i in range(n):
        for p in range(m):
            z = 0.0
            for t in range(d):
                z += w[i, t] * zetas[p, t]
            s, _ = _act_scalar(z, act_id)
            for j in range(j_hor):
                out[j, p] += c[i, j] * s
    for j in range(j_hor):
        for p in range(m):
            out[j, p] /= root_n
    for p in range(m):
        out[j_hor, p] = term_table[p]
    return out


@njit(**_JIT)
def train_finite(c, w, zetas, r_per, r_term, p_cum, n_actions, gamma, alpha,
                 x0s, acts, u_trn, snap_steps, act_id):
    n, d = w.shape
    steps = x0s.shape[0]
    j_hor = c.shape[1]
    m = zetas.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, j_hor + 1, m))
    moments = np.empty((n_snap, 6))
    term_table = np.empty(m)
    for p in range(m):
        term_table[p] = r_term[p // n_actions]
    sig = np.empty((j_hor, n))
    sigp = np.empty((j_hor, n))
    dres = np.empty(j_hor)
    pairs = np.empty(j_hor, dtype=np.int64)
    states = np.empty(j_hor + 1, dtype=np.int64)
    w_step = np.empty((n, d))
    ptr = 0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = _finite_table(c, w, zetas, term_table, act_id)
            _moments_row(c[:, 0].copy(), w, moments[ptr])
            ptr += 1
        states[0] = x0s[k]
        for j in range(j_hor):
            pairs[j] = states[j] * n_actions + acts[k, j]
            states[j + 1] = _bisect_right(p_cum[pairs[j]], u_trn[k, j])
        for j in range(j_hor):
            q_j = 0.0
            for i in range(n):
                z = 0.0
                for t in range(d):
                    z += w[i, t] * zetas[pairs[j], t]
                s, d1 = _act_scalar(z, act_id)
                sig[j, i] = s
                sigp[j, i] = d1
                q_j += c[i, j] * s
            q_j /= root_n
            zst = states[j + 1]
            if j + 1 == j_hor:
                q_next = r_term[zst]
            else:
                q_next = -np.inf
                for ap in range(n_actions):
                    nxt_pair = zst * n_actions + ap
                    q_a = 0.0
                    for i in range(n):
                        z = 0.0
                        for t in range(d):
                            z += w[i, t] * zetas[nxt_pair, t]
                        s, _ = _act_scalar(z, act_id)
                        q_a += c[i, j + 1] * s
                    q_a /= root_n
                    if q_a > q_next:
                        q_next = q_a
            dres[j] = r_per[j, pairs[j]] + gamma * q_next - q_j
        for i in range(n):
            for t in range(d):
                w_step[i, t] = 0.0
        for j in range(j_hor):
            for i in range(n):
                w_coef = scale * dres[j] * c[i, j] * sigp[j, i]
                for t in range(d):
                    w_step[i, t] += w_coef * zetas[pairs[j], t]
        for j in range(j_hor):
            for i in range(n):
                c[i, j] += scale * dres[j] * sig[j, i]
        for i in range(n):
            for t in range(d):
                w[i, t] += w_step[i, t]
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = _finite_table(c, w, zetas, term_table, act_id)
        _moments_row(c[:, 0].copy(), w, moments[ptr])
    return tables, moments


@njit(**_JIT)
def train_regression(c, w, xs, ys, alpha, idx, snap_steps, act_id):
    n, d = w.shape
    steps = idx.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, xs.shape[0]))
    moments = np.empty((n_snap, 6))
    sig = np.empty(n)
    sigp = np.empty(n)
    ptr = 0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = forward_table(c, w, xs, act_id)
            _moments_row(c, w, moments[ptr])
            ptr += 1
        i_s = idx[k]
        g = 0.0
        for i in range(n):
            z = 0.0
            for t in range(d):
                z += w[i, t] * xs[i_s, t]
            s, d1 = _act_scalar(z, act_id)
            sig[i] = s
            sigp[i] = d1
            g += c[i] * s
        g /= root_n
        coef = scale * (ys[i_s] - g)
        for i in range(n):
            w_coef = coef * c[i] * sigp[i]
            c[i] += coef * sig[i]
            for t in range(d):
                w[i, t] += w_coef * xs[i_s, t]
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = forward_table(c, w, xs, act_id)
        _moments_row(c, w, moments[ptr])
    return tables, moments


@njit(**_JIT)
def a_moment_sums(c, w, zetas, act_id):
    n_s, d = w.shape
    m = zetas.shape[0]
    s1 = np.zeros((m, m))
    s2 = np.zeros((m, m))
    t1 = np.zeros((m, m))
    q1 = np.zeros((m, m))
    q2 = np.zeros((m, m))
    q12 = np.zeros((m, m))
    v = np.empty(m)
    u = np.empty(m)
    for s_i in range(n_s):
        for j in range(m):
            z = 0.0
            for t in range(d):
                z += w[s_i, t] * zetas[j, t]
            sg, d1 = _act_scalar(z, act_id)
            v[j] = sg
            u[j] = c[s_i] * d1
        cs = c[s_i]
        for a in range(m):
            for b in range(m):
                vv = v[a] * v[b]
                uu = u[a] * u[b]
                s1[a, b] += vv
                s2[a, b] += uu
                t1[a, b] += cs * cs * vv
                q1[a, b] += vv * vv
                q2[a, b] += uu * uu
                q12[a, b] += vv * uu
    return s1, s2, t1, q1, q2, q12


@njit(**_JIT)
def rhs_infinite(h, b_mat, r_flat, p_flat, gamma, n_actions):
    m = h.shape[0]
    n_states = m // n_actions
    maxv = np.empty(n_states)
    for xs in range(n_states):
        best = h[xs * n_actions]
        for ap in range(1, n_actions):
            val = h[xs * n_actions + ap]
            if val > best:
                best = val
        maxv[xs] = best
    resid = np.empty(m)
    for p in range(m):
        u = 0.0
        for z in range(n_states):
            u += p_flat[p, z] * maxv[z]
        resid[p] = r_flat[p] + gamma * u - h[p]
    out = np.empty(m)
    for p in range(m):
        acc = 0.0
        for q in range(m):
            acc += b_mat[p, q] * resid[q]
        out[p] = acc
    return out


@njit(**_JIT)
def rhs_finite(h, b_mats, r_per, p_flat, gamma, n_actions):
    j_hor = r_per.shape[0]
    m = h.shape[1]
    n_states = m // n_actions
    dh = np.zeros_like(h)
    maxv = np.empty(n_states)
    resid = np.empty(m)
    for j in range(j_hor):
        for xs in range(n_states):
            best = h[j + 1, xs * n_actions]
            for ap in range(1, n_actions):
                val = h[j + 1, xs * n_actions + ap]
                if val > best:
                    best = val
            maxv[xs] = best
        for p in range(m):
            u = 0.0
            for z in range(n_states):
                u += p_flat[p, z] * maxv[z]
            resid[p] = r_per[j, p] + gamma * u - h[j, p]
        for p in range(m):
            acc = 0.0
            for q in range(m):
                acc += b_mats[j, p, q] * resid[q]
            dh[j, p] = acc
    return dh


@njit(**_JIT)
def rhs_regression(h, a_mat, y_hat):
    m = h.shape[0]
    out = np.empty(m)
    for p in range(m):
        acc = 0.0
        for q in range(m):
            acc += a_mat[p, q] * (y_hat[q] - h[q])
        out[p] = acc
    return out
