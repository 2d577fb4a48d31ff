"""Pure-numpy build of the hot kernels.

This is the fallback path selected when MEANFIELDQ_BACKEND=numpy (or when
numba is unavailable).  Each function mirrors a kernel of the same name in
`_kernels_numba`; signatures and semantics must stay in lockstep.  Training
loops are sequential in the step index k by construction; only the per-unit
arithmetic is vectorized.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _act(z: np.ndarray, act_id: int):
    """(sigma, sigma') for the kernel-supported activations."""
    if act_id == 0:
        s = np.tanh(z)
        return s, 1.0 - s * s
    s = 1.0 / (1.0 + np.exp(-z))
    return s, s * (1.0 - s)


def forward_table(c, w, zetas, act_id):
    s, _ = _act(w @ zetas.T, act_id)
    return (c @ s) / np.sqrt(w.shape[0])


def chain_path(p_cum, n_actions, x0, acts, u_trn):
    """Roll the uniform-policy chain forward from precomputed action draws."""
    total = acts.shape[0]
    xs = np.empty(total, dtype=np.int64)
    xnext = np.empty(total, dtype=np.int64)
    x = x0
    for k in range(total):
        xs[k] = x
        pair = x * n_actions + acts[k]
        x = int(np.searchsorted(p_cum[pair], u_trn[k], side="right"))
        xnext[k] = x
    return xs, acts, xnext


def _moments_row(c_col, w):
    w1 = w[:, 0]
    return np.array([
        1.0,
        np.mean(c_col),
        np.mean(c_col * c_col),
        np.mean(w1),
        np.mean(np.sum(w * w, axis=1)),
        np.mean(c_col * w1),
    ])


def train_infinite(c, w, zetas, r_flat, p_cum, n_actions, gamma, alpha,
                   x0, acts, u_trn, snap_steps, act_id):
    """Q-learning loop, infinite horizon.  Mutates c and w in place.

    One step: draw the sample (x_k, a_k, x_{k+1}, r_k), form the residual
    D = r + gamma * max_a' Q(x_{k+1}, a') - Q(x_k, a_k) from the pre-update
    parameters, then move every unit simultaneously:
        c_i += alpha N^{-3/2} D sigma(w_i.zeta_k)
        w_i += alpha N^{-3/2} D c_i sigma'(w_i.zeta_k) zeta_k
    Snapshots (full output table + measure moments) are recorded before the
    step whose index appears in snap_steps; the final entry equals the step
    count and is recorded after the loop.
    """
    n = w.shape[0]
    steps = acts.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, zetas.shape[0]))
    moments = np.empty((n_snap, 6))
    ptr = 0
    x = x0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = forward_table(c, w, zetas, act_id)
            moments[ptr] = _moments_row(c, w)
            ptr += 1
        a = acts[k]
        pair = x * n_actions + a
        zeta = zetas[pair]
        sig, sigp = _act(w @ zeta, act_id)
        q_pred = (c @ sig) / root_n
        z = int(np.searchsorted(p_cum[pair], u_trn[k], side="right"))
        s_next, _ = _act(w @ zetas[z * n_actions:(z + 1) * n_actions].T, act_id)
        q_max = np.max((c @ s_next) / root_n)
        d = r_flat[pair] + gamma * q_max - q_pred
        coef = scale * d
        w_coef = coef * (c * sigp)
        c += coef * sig
        w += w_coef[:, None] * zeta[None, :]
        x = z
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = forward_table(c, w, zetas, act_id)
        moments[ptr] = _moments_row(c, w)
    return tables, moments


def train_finite(c, w, zetas, r_per, r_term, p_cum, n_actions, gamma, alpha,
                 x0s, acts, u_trn, snap_steps, act_id):
    """Q-learning loop, finite horizon J.  Mutates c (N, J) and w in place.

    Each iteration consumes a fresh episode.  All J slice residuals are
    computed from the pre-update parameters; slice j's output weights take
    the slice-j residual, and the shared w takes the residual-weighted sum
    over slices.  Slice J is never parameterized: its value is r(J, x).
    """
    n = w.shape[0]
    steps = x0s.shape[0]
    j_hor = c.shape[1]
    m = zetas.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, j_hor + 1, m))
    moments = np.empty((n_snap, 6))
    term_table = np.repeat(r_term, n_actions)
    ptr = 0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = _finite_table(c, w, zetas, term_table, act_id)
            moments[ptr] = _moments_row(c[:, 0], w)
            ptr += 1
        # roll the episode
        states = np.empty(j_hor + 1, dtype=np.int64)
        states[0] = x0s[k]
        pairs = np.empty(j_hor, dtype=np.int64)
        for j in range(j_hor):
            pairs[j] = states[j] * n_actions + acts[k, j]
            states[j + 1] = np.searchsorted(p_cum[pairs[j]], u_trn[k, j], side="right")
        # residuals from pre-update parameters
        sig = np.empty((j_hor, n))
        sigp = np.empty((j_hor, n))
        d = np.empty(j_hor)
        for j in range(j_hor):
            sig[j], sigp[j] = _act(w @ zetas[pairs[j]], act_id)
            q_j = (c[:, j] @ sig[j]) / root_n
            z = states[j + 1]
            if j + 1 == j_hor:
                q_next = r_term[z]
            else:
                s_next, _ = _act(w @ zetas[z * n_actions:(z + 1) * n_actions].T, act_id)
                q_next = np.max((c[:, j + 1] @ s_next) / root_n)
            d[j] = r_per[j, pairs[j]] + gamma * q_next - q_j
        w_step = np.zeros_like(w)
        for j in range(j_hor):
            w_step += (scale * d[j] * (c[:, j] * sigp[j]))[:, None] * zetas[pairs[j]][None, :]
        for j in range(j_hor):
            c[:, j] += scale * d[j] * sig[j]
        w += w_step
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = _finite_table(c, w, zetas, term_table, act_id)
        moments[ptr] = _moments_row(c[:, 0], w)
    return tables, moments


def _finite_table(c, w, zetas, term_table, act_id):
    j_hor = c.shape[1]
    out = np.empty((j_hor + 1, zetas.shape[0]))
    s, _ = _act(w @ zetas.T, act_id)
    root_n = np.sqrt(w.shape[0])
    for j in range(j_hor):
        out[j] = (c[:, j] @ s) / root_n
    out[j_hor] = term_table
    return out


def train_regression(c, w, xs, ys, alpha, idx, snap_steps, act_id):
    """Plain SGD regression loop on the fixed dataset.  Mutates c, w in place."""
    n = w.shape[0]
    steps = idx.shape[0]
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    n_snap = snap_steps.shape[0]
    tables = np.empty((n_snap, xs.shape[0]))
    moments = np.empty((n_snap, 6))
    ptr = 0
    for k in range(steps):
        if ptr < n_snap and snap_steps[ptr] == k:
            tables[ptr] = forward_table(c, w, xs, act_id)
            moments[ptr] = _moments_row(c, w)
            ptr += 1
        i = idx[k]
        x = xs[i]
        sig, sigp = _act(w @ x, act_id)
        g = (c @ sig) / root_n
        coef = scale * (ys[i] - g)
        w_coef = coef * (c * sigp)
        c += coef * sig
        w += w_coef[:, None] * x[None, :]
    if ptr < n_snap and snap_steps[ptr] == steps:
        tables[ptr] = forward_table(c, w, xs, act_id)
        moments[ptr] = _moments_row(c, w)
    return tables, moments


def a_moment_sums(c, w, zetas, act_id):
    """Accumulated outer-product sums for one Monte Carlo chunk.

    Returns (s1, s2, t1, q1, q2, q12):
        s1  = sum_s sigma_s sigma_s^T                  (first kernel term)
        s2  = sum_s u_s u_s^T with u = c sigma'        (second term, pre-Gram)
        t1  = sum_s (c sigma)_s (c sigma)_s^T          (initial-output covariance)
        q1, q2, q12 = per-entry sums of squares/cross terms for the
        standard-error estimate of s1 + s2 (.) Gram.
    """
    s, d1 = _act(w @ zetas.T, act_id)
    u = c[:, None] * d1
    cv = c[:, None] * s
    vu = s * u
    s1 = s.T @ s
    s2 = u.T @ u
    t1 = cv.T @ cv
    q1 = (s * s).T @ (s * s)
    q2 = (u * u).T @ (u * u)
    q12 = vu.T @ vu
    return s1, s2, t1, q1, q2, q12


def rhs_infinite(h, b_mat, r_flat, p_flat, gamma, n_actions):
    """Limit-ODE right side: b_mat @ (r + gamma * U(h) - h) with
    b_mat[i, j] = A[i, j] * pi[j]."""
    maxv = h.reshape(-1, n_actions).max(axis=1)
    resid = r_flat + gamma * (p_flat @ maxv) - h
    return b_mat @ resid


def rhs_finite(h, b_mats, r_per, p_flat, gamma, n_actions):
    """Finite-horizon limit-ODE right side over the full (J+1, M) table.

    Slice j couples to slice j+1 through the max term; slice J is the fixed
    terminal table and gets a zero derivative.
    """
    j_hor = r_per.shape[0]
    dh = np.zeros_like(h)
    for j in range(j_hor):
        maxv = h[j + 1].reshape(-1, n_actions).max(axis=1)
        resid = r_per[j] + gamma * (p_flat @ maxv) - h[j]
        dh[j] = b_mats[j] @ resid
    return dh


def rhs_regression(h, a_mat, y_hat):
    return a_mat @ (y_hat - h)
