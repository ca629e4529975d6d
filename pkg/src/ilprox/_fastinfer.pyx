# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop for the inference sweeps.

Implements exactly the same per-layer updates as the pure-numpy path in
``ilprox.energy``: ascending hidden-layer gradient steps with the next
prediction refreshed after each update, then the output clamp.  Only
biased networks with a full or soft output clamp are handled; everything
else falls back to the numpy loop.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

ctypedef cnp.float64_t f64


cdef inline double _act(int act_id, double z) noexcept nogil:
    if act_id == 0:
        return z
    if act_id == 1:
        return z if z > 0.0 else 0.0
    if act_id == 2:
        return tanh(z)
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    return exp(z) / (1.0 + exp(z))


cdef inline double _deriv(int act_id, double z) noexcept nogil:
    cdef double t
    if act_id == 0:
        return 1.0
    if act_id == 1:
        return 1.0 if z > 0.0 else 0.0
    if act_id == 2:
        t = tanh(z)
        return 1.0 - t * t
    t = _act(3, z)
    return t * (1.0 - t)


cdef void _predict(f64[:, ::1] w, f64[::1] hh, f64[::1] p_out,
                   int act_id, int mode_id, bint apply_f) noexcept nogil:
    """p = W @ augment(f(hh)) (mode 0) or f(W @ augment(hh)) (mode 1).

    ``apply_f`` is false at the input layer where no activation is used.
    """
    cdef Py_ssize_t rows = w.shape[0]
    cdef Py_ssize_t d = w.shape[1] - 1
    cdef Py_ssize_t i, j
    cdef double acc, v
    for j in range(rows):
        acc = w[j, d]  # bias column times the appended 1
        for i in range(d):
            v = hh[i]
            if mode_id == 0 and apply_f:
                v = _act(act_id, v)
            acc += w[j, i] * v
        if mode_id == 1 and apply_f:
            acc = _act(act_id, acc)
        p_out[j] = acc


cdef void _hidden_step(f64[:, ::1] w_next, f64[::1] hh, f64[::1] p_here,
                       f64[::1] hh_next, f64[::1] p_next,
                       double gbot, double gtop, double gdec,
                       double beta, int act_id, int mode_id,
                       f64[::1] zbuf, f64[::1] bubuf) noexcept nogil:
    """One gradient step on hhat_n.

    The bottom-up, top-down and decay terms are all component-local in
    hhat_n given the (fixed) neighbouring errors, so the in-place update
    matches the vectorized reference exactly.  The transposed product is
    accumulated row-by-row so the inner loop walks contiguous memory.
    """
    cdef Py_ssize_t rows = w_next.shape[0]
    cdef Py_ssize_t d = hh.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc, g, ej
    if mode_id == 1:
        for j in range(rows):
            acc = w_next[j, d]
            for i in range(d):
                acc += w_next[j, i] * hh[i]
            zbuf[j] = acc
    for i in range(d):
        bubuf[i] = 0.0
    for j in range(rows):
        ej = hh_next[j] - p_next[j]
        if mode_id == 1:
            ej *= _deriv(act_id, zbuf[j])
        for i in range(d):
            bubuf[i] += w_next[j, i] * ej
    for i in range(d):
        acc = bubuf[i]
        if mode_id == 0:
            acc *= _deriv(act_id, hh[i])
        g = -gbot * acc + gtop * (hh[i] - p_here[i])
        if gdec != 0.0:
            g += gdec * _deriv(act_id, hh[i]) * hh[i]
        hh[i] -= beta * g


cdef double _pre_norm_sq(f64[::1] hh, int act_id, bint apply_f) noexcept nogil:
    """Squared norm of augment(f(hh)); the appended 1 contributes +1."""
    cdef Py_ssize_t i
    cdef double s = 1.0
    cdef double v
    for i in range(hh.shape[0]):
        v = _act(act_id, hh[i]) if apply_f else hh[i]
        s += v * v
    return s


def run_sweeps(list weights, list hhat, list preds, cnp.ndarray[f64, ndim=1] y,
               int act_id, int mode_id, int clamp_id, double clamp_alpha,
               cnp.ndarray[f64, ndim=1] gbot, cnp.ndarray[f64, ndim=1] gtop,
               cnp.ndarray[f64, ndim=1] gdec, double beta, int steps):
    """Run the sweep loop in place on the hhat / preds buffers.

    clamp_id: 0 = full (hhat[N] already holds y), 1 = soft.
    """
    cdef int n_layers = len(weights)
    cdef int it, n
    cdef Py_ssize_t max_rows = 1
    cdef Py_ssize_t max_cols = 1
    for n in range(n_layers):
        if (<object>weights[n]).shape[0] > max_rows:
            max_rows = (<object>weights[n]).shape[0]
        if (<object>weights[n]).shape[1] > max_cols:
            max_cols = (<object>weights[n]).shape[1]
    cdef cnp.ndarray[f64, ndim=1] zbuf = np.empty(max_rows, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=1] bubuf = np.empty(max_cols, dtype=np.float64)
    cdef f64[::1] yv = y
    cdef f64[::1] out_hh, out_p, prev_hh
    cdef double s, wt
    cdef Py_ssize_t k
    for it in range(steps):
        for n in range(1, n_layers):
            _hidden_step(weights[n], hhat[n], preds[n], hhat[n + 1],
                         preds[n + 1], gbot[n - 1], gtop[n - 1], gdec[n - 1],
                         beta, act_id, mode_id, zbuf, bubuf)
            _predict(weights[n], hhat[n], preds[n + 1], act_id, mode_id, True)
        if clamp_id == 1:
            prev_hh = hhat[n_layers - 1]
            s = _pre_norm_sq(prev_hh, act_id, n_layers - 1 >= 1)
            wt = s * clamp_alpha / (1.0 + s * clamp_alpha)
            out_hh = hhat[n_layers]
            out_p = preds[n_layers]
            for k in range(out_hh.shape[0]):
                out_hh[k] = wt * yv[k] + (1.0 - wt) * out_p[k]
