# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-latent kernels; signatures and results mirror ``_pykernels``."""

import numpy as np
from libc.math cimport exp, log, tanh, M_PI, INFINITY


def gm_class_terms(const double[::1] x, double b, double a,
                   const double[:, ::1] means, const double[::1] variances):
    cdef Py_ssize_t K = means.shape[0], d = means.shape[1], k, i
    logn_arr = np.empty(K)
    vel_arr = np.empty((K, d))
    grad_arr = np.empty((K, d))
    cdef double[::1] logn = logn_arr
    cdef double[:, ::1] vel = vel_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double V, gain, r, sq
    for k in range(K):
        V = a * a + b * b * variances[k]
        gain = (b * variances[k] - a) / V
        sq = 0.0
        for i in range(d):
            r = x[i] - b * means[k, i]
            sq += r * r
            vel[k, i] = means[k, i] + gain * r
            grad[k, i] = -r / V
        logn[k] = -0.5 * d * log(2.0 * M_PI * V) - 0.5 * sq / V
    return logn_arr, vel_arr, grad_arr


cdef double _weights(const double[::1] x, double b, double a, const double[:, ::1] means,
                     const double[::1] variances, const double[::1] log_w, double[::1] out):
    """Normalised ``exp(log_w + log N_k)`` into ``out``; returns the log normaliser."""
    cdef Py_ssize_t K = means.shape[0], d = means.shape[1], k, i
    cdef double V, r, sq, mx = -INFINITY, tot = 0.0
    for k in range(K):
        V = a * a + b * b * variances[k]
        sq = 0.0
        for i in range(d):
            r = x[i] - b * means[k, i]
            sq += r * r
        out[k] = log_w[k] - 0.5 * d * log(2.0 * M_PI * V) - 0.5 * sq / V
        if out[k] > mx:
            mx = out[k]
    for k in range(K):
        out[k] = exp(out[k] - mx)
        tot += out[k]
    for k in range(K):
        out[k] /= tot
    return mx + log(tot)


def gm_velocity(const double[::1] x, double b, double a, const double[:, ::1] means,
                const double[::1] variances, const double[::1] log_priors,
                const double[::1] z, bint softmax):
    cdef Py_ssize_t K = means.shape[0], d = means.shape[1], k, i
    cdef double[::1] w = np.empty(K)
    cdef double[::1] lw = np.empty(K)
    cdef double V, gain, s, mk
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    cdef double[::1] vnull = np.zeros(d)
    for k in range(K):
        lw[k] = log_priors[k] + z[k] if softmax else log_priors[k]
    _weights(x, b, a, means, variances, lw, w)
    if not softmax:
        # linear map: responsibilities z_k + (1 - sum z) p_k
        s = 0.0
        for k in range(K):
            s += z[k]
        for k in range(K):
            w[k] = z[k] + (1.0 - s) * w[k]
    for k in range(K):
        V = a * a + b * b * variances[k]
        gain = (b * variances[k] - a) / V
        for i in range(d):
            mk = means[k, i] + gain * (x[i] - b * means[k, i])
            out[i] += w[k] * mk
    return out_arr


def gm_posterior(const double[::1] x, double b, double a, const double[:, ::1] means,
                 const double[::1] variances, const double[::1] log_priors, int cls):
    cdef Py_ssize_t K = means.shape[0], d = means.shape[1], k, i
    cdef double[::1] p = np.empty(K)
    cdef double lse, V, Vc, J
    grad_arr = np.zeros(d)
    cdef double[::1] grad = grad_arr
    lse = _weights(x, b, a, means, variances, log_priors, p)
    J = log(p[cls])
    Vc = a * a + b * b * variances[cls]
    for i in range(d):
        grad[i] = -(x[i] - b * means[cls, i]) / Vc
    for k in range(K):
        V = a * a + b * b * variances[k]
        for i in range(d):
            grad[i] += p[k] * (x[i] - b * means[k, i]) / V
    return J, grad_arr


cdef void _affine(const double[:, ::1] W, const double[::1] bias,
                  const double* inp, double* out, bint squash) noexcept nogil:
    # four partial sums let the compiler keep several FMAs in flight
    cdef Py_ssize_t r, c, n = W.shape[1], m = n - n % 4
    cdef double a0, a1, a2, a3
    cdef const double* row
    for r in range(W.shape[0]):
        row = &W[r, 0]
        a0 = a1 = a2 = a3 = 0.0
        for c in range(0, m, 4):
            a0 += row[c] * inp[c]
            a1 += row[c + 1] * inp[c + 1]
            a2 += row[c + 2] * inp[c + 2]
            a3 += row[c + 3] * inp[c + 3]
        for c in range(m, n):
            a0 += row[c] * inp[c]
        a0 = bias[r] + ((a0 + a1) + (a2 + a3))
        out[r] = tanh(a0) if squash else a0


def mlp_forward(const double[::1] inp, list weights, list biases):
    cdef Py_ssize_t n = len(weights), j, widest = inp.shape[0]
    cdef const double[:, ::1] W
    cdef const double[::1] b
    for j in range(n):
        widest = max(widest, weights[j].shape[0])
    buf = np.empty((2, widest))
    cdef double[:, ::1] scratch = buf
    cdef const double* cur = &inp[0]
    cdef double* nxt
    for j in range(n):
        W = weights[j]
        b = biases[j]
        nxt = &scratch[j % 2, 0]
        _affine(W, b, cur, nxt, j < n - 1)
        cur = nxt
    return buf[(n - 1) % 2, :weights[n - 1].shape[0]].copy()


def mlp_velocity(const double[::1] x, double tau, const double[::1] c, list weights, list biases):
    cdef Py_ssize_t d = x.shape[0], m = c.shape[0], i
    inp_arr = np.empty(d + 1 + m)
    cdef double[::1] inp = inp_arr
    for i in range(d):
        inp[i] = x[i]
    inp[d] = tau
    for i in range(m):
        inp[d + 1 + i] = c[i]
    return mlp_forward(inp_arr, weights, biases)
