# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels: special functions and per-sample loss/gradient.

Same signatures and semantics as ``_fallback.py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, sin, fabs, M_PI

cnp.import_array()

DEF SOFTPLUS = 0
DEF EXP_CLAMPED = 1
DEF LOG_EXPECTED = 0
DEF EXPECTED_NLL = 1
DEF EXP_CLAMP = 10.0
DEF ASYMPTOTIC_MIN = 6.0
DEF LANCZOS_G = 7.0
DEF HALF_LOG_2PI = 0.91893853320467274178

cdef double[9] _COEF
_COEF[:] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
]

cdef double[7] _DIG
_DIG[:] = [
    1.0 / 12.0, -1.0 / 120.0, 1.0 / 252.0, -1.0 / 240.0,
    1.0 / 132.0, -691.0 / 32760.0, 1.0 / 12.0,
]

cdef double[7] _TRI
_TRI[:] = [
    1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0,
    5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0,
]


cdef inline double _lanczos(double z) noexcept nogil:
    cdef double acc, t
    cdef int i
    z -= 1.0
    acc = _COEF[0]
    for i in range(1, 9):
        acc += _COEF[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return HALF_LOG_2PI + (z + 0.5) * log(t) - t + log(acc)


cdef inline double c_lgamma(double z) noexcept nogil:
    if z == 1.0 or z == 2.0:
        return 0.0
    if z < 0.5:
        return log(M_PI / sin(M_PI * z)) - _lanczos(1.0 - z)
    return _lanczos(z)


cdef inline double c_digamma(double z) noexcept nogil:
    cdef double acc = 0.0, inv2, series = 0.0
    cdef int i
    while z < ASYMPTOTIC_MIN:
        acc -= 1.0 / z
        z += 1.0
    inv2 = 1.0 / (z * z)
    for i in range(6, -1, -1):
        series = series * inv2 + _DIG[i]
    return acc + log(z) - 0.5 / z - series * inv2


cdef inline double c_trigamma(double z) noexcept nogil:
    cdef double acc = 0.0, inv, inv2, series = 0.0
    cdef int i
    while z < ASYMPTOTIC_MIN:
        acc += 1.0 / (z * z)
        z += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    for i in range(6, -1, -1):
        series = series * inv2 + _TRI[i]
    return acc + inv + 0.5 * inv2 + inv * inv2 * series


cdef inline void _activate(double z, int activation, double* e, double* d) noexcept nogil:
    cdef double s
    if activation == SOFTPLUS:
        if z > 0.0:
            s = exp(-z)
            e[0] = z + log(1.0 + s)
            d[0] = 1.0 / (1.0 + s)
        else:
            s = exp(z)
            e[0] = log(1.0 + s)
            d[0] = s / (1.0 + s)
    else:
        if z < EXP_CLAMP:
            e[0] = exp(z)
            d[0] = e[0]
        else:
            e[0] = exp(EXP_CLAMP)
            d[0] = 0.0


def _map(f, z):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef int which = f
    with nogil:
        for i in range(n):
            if which == 0:
                out[i] = c_lgamma(flat[i])
            elif which == 1:
                out[i] = c_digamma(flat[i])
            else:
                out[i] = c_trigamma(flat[i])
    return out.reshape(np.shape(z))


def lgamma(z):
    return _map(0, z)


def digamma(z):
    return _map(1, z)


def trigamma(z):
    return _map(2, z)


def evidence(logits, int activation):
    if activation != SOFTPLUS and activation != EXP_CLAMPED:
        raise ValueError(f"unknown activation code {activation}")
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(logits, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] e = np.empty_like(flat)
    cdef cnp.ndarray[double, ndim=1] d = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            _activate(flat[i], activation, &e[i], &d[i])
    shape = np.shape(logits)
    return e.reshape(shape), d.reshape(shape)


def kl_uniform_grad(alpha_in):
    cdef double[:, ::1] alpha = np.ascontiguousarray(alpha_in, dtype=np.float64)
    cdef Py_ssize_t n = alpha.shape[0], K = alpha.shape[1], i, k
    kl_arr = np.empty(n)
    grad_arr = np.empty((n, K))
    cdef double[::1] kl = kl_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double S, psi_S, tri_S, acc, a, lgK = c_lgamma(<double>K)
    with nogil:
        for i in range(n):
            S = 0.0
            for k in range(K):
                S += alpha[i, k]
            psi_S = c_digamma(S)
            tri_S = c_trigamma(S)
            acc = c_lgamma(S) - lgK
            for k in range(K):
                a = alpha[i, k]
                acc += -c_lgamma(a) + (a - 1.0) * (c_digamma(a) - psi_S)
                grad[i, k] = (a - 1.0) * c_trigamma(a) - (S - K) * tri_S
            if acc < 0.0 and acc >= -1e-12:
                acc = 0.0
            kl[i] = acc
    return kl_arr, grad_arr


def stage1_batch(logits_in, y_in, double lam, int variant, int activation):
    if variant != LOG_EXPECTED and variant != EXPECTED_NLL:
        raise ValueError(f"unknown loss variant code {variant}")
    if activation != SOFTPLUS and activation != EXP_CLAMPED:
        raise ValueError(f"unknown activation code {activation}")
    cdef double[:, ::1] logits = np.ascontiguousarray(logits_in, dtype=np.float64)
    cdef long long[::1] y = np.ascontiguousarray(y_in, dtype=np.int64)
    cdef Py_ssize_t n = logits.shape[0], K = logits.shape[1], i, k
    loss_arr = np.empty(n)
    grad_arr = np.empty((n, K))
    scratch = np.empty((2, K))
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] tmp = scratch
    cdef double S, a, a_y, psi_S, tri_S, kl, lgK = c_lgamma(<double>K)
    cdef long long yi
    with nogil:
        for i in range(n):
            yi = y[i]
            S = 0.0
            for k in range(K):
                _activate(logits[i, k], activation, &tmp[0, k], &tmp[1, k])
                tmp[0, k] += 1.0
                S += tmp[0, k]
            a_y = tmp[0, yi]
            if variant == LOG_EXPECTED:
                loss[i] = log(S) - log(a_y)
                for k in range(K):
                    grad[i, k] = 1.0 / S
                grad[i, yi] -= 1.0 / a_y
            else:
                loss[i] = c_digamma(S) - c_digamma(a_y)
                tri_S = c_trigamma(S)
                for k in range(K):
                    grad[i, k] = tri_S
                grad[i, yi] -= c_trigamma(a_y)
            if lam != 0.0:
                psi_S = c_digamma(S)
                tri_S = c_trigamma(S)
                kl = c_lgamma(S) - lgK
                for k in range(K):
                    a = tmp[0, k]
                    kl += -c_lgamma(a) + (a - 1.0) * (c_digamma(a) - psi_S)
                    grad[i, k] += lam * ((a - 1.0) * c_trigamma(a) - (S - K) * tri_S)
                if kl < 0.0 and kl >= -1e-12:
                    kl = 0.0
                loss[i] += lam * kl
            for k in range(K):
                grad[i, k] *= tmp[1, k]
    return loss_arr, grad_arr


def stage2_batch(logits_in, y_in, weights_in, int activation):
    if activation != SOFTPLUS and activation != EXP_CLAMPED:
        raise ValueError(f"unknown activation code {activation}")
    cdef double[:, ::1] logits = np.ascontiguousarray(logits_in, dtype=np.float64)
    cdef long long[::1] y = np.ascontiguousarray(y_in, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(weights_in, dtype=np.float64)
    cdef Py_ssize_t n = logits.shape[0], K = logits.shape[1], i, k
    loss_arr = np.empty(n)
    grad_arr = np.empty((n, K))
    scratch = np.empty((2, K))
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] tmp = scratch
    cdef double S, a_y
    cdef long long yi
    with nogil:
        for i in range(n):
            yi = y[i]
            S = 0.0
            for k in range(K):
                _activate(logits[i, k], activation, &tmp[0, k], &tmp[1, k])
                tmp[0, k] += 1.0
                S += tmp[0, k]
            a_y = tmp[0, yi]
            loss[i] = w[i] * (log(S) - log(a_y))
            for k in range(K):
                grad[i, k] = w[i] * tmp[1, k] / S
            grad[i, yi] -= w[i] * tmp[1, yi] / a_y
    return loss_arr, grad_arr
