"""Pure-numpy implementations of the batched kernels.

Mirrors ``_kernels.pyx`` function for function. Used when the compiled
extension is unavailable or ``EA_PURE_PYTHON=1`` is set.
"""

import numpy as np

from .mathcore import (
    ASYMPTOTIC_MIN,
    HALF_LOG_2PI,
    LANCZOS_COEF,
    LANCZOS_G,
    _DIGAMMA_SERIES,
    _TRIGAMMA_SERIES,
)

SOFTPLUS = 0
EXP_CLAMPED = 1
LOG_EXPECTED = 0
EXPECTED_NLL = 1
EXP_CLAMP = 10.0

# digamma/trigamma never need more shifts than this for z > 0
_MAX_SHIFT = int(ASYMPTOTIC_MIN)


def _lanczos(z):
    z = z - 1.0
    acc = np.full_like(z, LANCZOS_COEF[0])
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def lgamma(z):
    z = np.asarray(z, dtype=np.float64)
    small = z < 0.5
    if not small.any():
        out = _lanczos(z)
    else:
        zs = np.where(small, z, 0.25)
        refl = np.log(np.pi / np.sin(np.pi * zs)) - _lanczos(1.0 - zs)
        out = np.where(small, refl, _lanczos(np.where(small, 1.0, z)))
    # Gamma(1) = Gamma(2) = 1 exactly
    return np.where((z == 1.0) | (z == 2.0), 0.0, out)


def digamma(z):
    z = np.array(z, dtype=np.float64)
    acc = np.zeros_like(z)
    for _ in range(_MAX_SHIFT):
        m = z < ASYMPTOTIC_MIN
        if not m.any():
            break
        acc -= np.where(m, 1.0 / z, 0.0)
        z = np.where(m, z + 1.0, z)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_SERIES):
        series = series * inv2 + c
    return acc + np.log(z) - 0.5 / z - series * inv2


def trigamma(z):
    z = np.array(z, dtype=np.float64)
    acc = np.zeros_like(z)
    for _ in range(_MAX_SHIFT):
        m = z < ASYMPTOTIC_MIN
        if not m.any():
            break
        acc += np.where(m, 1.0 / (z * z), 0.0)
        z = np.where(m, z + 1.0, z)
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_TRIGAMMA_SERIES):
        series = series * inv2 + c
    return acc + inv + 0.5 * inv2 + inv * inv2 * series


def evidence(logits, activation):
    """Non-negative evidence and its derivative w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    if activation == SOFTPLUS:
        e = np.logaddexp(0.0, z)
        # sigmoid, stable on both tails
        d = np.exp(-np.logaddexp(0.0, -z))
    elif activation == EXP_CLAMPED:
        e = np.exp(np.minimum(z, EXP_CLAMP))
        d = np.where(z < EXP_CLAMP, e, 0.0)
    else:
        raise ValueError(f"unknown activation code {activation}")
    return e, d


def kl_uniform_grad(alpha):
    """Row-wise KL(Dir(alpha) || Dir(1)) and its gradient w.r.t. alpha."""
    K = alpha.shape[1]
    S = alpha.sum(axis=1)
    psi_S = digamma(S)
    kl = (
        lgamma(S)
        - lgamma(np.float64(K))
        - lgamma(alpha).sum(axis=1)
        + ((alpha - 1.0) * (digamma(alpha) - psi_S[:, None])).sum(axis=1)
    )
    kl = np.where((kl < 0.0) & (kl >= -1e-12), 0.0, kl)
    grad = (alpha - 1.0) * trigamma(alpha) - ((S - K) * trigamma(S))[:, None]
    return kl, grad


def stage1_batch(logits, y, lam, variant, activation):
    """Per-sample second-order loss and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, K = logits.shape
    e, de = evidence(logits, activation)
    alpha = e + 1.0
    S = alpha.sum(axis=1)
    rows = np.arange(n)
    a_y = alpha[rows, y]
    onehot = np.zeros_like(alpha)
    onehot[rows, y] = 1.0
    if variant == LOG_EXPECTED:
        loss = np.log(S) - np.log(a_y)
        g_alpha = (1.0 / S)[:, None] - onehot / a_y[:, None]
    elif variant == EXPECTED_NLL:
        loss = digamma(S) - digamma(a_y)
        g_alpha = trigamma(S)[:, None] - onehot * trigamma(a_y)[:, None]
    else:
        raise ValueError(f"unknown loss variant code {variant}")
    if lam != 0.0:
        kl, g_kl = kl_uniform_grad(alpha)
        loss = loss + lam * kl
        g_alpha = g_alpha + lam * g_kl
    return loss, g_alpha * de


def stage2_batch(logits, y, weights, activation):
    """Weighted -log E[p_y] per sample and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    n = logits.shape[0]
    e, de = evidence(logits, activation)
    alpha = e + 1.0
    S = alpha.sum(axis=1)
    rows = np.arange(n)
    a_y = alpha[rows, y]
    loss = w * (np.log(S) - np.log(a_y))
    g_alpha = np.broadcast_to((1.0 / S)[:, None], alpha.shape).copy()
    g_alpha[rows, y] -= 1.0 / a_y
    return loss, g_alpha * (w[:, None] * de)
