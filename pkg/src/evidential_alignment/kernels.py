"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise, or
when the environment variable ``EA_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementations in ``_fallback`` are used.
"""

import os

from . import _fallback

SOFTPLUS = _fallback.SOFTPLUS
EXP_CLAMPED = _fallback.EXP_CLAMPED
LOG_EXPECTED = _fallback.LOG_EXPECTED
EXPECTED_NLL = _fallback.EXPECTED_NLL

ACTIVATIONS = {"softplus": SOFTPLUS, "exp_clamped": EXP_CLAMPED}
VARIANTS = {"log_expected": LOG_EXPECTED, "expected_nll": EXPECTED_NLL}


def _load():
    if os.environ.get("EA_PURE_PYTHON", "") not in ("", "0"):
        return _fallback, "python"
    try:
        from . import _kernels
    except ImportError:
        return _fallback, "python"
    return _kernels, "compiled"


_impl, BACKEND = _load()

lgamma = _impl.lgamma
digamma = _impl.digamma
trigamma = _impl.trigamma
evidence = _impl.evidence
kl_uniform_grad = _impl.kl_uniform_grad
stage1_batch = _impl.stage1_batch
stage2_batch = _impl.stage2_batch
