import os
import subprocess
import sys

import numpy as np
import pytest

from evidential_alignment import _fallback, kernels, mathcore

try:
    from evidential_alignment import _kernels
except ImportError:
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _batch(seed, n=64, K=4):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 3.0, size=(n, K)), rng.integers(0, K, size=n), rng.uniform(0.0, 1.0, size=n)


@pytest.mark.parametrize("name", ["lgamma", "digamma", "trigamma"])
def test_fallback_special_functions_match_scalar(name):
    z = np.exp(np.linspace(np.log(0.1), np.log(1e6), 500))
    batched = getattr(_fallback, name)(z)
    scalar = np.array([getattr(mathcore, name)(v) for v in z])
    np.testing.assert_allclose(batched, scalar, rtol=1e-13, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("name", ["lgamma", "digamma", "trigamma"])
def test_compiled_special_functions_match_fallback(name):
    z = np.exp(np.linspace(np.log(0.1), np.log(1e6), 500)).reshape(20, 25)
    np.testing.assert_allclose(getattr(_kernels, name)(z), getattr(_fallback, name)(z), rtol=1e-13, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("activation", [0, 1])
def test_evidence_parity(activation):
    z, _, _ = _batch(1)
    z[0, 0] = 12.0  # past the exp clamp
    z[1, 1] = -40.0
    for a, b in zip(_kernels.evidence(z, activation), _fallback.evidence(z, activation)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@needs_compiled
def test_kl_grad_parity():
    rng = np.random.default_rng(3)
    alpha = 1.0 + rng.exponential(3.0, size=(50, 5))
    for a, b in zip(_kernels.kl_uniform_grad(alpha), _fallback.kl_uniform_grad(alpha)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("variant", [0, 1])
@pytest.mark.parametrize("activation", [0, 1])
@pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
def test_stage1_parity(variant, activation, lam):
    z, y, _ = _batch(7)
    for a, b in zip(_kernels.stage1_batch(z, y, lam, variant, activation), _fallback.stage1_batch(z, y, lam, variant, activation)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("activation", [0, 1])
def test_stage2_parity(activation):
    z, y, w = _batch(9)
    for a, b in zip(_kernels.stage2_batch(z, y, w, activation), _fallback.stage2_batch(z, y, w, activation)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_kl_batch_matches_scalar():
    rng = np.random.default_rng(4)
    alpha = 1.0 + rng.exponential(2.0, size=(30, 3))
    kl, _ = kernels.kl_uniform_grad(alpha)
    np.testing.assert_allclose(kl, [mathcore.kl_to_uniform(a) for a in alpha], rtol=1e-12, atol=1e-14)


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env["EA_PURE_PYTHON"] = env_value
    out = subprocess.run(
        [sys.executable, "-c", "from evidential_alignment import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


def test_pure_python_switch():
    assert _backend_in_subprocess("1") == "python"


@needs_compiled
def test_compiled_selected_by_default():
    assert _backend_in_subprocess("0") == "compiled"
