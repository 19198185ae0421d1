import numpy as np
import pytest

from cyclic_bnn.errors import BnnError
from cyclic_bnn.nn import Parameter
from cyclic_bnn.optim import AdamW


def scalar(w, g):
    p = Parameter("w", [w])
    p.grad = np.array([g], np.float32)
    return p


def test_zero_gradient_no_decay_is_fixed_point():
    p = scalar(1.5, 0.0)
    AdamW(weight_decay=0).step([p], 0.1)
    assert p.real[0] == np.float32(1.5)


def test_first_step():
    p = scalar(1.0, 1.0)
    AdamW(weight_decay=0).step([p], 0.1)
    assert p.real[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), rel=1e-7)


def test_decoupled_decay_only():
    p = scalar(1.0, 0.0)
    AdamW(weight_decay=0.01).step([p], 0.1)
    assert p.real[0] == pytest.approx(0.999, rel=1e-7)


def test_matches_reference_loop():
    # Plain-Python transcription of the update rule over several steps.
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((5, 3))
    p = Parameter("w", rng.standard_normal(3))
    w = p.real.astype(np.float64).copy()
    m = np.zeros(3)
    s = np.zeros(3)
    opt = AdamW(0.8, 0.99, 1e-6, 0.05)
    for t, g in enumerate(grads, start=1):
        p.grad = g.astype(np.float32)
        opt.step([p], 0.01)
        g = g.astype(np.float32).astype(np.float64)
        m = 0.8 * m + 0.2 * g
        s = 0.99 * s + 0.01 * g * g
        w = w - 0.01 * ((m / (1 - 0.8 ** t)) / (np.sqrt(s / (1 - 0.99 ** t)) + 1e-6) + 0.05 * w)
    np.testing.assert_allclose(p.real, w, rtol=1e-5)


def test_rejects_bad_inputs():
    with pytest.raises(BnnError, match="non-finite-gradient"):
        AdamW().step([scalar(1.0, np.inf)], 0.1)
    with pytest.raises(BnnError, match="invalid-learning-rate"):
        AdamW().step([scalar(1.0, 1.0)], 0.0)
