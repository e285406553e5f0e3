import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ganaudit._rng import derive_rng
from ganaudit.ais import (
    AISConfig,
    LLEstimate,
    adapt_step_size,
    ais_chain,
    beta_schedule,
    estimate_ll,
    hmc_step,
    leapfrog,
    log_mean_exp,
)
from ganaudit.autodiff import ShapeError
from ganaudit.density import log_obs, ppca_loglik
from ganaudit.models import constant_model, linear_model, sample_dataset


def std_normal(z):
    z = np.atleast_2d(z)
    return -0.5 * np.sum(z * z, axis=1), -z


def test_beta_endpoints_and_midpoint():
    for t in (1, 2, 10, 500):
        b = beta_schedule(t)
        assert b[0] == 0.0 and b[-1] == 1.0 and len(b) == t + 1
    assert beta_schedule(10)[5] == pytest.approx(0.5, abs=1e-15)


@given(st.integers(1, 400), st.floats(0.01, 20))
def test_beta_strictly_increasing(steps, sharpness):
    assert np.all(np.diff(beta_schedule(steps, sharpness)) > 0)


def test_beta_errors():
    with pytest.raises(ValueError):
        beta_schedule(0)


def test_leapfrog_reversible():
    rng = np.random.default_rng(0)
    z, p = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    grad = lambda q: -q ** 3 - q  # noqa: E731
    z1, p1 = leapfrog(z, p, 0.1, 10, grad)
    z2, p2 = leapfrog(z1, -p1, 0.1, 10, grad)
    assert np.max(np.abs(z2 - z)) <= 1e-10
    assert np.max(np.abs(-p2 - p)) <= 1e-10


def test_leapfrog_energy_drift_small_step():
    rng = np.random.default_rng(1)
    z, p = rng.standard_normal(4), rng.standard_normal(4)
    h0 = 0.5 * z @ z + 0.5 * p @ p
    z1, p1 = leapfrog(z, p, 1e-3, 10, lambda q: -q)
    assert abs(0.5 * z1 @ z1 + 0.5 * p1 @ p1 - h0) <= 1e-5


def test_leapfrog_zero_step():
    z, p = np.array([0.3, -1.0]), np.array([1.0, 2.0])
    z1, p1 = leapfrog(z, p, 0.0, 10, lambda q: -q)
    np.testing.assert_array_equal(z1, z)
    np.testing.assert_array_equal(p1, p)


def test_hmc_small_step_always_accepts():
    res = hmc_step(np.zeros((50, 3)), std_normal, 1e-6,
                   [derive_rng(0, 9, i) for i in range(50)])
    assert np.all(res.accept_prob > 1 - 1e-9)
    assert res.accepted.all()


def test_hmc_deterministic_under_seed():
    def run():
        z = np.zeros((4, 2))
        flags = []
        rngs = [derive_rng(3, c) for c in range(4)]
        for _ in range(20):
            r = hmc_step(z, std_normal, 1.5, rngs)
            z = r.z
            flags.append(r.accepted.copy())
        return z, np.array(flags)

    a, b = run(), run()
    assert a[0].tobytes() == b[0].tobytes()
    np.testing.assert_array_equal(a[1], b[1])


def test_hmc_divergence_rejected_and_counted():
    def blowup(z):
        return -np.exp(np.sum(z * z, axis=1) * 1e3), -z * np.inf

    z = np.ones((2, 2))
    res = hmc_step(z, blowup, 0.5, [derive_rng(0, c) for c in range(2)])
    assert res.divergent.all() and not res.accepted.any()
    np.testing.assert_array_equal(res.z, z)


def test_hmc_requires_positive_step():
    with pytest.raises(ValueError):
        hmc_step(np.zeros(2), std_normal, 0.0, derive_rng(0))


def test_adapt_monotone_histories():
    s, a = 0.05, 0.65
    grow = []
    for _ in range(20):
        s, a = adapt_step_size(s, a, True)
        grow.append(s)
    assert np.all(np.diff(grow) > 0)
    s, a = 0.05, 0.65
    shrink = []
    for _ in range(20):
        s, a = adapt_step_size(s, a, False)
        shrink.append(s)
    assert np.all(np.diff(shrink) < 0)


def test_adapt_alternating_drift():
    s, a = 1.0, 0.5
    for i in range(100):
        s, a = adapt_step_size(s, a, i % 2 == 0, 0.9, 0.5)
    # oracle: the update rule simulated in exact arithmetic
    assert s == pytest.approx(0.9801947514740488, rel=1e-12)
    assert abs(s - 1.0) <= 0.02


def test_adapt_rejects_bad_smoothing():
    with pytest.raises(ValueError):
        adapt_step_size(0.1, 0.5, True, smoothing=1.0)


def test_log_mean_exp_examples():
    assert log_mean_exp([2.5, 2.5, 2.5]) == pytest.approx(2.5, abs=1e-15)
    assert log_mean_exp([0.0, math.log(3)]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_mean_exp([-math.inf, 0.0]) == pytest.approx(-math.log(2), abs=1e-15)
    assert log_mean_exp([1000.0, 1000.0]) == pytest.approx(1000.0)
    with pytest.raises(ValueError):
        log_mean_exp([])


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_log_mean_exp_bounded(values):
    v = log_mean_exp(values)
    assert min(values) - 1e-9 <= v <= max(values) + 1e-9


@pytest.mark.parametrize("steps,chains", [(1, 1), (7, 3), (50, 8)])
def test_constant_model_is_exact(steps, chains):
    m = constant_model([0.2, -0.4, 0.9], latent_dim=2)
    x = np.array([0.0, 0.1, 1.0])
    est = estimate_ll(m, [x], 0.3, AISConfig(steps=steps, chains=chains), seed=5)[0]
    exact = log_obs(x, m.params["value"], 0.3)
    np.testing.assert_allclose(est.log_weights, exact, rtol=0, atol=1e-12)
    assert est.ll == pytest.approx(exact, abs=1e-12)
    assert est.spread <= 1e-12


def test_estimate_structure_and_bounds():
    m = linear_model([[0.8], [0.3], [-0.5]])
    x = np.array([0.4, 0.1, -0.2])
    cfg = AISConfig(steps=40, chains=5)
    est = estimate_ll(m, [x], 0.1, cfg, seed=1)[0]
    assert est.trace.shape == (40, 5) and est.accepted.shape == (40, 5)
    assert est.step_sizes.shape == (40,)
    assert est.log_weights.min() <= est.ll <= est.log_weights.max()
    np.testing.assert_array_equal(est.trace[-1], est.log_weights)
    np.testing.assert_array_equal(ais_chain(m, x, 0.1, cfg, seed=1), est.trace)


def test_small_ppca_close_to_oracle():
    rng = np.random.default_rng(3)
    m = linear_model(rng.standard_normal((4, 1)), rng.standard_normal(4))
    xs = sample_dataset(m, 0.1, 5, 2)
    ests = estimate_ll(m, xs, 0.1, AISConfig(steps=200, chains=32), seed=0)
    dev = [abs(e.ll - ppca_loglik(m, 0.1, x)) / 4 for e, x in zip(ests, xs)]
    assert np.mean(dev) <= 0.05


def test_serial_and_parallel_bit_identical():
    m = linear_model([[0.8, 0.1], [0.3, 0.2], [-0.5, 0.7]])
    xs = sample_dataset(m, 0.1, 3, 0)
    cfg = AISConfig(steps=20, chains=2)
    a = estimate_ll(m, xs, 0.1, cfg, seed=4, workers=1)
    b = estimate_ll(m, xs, 0.1, cfg, seed=4, workers=2)
    for ea, eb in zip(a, b):
        assert ea.trace.tobytes() == eb.trace.tobytes()


def test_ids_key_the_streams():
    m = linear_model([[0.8], [0.3]])
    x = np.array([0.1, 0.2])
    cfg = AISConfig(steps=10, chains=2)
    a = estimate_ll(m, [x, x], 0.1, cfg, seed=0, ids=[7, 7])
    assert a[0].trace.tobytes() == a[1].trace.tobytes()
    b = estimate_ll(m, [x], 0.1, cfg, seed=0, ids=[8])
    assert a[0].trace.tobytes() != b[0].trace.tobytes()


def test_flagging_rule():
    est = LLEstimate(0, np.zeros(2), 0.0, np.zeros((100, 2)), np.ones((100, 2), bool),
                     np.array([10, 11]), np.ones(100))
    assert est.flagged
    est.divergences = np.array([10, 10])
    assert not est.flagged


def test_argument_errors():
    m = linear_model([[1.0], [0.0]])
    with pytest.raises(ShapeError):
        estimate_ll(m, [np.zeros(3)], 0.1, AISConfig(steps=2))
    with pytest.raises(ValueError):
        estimate_ll(m, [np.zeros(2)], 0.0, AISConfig(steps=2))
    with pytest.raises(ValueError):
        estimate_ll(m, [], 0.1)
    for bad in ({"steps": 0}, {"chains": 0}, {"leapfrog_steps": 0}, {"target_accept": 1.0}):
        with pytest.raises(ValueError):
            AISConfig(**bad)


def test_mean_of_short_runs_below_oracle():
    rng = np.random.default_rng(0)
    m = linear_model(0.3 * rng.standard_normal((16, 4)), rng.uniform(0.2, 0.8, 16))
    xs = sample_dataset(m, 0.05, 5, 21)
    for i, x in enumerate(xs):
        runs = [estimate_ll(m, [x], 0.05, AISConfig(steps=20), seed=100 + r)[0].ll for r in range(100)]
        assert np.mean(runs) <= ppca_loglik(m, 0.05, x)
