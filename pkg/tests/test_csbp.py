import math

import numpy as np
import pytest

from heightlab import FiniteAtoms, InteractionFn, Mechanism
from heightlab.csbp import increment_law_check, laplace_ode, simulate_csbp


def u_closed(alpha, beta, lam, t):
    e = math.exp(-alpha * t)
    return alpha * lam * e / (alpha + beta * lam * (1 - e))


@pytest.mark.parametrize("alpha,lam,t", [(0.5, 1.0, 1.0), (1.0, 3.0, 0.5), (0.2, 0.5, 2.0)])
def test_laplace_ode_matches_closed_form(alpha, lam, t):
    assert laplace_ode(Mechanism(alpha, 1.0), lam, t) == pytest.approx(u_closed(alpha, 1.0, lam, t), rel=1e-7)


def test_linear_mean_and_laplace():
    m = Mechanism(0.5, 1.0)
    pp = simulate_csbp(InteractionFn.linear(0.5), m, [1.0], 1.0, 1e-3, 0.01, 3, n_paths=4000)
    z = pp.at(1.0)[:, 0]
    assert abs(z.mean() - math.exp(-0.5)) < 4 * z.std() / math.sqrt(z.size)
    lap = np.exp(-z)
    target = math.exp(-laplace_ode(m, 1.0, 1.0))
    assert abs(lap.mean() - target) < 4 * lap.std() / math.sqrt(z.size) + 0.005


def test_fields_are_monotone_and_nonnegative():
    m = Mechanism(0.0, 1.0, FiniteAtoms([(1.0, 0.3)]))
    pp = simulate_csbp(InteractionFn.logistic(1.0, 2.0, 10.0), m, [0.5, 1.0, 2.0], 1.0, 1e-3, 0.01, 1,
                       n_paths=200, record_times=[0.0, 0.5, 1.0])
    assert np.all(pp.increments >= 0)
    np.testing.assert_allclose(pp.at(0.0)[0], [0.5, 1.0, 2.0])
    assert np.all(np.diff(pp.Z, axis=-1) >= 0)
    with pytest.raises(KeyError):
        pp.at(0.3)


def test_blocks_are_batch_independent():
    fn, m = InteractionFn.linear(0.2), Mechanism(0.2, 1.0)
    a = simulate_csbp(fn, m, [1.0], 0.2, 1e-3, 0.01, 9, n_paths=1500)
    b = simulate_csbp(fn, m, [1.0], 0.2, 1e-3, 0.01, 9, n_paths=1000)
    np.testing.assert_array_equal(a.Z[:, :1000], b.Z)


def test_argument_checks():
    fn, m = InteractionFn.linear(0.2), Mechanism(0.2, 1.0)
    with pytest.raises(ValueError):
        simulate_csbp(fn, m, [1.0, 0.5], 1.0, 1e-3, 0.01, 0)
    with pytest.raises(ValueError):
        simulate_csbp(fn, m, [1.0], 1.0, 0.9, 0.01, 0)
    with pytest.raises(ValueError):
        increment_law_check(fn, m, 0.0, 1.0, 1.0, 10, 1e-3, 0.01, 0)


def test_linear_increment_is_independent_of_base():
    m = Mechanism(0.5, 1.0)
    r = increment_law_check(InteractionFn.linear(0.5), m, 1.0, 0.5, 1.0, 3000, 1e-3, 0.01, 2)
    assert abs(r["slope"]) < 4 * r["slope_se"]
    assert abs(r["inc_mean"] - r["lone_mean"]) < 4 * math.hypot(r["inc_se"], r["lone_se"])
