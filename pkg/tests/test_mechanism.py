import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heightlab import (Extinction, FiniteAtoms, InteractionFn, Mechanism, TruncatedStable, extinction_criterion,
                       localize, phi, psi)
from heightlab.mechanism import interaction_from_dict, mechanism_from_dict


def test_psi_values():
    assert psi(Mechanism(1.0, 1.0), 2.0) == pytest.approx(6.0)
    m = Mechanism(0.0, 0.5, FiniteAtoms([(1.0, 1.0)]))
    assert psi(m, 1.0) == pytest.approx(0.5 + math.exp(-1.0))
    np.testing.assert_allclose(psi(Mechanism(1.0, 1.0), np.array([0.0, 1.0, 2.0])), [0.0, 2.0, 6.0])


def test_phi_inverts_psi():
    assert phi(Mechanism(0.0, 0.25), 1.0) == pytest.approx(2.0)
    m = Mechanism(0.5, 1.0, FiniteAtoms([(1.0, 0.5)]))
    lam = phi(m, 1.0)
    assert psi(m, lam) == pytest.approx(1.0, abs=1e-10)
    assert phi(m, 0.0) == 0.0


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.0, 3.0), beta=st.floats(0.1, 3.0), u=st.floats(1e-3, 50.0))
def test_phi_roundtrip_property(alpha, beta, u):
    m = Mechanism(alpha, beta, TruncatedStable(1.5, 0.3, 4.0))
    assert psi(m, phi(m, u)) == pytest.approx(u, rel=1e-8, abs=1e-10)


def test_mechanism_validation():
    with pytest.raises(ValueError):
        Mechanism(0.0, -1.0)
    with pytest.raises(ValueError):
        Mechanism(-0.1, 1.0)
    Mechanism(-0.1, 1.0, recurrent=False)
    with pytest.raises(ValueError):
        phi(Mechanism(-0.1, 1.0, recurrent=False), 1.0)
    with pytest.raises(ValueError):
        psi(Mechanism(0.0, 1.0), -1.0)


def test_mechanism_from_dict():
    m = mechanism_from_dict({"alpha": 0.2, "beta": 1.0, "pi": {"kind": "atoms", "atoms": [(1.0, 0.5)]}})
    assert m.alpha == 0.2 and m.pi.tail(0.0) == 0.5


def test_interaction_constructors():
    lin = InteractionFn.linear(0.5)
    assert lin.theta == -0.5 and lin.f(2.0) == pytest.approx(-1.0)
    lg = InteractionFn.logistic(1.0, 2.0)
    assert lg.theta == 1.0 and lg.f(1.5) == pytest.approx(1.5 - 4.5)
    poly = InteractionFn.polynomial([0.0, -1.0])
    assert poly.f(3.0) == pytest.approx(-9.0) and poly.theta == pytest.approx(0.0)
    with pytest.raises(ValueError):
        InteractionFn.polynomial([0.0, 1.0])
    tab = InteractionFn.from_table([0.0, 1.0, 2.0], [1.0, 0.0, -1.0])
    assert tab.f(2.0) == pytest.approx(0.0) and tab.theta == 1.0
    with pytest.raises(ValueError):
        InteractionFn(lambda z: z + 1.0, lambda z: np.ones_like(z), 1.0)


def test_interaction_from_dict():
    assert interaction_from_dict({"kind": "linear", "alpha": 0.3}).theta == -0.3
    f = interaction_from_dict({"kind": "logistic", "growth": 1.0, "competition": 2.0, "b": 10.0})
    assert f.b == 10.0 and f.bounded_derivative
    with pytest.raises(ValueError):
        interaction_from_dict({"kind": "quartic"})


def test_localize_agrees_below_b_and_freezes_above():
    f = InteractionFn.polynomial([0.0, -1.0])
    fb = localize(f, 2.0)
    assert fb.f(1.5) == pytest.approx(-2.25)
    u = np.linspace(0, 2, 11)
    np.testing.assert_allclose(fb.fprime(u), f.fprime(u))
    far = np.array([3.5, 10.0, 100.0])
    np.testing.assert_allclose(fb.fprime(far), f.fprime(2.0))


@settings(max_examples=30, deadline=None)
@given(b=st.floats(0.5, 20.0), u=st.floats(0.0, 60.0))
def test_localized_logistic_properties(b, u):
    fb = InteractionFn.logistic(1.0, 2.0, b)
    assert fb.fprime(u) <= fb.theta + 1e-12
    assert fb.fprime(u) >= 1.0 - 4.0 * (b + 1.0) - 1e-9
    if u <= b:
        assert fb.f(u) == pytest.approx(u - 2.0 * u * u, rel=1e-12, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(b=st.floats(0.5, 10.0), u=st.floats(0.01, 15.0))
def test_localized_f_integrates_derivative(b, u):
    fb = InteractionFn.logistic(1.0, 2.0, b)
    grid = np.linspace(0.0, u, 4001)
    num = np.trapezoid(fb.fprime(grid), grid)
    assert float(fb.f(u)) == pytest.approx(num, rel=1e-5, abs=1e-6)


def test_extinction_cases():
    assert extinction_criterion(InteractionFn.polynomial([0.0, -1.0]), 1.0) is Extinction.EXTINCT
    assert extinction_criterion(InteractionFn.polynomial([3.0]), 1.0) is Extinction.NOT_EXTINCT
    assert extinction_criterion(InteractionFn.linear(0.0), 1.0) is Extinction.EXTINCT
    assert str(Extinction.EXTINCT) == "ExtinctAS"
    with pytest.raises(ValueError):
        extinction_criterion(InteractionFn.linear(0.0), 0.0)
