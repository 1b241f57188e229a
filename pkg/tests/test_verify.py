import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heightlab import FiniteAtoms, Mechanism, TruncatedStable
from heightlab.verify import (FLUCT_C, BoundCheck, ComparisonReport, bound_suite, clamp_mass_bound,
                              clamp_moment_bound, compare, compensation_identity, fluctuation_bound,
                              height_ensemble, ks_statistic, ks_two_sample, passage_laplace, summarize,
                              truncation_convergence)


def test_ks_statistic_examples():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([0, 0], [1, 1]) == 1.0
    assert ks_statistic([1, 2, 3, 4], [3, 4, 5, 6]) == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_ks_is_symmetric_and_bounded(a, b):
    d = ks_statistic(a, b)
    assert 0.0 <= d <= 1.0
    assert d == ks_statistic(b, a)


def test_permutation_p_value_relabel_invariant():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=40), rng.normal(0.3, 1.0, size=60)
    d1, p1 = ks_two_sample(a, b, 99, seed=4)
    d2, p2 = ks_two_sample(b, a, 99, seed=4)
    assert d1 == d2 and p1 == p2
    assert 0 < p1 <= 1
    assert math.isnan(ks_two_sample(a, b, 0)[1])
    with pytest.raises(ValueError):
        ks_two_sample([], b)


def test_permutation_detects_shift():
    rng = np.random.default_rng(1)
    _, p = ks_two_sample(rng.normal(size=200), rng.normal(2.0, 1.0, size=200), 99)
    assert p == pytest.approx(0.01)


def test_compare_and_report():
    a = np.linspace(0, 1, 101)
    c = compare("same", a, a, 0.0, 0.05)
    assert c.passed and c.z == 0.0
    c2 = compare("const", a, None, 0.0, 0.05, ref_mean=0.5)
    assert c2.passed and math.isnan(c2.ks)
    c3 = compare("shift", a, a + 1.0, 0.05, 0.05)
    assert not c3.pass_mean and not c3.pass_ks
    rep = ComparisonReport("t", [c, c3], {"seed": 1})
    assert not rep.passed
    d = json.loads(rep.to_json())
    assert d["coordinates"][1]["passed"] is False
    assert "FAIL" in rep.to_text()


def test_summarize():
    s = summarize([1.0, 2.0, 3.0], grid=[0.0, 2.0, 5.0])
    assert s.mean == 2.0 and s.variance == 1.0 and s.cdf == [0.0, 2 / 3, 1.0]
    with pytest.raises(ValueError):
        summarize([])


def test_bound_formulas():
    assert FLUCT_C == pytest.approx(1.5819767)
    assert fluctuation_bound(0.5, 1.0, 1.0) == pytest.approx(0.7909883)
    assert fluctuation_bound(10.0, 1.0, 1.0) == 1.0
    assert clamp_moment_bound(0.0, 1.0, 1.0) == 0.0
    assert clamp_moment_bound(0.1, 1.0, 1.0) == pytest.approx(FLUCT_C * 0.005)
    assert clamp_mass_bound(Mechanism(0.0, 1.0), 1.0, 0.0, math.inf) == 0.0
    m = Mechanism(0.0, 1.0, FiniteAtoms([(0.5, 1.0), (2.0, 1.0)]))
    assert clamp_mass_bound(m, 1.0, 0.0, math.inf) == pytest.approx(FLUCT_C * (0.25 + 2.0))
    assert BoundCheck("x", {}, 0.5, 0.1, 0.25).passed
    assert not BoundCheck("x", {}, 0.6, 0.1, 0.25).passed


def test_bound_suite_small():
    checks = bound_suite(Mechanism(0.0, 1.0, FiniteAtoms([(1.0, 0.5)])), [0.5, 1.0], [0.25, 0.5], [0.25],
                         400, 3)
    kinds = {c.kind for c in checks}
    assert kinds == {"fluctuation", "clamp_moment", "clamp_mass"}
    assert all(c.passed for c in checks)


def test_truncation_zero_measure_is_exact():
    r = truncation_convergence(Mechanism(0.0, 1.0), [0.5, 0.1], 1.0, 50, 0)
    assert r["mean_sup"] == [0.0, 0.0]


def test_worker_count_does_not_change_results():
    m = Mechanism(0.5, 1.0)
    a = height_ensemble(m, [0.5], [0.25], 300, 1e-3, 0.01, 0.05, 7, workers=1)
    b = height_ensemble(m, [0.5], [0.25], 300, 1e-3, 0.01, 0.05, 7, workers=2)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_passage_laplace_small():
    rows = passage_laplace(Mechanism(0.5, 1.0), [0.5], 300, 1e-3, 0.01, 1)
    r = rows[0]
    assert r["reached_fraction"] > 0.9
    assert abs(r["empirical"] - r["target"]) < 4 * r["stderr"] + 0.02


def test_compensation_identity_guard(stable_mech):
    with pytest.raises(ValueError):
        compensation_identity(stable_mech, 1.0, 0.0, math.inf, 10, 1e-3, 0.01, 0)
