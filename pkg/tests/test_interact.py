import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heightlab import FiniteAtoms, InteractionFn
from heightlab.interact import (InteractConfig, girsanov_weight, require_reached, run_interacting, sn_guard,
                                simulate_interacting_height, simulate_reference)
from heightlab.levypath import NotReached


def logistic_cfg(**kw):
    base = dict(f=InteractionFn.logistic(1.0, 2.0, 10.0), a=0.3, beta=1.0, pi=FiniteAtoms([(1.0, 0.3)]),
                x_target=0.5, dt=1e-3, cap=200.0)
    base.update(kw)
    return InteractConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        logistic_cfg(a=0.0)
    with pytest.raises(ValueError):
        logistic_cfg(beta=-1.0)
    with pytest.raises(ValueError):
        logistic_cfg(dt=0.0)
    np.testing.assert_allclose(logistic_cfg().g_a([0.1, 0.3, 1.3]), [0.0, 0.0, -1.0])


def test_zero_feedback_has_unit_weight():
    cfg = InteractConfig(InteractionFn.linear(0.0), a=100.0, beta=1.0, x_target=0.5)
    b = simulate_reference(cfg, 1)
    w = girsanov_weight(b, cfg.f, cfg.a, cfg.beta)
    assert w.weight == 1.0 and w.stopped


@pytest.mark.parametrize("seed", [0, 5, 17])
def test_engine_weight_equals_replay(seed):
    cfg = logistic_cfg()
    b = simulate_reference(cfg, seed)
    w = girsanov_weight(b, cfg.f, cfg.a, cfg.beta)
    assert w.log_weight == pytest.approx(b.engine_log_weight, rel=1e-12, abs=1e-12)
    assert w.stop_index == b.passage.index


def test_weight_at_a_smaller_level_stops_earlier():
    cfg = logistic_cfg()
    b = simulate_reference(cfg, 5)
    w = girsanov_weight(b, cfg.f, cfg.a, cfg.beta, x=0.25)
    assert w.stopped and w.stop_index <= b.passage.index


def test_interacting_run_is_reproducible():
    cfg = logistic_cfg()
    p1, h1, f1, r1 = simulate_interacting_height(cfg, 3)
    p2, h2, f2, r2 = simulate_interacting_height(cfg, 3)
    np.testing.assert_array_equal(h1.values, h2.values)
    assert r1 == r2 and r1.reached
    assert p1.step_drift.size == p1.n_steps
    np.testing.assert_array_equal(p1.rebuild(), p1.values)
    assert np.all(h1.values >= 0)


@pytest.mark.parametrize("seed", range(1, 7))
def test_drift_is_restoring_high_up(seed):
    cfg = logistic_cfg(a=0.05, beta=0.1, x_target=1.0)
    b = run_interacting(cfg, seed)
    # above theta + a + 1 the drift is at most -1
    hi = cfg.f.theta + cfg.a + 1.0
    assert b.height.values.max() > hi
    assert -math.inf < b.c_high <= -1.0 + 1e-9


def test_sn_guard_properties():
    cfg = logistic_cfg()
    b = simulate_reference(cfg, 5)
    end = b.path.n_steps * b.path.dt
    assert sn_guard(b, math.inf) == end
    assert sn_guard(b, 1e9) == end
    t1, t2 = sn_guard(b, 0.05), sn_guard(b, 0.2)
    assert 0 <= t1 <= t2 <= end
    with pytest.raises(ValueError):
        sn_guard(b, -1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_sn_guard_monotone(n1, n2):
    b = simulate_reference(logistic_cfg(), 5)
    lo, hi = sorted((n1, n2))
    assert sn_guard(b, lo) <= sn_guard(b, hi)


def test_truncated_weight_with_guard():
    cfg = logistic_cfg()
    b = simulate_reference(cfg, 5)
    full = girsanov_weight(b, cfg.f, cfg.a, cfg.beta)
    cut = girsanov_weight(b, cfg.f, cfg.a, cfg.beta, sn_level=1e9)
    assert cut.log_weight == pytest.approx(full.log_weight)


def test_require_reached():
    cfg = logistic_cfg(cap=0.001)
    b = simulate_reference(cfg, 0)
    with pytest.raises(NotReached):
        require_reached(b)


def test_sn_guard_at_zero_is_time_zero():
    assert sn_guard(simulate_reference(logistic_cfg(), 5), 0.0) == 0.0


def test_constant_feedback_matches_linear_pipeline():
    from heightlab import Mechanism
    from heightlab.verify import height_ensemble, interacting_ensemble, ks_statistic

    cfg = InteractConfig(InteractionFn.linear(0.5), a=1e6, beta=1.0, x_target=0.5, dt=1e-3)
    a = interacting_ensemble(cfg, [0.5], [0.25], 2000, seed=21)
    b = height_ensemble(Mechanism(0.5, 1.0), [0.5], [0.25], 2000, 1e-3, 0.01, 0.02, seed=22)
    assert a["reached"].all() and b["reached"].all()
    assert ks_statistic(a["sx"][:, 0], b["sx"][:, 0]) < 0.05
