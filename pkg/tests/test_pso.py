import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soielab.errors import ConfigurationError, ContractViolation, NumericalError
from soielab.pso import (
    CONDITIONS,
    HUMAN_BOUNDS,
    HumanParams,
    PsoConfig,
    fit_human_hyperparams,
    fit_objective,
    predict_conditions,
    pso_minimize,
)


def sphere(x):
    return float(np.sum(np.square(x)))


def test_sphere_converges():
    res = pso_minimize(sphere, PsoConfig(bounds=((-5, 5),) * 3, particles=30, iterations=200, seed=3))
    assert np.linalg.norm(res.x) < 1e-3


def test_constant_objective_has_flat_trace():
    res = pso_minimize(lambda x: 7.0, PsoConfig(bounds=((0, 1),), particles=5, iterations=10))
    assert res.f == 7.0
    assert np.all(res.trace == 7.0)


def test_fixed_seed_is_reproducible():
    cfg = PsoConfig(bounds=((-3, 3), (-1, 2)), particles=10, iterations=30, seed=12)
    a, b = pso_minimize(sphere, cfg), pso_minimize(sphere, cfg)
    assert np.array_equal(a.x, b.x) and a.f == b.f and np.array_equal(a.trace, b.trace)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), shift=st.floats(-4, 4))
def test_trace_monotone_and_in_bounds(seed, shift):
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sum((x - shift) ** 2) + np.sin(5 * x[0]))

    bounds = ((-5, 5), (-2, 3))
    res = pso_minimize(f, PsoConfig(bounds=bounds, particles=8, iterations=25, seed=seed))
    assert np.all(np.diff(res.trace) <= 0)
    lo, hi = np.array(bounds).T
    assert np.all(res.x >= lo) and np.all(res.x <= hi)
    pts = np.array(seen)
    assert np.all(pts >= lo) and np.all(pts <= hi)


def test_non_finite_values_are_rejected():
    def f(x):
        return np.nan if x[0] < 0 else float(x[0] ** 2)

    res = pso_minimize(f, PsoConfig(bounds=((-1, 1),), particles=10, iterations=50, seed=0))
    assert np.isfinite(res.f) and res.x[0] >= 0


def test_all_rejected_raises():
    with pytest.raises(NumericalError):
        pso_minimize(lambda x: np.inf, PsoConfig(bounds=((0, 1),), particles=4, iterations=3))


@pytest.mark.parametrize("kw", [dict(particles=1), dict(bounds=((1, 0),)), dict(iterations=0)])
def test_config_validation(kw):
    base = dict(bounds=((0, 1),))
    base.update(kw)
    with pytest.raises(ConfigurationError):
        PsoConfig(**base)


def test_missing_condition_is_contract_violation():
    targets = {c: (1.0, 0.2) for c in CONDITIONS if c != "NN"}
    with pytest.raises(ContractViolation):
        fit_human_hyperparams(targets)


def test_model_predictions_follow_the_human_trends():
    pred = predict_conditions(HumanParams())
    err = {c: v[0] for c, v in pred.items()}
    lam = {c: v[1] for c, v in pred.items()}
    assert lam["SS"] > lam["NS"] and lam["SN"] > lam["NN"]
    assert lam["SN"] >= lam["SS"] and lam["NN"] >= lam["NS"]
    assert err["NN"] == max(err.values())
    assert err["SS"] == min(err.values())


def test_fit_objective_vanishes_only_at_the_generating_point():
    truth = HumanParams()
    objective = fit_objective(predict_conditions(truth))
    assert objective(truth.as_array()) == pytest.approx(0.0, abs=1e-12)
    for off in ([0.3, 0, 0], [0, -0.3, 0], [0, 0, 1.0]):
        assert objective(truth.as_array() + off) > 1e-6
