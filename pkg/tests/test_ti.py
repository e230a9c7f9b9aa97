import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refti.errors import EvidenceError, InvalidArgumentError
from refti.models.simple import gaussian, gaussian_log_z
from refti.reference import GaussianReference
from refti.sampler import SamplerConfig
from refti.ti import (
    ConvergenceWarning,
    EvidenceResult,
    LambdaSchedule,
    TelescopicSchedule,
    max_curvature,
    natural_second_derivatives,
    quadrature_weights,
    referenced_ti,
    spline_eval,
    spline_integral,
    telescopic_ti,
    ti_correction,
)
from refti.density import TemperedDensity


def test_schedule_parsing():
    assert LambdaSchedule.parse(5).values == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert LambdaSchedule.parse("3").values == (0.0, 0.5, 1.0)
    assert LambdaSchedule.parse("1,0,0.5").values == (0.0, 0.5, 1.0)
    for bad in ("0,0.5", "0,0.5,0.5,1", 1, "a,b", [0.0, 1.2]):
        with pytest.raises(InvalidArgumentError):
            LambdaSchedule.parse(bad)


def test_spline_two_points_is_trapezoid():
    assert spline_integral([(0.0, 1.0), (1.0, 3.0)]) == pytest.approx(2.0)


def test_spline_natural_end_conditions_and_interpolation():
    x = np.array([0.0, 0.2, 0.5, 0.8, 1.0])
    y = np.sin(3 * x)
    M = natural_second_derivatives(x, y)
    assert M[0] == 0.0 and M[-1] == 0.0
    assert spline_eval(x, y, x) == pytest.approx(y, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10),
       knots=st.lists(st.floats(0.01, 0.99), min_size=0, max_size=8, unique=True))
def test_spline_exact_for_linear(a, b, knots):
    x = np.array(sorted({0.0, 1.0, *knots}))
    if np.any(np.diff(x) < 1e-3):
        return
    assert spline_integral(zip(x, a + b * x)) == pytest.approx(a + b / 2, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(y=st.lists(st.floats(-50, 50), min_size=5, max_size=5))
def test_quadrature_weights_linear_and_sum_to_one(y):
    x = np.array([0.0, 0.2, 0.5, 0.8, 1.0])
    w = quadrature_weights(x)
    assert w.sum() == pytest.approx(1.0)
    assert float(w @ np.array(y)) == pytest.approx(spline_integral(zip(x, y)), abs=1e-9)


def test_spline_accuracy_on_smooth_curve():
    x = np.linspace(0, 1, 11)
    assert spline_integral(zip(x, np.exp(x))) == pytest.approx(math.e - 1, rel=1e-4)


def test_spline_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        spline_integral([(0.0, 1.0)])
    with pytest.raises(InvalidArgumentError):
        spline_integral([(0.0, 1.0), (0.0, 2.0)])
    with pytest.raises(InvalidArgumentError):
        spline_integral([(0.0, 1.0), (1.0, math.nan)])


def test_max_curvature_zero_for_line():
    assert max_curvature([0, 0.5, 1], [1, 2, 3]) == pytest.approx(0.0, abs=1e-12)


def _ref(g, mean, cov, peak=0.0):
    return GaussianReference(np.asarray(mean, float), "covariance", np.atleast_2d(cov), peak, g.space)


def test_exact_reference_gives_zero_correction():
    cov = [[1.0, 0.3], [0.3, 0.5]]
    g = gaussian([0.0, 1.0], cov, log_scale=1.5)
    r = _ref(g, [0.0, 1.0], cov, 1.5)
    res = referenced_ti(g, r, 5, SamplerConfig(n_iter=200, seed=1))
    assert res.ti_correction == pytest.approx(0.0, abs=1e-10)
    assert res.log_z == pytest.approx(gaussian_log_z(cov, 1.5), abs=1e-10)


def test_correction_recovers_gaussian_normaliser():
    g = gaussian([0.0], [[1.0]], log_scale=-0.3)
    r = _ref(g, [0.2], [[1.6]], 0.0)
    res = referenced_ti(g, r, 11, SamplerConfig(n_iter=3000, seed=3))
    exact = gaussian_log_z([[1.0]], -0.3)
    assert res.log_z == pytest.approx(exact, abs=max(4 * res.sigma, 5e-3))
    assert res.interval95[0] < res.log_z < res.interval95[1]


def test_result_round_trip():
    g = gaussian([0.0], [[1.0]])
    res = referenced_ti(g, _ref(g, [0.1], [[1.2]]), 3, SamplerConfig(n_iter=100, seed=1))
    back = EvidenceResult.from_dict(res.to_dict(with_traces=True))
    assert back.to_dict(with_traces=True) == res.to_dict(with_traces=True)


def test_parallel_lambdas_are_deterministic():
    g = gaussian([0.0], [[1.0]])
    r = _ref(g, [0.1], [[1.5]])
    a = referenced_ti(g, r, 5, SamplerConfig(n_iter=200, seed=4), workers=1)
    b = referenced_ti(g, r, 5, SamplerConfig(n_iter=200, seed=4), workers=3)
    assert a.to_dict(with_traces=True) == b.to_dict(with_traces=True)


def test_all_lambdas_failing_raises():
    class Broken:
        def __init__(self, g):
            self.space, self.dim, self.initial, self.scale, self.cov_hint = g.space, g.dim, None, None, None

        def log_density(self, x):
            return -math.inf

        def log_density_batch(self, xs):
            return np.full(len(xs), -math.inf)

    g = gaussian([0.0], [[1.0]])
    with pytest.raises(EvidenceError):
        ti_correction(Broken(g), Broken(g), LambdaSchedule.parse(3), SamplerConfig(n_iter=10))


def test_nonconverged_runs_warn():
    g = gaussian([0.0, 0.0], [[1.0, 0.99], [0.99, 1.0]])
    r = _ref(g, [3.0, -3.0], np.eye(2) * 0.01)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = referenced_ti(g, r, 3, SamplerConfig(n_iter=20, n_chains=4, seed=1))
    assert not res.converged
    assert res.diagnostics_summary["max_rhat"] > 1.05
    assert any(issubclass(x.category, ConvergenceWarning) for x in w)


def test_single_rung_telescope_equals_referenced_ti():
    g = gaussian([0.0], [[1.0]])
    r = _ref(g, [0.3], [[2.0]])
    sc = SamplerConfig(n_iter=300, seed=2)
    a = referenced_ti(g, r, 5, sc)
    b = telescopic_ti(TelescopicSchedule([r], g), 5, sc)
    assert b.log_z == pytest.approx(a.log_z, abs=1e-12)


def test_telescope_through_intermediate():
    g = gaussian([0.0], [[1.0]], log_scale=0.4)
    r = _ref(g, [0.5], [[4.0]])
    sched = TelescopicSchedule([r, TemperedDensity(g, r, 0.5)], g)
    res = telescopic_ti(sched, 11, SamplerConfig(n_iter=2000, seed=5))
    assert res.log_z == pytest.approx(gaussian_log_z([[1.0]], 0.4), abs=max(4 * res.sigma, 0.01))
    assert len(res.diagnostics_summary["rungs"]) == 2


def test_telescope_first_rung_must_be_analytic():
    g = gaussian([0.0], [[1.0]])
    with pytest.raises(InvalidArgumentError):
        TelescopicSchedule([g], g)
