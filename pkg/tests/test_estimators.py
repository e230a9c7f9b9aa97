import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refti.density import Density, ParamSpace
from refti.errors import InvalidArgumentError, InvalidPairingError
from refti.estimators import (
    bayes_factor_matrix,
    draws_to_relative_se,
    laplace_evidence,
    model_switch_ti,
    power_posterior_evidence,
)
from refti.models.simple import constrained2d, gaussian, gaussian_log_z
from refti.reference import GaussianReference
from refti.sampler import SamplerConfig
from refti.ti import make_result


def test_laplace_has_zero_correction():
    g = gaussian([0.0], [[2.0]], log_scale=0.1)
    ref = GaussianReference(np.zeros(1), "covariance", np.array([[2.0]]), 0.1, g.space)
    r = laplace_evidence(ref)
    assert r.ti_correction == 0.0 and r.log_z == ref.log_zref()
    assert r.method == "laplace" and r.half_width == 0.0


def test_model_switch_between_gaussians():
    a = gaussian([0.0], [[1.0]], log_scale=0.0)
    b = gaussian([0.3], [[2.25]], log_scale=1.0)
    r = model_switch_ti(a, b, 11, SamplerConfig(n_iter=3000, seed=1))
    want = gaussian_log_z([[2.25]], 1.0) - gaussian_log_z([[1.0]], 0.0)
    assert r.log_z == pytest.approx(want, abs=max(4 * r.sigma, 0.01))
    assert r.log_zref == 0.0


def test_model_switch_needs_shared_space():
    with pytest.raises(InvalidPairingError):
        model_switch_ti(gaussian([0.0], [[1.0]]), constrained2d())


def test_power_posterior_conjugate_gaussian():
    # prior N(0, 4), likelihood exp(-x^2 / 2): z = N(0; 0, 5) * sqrt(2 pi)
    space = ParamSpace(("x",))
    prior = Density(space, lambda t: -0.5 * t[0] ** 2 / 4 - 0.5 * math.log(2 * math.pi * 4),
                    initial=[0.0], scale=[2.0])
    post = Density(space, lambda t: prior.log_density(t) - 0.5 * t[0] ** 2, initial=[0.0], scale=[1.0])
    r = power_posterior_evidence(post, prior, 11, SamplerConfig(n_iter=3000, seed=2))
    want = 0.5 * math.log(1 / 5)
    assert r.log_zref == 0.0
    assert r.log_z == pytest.approx(want, abs=max(4 * r.sigma, 0.02))
    assert r.diagnostics_summary["lambda0_variance"] > 0


def test_bayes_factor_matrix_antisymmetric():
    rs = [make_result(v, 0.0, 0.1, [], "laplace") for v in (-3.0, -1.0, -2.5)]
    m = bayes_factor_matrix(rs, ["a", "b", "c"])
    assert np.allclose(m.log_bf, -m.log_bf.T)
    assert m.log_bf_of("b", "a") == pytest.approx(2.0)
    assert m.best() == "b"
    d = json.loads(m.to_json())
    assert d["model_ids"] == ["a", "b", "c"]
    rows = m.to_csv().strip().splitlines()
    assert rows[0] == "model,a,b,c" and len(rows) == 4


def test_bayes_factor_matrix_validation():
    r = make_result(0.0, 0.0, 0.0, [], "laplace")
    with pytest.raises(InvalidArgumentError):
        bayes_factor_matrix([r, r], ["a", "a"])
    with pytest.raises(InvalidArgumentError):
        bayes_factor_matrix([r], ["a", "b"])


def test_bf_matrix_for_three_gaussians_matches_closed_form():
    from refti.ti import referenced_ti

    sds = (0.5, 1.0, 2.0)
    res = []
    for i, s in enumerate(sds):
        g = gaussian([0.0], [[s * s]], log_scale=0.2 * i)
        ref = GaussianReference(np.array([0.1]), "covariance", np.array([[1.3 * s * s]]), 0.0, g.space)
        res.append(referenced_ti(g, ref, 11, SamplerConfig(n_iter=2000, seed=3)))
    m = bayes_factor_matrix(res, ["s0.5", "s1", "s2"])
    exact = np.array([gaussian_log_z([[s * s]], 0.2 * i) for i, s in enumerate(sds)])
    want = exact[:, None] - exact[None, :]
    off = ~np.eye(3, dtype=bool)
    assert np.all(np.abs(m.log_bf - want)[off] <= 3 * m.se[off])


def test_draws_to_se_doubles_until_reached():
    seen = []

    def run(n):
        seen.append(n)
        return 10.0, 2.0 / math.sqrt(n), 4 * n

    d = draws_to_relative_se(run, rel=0.005, start=64, max_iter=1 << 20)
    assert d.reached and d.n_iter == 2048 and d.total_draws == 4 * 2048
    assert seen == [64 * 2**k for k in range(6)]


def test_draws_to_se_cap_gives_infinity():
    d = draws_to_relative_se(lambda n: (1.0, 1.0, n), start=8, max_iter=64)
    assert not d.reached and math.isinf(d.total_draws) and d.n_iter == 64


def test_draws_to_se_gives_up_on_projection():
    calls = []

    def run(n):
        calls.append(n)
        return 1.0, 10.0 / math.sqrt(n), n

    d = draws_to_relative_se(run, start=8, max_iter=1024, give_up_factor=2.0)
    assert not d.reached and calls == [8]


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.5, 100.0), start=st.integers(1, 50))
def test_draws_to_se_monotone_in_noise(c, start):
    lo = draws_to_relative_se(lambda n: (5.0, c / math.sqrt(n), n), start=start, max_iter=1 << 24)
    hi = draws_to_relative_se(lambda n: (5.0, 2 * c / math.sqrt(n), n), start=start, max_iter=1 << 24)
    assert lo.total_draws <= hi.total_draws
