import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from refti.density import ParamSpace
from refti.errors import InvalidReferenceError, NonConcaveModeError
from refti.models import resolve_model
from refti.models.simple import constrained2d, cusp1d, gaussian, gaussian_log_z
from refti.oracle import quadrature_2d
from refti.reference import (
    GaussianReference,
    fd_hessian,
    log_orthant_mass,
    reference_diagonal_orthant,
    reference_from_mode,
    reference_from_samples,
    reference_variational,
    variational_objective,
)
from refti.sampler import SamplerConfig

COV = np.array([[2.0, 0.5], [0.5, 1.0]])


def test_orthant_mass_is_half_one_plus_erf():
    z = np.array([-3.0, -0.2, 0.0, 1.7])
    want = np.log(0.5 * (1 + np.array([math.erf(v / math.sqrt(2)) for v in z])))
    assert log_orthant_mass(z) == pytest.approx(want, rel=1e-12)
    # deep tail stays finite where erf would round to -1
    assert np.isfinite(log_orthant_mass(-40.0))


@pytest.mark.parametrize("form,scale", [
    ("covariance", COV), ("precision", np.linalg.inv(COV)), ("hessian", -np.linalg.inv(COV)),
])
def test_scale_forms_agree(form, scale):
    space = ParamSpace(("a", "b"))
    r = GaussianReference(location=np.array([1.0, 2.0]), scale_form=form, scale=scale, log_peak=0.4, space=space)
    assert r.log_zref() == pytest.approx(gaussian_log_z(COV, 0.4), rel=1e-12)
    assert r.covariance() == pytest.approx(COV)


def test_invalid_references():
    space = ParamSpace(("a", "b"), (0.0, None))
    with pytest.raises(InvalidReferenceError):
        GaussianReference(np.zeros(2), "covariance", -np.eye(2), 0.0, space)
    with pytest.raises(InvalidReferenceError):
        GaussianReference(np.zeros(2), "covariance", np.eye(2), 0.0, space, orthant_corrected=True)
    with pytest.raises(InvalidReferenceError):
        GaussianReference(np.array([-1.0, 0.0]), "diagonal", np.ones(2), 0.0, space, orthant_corrected=True)
    with pytest.raises(InvalidReferenceError):
        GaussianReference(np.zeros(2), "diagonal", np.ones(2), math.inf, space)
    with pytest.raises(InvalidReferenceError):
        GaussianReference(np.zeros(2), "cholesky", np.eye(2), 0.0, space)


@settings(max_examples=30, deadline=None)
@given(mu=st.lists(st.floats(0.0, 2.0), min_size=2, max_size=2),
       sd=st.lists(st.floats(0.2, 2.0), min_size=2, max_size=2), c=st.floats(-3, 3))
def test_2d_orthant_normaliser_equals_quadrature(mu, sd, c):
    space = ParamSpace(("a", "b"), (0.0, 0.0))
    r = GaussianReference(np.array(mu), "diagonal", np.array(sd) ** 2, c, space, orthant_corrected=True)
    q = quadrature_2d(r.as_density(), loc=mu, sd=sd, tol=1e-11, shift=c).value
    assert math.log(q) == pytest.approx(r.log_zref(), abs=1e-6)


def test_orthant_normaliser_is_product_of_cdfs():
    space = ParamSpace(("a", "b", "c"), (0.5, None, -1.0))
    loc, var = np.array([1.0, 0.0, 0.0]), np.array([1.0, 4.0, 0.25])
    r = GaussianReference(loc, "diagonal", var, 0.0, space, orthant_corrected=True)
    unc = 0.5 * 3 * math.log(2 * math.pi) + 0.5 * math.log(np.prod(var))
    want = unc + math.log(stats.norm.sf(0.5, 1.0, 1.0)) + math.log(stats.norm.sf(-1.0, 0.0, 0.5))
    assert r.log_zref() == pytest.approx(want, rel=1e-12)


def test_serialisation_round_trip():
    space = ParamSpace(("a", "b"), (0.0, None))
    r = GaussianReference(np.array([1.0, 0.0]), "diagonal", np.array([1.0, 2.0]), 0.3, space,
                          orthant_corrected=True, name="x", info={"n_draws": 10})
    s = GaussianReference.from_dict(r.to_dict())
    assert s.to_dict() == r.to_dict()


def test_fd_hessian_exact_on_quadratic():
    g = gaussian([1.0, -1.0], COV)
    assert fd_hessian(g, np.array([0.3, 0.2])) == pytest.approx(-np.linalg.inv(COV), rel=1e-6)


def test_fd_hessian_one_sided_at_bound():
    g = gaussian([0.0, 0.0], COV, lower_bounds=(0.0, None))
    assert fd_hessian(g, np.array([0.0, 0.2])) == pytest.approx(-np.linalg.inv(COV), rel=1e-5)


def test_mode_reference_is_exact_for_gaussian():
    g = gaussian([1.0, -1.0], COV, log_scale=0.2)
    r = reference_from_mode(g, start=[0.0, 0.0])
    assert r.location == pytest.approx([1.0, -1.0], abs=1e-6)
    assert r.log_zref() == pytest.approx(gaussian_log_z(COV, 0.2), abs=1e-6)


def test_mode_reference_rejects_cusp():
    with pytest.raises(NonConcaveModeError):
        reference_from_mode(cusp1d())


def test_mode_reference_radiata_matches_known_mode_region():
    b = resolve_model("radiata:M1")
    r = reference_from_mode(b.target)
    ab = b.model.conditional_mode_ab(r.location[2])
    assert r.location[:2] == pytest.approx(ab, rel=1e-5)


def test_sampled_reference_recovers_gaussian():
    g = gaussian([1.0, -1.0], COV)
    r = reference_from_samples(g, SamplerConfig(n_iter=3000, seed=1))
    assert r.location == pytest.approx([1.0, -1.0], abs=0.12)
    assert r.covariance() == pytest.approx(COV, abs=0.25)
    assert r.info["n_draws"] == 12000


def test_diagonal_orthant_reference_on_constrained2d():
    r = reference_diagonal_orthant(constrained2d(), SamplerConfig(n_iter=2000, seed=1))
    assert r.orthant_corrected and r.scale_form == "diagonal"
    assert r.location[0] > 0


def test_variational_never_worse_than_init_and_below_log_z():
    g = gaussian([0.0, 0.0], COV, log_scale=0.5)
    init = GaussianReference(np.array([0.5, 0.3]), "covariance", np.eye(2) * 0.5,
                             g.log_density([0.5, 0.3]), g.space)
    v = reference_variational(g, init, n_steps=600, seed=2)
    obj, se = variational_objective(g, v, n=20000, seed=3)
    obj0, _ = variational_objective(g, init, n=20000, seed=3)
    assert obj >= obj0 - 3 * se
    assert obj <= gaussian_log_z(COV, 0.5) + 3 * se
    assert obj == pytest.approx(gaussian_log_z(COV, 0.5), abs=0.05)
