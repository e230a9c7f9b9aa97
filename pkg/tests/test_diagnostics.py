import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refti.diagnostics import RHAT_GATE, batch_means_mcse, compute_diagnostics, ess, split_rhat
from refti.errors import InvalidArgumentError


def _ar1(rng, phi, n, m=4):
    x = np.zeros((m, n))
    e = rng.standard_normal((m, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    return x


def test_rhat_near_one_for_iid():
    rng = np.random.default_rng(0)
    r, z = split_rhat(rng.standard_normal((4, 2000, 3)))
    assert np.all(r < 1.01) and not z.any()


def test_rhat_detects_shifted_chain():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 1000))
    x[0] += 3.0
    r, _ = split_rhat(x)
    assert r[0] > RHAT_GATE


def test_rhat_detects_trend_within_chain():
    # split chains expose drift that whole-chain R-hat would miss
    x = np.tile(np.linspace(-2, 2, 1000), (4, 1))
    r, _ = split_rhat(x + np.random.default_rng(2).standard_normal((4, 1000)) * 0.1)
    assert r[0] > 1.5


def test_constant_dimension_flagged_not_nan():
    x = np.ones((4, 100, 2))
    x[:, :, 1] = np.random.default_rng(3).standard_normal((4, 100))
    r, z = split_rhat(x)
    assert r[0] == 1.0 and z[0] and not z[1]


def test_bad_shape():
    with pytest.raises(InvalidArgumentError):
        split_rhat(np.ones(5))


def test_ess_iid_and_correlated():
    rng = np.random.default_rng(4)
    e_iid = ess(rng.standard_normal((4, 4000)))[0]
    assert 12000 < e_iid < 20000
    e_ar = ess(_ar1(rng, 0.9, 4000))[0]
    # AR(1) with phi 0.9: N (1 - phi) / (1 + phi) ~ 842
    assert 500 < e_ar < 1300


def test_batch_means_mcse_matches_theory_for_ar1():
    rng = np.random.default_rng(5)
    phi = 0.5
    x = _ar1(rng, phi, 40000)
    var = 1 / (1 - phi**2)
    want = np.sqrt(var * (1 + phi) / (1 - phi) / x.size)
    assert batch_means_mcse(x) == pytest.approx(want, rel=0.25)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-100, 100), s=st.floats(0.1, 10))
def test_diagnostics_affine_invariant(c, s):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 200, 2))
    a = compute_diagnostics(x)
    b = compute_diagnostics(c + s * x)
    assert a.rhat == pytest.approx(b.rhat, rel=1e-6)
    assert a.ess == pytest.approx(b.ess, rel=1e-6)
