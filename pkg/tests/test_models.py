import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refti.errors import DataError, InvalidArgumentError
from refti.models import UnknownModelError, resolve_model
from refti.models import cases as cases_mod
from refti.models.radiata import RadiataModel
from refti.models.renewal import (
    CaseSeries,
    RenewalModel,
    RenewalModelConfig,
    gi_mean_for_rate,
    gi_rate_for_mean,
    rayleigh_bins,
)

HEADER = ",".join(cases_mod.ECDC_HEADER)


def _ecdc(rows):
    lines = [HEADER]
    for date, n, country in rows:
        d = dt.date.fromisoformat(date)
        lines.append(f"{d:%d/%m/%Y},{d.day},{d.month},{d.year},{n},0,{country},XX,XXX,1,Asia")
    return "\n".join(lines) + "\n"


# -- case ingestion -----------------------------------------------------------


def test_three_row_fixture_normalises_to_three_rows():
    s = cases_mod.parse_ecdc_csv(_ecdc([("2020-03-01", 5, "South_Korea"), ("2020-03-02", 7, "South_Korea"),
                                        ("2020-03-03", 2, "South_Korea"), ("2020-03-02", 9, "Japan")]))
    assert [d.isoformat() for d in s.dates] == ["2020-03-01", "2020-03-02", "2020-03-03"]
    assert list(s.cases) == [5, 7, 2]


def test_rows_out_of_order_are_sorted_and_gaps_zero_filled():
    s = cases_mod.parse_ecdc_csv(_ecdc([("2020-03-04", 1, "South_Korea"), ("2020-03-01", 3, "South_Korea")]))
    assert list(s.cases) == [3, 0, 0, 1]


def test_duplicate_dates_fail_loudly():
    with pytest.raises(DataError, match="duplicate"):
        cases_mod.parse_ecdc_csv(_ecdc([("2020-03-01", 5, "South_Korea"), ("2020-03-01", 6, "South_Korea")]))


def test_missing_columns_are_listed():
    with pytest.raises(DataError, match="cases, countriesAndTerritories"):
        cases_mod.parse_ecdc_csv("dateRep,deaths\n01/03/2020,1\n")


def test_date_truncation_and_negative_counts():
    s = cases_mod.parse_ecdc_csv(_ecdc([("2019-12-30", 4, "South_Korea"), ("2019-12-31", -2, "South_Korea"),
                                        ("2020-07-19", 9, "South_Korea")]))
    assert s.dates[0] == dt.date(2019, 12, 31) and s.dates[-1] == dt.date(2020, 7, 18)
    assert len(s.dates) == 201 and s.cases.sum() == 0


def test_normalised_round_trip():
    s = cases_mod.default_series()
    back = cases_mod.parse_normalised_csv(cases_mod.write_normalised_csv(s))
    assert back.dates == s.dates and np.array_equal(back.cases, s.cases)


def test_bundled_series_is_the_synthetic_generator_output():
    s = cases_mod.default_series()
    regen = cases_mod.synthetic_south_korea()
    assert np.array_equal(s.cases, regen.cases)
    assert s.dates[0] == dt.date(2019, 12, 31) and s.dates[-1] == dt.date(2020, 7, 18)


# -- renewal model ------------------------------------------------------------


def test_gi_rate_mean_inverse():
    assert gi_mean_for_rate(gi_rate_for_mean(6.5)) == pytest.approx(6.5)
    assert gi_mean_for_rate(0.01) == pytest.approx(8.862, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(mean=st.floats(1.0, 20.0))
def test_rayleigh_bins_are_a_distribution(mean):
    g = rayleigh_bins(gi_rate_for_mean(mean), 400)
    assert g[0] == 0.0 and np.all(g >= 0)
    # lag 1 absorbs the mass below half a day, so the bins telescope to F(400.5)
    k = gi_rate_for_mean(mean)
    assert g[1] == pytest.approx(1 - math.exp(-k * 2.25))
    assert g.sum() == pytest.approx(1 - math.exp(-k * 400.5**2), rel=1e-12)


def _model(variant="gi-fixed", days=60, **kw):
    rng = np.random.default_rng(0)
    start = dt.date(2020, 1, 1)
    y = np.concatenate([[0, 0, 2], rng.poisson(np.linspace(3, 40, days - 3))])
    s = CaseSeries([start + dt.timedelta(i) for i in range(days)], y)
    if variant == "gi-fixed":
        kw.setdefault("gi_mean", 6.0)
    return RenewalModel(RenewalModelConfig(variant, s, **kw))


def test_leading_zeros_trimmed_and_seeding():
    m = _model()
    assert m.y[0] == 2 and m.T == 58
    assert m.S == 6 and m.seed_value == 2.0
    assert _model("ar", ar_order=3).S == 9  # prior-mean GI of 8.86 days


def test_dimensions_of_variants():
    assert _model().space.names[:4] == ("phi", "sigma", "rho1", "rho2")
    a = _model("ar", ar_order=4)
    assert "gi_rate" in a.space.names and "rho4" in a.space.names
    w = _model("window", window_days=7)
    assert w.m == math.ceil((w.T - w.S) / 7)


def test_constant_reproduction_gives_fixed_point():
    # R = 1 and GI concentrated near one day: f settles to a constant
    m = _model(gi_mean=0.6)
    th = m.crude_start()
    th[m.n_fixed:] = 0.0
    f = m.renewal_mean(th)
    assert m.S == 1
    # with one seeding day the conserved quantity gives f_inf = seed / mean lag
    g = rayleigh_bins(m.fixed_kappa, m.T)
    mean_lag = float(np.sum(np.arange(g.size) * g))
    assert f[-1] == pytest.approx(f[-2], rel=1e-9)
    assert f[-1] == pytest.approx(m.seed_value / mean_lag, rel=1e-9)


@pytest.mark.parametrize("variant,kw", [("gi-fixed", {}), ("ar", {"ar_order": 3}), ("window", {"window_days": 4})])
def test_gradient_matches_finite_differences(variant, kw):
    m = _model(variant, **kw)
    x = m.crude_start()
    g = m.grad(x)
    fd = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (m.log_posterior(x + e) - m.log_posterior(x - e)) / (2 * h)
    assert g == pytest.approx(fd, rel=1e-4, abs=1e-4)


def test_config_validation():
    s = cases_mod.default_series()
    with pytest.raises(InvalidArgumentError):
        RenewalModelConfig("gi-fixed", s)
    with pytest.raises(InvalidArgumentError):
        RenewalModelConfig("ar", s, ar_order=5)
    with pytest.raises(InvalidArgumentError):
        RenewalModelConfig("window", s, window_days=5)


# -- radiata -------------------------------------------------------------------


def test_radiata_posterior_is_prior_times_likelihood():
    m = RadiataModel.load("M2")
    p = np.array([3000.0, 180.0, 1.5e-5])
    assert m.log_posterior(p) == pytest.approx(m.log_prior(p) + m.log_likelihood(p))
    post, prior = m.posterior(), m.prior()
    assert post.space == prior.space
    assert prior.log_density([3000.0, 180.0, -1.0]) == -math.inf


def test_radiata_gradients():
    m = RadiataModel.load("M1")
    d = m.posterior()
    x = np.array([2990.0, 185.0, 1.0e-5])
    fd = np.array([(d.log_density(x + e) - d.log_density(x - e)) / (2 * e.max())
                   for e in np.diag([1e-3, 1e-3, 1e-11])])
    assert d.grad(x) == pytest.approx(fd, rel=1e-4)


# -- registry ------------------------------------------------------------------


def test_registry_builtins():
    assert resolve_model("cusp1d").target.dim == 1
    assert resolve_model("radiata:M2").prior is not None
    g = resolve_model("gaussian:2.0:0.5")
    assert g.exact_log_z == pytest.approx(0.5 + 0.5 * math.log(2 * math.pi * 4.0))
    for bad in ("nope", "radiata:M3", "covid:xx=1", "gaussian:-1"):
        with pytest.raises(UnknownModelError):
            resolve_model(bad)


def test_missing_model_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        resolve_model(str(tmp_path / "missing.json"))


def test_model_file(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"gaussian": {"mean": [0.0, 1.0], "cov": [[1.0, 0.0], [0.0, 4.0]]}}))
    b = resolve_model(str(p))
    assert b.exact_log_z == pytest.approx(math.log(2 * math.pi * 2.0))
    assert "model_file" in b.data_checksums
    p.write_text(json.dumps({"gaussian": {}, "colour": 1}))
    with pytest.raises(InvalidArgumentError):
        resolve_model(str(p))


def test_covid_missing_case_file(tmp_path):
    with pytest.raises(DataError):
        resolve_model("covid:gi=8", cases_csv=str(tmp_path / "none.csv"))


@pytest.mark.slow
def test_covid_desk_profile_truncates():
    b = resolve_model("covid:w=7")
    assert b.model.T == 120 and b.manifest["synthetic_data"] is True
    assert b.target.cov_hint.shape == (b.target.dim, b.target.dim)
