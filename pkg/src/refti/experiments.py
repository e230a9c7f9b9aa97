"""Benchmark studies behind the acceptance suite.

Each function returns plain data (dicts, floats, RunRecords) so callers
can gate, print or serialise it. Nothing here asserts.
"""

from __future__ import annotations

import math
import time
from typing import Optional, Sequence

import numpy as np

from refti.estimators import (
    draws_to_relative_se,
    laplace_evidence,
    model_switch_ti,
    power_posterior_evidence,
)
from refti.io import RunConfig
from refti.models import resolve_model
from refti.models.simple import constrained2d, cusp1d, gaussian
from refti.oracle import mc_orthant_check, quadrature_1d, quadrature_2d, radiata_exact_evidence
from refti.reference import (
    GaussianReference,
    reference_diagonal_orthant,
    reference_from_mode,
    reference_from_samples,
    reference_variational,
    variational_objective,
)
from refti.runner import run_evidence
from refti.sampler import SamplerConfig, expectation_of_log_ratio
from refti.ti import FIVE_POINT_GRID, LambdaSchedule, referenced_ti

CUSP_DOMAIN = (-10.0, 18.0)
CUSP_KINK = 4.0
COVID_DESK_VARIANTS = ("covid:gi=8", "covid:w=2", "covid:w=7", "covid:ar=2")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# oracles


def cusp_exact() -> float:
    return quadrature_1d(cusp1d(), CUSP_DOMAIN, tol=1e-10, breakpoints=[CUSP_KINK]).value


def constrained2d_exact():
    t = constrained2d()
    return quadrature_2d(t, loc=[0.4, -0.5], sd=[0.6, 0.75], tol=1e-10)


# ---------------------------------------------------------------------------
# 1-D cusp


def cusp_config(n_iter: int, seed: int = 1, **kw) -> RunConfig:
    return RunConfig("cusp1d", method="ref-ti", reference_kind="sampled", lambdas=list(FIVE_POINT_GRID),
                     sampler={"n_iter": n_iter, "n_chains": 4, "seed": seed}, **kw)


def cusp_study(n_iter: int, seed: int = 1) -> dict:
    exact = cusp_exact()
    rec, secs = _timed(lambda: run_evidence(cusp_config(n_iter, seed)))
    z = math.exp(rec.result["log_z"])
    return {"n_iter": n_iter, "z": z, "exact": exact, "rel_error": abs(z / exact - 1.0), "seconds": secs,
            "record": rec}


# ---------------------------------------------------------------------------
# 2-D constrained table


def constrained_table(n_iter: int = 5000, seed: int = 1, n_lambdas: int = 11) -> dict:
    t = constrained2d()
    sc = SamplerConfig(n_iter=n_iter, seed=seed)
    t0 = time.perf_counter()
    exact = constrained2d_exact()
    full = reference_from_samples(t, sc)
    diag = reference_diagonal_orthant(t, sc)
    ti_diag = referenced_ti(t, diag, n_lambdas, sc)
    ti_full = referenced_ti(t, full, n_lambdas, sc)
    return {
        "exact": exact.value,
        "exact_error_bound": exact.abs_error_bound,
        "laplace_full": math.exp(full.log_zref()),
        "laplace_diag_orthant": math.exp(diag.log_zref()),
        "ti_diag_orthant": ti_diag.z,
        "ti_diag_orthant_half_width": ti_diag.z * ti_diag.half_width,
        "ti_full": ti_full.z,
        "ti_full_half_width": ti_full.z * ti_full.half_width,
        "seconds": time.perf_counter() - t0,
    }


# ---------------------------------------------------------------------------
# radiata


def radiata_bundles():
    return resolve_model("radiata:M1"), resolve_model("radiata:M2")


def radiata_exact_bf() -> float:
    m1, m2 = radiata_bundles()
    return math.exp(radiata_exact_evidence(m2.model) - radiata_exact_evidence(m1.model))


def radiata_study(n_iter: int = 2000, seed: int = 1, n_lambdas: int = 11) -> dict:
    b1, b2 = radiata_bundles()
    sc = SamplerConfig(n_iter=n_iter, seed=seed)
    t0 = time.perf_counter()
    lz_exact = [radiata_exact_evidence(b.model) for b in (b1, b2)]
    refs = [reference_from_samples(b.target, sc) for b in (b1, b2)]
    lap = [laplace_evidence(r).log_z for r in refs]
    ti = [referenced_ti(b.target, r, n_lambdas, sc) for b, r in zip((b1, b2), refs)]
    ms = model_switch_ti(b1.target, b2.target, n_lambdas, sc)
    mode_refs = [reference_from_mode(b.target) for b in (b1, b2)]
    return {
        "exact_bf": math.exp(lz_exact[1] - lz_exact[0]),
        "exact_log_z": lz_exact,
        "laplace_bf": math.exp(lap[1] - lap[0]),
        "laplace_mode_bf": math.exp(mode_refs[1].log_zref() - mode_refs[0].log_zref()),
        "ref_ti_bf": math.exp(ti[1].log_z - ti[0].log_z),
        "ref_ti_log_z": [r.log_z for r in ti],
        "model_switch_bf": math.exp(ms.log_z),
        "seconds": time.perf_counter() - t0,
    }


def _bf_runner(method: str, seed: int, n_lambdas: int = 11):
    """``run(n_iter) -> (log BF21, se, draws)`` for the draws-to-SE search."""
    b1, b2 = radiata_bundles()
    refs = None
    if method == "ref-ti":
        refs = [reference_from_mode(b.target) for b in (b1, b2)]

    def run(n):
        sc = SamplerConfig(n_iter=n, seed=seed)
        if method == "ref-ti":
            r = [referenced_ti(b.target, ref, n_lambdas, sc) for b, ref in zip((b1, b2), refs)]
        elif method == "pp":
            r = [power_posterior_evidence(b.target, b.prior, n_lambdas, sc) for b in (b1, b2)]
        else:
            r = [model_switch_ti(b1.target, b2.target, n_lambdas, sc)]
        draws = sum(int(x.diagnostics_summary.get("total_draws", 0)) for x in r)
        if len(r) == 2:
            return r[1].log_z - r[0].log_z, math.hypot(r[0].sigma, r[1].sigma), draws
        return r[0].log_z, r[0].sigma, draws

    return run


def draws_to_se_study(seeds: Sequence[int] = (1, 2, 3, 4, 5), rel: float = 0.005, start: int = 64,
                      max_iter: int = 16384, give_up_factor: float = 4.0) -> dict:
    out = {}
    for method in ("ref-ti", "model-switch", "pp"):
        rows = []
        for s in seeds:
            with np.errstate(all="ignore"):
                d = draws_to_relative_se(_bf_runner(method, s), rel=rel, start=start, max_iter=max_iter,
                                         give_up_factor=give_up_factor)
            rows.append(d.to_dict())
        out[method] = rows
    return out


# ---------------------------------------------------------------------------
# orthant normalisers


def random_diagonal_reference(rng: np.random.Generator, n_constraints: int) -> GaussianReference:
    from refti.density import ParamSpace

    d = int(rng.integers(n_constraints, 6))
    loc = rng.uniform(-1.0, 1.0, d)
    sd = rng.uniform(0.2, 2.0, d)
    lower = [None] * d
    for i in rng.permutation(d)[:n_constraints]:
        # bounds below the location, from the far tail up to just under the peak
        lower[i] = float(loc[i] - sd[i] * rng.uniform(0.05, 2.5))
    space = ParamSpace(tuple(f"x{i}" for i in range(d)), tuple(lower))
    return GaussianReference(
        location=loc, scale_form="diagonal", scale=sd**2, log_peak=float(rng.uniform(-3, 3)),
        space=space, orthant_corrected=True, name="random",
    )


def _reference_quadrature(ref: GaussianReference) -> Optional[float]:
    dens = ref.as_density()
    loc, sd = ref.location, ref.marginal_sd()
    if ref.dim == 1:
        b = ref.space.lower_bounds[0]
        lo = b if b is not None else loc[0] - 14 * sd[0]
        return quadrature_1d(dens, (lo, loc[0] + 14 * sd[0]), tol=1e-11, shift=ref.log_peak).value
    if ref.dim == 2:
        return quadrature_2d(dens, loc=loc, sd=sd, tol=1e-11, shift=ref.log_peak).value
    return None


def orthant_study(n_refs: int = 20, n_mc: int = 1_000_000, seed: int = 7) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_refs):
        ref = random_diagonal_reference(rng, int(rng.integers(1, 6)))
        z = math.exp(ref.log_zref())
        mc = mc_orthant_check(ref, n=n_mc, seed=seed + k)
        q = _reference_quadrature(ref)
        rows.append({
            "dim": ref.dim, "constraints": int(ref.space.bound_index.size), "z": z,
            "mc": mc.z_estimate, "mc_se": mc.z_se, "z_sigma": abs(z - mc.z_estimate) / mc.z_se if mc.z_se else 0.0,
            "quadrature": q, "quad_abs_diff": None if q is None else abs(q - z),
        })
    return rows


# ---------------------------------------------------------------------------
# variational references


def variational_study(n_iter: int = 4000, seed: int = 1, n_eval: int = 200_000) -> dict:
    out = {}
    exact = {"cusp1d": math.log(cusp_exact()), "constrained2d": math.log(constrained2d_exact().value)}
    for name, target in (("cusp1d", cusp1d()), ("constrained2d", constrained2d())):
        sc = SamplerConfig(n_iter=n_iter, seed=seed)
        sampled = reference_from_samples(target, sc)
        var = reference_variational(target, sampled, sc)
        obj, mcse = variational_objective(target, var, n=n_eval, seed=seed)
        v_var = expectation_of_log_ratio(target, var, 1.0, sc).variance
        v_smp = expectation_of_log_ratio(target, sampled, 1.0, sc).variance
        out[name] = {"exact_log_z": exact[name], "objective": obj, "objective_mcse": mcse,
                     "variance_variational": v_var, "variance_sampled": v_smp,
                     "sampled_objective": variational_objective(target, sampled, n=n_eval, seed=seed)[0]}
    return out


# ---------------------------------------------------------------------------
# COVID desk profile


def covid_config(model_id: str, seed: int, n_iter: int = 1000, n_lambdas: int = 5) -> RunConfig:
    return RunConfig(model_id, method="ref-ti", reference_kind="sampled", lambdas=n_lambdas,
                     sampler={"n_iter": n_iter, "n_chains": 4, "seed": seed, "kernel": "hamiltonian"})


def covid_desk_study(variants: Sequence[str] = COVID_DESK_VARIANTS, seeds: Sequence[int] = (1, 2),
                     n_iter: int = 1000, n_lambdas: int = 5) -> dict:
    out = {}
    for v in variants:
        runs = []
        for s in seeds:
            rec, secs = _timed(lambda: run_evidence(covid_config(v, s, n_iter, n_lambdas)))
            res = rec.result
            lap = GaussianReference.from_dict(rec.extra["reference"])
            runs.append({
                "seed": s, "log_z": res["log_z"], "laplace_log_z": lap.log_zref(),
                "log_zref": res["log_zref"], "correction": res["ti_correction"],
                "half_width": 0.5 * (res["interval95"][1] - res["interval95"][0]),
                "max_rhat": res["diagnostics"].get("max_rhat"), "converged": res["converged"],
                "reference_max_rhat": rec.extra["reference"]["info"].get("max_rhat"),
                "reference": rec.extra["reference"]["name"], "seconds": secs,
            })
        out[v] = runs
    return out


# ---------------------------------------------------------------------------
# reference mismatch


def mismatch_study(ratios: Sequence[float] = (1.0, 2.0, 4.0), n_iter: int = 1000,
                   seeds: Sequence[int] = (1, 2, 3, 4, 5)) -> dict:
    """1-D standard-normal target against ``N(0, r^2)`` references."""
    from refti.density import ParamSpace

    target = gaussian([0.0], [[1.0]], name="unit-gaussian")
    exact = 0.5 * math.log(2 * math.pi)
    sched = LambdaSchedule(FIVE_POINT_GRID)
    out = {}
    for r in ratios:
        ref = GaussianReference(location=np.zeros(1), scale_form="covariance", scale=np.array([[r * r]]),
                                log_peak=0.0, space=ParamSpace(("x1",), (None,)), name=f"ratio-{r:g}")
        errs, var = [], None
        for s in seeds:
            sc = SamplerConfig(n_iter=n_iter, seed=s)
            res = referenced_ti(target, ref, sched, sc)
            errs.append(res.log_z - exact)
            if var is None:
                var = [e.variance for e in res.per_lambda]
        out[r] = {"per_lambda_variance": var, "errors": errs,
                  "mean_abs_error": float(np.mean(np.abs(errs))), "bias": float(np.mean(errs))}
    return out
