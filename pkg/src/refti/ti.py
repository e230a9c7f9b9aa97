"""Referenced thermodynamic integration.

``log z = log z_ref + int_0^1 E_lam[log q - log q_ref] d lam`` where the
expectation is over the geometric path ``q^lam q_ref^(1-lam)``. Each
coupling value is an independent MCMC run; the integrand is interpolated
by a natural cubic spline and integrated in closed form.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from refti.errors import EvidenceError, InvalidArgumentError, ReftiError
from refti.sampler import ExpectationEstimate, SamplerConfig, expectation_of_log_ratio

Z95 = 1.96
METHODS = ("referenced-ti", "laplace", "power-posterior", "model-switch-ti", "telescopic")
FIVE_POINT_GRID = (0.0, 0.2, 0.5, 0.8, 1.0)
TELESCOPE_STREAM = 0x7E1


class ConvergenceWarning(UserWarning):
    """At least one coupling-parameter run failed the R-hat gate."""


@dataclass(frozen=True)
class LambdaSchedule:
    """Sorted coupling-parameter grid from 0 to 1 inclusive."""

    values: tuple

    def __post_init__(self):
        try:
            vals = sorted(float(v) for v in self.values)
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError("lambda values must be real numbers") from exc
        if len(vals) < 2:
            raise InvalidArgumentError("a lambda schedule needs at least 2 points")
        if any(not math.isfinite(v) for v in vals):
            raise InvalidArgumentError("lambda values must be finite")
        if vals[0] != 0.0 or vals[-1] != 1.0:
            raise InvalidArgumentError("a lambda schedule must start at 0 and end at 1")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidArgumentError("lambda values must be strictly increasing (duplicates given)")
        object.__setattr__(self, "values", tuple(vals))

    @classmethod
    def equidistant(cls, n: int = 11) -> "LambdaSchedule":
        if int(n) != n or n < 2:
            raise InvalidArgumentError("an equidistant schedule needs an integer n >= 2")
        return cls(tuple(np.linspace(0.0, 1.0, int(n))))

    @classmethod
    def parse(cls, spec) -> "LambdaSchedule":
        """Accept a point count (``11`` / ``"11"``) or an explicit list (``"0,0.5,1"``)."""
        if isinstance(spec, LambdaSchedule):
            return spec
        if isinstance(spec, (int, np.integer)):
            return cls.equidistant(int(spec))
        if isinstance(spec, str):
            parts = [p for p in spec.replace(" ", "").split(",") if p]
            if len(parts) == 1:
                try:
                    return cls.equidistant(int(parts[0]))
                except ValueError:
                    pass
            try:
                return cls(tuple(float(p) for p in parts))
            except ValueError as exc:
                raise InvalidArgumentError(f"cannot parse lambda schedule {spec!r}") from exc
        return cls(tuple(spec))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


# ---------------------------------------------------------------------------
# natural cubic spline


def _check_points(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise InvalidArgumentError("spline abscissae and ordinates must be matching 1-D arrays")
    if x.size < 2:
        raise InvalidArgumentError("a spline needs at least 2 points")
    if np.any(np.diff(x) <= 0):
        raise InvalidArgumentError("spline abscissae must be strictly increasing")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("spline ordinates must be finite")
    return x, y


def natural_second_derivatives(x, y) -> np.ndarray:
    """Knot second derivatives ``M`` of the natural cubic spline (``M_0 = M_n = 0``)."""
    x, y = _check_points(x, y)
    n = x.size
    M = np.zeros(n)
    if n < 3:
        return M
    h = np.diff(x)
    A = np.zeros((n - 2, n - 2))
    rhs = np.empty(n - 2)
    for i in range(1, n - 1):
        r = i - 1
        A[r, r] = (h[i - 1] + h[i]) / 3.0
        if r > 0:
            A[r, r - 1] = h[i - 1] / 6.0
        if r < n - 3:
            A[r, r + 1] = h[i] / 6.0
        rhs[r] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]
    M[1:-1] = np.linalg.solve(A, rhs)
    return M


def spline_eval(x, y, at) -> np.ndarray:
    x, y = _check_points(x, y)
    M = natural_second_derivatives(x, y)
    t = np.atleast_1d(np.asarray(at, dtype=float))
    k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
    h = x[k + 1] - x[k]
    a = (x[k + 1] - t) / h
    b = (t - x[k]) / h
    return a * y[k] + b * y[k + 1] + ((a**3 - a) * M[k] + (b**3 - b) * M[k + 1]) * h * h / 6.0


def spline_integral(points) -> float:
    """Integral over the grid of the natural cubic spline through ``(lambda, mean)`` pairs.

    Each panel contributes ``h (y_i + y_{i+1}) / 2 - h^3 (M_i + M_{i+1}) / 24``.
    """
    pts = list(points)
    if len(pts) < 2:
        raise InvalidArgumentError("a spline needs at least 2 points")
    x, y = _check_points([p[0] for p in pts], [p[1] for p in pts])
    M = natural_second_derivatives(x, y)
    h = np.diff(x)
    return float(np.sum(h * (y[:-1] + y[1:]) / 2.0 - h**3 * (M[:-1] + M[1:]) / 24.0))


def quadrature_weights(x) -> np.ndarray:
    """Weights ``w`` with ``spline_integral(zip(x, y)) == w @ y`` (the map is linear in ``y``)."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(x.size)
    return np.array([spline_integral(zip(x, eye[i])) for i in range(x.size)])


def max_curvature(x, y) -> float:
    """Largest |second derivative| of the spline; attained at a knot since M is piecewise linear."""
    return float(np.max(np.abs(natural_second_derivatives(x, y))))


# ---------------------------------------------------------------------------
# results


@dataclass
class EvidenceResult:
    """``log z = log_zref + ti_correction`` with a 95% interval and per-lambda detail."""

    log_zref: float
    ti_correction: float
    log_z: float
    interval95: tuple
    per_lambda: list
    method: str
    diagnostics_summary: dict = field(default_factory=dict)
    converged: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown evidence method {self.method!r}")
        self.interval95 = (float(self.interval95[0]), float(self.interval95[1]))

    @property
    def half_width(self) -> float:
        return 0.5 * (self.interval95[1] - self.interval95[0])

    @property
    def sigma(self) -> float:
        return self.half_width / Z95

    @property
    def z(self) -> float:
        return math.exp(self.log_z)

    def to_dict(self, with_traces: bool = False) -> dict:
        return {
            "method": self.method,
            "log_zref": self.log_zref,
            "ti_correction": self.ti_correction,
            "log_z": self.log_z,
            "interval95": list(self.interval95),
            "converged": self.converged,
            "per_lambda": [e.to_dict(with_trace=with_traces) for e in self.per_lambda],
            "diagnostics": self.diagnostics_summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceResult":
        return cls(
            log_zref=d["log_zref"], ti_correction=d["ti_correction"], log_z=d["log_z"],
            interval95=tuple(d["interval95"]),
            per_lambda=[ExpectationEstimate.from_dict(e) for e in d["per_lambda"]],
            method=d["method"], diagnostics_summary=d.get("diagnostics", {}),
            converged=d["converged"],
        )


def make_result(log_zref: float, correction: float, sigma: float, per_lambda, method: str,
                diagnostics: Optional[dict] = None, converged: bool = True) -> EvidenceResult:
    log_z = log_zref + correction
    hw = Z95 * sigma
    return EvidenceResult(
        log_zref=float(log_zref), ti_correction=float(correction), log_z=float(log_z),
        interval95=(log_z - hw, log_z + hw), per_lambda=list(per_lambda), method=method,
        diagnostics_summary=dict(diagnostics or {}), converged=bool(converged),
    )


# ---------------------------------------------------------------------------
# engine


def _run_lambdas(target, reference, lams, config: SamplerConfig, stream: tuple, workers: Optional[int]):
    """Run every coupling value; failures come back as exceptions in place of estimates."""

    def job(lam):
        try:
            return expectation_of_log_ratio(target, reference, lam, config, stream=stream)
        except ReftiError as exc:
            return exc

    n = workers if workers is not None else config.workers
    if n <= 1 or len(lams) == 1:
        return [job(lam) for lam in lams]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(job, lams))


@dataclass
class _Correction:
    value: float
    sigma: float
    estimates: list
    failed: list
    curvature: float

    @property
    def converged(self) -> bool:
        return not self.failed and all(e.converged for e in self.estimates)


def ti_correction(target, reference, schedule: LambdaSchedule, config: SamplerConfig,
                  stream: tuple = (), workers: Optional[int] = None) -> _Correction:
    """Spline-integrated ``E_lam[log q - log q_ref]`` with propagated standard error."""
    schedule = LambdaSchedule.parse(schedule)
    outs = _run_lambdas(target, reference, schedule.values, config, tuple(stream), workers)
    ok = [o for o in outs if isinstance(o, ExpectationEstimate)]
    failed = [(lam, str(o)) for lam, o in zip(schedule.values, outs) if not isinstance(o, ExpectationEstimate)]
    if not ok:
        raise EvidenceError(f"every coupling-parameter run failed: {failed[0][1]}")
    xs = [e.lam for e in ok]
    if len(ok) < 2 or xs[0] != 0.0 or xs[-1] != 1.0:
        raise EvidenceError(f"too few successful runs to span [0, 1]; failures: {failed}")
    ys = [e.mean for e in ok]
    w = quadrature_weights(xs)
    value = float(w @ np.asarray(ys))
    sigma = float(math.sqrt(np.sum((w * np.array([e.mcse for e in ok])) ** 2)))
    return _Correction(value, sigma, ok, failed, max_curvature(xs, ys))


def _summary(corr: _Correction, **extra) -> dict:
    d = {
        "max_rhat": max(float(np.max(e.rhat)) for e in corr.estimates if e.rhat is not None),
        "n_nonconverged": sum(not e.converged for e in corr.estimates),
        "failed_lambdas": [lam for lam, _ in corr.failed],
        "max_curvature": corr.curvature,
        "total_draws": int(sum(e.n_draws for e in corr.estimates)),
        "correction_se": corr.sigma,
    }
    d.update(extra)
    return d


def _warn_if_flagged(result: EvidenceResult) -> EvidenceResult:
    if not result.converged:
        warnings.warn(
            f"{result.method}: some coupling-parameter runs did not pass the R-hat gate "
            f"(max R-hat {result.diagnostics_summary.get('max_rhat', float('nan')):.3f})",
            ConvergenceWarning, stacklevel=3,
        )
    return result


def referenced_ti(target, ref, schedule=None, config: Optional[SamplerConfig] = None,
                  log_zref_value: Optional[float] = None, method: str = "referenced-ti",
                  stream: tuple = (), workers: Optional[int] = None) -> EvidenceResult:
    """Evidence of ``target`` by TI from the analytic reference ``ref``.

    ``log_zref_value`` overrides ``ref.log_zref()``, which lets any
    normalised density (for instance a prior) act as the reference.
    """
    if target.space != ref.space:
        raise InvalidArgumentError("target and reference must share a ParamSpace")
    schedule = LambdaSchedule.equidistant(11) if schedule is None else LambdaSchedule.parse(schedule)
    config = config or SamplerConfig()
    lz = ref.log_zref() if log_zref_value is None else float(log_zref_value)
    corr = ti_correction(target, ref, schedule, config, stream=stream, workers=workers)
    extra = {}
    if hasattr(ref, "to_dict") and log_zref_value is None:
        extra["reference"] = ref.to_dict()
    res = make_result(lz, corr.value, corr.sigma, corr.estimates, method,
                      _summary(corr, **extra), corr.converged)
    return _warn_if_flagged(res)


@dataclass
class TelescopicSchedule:
    """Chain ``q_0 -> q_1 -> ... -> q_n -> target`` with analytic ``q_0``."""

    rungs: Sequence
    target: object

    def __post_init__(self):
        self.rungs = list(self.rungs)
        if not self.rungs:
            raise InvalidArgumentError("a telescopic schedule needs at least one rung")
        if not hasattr(self.rungs[0], "log_zref"):
            raise InvalidArgumentError("the first rung must be an analytic reference")
        if not math.isfinite(self.rungs[0].log_zref()):
            raise InvalidArgumentError("the first rung's log z must be finite")
        for r in self.rungs[1:]:
            if r.space != self.target.space:
                raise InvalidArgumentError("every rung must share the target's ParamSpace")
        if self.rungs[0].space != self.target.space:
            raise InvalidArgumentError("every rung must share the target's ParamSpace")

    def pairs(self):
        chain = self.rungs + [self.target]
        return list(zip(chain[:-1], chain[1:]))


def telescopic_ti(schedule: TelescopicSchedule, lambda_schedule=None,
                  config: Optional[SamplerConfig] = None, workers: Optional[int] = None) -> EvidenceResult:
    """Sum of per-rung TI corrections added to ``log z_0``.

    Rung 0 uses the same random streams as :func:`referenced_ti`, so a
    single-rung telescope reproduces it exactly.
    """
    lambda_schedule = LambdaSchedule.equidistant(11) if lambda_schedule is None \
        else LambdaSchedule.parse(lambda_schedule)
    config = config or SamplerConfig()
    total, var, per, rungs = 0.0, 0.0, [], []
    all_conv = True
    for i, (lo, hi) in enumerate(schedule.pairs()):
        stream = () if i == 0 else (TELESCOPE_STREAM, i)
        corr = ti_correction(hi, lo, lambda_schedule, config, stream=stream, workers=workers)
        total += corr.value
        var += corr.sigma**2
        per.extend(corr.estimates)
        all_conv &= corr.converged
        rungs.append({"rung": i, "correction": corr.value, "correction_se": corr.sigma,
                      "max_curvature": corr.curvature,
                      "per_lambda": [e.to_dict() for e in corr.estimates]})
    diag = {
        "max_rhat": max(float(np.max(e.rhat)) for e in per if e.rhat is not None),
        "n_nonconverged": sum(not e.converged for e in per),
        "total_draws": int(sum(e.n_draws for e in per)),
        "correction_se": math.sqrt(var),
        "rungs": rungs,
    }
    res = make_result(schedule.rungs[0].log_zref(), total, math.sqrt(var), per,
                      "telescopic", diag, all_conv)
    return _warn_if_flagged(res)
