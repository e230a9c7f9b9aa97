"""Independent ground truth for tests and acceptance runs.

Nothing here samples with MCMC or runs thermodynamic integration: values
come from adaptive Gauss-Kronrod quadrature, closed-form conjugate
integrals, or plain Monte Carlo with exact Gaussian draws.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from refti.errors import InvalidArgumentError, QuadratureError, UnsupportedPriorError

BOX_SDS = 12.0
SUBDIVISION_CAP = 500


@dataclass
class QuadratureResult:
    value: float
    abs_error_bound: float
    evaluations: int

    @property
    def log_value(self) -> float:
        return math.log(self.value)


def _density_fn(density, shift):
    def f(*x):
        v = density.log_density(np.array(x, dtype=float))
        return 0.0 if v == -math.inf else math.exp(v - shift)

    return f


def quadrature_1d(density, domain: Sequence[float], tol: float = 1e-10,
                  breakpoints: Optional[Sequence[float]] = None, shift: float = 0.0) -> QuadratureResult:
    """Integrate ``exp(log q - shift)`` over ``domain``; returns the unshifted value.

    ``breakpoints`` inside the domain become panel edges (use them at cusps).
    """
    a, b = (float(v) for v in domain)
    if not b > a:
        raise InvalidArgumentError("domain must satisfy a < b")
    pts = sorted(float(p) for p in (breakpoints or ()) if a < p < b)
    n = [0]
    base = _density_fn(density, shift)

    def f(x):
        n[0] += 1
        return base(x)

    edges = [a] + pts + [b]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                v, e = integrate.quad(f, lo, hi, epsabs=tol / len(edges), epsrel=0.0, limit=SUBDIVISION_CAP)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"1-D quadrature did not converge on [{lo}, {hi}]: {exc}") from exc
        total += v
        err += e
    scale = math.exp(shift)
    if err >= tol:
        raise QuadratureError(f"error bound {err:.3g} exceeds tolerance {tol:.3g}")
    return QuadratureResult(total * scale, err * scale, n[0])


def _gaussian_tail_mass(loc, sd, box, lower_bounds) -> float:
    """Mass of N(loc, diag sd^2) beyond the box faces that are not support bounds (union bound)."""
    m = 0.0
    for (lo, hi), mu, s, b in zip(box, loc, sd, lower_bounds):
        m += special.ndtr((lo - mu) / s) if (np.isfinite(lo) and lo != b) else 0.0
        m += special.ndtr((mu - hi) / s) if np.isfinite(hi) else 0.0
    return float(m)


def auto_box(space, loc, sd, n_sd: float = BOX_SDS):
    """``loc +- n_sd * sd`` per dimension, truncated at lower bounds."""
    box = []
    for i in range(space.dim):
        lo, hi = loc[i] - n_sd * sd[i], loc[i] + n_sd * sd[i]
        b = space.lower_bounds[i]
        if b is not None:
            lo = max(lo, b)
            if hi <= b:
                raise InvalidArgumentError("box lies entirely outside the support")
        box.append((lo, hi))
    return box


def quadrature_2d(density, box=None, tol: float = 1e-10, loc=None, sd=None, peak_log: Optional[float] = None,
                  shift: float = 0.0) -> QuadratureResult:
    """Integrate a 2-D density over a rectangle with lower bounds applied exactly.

    Without ``box``, the rectangle is ``loc +- 12 sd`` truncated at the
    bounds. The mass outside it is majorised by a Gaussian with the same
    ``loc``/``sd`` and peak ``exp(peak_log)`` and added to the error bound.
    """
    space = density.space
    if space.dim != 2:
        raise InvalidArgumentError("quadrature_2d needs a 2-D density")
    tail = 0.0
    if box is None:
        if loc is None or sd is None:
            raise InvalidArgumentError("give a box or a location and scale")
        loc, sd = np.asarray(loc, dtype=float), np.asarray(sd, dtype=float)
        box = auto_box(space, loc, sd)
        pk = density.log_density(loc) if peak_log is None else peak_log
        z_major = math.exp(pk - shift) * 2 * math.pi * float(np.prod(sd))
        tail = z_major * _gaussian_tail_mass(loc, sd, box, space.lower_bounds)
    else:
        box = [tuple(map(float, b)) for b in box]
        for i, (lo, hi) in enumerate(box):
            b = space.lower_bounds[i]
            if b is not None and lo < b:
                box[i] = (b, hi)
    (x0, x1), (y0, y1) = box
    n = [0]
    base = _density_fn(density, shift)

    def f(y, x):  # dblquad integrates the inner variable first
        n[0] += 1
        return base(x, y)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            v, e = integrate.dblquad(f, x0, x1, y0, y1, epsabs=tol, epsrel=0.0)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"2-D quadrature did not converge: {exc}") from exc
    scale = math.exp(shift)
    bound = (e + tail) * scale
    if e >= tol:
        raise QuadratureError(f"error bound {e:.3g} exceeds tolerance {tol:.3g}")
    return QuadratureResult(v * scale, bound, n[0])


# ---------------------------------------------------------------------------
# conjugate regression


def radiata_exact_log_evidence(y, predictor, prior_mean, prior_prec_scale, shape, rate) -> float:
    """Closed-form ``log p(y)`` for ``y = X b + e``, ``b | tau ~ N(m, (tau Q0)^-1)``,
    ``e ~ N(0, 1/tau)``, ``tau ~ Gamma(shape, rate)``, with ``X = [1, predictor]``.

    Marginally ``y`` is a multivariate t: with ``M = I + X Q0^-1 X'`` and
    ``r = y - X m``, ``log p = -n/2 log 2pi - 1/2 log|M| + a log b - lnG(a)
    + lnG(a + n/2) - (a + n/2) log(b + r' M^-1 r / 2)``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return 0.0
    X = np.column_stack([np.ones(n), np.asarray(predictor, dtype=float)])
    q0 = np.asarray(prior_prec_scale, dtype=float)
    M = np.eye(n) + X @ np.diag(1.0 / q0) @ X.T
    r = y - X @ np.asarray(prior_mean, dtype=float)
    sign, logdet = np.linalg.slogdet(M)
    quad = float(r @ np.linalg.solve(M, r))
    a, b = float(shape), float(rate)
    return float(
        -0.5 * n * math.log(2 * math.pi) - 0.5 * logdet + a * math.log(b) - math.lgamma(a)
        + math.lgamma(a + 0.5 * n) - (a + 0.5 * n) * math.log(b + 0.5 * quad)
    )


def radiata_exact_evidence(model) -> float:
    """Log evidence of a :class:`~refti.models.radiata.RadiataModel` (analytic, no sampling)."""
    q0 = np.asarray(model.prior_prec_scale, dtype=float)
    family = getattr(model, "prior_family", "normal-gamma")
    if family != "normal-gamma":
        raise UnsupportedPriorError(f"no closed form for prior family {family!r}")
    if np.any(q0 <= 0) or not (model.shape > 0 and model.rate > 0) or q0.shape != (2,):
        raise UnsupportedPriorError("hyperparameters are not a proper normal-gamma prior")
    return radiata_exact_log_evidence(model.y, model.predictor, model.prior_mean, q0, model.shape, model.rate)


# ---------------------------------------------------------------------------
# orthant Monte Carlo


@dataclass
class OrthantCheck:
    fraction: float
    fraction_se: float
    log_z_unconstrained: float
    z_estimate: float
    z_se: float

    @property
    def log_z_estimate(self) -> float:
        return math.log(self.z_estimate) if self.z_estimate > 0 else -math.inf


def mc_orthant_check(ref, n: int = 1_000_000, seed: int = 0, chunk: int = 250_000) -> OrthantCheck:
    """Share of exact Gaussian draws inside the orthant times the unconstrained normaliser."""
    if ref.scale_form != "diagonal":
        raise InvalidArgumentError("orthant check needs a diagonal reference")
    idx = ref.space.bound_index
    bounds = ref.space.bound_values
    var = np.asarray(ref.scale, dtype=float)
    d = var.size
    log_z_unc = float(ref.log_peak + 0.5 * d * math.log(2 * math.pi) + 0.5 * np.sum(np.log(var)))
    if idx.size == 0:
        z = math.exp(log_z_unc)
        return OrthantCheck(1.0, 0.0, log_z_unc, z, 0.0)
    rng = np.random.default_rng(seed)
    loc = ref.location[idx]
    sd = np.sqrt(var[idx])
    inside, left = 0, int(n)
    while left > 0:
        m = min(chunk, left)
        x = loc + sd * rng.standard_normal((m, idx.size))
        inside += int(np.count_nonzero(np.all(x >= bounds, axis=1)))
        left -= m
    p = inside / n
    se = math.sqrt(max(p * (1 - p), 0.0) / n)
    z_unc = math.exp(log_z_unc)
    return OrthantCheck(p, se, log_z_unc, p * z_unc, se * z_unc)
