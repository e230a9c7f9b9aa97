"""Renewal-equation model of daily case counts.

Expected cases follow ``f(t) = R_t * sum_{s>=1} f(t - s) g_s`` with
``R_t = exp(eps_t)`` and ``g`` a Rayleigh generation-interval kernel binned
to whole days. Counts are negative binomial with mean ``f(t)`` and
variance ``f + f^2 / phi``. The log reproduction numbers ``eps`` follow an
AR(k) process with positive coefficients.

Parameter layout: ``phi, sigma, rho_1..rho_k, [kappa], eps_1..eps_m`` where
``kappa`` is the Rayleigh rate (``g(s) ~ s exp(-kappa s^2)``, mean
``sqrt(pi / kappa) / 2``), present only when the generation interval is
inferred, and ``m`` is the number of post-seeding days (or windows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import optimize, special

from refti.density import Density, ParamSpace
from refti.errors import InvalidArgumentError

MEAN_FLOOR = 1e-8
GI_RATE_PRIOR = (0.01, 0.001)
SIGMA_PRIOR = (0.0, 0.2)
PHI_PRIOR = (0.0, 5.0)
RHO_PRIORS = ((0.8, 0.05), (0.1, 0.05), (0.0, 0.05), (0.0, 0.05))
EPS1_PRIOR = (-1.0, 0.1)
EPS_LOC = -1.0
DESK_DAYS = 120
AR_ORDERS = (2, 3, 4)
WINDOWS = (1, 2, 3, 4, 7)


def gi_rate_for_mean(mean_days: float) -> float:
    return math.pi / (4.0 * mean_days * mean_days)


def gi_mean_for_rate(kappa: float) -> float:
    return 0.5 * math.sqrt(math.pi / kappa)


def rayleigh_bins(kappa: float, s_max: int) -> np.ndarray:
    """``g_1 = F(1.5)``, ``g_s = F(s + 1/2) - F(s - 1/2)`` with ``F(u) = 1 - exp(-kappa u^2)``.

    Index 0 is unused (zero) so ``g[s]`` is the weight of lag ``s``.
    """
    g = np.zeros(s_max + 1)
    _bins(kappa, g)
    return g


@numba.njit(cache=True)
def _bins(kappa, g):
    s_max = g.size - 1
    prev = 0.0
    for s in range(1, s_max + 1):
        u = s + 0.5
        cur = 1.0 - math.exp(-kappa * u * u)
        g[s] = cur - prev
        prev = cur


@numba.njit(cache=True)
def _digamma(x):
    r = 0.0
    while x < 6.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    return r + math.log(x) - 0.5 / x - f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f / 132))))


@numba.njit(cache=True)
def _half_normal(x, m, s):
    # log N+(m, s) density including the truncation normaliser; returns (value, d/dx)
    z = (x - m) / s
    return -0.5 * z * z - math.log(s) - 0.5 * math.log(2 * math.pi), -z / s


@numba.njit(cache=True)
def _forward(eps, window, kappa, seed_value, S, T):
    g = np.zeros(T + 1)
    _bins(kappa, g)
    f = np.empty(T)
    c = np.zeros(T)
    R = np.zeros(T)
    for t in range(S):
        f[t] = seed_value
    for t in range(S, T):
        acc = 0.0
        for s in range(1, t + 1):
            acc += f[t - s] * g[s]
        c[t] = acc
        R[t] = math.exp(eps[(t - S) // window])
        f[t] = R[t] * acc
    return f, c, R, g


@numba.njit(cache=True)
def _log_post_grad(theta, k, has_kappa, fixed_kappa, window, y, S, seed_value, lgam_y1,
                   sigma_prior, phi_prior, rho_prior, eps1_prior, kappa_prior, want_grad):
    T = y.size
    phi = theta[0]
    sigma = theta[1]
    off = 2 + k
    kappa = fixed_kappa
    if has_kappa:
        kappa = theta[off]
        off += 1
    m = theta.size - off
    eps = theta[off:]
    grad = np.zeros(theta.size)
    if phi <= 0.0 or sigma <= 0.0 or kappa <= 0.0:
        return -np.inf, grad
    for i in range(k):
        if theta[2 + i] < 0.0:
            return -np.inf, grad

    lp = 0.0
    # half-normal priors (truncation normalisers are constants added in Python)
    v, d = _half_normal(phi, phi_prior[0], phi_prior[1])
    lp += v
    grad[0] += d
    v, d = _half_normal(sigma, sigma_prior[0], sigma_prior[1])
    lp += v
    grad[1] += d
    for i in range(k):
        v, d = _half_normal(theta[2 + i], rho_prior[i, 0], rho_prior[i, 1])
        lp += v
        grad[2 + i] += d
    if has_kappa:
        v, d = _half_normal(kappa, kappa_prior[0], kappa_prior[1])
        lp += v
        grad[2 + k] += d

    # latent AR(k)
    ls = math.log(sigma)
    for j in range(m):
        if j == 0:
            z = (eps[0] - eps1_prior[0]) / eps1_prior[1]
            lp += -0.5 * z * z - math.log(eps1_prior[1]) - 0.5 * math.log(2 * math.pi)
            grad[off] += -z / eps1_prior[1]
            continue
        if j < k:
            mu = EPS_LOC
        else:
            mu = 0.0
            for i in range(k):
                mu += theta[2 + i] * eps[j - 1 - i]
        r = eps[j] - mu
        z = r / sigma
        lp += -0.5 * z * z - ls - 0.5 * math.log(2 * math.pi)
        gr = -r / (sigma * sigma)
        grad[off + j] += gr
        grad[1] += z * z / sigma - 1.0 / sigma
        if j >= k:
            for i in range(k):
                grad[2 + i] -= gr * eps[j - 1 - i]
                grad[off + j - 1 - i] -= gr * theta[2 + i]

    # likelihood
    f, c, R, g = _forward(eps, window, kappa, seed_value, S, T)
    fbar = np.zeros(T)
    lphi = math.log(phi)
    dg_phi = _digamma(phi)
    lg_phi = math.lgamma(phi)
    for t in range(S, T):
        ft = f[t]
        floored = ft < MEAN_FLOOR
        if floored:
            ft = MEAN_FLOOR
        yt = y[t]
        lpf = math.log(phi + ft)
        lp += math.lgamma(yt + phi) - lg_phi - lgam_y1[t] + phi * (lphi - lpf) + yt * (math.log(ft) - lpf)
        if want_grad:
            grad[0] += _digamma(yt + phi) - dg_phi + lphi - lpf + 1.0 - (phi + yt) / (phi + ft)
            if not floored:
                fbar[t] += yt / ft - (yt + phi) / (phi + ft)
    if not want_grad:
        return lp, grad

    # adjoint of the renewal recursion
    gbar = np.zeros(T + 1)
    for t in range(T - 1, S - 1, -1):
        if fbar[t] == 0.0:
            continue
        grad[off + (t - S) // window] += fbar[t] * f[t]  # dR/deps = R
        cbar = fbar[t] * R[t]
        for s in range(1, t + 1):
            gbar[s] += cbar * f[t - s]
            if t - s >= S:
                fbar[t - s] += cbar * g[s]
    if has_kappa:
        dk = 0.0
        prev = 0.0
        for s in range(1, T + 1):
            u = s + 0.5
            cur = u * u * math.exp(-kappa * u * u)
            dk += gbar[s] * (cur - prev)
            prev = cur
        grad[2 + k] += dk
    return lp, grad


@dataclass
class CaseSeries:
    dates: list
    cases: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.cases = np.asarray(self.cases, dtype=float)
        if self.cases.ndim != 1 or len(self.dates) != self.cases.size:
            raise InvalidArgumentError("dates and cases must be equally long 1-D sequences")
        if np.any(self.cases < 0) or np.any(self.cases != np.round(self.cases)):
            raise InvalidArgumentError("case counts must be non-negative integers")


@dataclass
class RenewalModelConfig:
    """Variant ``gi-fixed`` (AR(2), fixed GI mean), ``ar`` (AR(k), inferred GI)
    or ``window`` (AR(2) over k-day blocks of constant R_t, inferred GI)."""

    variant: str
    series: CaseSeries
    gi_mean: Optional[float] = None
    ar_order: int = 2
    window_days: int = 1
    max_days: Optional[int] = None
    gi_rate_prior: tuple = GI_RATE_PRIOR
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("gi-fixed", "ar", "window"):
            raise InvalidArgumentError(f"unknown renewal variant {self.variant!r}")
        if self.variant == "gi-fixed":
            if self.gi_mean is None or not self.gi_mean > 0:
                raise InvalidArgumentError("gi-fixed needs a positive gi_mean")
        if self.ar_order not in AR_ORDERS:
            raise InvalidArgumentError(f"ar_order must be one of {AR_ORDERS}")
        if self.window_days not in WINDOWS:
            raise InvalidArgumentError(f"window_days must be one of {WINDOWS}")
        if self.variant != "ar" and self.ar_order != 2:
            raise InvalidArgumentError("only the ar variant changes the autoregressive order")
        if self.variant != "window" and self.window_days != 1:
            raise InvalidArgumentError("only the window variant uses multi-day blocks")


class RenewalModel:
    def __init__(self, config: RenewalModelConfig):
        self.config = config
        cases = config.series.cases
        nz = np.flatnonzero(cases > 0)
        if nz.size:
            cases = cases[nz[0]:]
            self.first_date = config.series.dates[nz[0]]
        else:
            self.first_date = config.series.dates[0] if config.series.dates else None
        if config.max_days is not None:
            cases = cases[: config.max_days]
        self.y = np.ascontiguousarray(cases, dtype=float)
        self.T = int(self.y.size)
        self.k = config.ar_order
        self.window = config.window_days
        self.has_kappa = config.variant != "gi-fixed"
        self.fixed_kappa = gi_rate_for_mean(config.gi_mean) if not self.has_kappa else 0.0
        ref_mean = config.gi_mean if not self.has_kappa else gi_mean_for_rate(config.gi_rate_prior[0])
        self.S = int(math.ceil(ref_mean))
        if self.T <= self.S + self.k:
            raise InvalidArgumentError(
                f"series too short: {self.T} days after trimming, seeding uses {self.S}"
            )
        self.seed_value = float(self.y[0]) if self.y[0] > 0 else 1.0
        self.m = int(math.ceil((self.T - self.S) / self.window))
        names = ["phi", "sigma"] + [f"rho{i + 1}" for i in range(self.k)]
        bounds = [0.0, 0.0] + [0.0] * self.k
        if self.has_kappa:
            names.append("gi_rate")
            bounds.append(0.0)
        names += [f"eps{j + 1}" for j in range(self.m)]
        bounds += [None] * self.m
        self.space = ParamSpace(tuple(names), tuple(bounds))
        self.n_fixed = 2 + self.k + int(self.has_kappa)
        self._lgam_y1 = np.array([math.lgamma(v + 1.0) for v in self.y])
        self._rho_prior = np.array(RHO_PRIORS[: self.k])
        self._kappa_prior = np.array(config.gi_rate_prior, dtype=float)
        self._sigma_prior = np.array(SIGMA_PRIOR)
        self._phi_prior = np.array(PHI_PRIOR)
        self._eps1 = np.array(EPS1_PRIOR)
        # log Phi(m / s) normalisers of the half-normal priors
        priors = [PHI_PRIOR, SIGMA_PRIOR] + list(RHO_PRIORS[: self.k])
        if self.has_kappa:
            priors.append(tuple(config.gi_rate_prior))
        self._trunc = -float(sum(special.log_ndtr(m_ / s_) for m_, s_ in priors))

    @property
    def dim(self) -> int:
        return self.space.dim

    def _eval(self, theta, want_grad):
        theta = np.ascontiguousarray(theta, dtype=float)
        lp, g = _log_post_grad(
            theta, self.k, self.has_kappa, self.fixed_kappa, self.window, self.y, self.S,
            self.seed_value, self._lgam_y1, self._sigma_prior, self._phi_prior, self._rho_prior,
            self._eps1, self._kappa_prior, want_grad,
        )
        return lp + self._trunc, g

    def log_posterior(self, theta) -> float:
        return self._eval(theta, False)[0]

    def grad(self, theta) -> np.ndarray:
        return self._eval(theta, True)[1]

    def kappa_of(self, theta) -> float:
        return float(theta[2 + self.k]) if self.has_kappa else self.fixed_kappa

    def renewal_mean(self, theta) -> np.ndarray:
        """Expected daily cases ``f(t)`` over the modelled days (seeding days included)."""
        theta = np.asarray(theta, dtype=float)
        eps = np.ascontiguousarray(theta[self.n_fixed:])
        f, _, _, _ = _forward(eps, self.window, self.kappa_of(theta), self.seed_value, self.S, self.T)
        return f

    def crude_start(self) -> np.ndarray:
        """A plausible point: smoothed empirical R_t, mild overdispersion."""
        y = self.y
        kappa = self.fixed_kappa if not self.has_kappa else self._kappa_prior[0]
        g = rayleigh_bins(kappa, self.T)
        ys = np.convolve(np.maximum(y, 0.5), np.ones(7) / 7, mode="same")
        eps_day = np.empty(self.T - self.S)
        for t in range(self.S, self.T):
            c = sum(ys[t - s] * g[s] for s in range(1, t + 1))
            eps_day[t - self.S] = math.log(max(ys[t], 0.5) / max(c, 1e-3))
        eps = np.array([eps_day[j * self.window:(j + 1) * self.window].mean() for j in range(self.m)])
        fixed = [2.0, 0.2] + [p[0] if p[0] > 0 else 0.02 for p in RHO_PRIORS[: self.k]]
        if self.has_kappa:
            fixed.append(kappa)
        return np.concatenate([fixed, np.clip(eps, -3, 3)])

    def find_map(self, start=None, max_iter: int = 5000) -> np.ndarray:
        x0 = self.crude_start() if start is None else np.asarray(start, dtype=float)
        lo = np.array([b if b is not None else -np.inf for b in self.space.lower_bounds])
        bounds = [(b + 1e-9 if np.isfinite(b) else None, None) for b in lo]

        def f(x):
            v, g = self._eval(x, True)
            if not np.isfinite(v):
                return 1e300, np.zeros_like(x)
            return -v, -g

        res = optimize.minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": max_iter, "maxfun": 4 * max_iter})
        return res.x

    def density(self, initial=None, scale=None, name: Optional[str] = None) -> Density:
        if initial is None:
            initial = self.find_map()
        cov = self._curvature_cov(initial)
        if scale is None:
            scale = np.sqrt(np.diag(cov))
        return Density(self.space, self.log_posterior, gradient=self.grad,
                       initial=initial, scale=scale, name=name or self.label, cov_hint=cov)

    def _curvature_cov(self, x) -> np.ndarray:
        """Inverse negative Hessian at ``x`` (diagonal fallback if indefinite)."""
        d = self.dim
        H = np.empty((d, d))
        for j in range(d):
            h = 1e-5 * max(abs(x[j]), 1e-2)
            e = np.zeros(d)
            e[j] = h
            lo = x - e
            if self.space.lower_bounds[j] is not None and lo[j] <= self.space.lower_bounds[j]:
                H[:, j] = (self.grad(x + e) - self.grad(x)) / h
            else:
                H[:, j] = (self.grad(x + e) - self.grad(lo)) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            np.linalg.cholesky(-H)
            cov = np.linalg.inv(-H)
            return 0.5 * (cov + cov.T)
        except np.linalg.LinAlgError:
            return np.diag(1.0 / np.maximum(np.abs(np.diag(H)), 1e-6))

    @property
    def label(self) -> str:
        c = self.config
        if c.variant == "gi-fixed":
            return f"covid:gi={c.gi_mean:g}"
        if c.variant == "ar":
            return f"covid:ar={c.ar_order}"
        return f"covid:w={c.window_days}"

    def manifest(self) -> dict:
        """Interpretation choices recorded alongside results."""
        return {
            "n_days": self.T,
            "seeding_days": self.S,
            "seed_value": self.seed_value,
            "first_modelled_date": str(self.first_date) if self.first_date is not None else None,
            "latent_count": self.m,
            "latent_span": "post-seeding days",
            "sigma_interpretation": "constant innovation scale",
            "gi_parameter": "Rayleigh rate kappa" if self.has_kappa else None,
            "gi_rate_prior": list(self.config.gi_rate_prior) if self.has_kappa else None,
            "fixed_gi_mean": self.config.gi_mean if not self.has_kappa else None,
            "dimension": self.dim,
        }
