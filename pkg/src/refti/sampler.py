"""Multi-chain MCMC: adaptive random-walk Metropolis and Hamiltonian Monte Carlo.

Every chain owns a deterministic random stream derived from
``(seed, *stream, chain_index)`` so results do not depend on how many
workers execute the chains.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from refti.density import NEG_INF, TemperedDensity, _check_lambda
from refti.diagnostics import RHAT_GATE, batch_means_mcse, compute_diagnostics, split_rhat
from refti.errors import InitializationError, InvalidArgumentError

KERNELS = {
    "adaptive-random-walk": "adaptive-random-walk",
    "rwm": "adaptive-random-walk",
    "hamiltonian": "hamiltonian",
    "hmc": "hamiltonian",
}

INIT_JITTER = 0.1
INIT_RETRIES = 100
DENSE_METRIC_MAX_DIM = 250


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("REFTI_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class SamplerConfig:
    n_chains: int = 4
    n_iter: int = 2000
    n_warmup: Optional[int] = None
    seed: int = 0
    kernel: str = "adaptive-random-walk"
    hmc_leapfrog_steps: int = 16
    target_accept: Optional[float] = None
    workers: int = 1
    hmc_metric: str = "auto"

    def __post_init__(self):
        if self.n_warmup is None:
            self.n_warmup = self.n_iter
        if self.kernel not in KERNELS:
            raise InvalidArgumentError(f"unknown kernel {self.kernel!r}")
        self.kernel = KERNELS[self.kernel]
        for name in ("n_chains", "n_iter", "n_warmup", "hmc_leapfrog_steps", "workers"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer")
            setattr(self, name, int(getattr(self, name)))
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        if self.hmc_metric not in ("auto", "diag", "dense"):
            raise InvalidArgumentError("hmc_metric must be auto, diag or dense")
        if self.target_accept is not None and not (0.0 < self.target_accept < 1.0):
            raise InvalidArgumentError("target_accept must lie in (0, 1)")

    def accept_target(self, dim: int = 2) -> float:
        """Acceptance rate the warmup adapts towards.

        Random-walk default interpolates between the 1-D optimum 0.44 and
        the high-dimensional limit 0.234.
        """
        if self.target_accept is not None:
            return self.target_accept
        if self.kernel == "hamiltonian":
            return 0.8
        return 0.234 + 0.206 / dim

    def dense_metric(self, dim: int) -> bool:
        if self.hmc_metric == "auto":
            return dim <= DENSE_METRIC_MAX_DIM
        return self.hmc_metric == "dense"

    def replace(self, **kw) -> "SamplerConfig":
        d = asdict(self)
        d.update(kw)
        if "n_iter" in kw and "n_warmup" not in kw and self.n_warmup == self.n_iter:
            d["n_warmup"] = None
        return SamplerConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainSet:
    draws: np.ndarray  # (chains, iterations, dim)
    accept_rate: np.ndarray
    seed_used: int
    log_density: np.ndarray = field(default=None)  # (chains, iterations)
    step_size: np.ndarray = field(default=None)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iter(self) -> int:
        return self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])


def chain_rng(seed: int, stream: tuple, chain: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(s) for s in stream) + (chain,))
    return np.random.default_rng(ss)


def lambda_key(lam: float) -> int:
    """Stable integer key for a coupling-parameter value (used to derive sub-seeds)."""
    return int(round(float(lam) * 2**32))


def _initial_point(density, location, scale, rng) -> np.ndarray:
    d = density.dim
    loc = np.zeros(d) if location is None else np.asarray(location, dtype=float)
    sc = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
    for _ in range(INIT_RETRIES):
        x = loc + INIT_JITTER * sc * rng.standard_normal(d)
        if np.isfinite(density.log_density(x)):
            return x
    raise InitializationError(
        f"no finite log-density initial point found for {getattr(density, 'name', density)!r} "
        f"after {INIT_RETRIES} attempts"
    )


def _robust_cholesky(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor with jitter added in correlation units, so badly scaled dimensions survive."""
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    sd = np.sqrt(np.maximum(np.diag(cov), 1e-300))
    corr = cov / np.outer(sd, sd)
    jitter = 1e-10
    for _ in range(12):
        try:
            return sd[:, None] * np.linalg.cholesky(corr + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    return np.diag(sd)


def _rwm_chain(density, x0, n_warmup, n_iter, prop_cov, target, rng):
    """Adaptive random-walk Metropolis (covariance adapted during warmup only)."""
    d = x0.size
    scale0 = 2.38**2 / d
    L = _robust_cholesky(prop_cov * scale0)
    log_s = 0.0
    x = x0.copy()
    lp = density.log_density(x)
    total = n_warmup + n_iter
    out = np.empty((n_iter, d))
    out_lp = np.empty(n_iter)
    z_all = rng.standard_normal((total, d))
    logu_all = np.log(rng.random(total))
    mean = x.copy()
    m2 = np.zeros((d, d))
    n_seen = 0
    accepted = 0
    adapt_start = max(50, 2 * d)
    for it in range(total):
        step = math.exp(log_s) * (L @ z_all[it])
        y = x + step
        lpy = density.log_density(y)
        log_alpha = lpy - lp if lpy != NEG_INF else NEG_INF
        acc = logu_all[it] < log_alpha
        if acc:
            x, lp = y, lpy
        if it < n_warmup:
            alpha = 1.0 if log_alpha >= 0 else (0.0 if log_alpha == NEG_INF else math.exp(log_alpha))
            gamma = (it + 1) ** -0.6
            log_s += gamma * (alpha - target)
            n_seen += 1
            delta = x - mean
            mean += delta / n_seen
            m2 += np.outer(delta, x - mean)
            if n_seen >= adapt_start and (it + 1) % 50 == 0 and it + 1 < n_warmup:
                emp = m2 / (n_seen - 1)
                L = _robust_cholesky((emp + 1e-8 * np.diag(np.diag(emp))) * scale0)
        else:
            j = it - n_warmup
            out[j] = x
            out_lp[j] = lp
            accepted += int(acc)
    return out, out_lp, accepted / n_iter, math.exp(log_s)


class _DualAveraging:
    def __init__(self, eps0, target):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        t = self.t
        eta = 1.0 / (t + 10.0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(t) / 0.05 * self.h_bar
        w = t**-0.75
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _hmc_windows(n_warmup):
    """Stan-style metric adaptation windows: returns list of window end iterations."""
    if n_warmup < 20:
        return []
    init_buf = max(int(0.15 * n_warmup), 1)
    term_buf = max(int(0.1 * n_warmup), 1)
    ends = []
    start = init_buf
    size = 25
    last = n_warmup - term_buf
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start = end
        size *= 2
    return [(init_buf if i == 0 else ends[i - 1], e) for i, e in enumerate(ends)]


class _Metric:
    """Inverse mass matrix: a diagonal vector or a dense covariance."""

    def __init__(self, cov, dense: bool):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.dense = dense
        if dense:
            self.cov = 0.5 * (cov + cov.T)
            self.chol = _robust_cholesky(self.cov)
        else:
            self.diag = np.maximum(np.diag(cov).copy(), 1e-300)
            self.sd = np.sqrt(self.diag)

    def momentum(self, rng, d):
        z = rng.standard_normal(d)
        if self.dense:
            return solve_triangular(self.chol, z, lower=True, trans="T")
        return z / self.sd

    def velocity(self, p):
        return self.cov @ p if self.dense else self.diag * p

    def kinetic(self, p):
        return 0.5 * float(p @ self.velocity(p))

    @classmethod
    def from_draws(cls, arr, dense, prior_cov):
        """Window estimate shrunk towards the initial metric with weight ``dim`` draws."""
        n, d = arr.shape
        w = n / (n + max(5.0, float(d)))
        if dense:
            cov = np.atleast_2d(np.cov(arr, rowvar=False, ddof=1))
            return cls(w * cov + (1 - w) * prior_cov, True)
        var = arr.var(axis=0, ddof=1)
        return cls(np.diag(w * var + (1 - w) * np.diag(prior_cov)), False)


def _hmc_chain(density, x0, n_warmup, n_iter, metric_cov, n_leap, target, rng, dense):
    d = x0.size
    metric_cov = np.atleast_2d(np.asarray(metric_cov, dtype=float))
    metric = _Metric(metric_cov, dense)
    x = x0.copy()
    lp, g = density.log_density(x), density.grad(x)

    def find_eps(x, lp, g, metric):
        eps = 0.1
        for _ in range(50):
            p = metric.momentum(rng, d)
            pn = p + 0.5 * eps * g
            xn = x + eps * metric.velocity(pn)
            lpn = density.log_density(xn)
            if np.isfinite(lpn):
                gn = density.grad(xn)
                pn = pn + 0.5 * eps * gn
                if (lpn - metric.kinetic(pn)) - (lp - metric.kinetic(p)) > math.log(0.5):
                    return eps
            eps *= 0.5
        return eps

    eps = find_eps(x, lp, g, metric)
    da = _DualAveraging(eps, target)
    windows = _hmc_windows(n_warmup)
    win_idx = 0
    win_draws = []
    total = n_warmup + n_iter
    out = np.empty((n_iter, d))
    out_lp = np.empty(n_iter)
    accepted = 0
    for it in range(total):
        warm = it < n_warmup
        p0 = metric.momentum(rng, d)
        jit = eps * (0.9 + 0.2 * rng.random())
        logu = math.log(rng.random())
        xn, pn, gn = x.copy(), p0 + 0.5 * jit * g, g
        lpn = lp
        ok = True
        for k in range(n_leap):
            xn = xn + jit * metric.velocity(pn)
            lpn = density.log_density(xn)
            if not np.isfinite(lpn):
                ok = False
                break
            gn = density.grad(xn)
            if not np.all(np.isfinite(gn)):
                ok = False
                break
            pn = pn + (jit if k < n_leap - 1 else 0.5 * jit) * gn
        if ok:
            log_a = (lpn - metric.kinetic(pn)) - (lp - metric.kinetic(p0))
            if not np.isfinite(log_a):
                log_a = NEG_INF
        else:
            log_a = NEG_INF
        acc_prob = 1.0 if log_a >= 0 else (0.0 if log_a == NEG_INF else math.exp(log_a))
        acc = logu < log_a
        if acc:
            x, lp, g = xn, lpn, gn
        if warm:
            eps = da.update(acc_prob)
            if win_idx < len(windows):
                w0, w1 = windows[win_idx]
                if w0 <= it < w1:
                    win_draws.append(x.copy())
                if it + 1 == w1:
                    arr = np.array(win_draws)
                    if len(arr) > 2:
                        metric = _Metric.from_draws(arr, dense, metric_cov)
                    win_draws = []
                    win_idx += 1
                    eps = find_eps(x, lp, g, metric)
                    da = _DualAveraging(eps, target)
            if it + 1 == n_warmup:
                eps = da.final
        else:
            j = it - n_warmup
            out[j] = x
            out_lp[j] = lp
            accepted += int(acc)
    return out, out_lp, accepted / n_iter, eps


def sample(
    density,
    config: SamplerConfig,
    init=None,
    init_scale=None,
    proposal_cov=None,
    stream: tuple = (),
) -> ChainSet:
    """Draw ``config.n_chains x config.n_iter`` post-warmup samples from ``density``.

    Parameters
    ----------
    density : Density or TemperedDensity
    config : SamplerConfig
    init : array-like, optional
        Location around which chains start (default: ``density.initial``).
    init_scale : array-like, optional
        Per-dimension scale for the start jitter and the initial proposal
        (default: ``density.scale`` or ones).
    proposal_cov : array, optional
        Initial proposal covariance; overrides ``init_scale`` for the proposal.
    stream : tuple of int
        Extra key mixed into the per-chain random streams.
    """
    d = density.dim
    if init is None:
        init = getattr(density, "initial", None)
    if init_scale is None:
        init_scale = getattr(density, "scale", None)
    sc = np.ones(d) if init_scale is None else np.asarray(init_scale, dtype=float)
    if proposal_cov is None:
        hint = getattr(density, "cov_hint", None)
        proposal_cov = np.diag(sc**2) if hint is None else hint
    proposal_cov = np.atleast_2d(np.asarray(proposal_cov, dtype=float))
    target = config.accept_target(density.dim)

    def run(c):
        rng = chain_rng(config.seed, stream, c)
        x0 = _initial_point(density, init, sc, rng)
        if config.kernel == "hamiltonian":
            return _hmc_chain(
                density, x0, config.n_warmup, config.n_iter, proposal_cov,
                config.hmc_leapfrog_steps, target, rng, config.dense_metric(d),
            )
        return _rwm_chain(density, x0, config.n_warmup, config.n_iter, proposal_cov, target, rng)

    workers = max(1, int(config.workers))
    if workers > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, range(config.n_chains)))
    else:
        results = [run(c) for c in range(config.n_chains)]
    return ChainSet(
        draws=np.stack([r[0] for r in results]),
        accept_rate=np.array([r[2] for r in results]),
        seed_used=config.seed,
        log_density=np.stack([r[1] for r in results]),
        step_size=np.array([r[3] for r in results]),
    )


def compute_rhat(chains: ChainSet):
    """Split R-hat and ESS per dimension of a :class:`ChainSet`."""
    draws = chains.draws if isinstance(chains, ChainSet) else np.asarray(chains)
    return compute_diagnostics(draws)


@dataclass
class ExpectationEstimate:
    """MCMC estimate of the TI integrand at one coupling-parameter value."""

    lam: float
    mean: float
    variance: float
    mcse: float
    n_draws: int
    converged: bool
    rhat: np.ndarray = field(default=None, repr=False)
    trace: np.ndarray = field(default=None, repr=False)  # chain-averaged integrand per iteration

    def to_dict(self, with_trace: bool = False) -> dict:
        d = {
            "lambda": self.lam,
            "mean": self.mean,
            "variance": self.variance,
            "mcse": self.mcse,
            "n_draws": self.n_draws,
            "converged": self.converged,
            "max_rhat": None if self.rhat is None else float(np.max(self.rhat)),
        }
        if with_trace and self.trace is not None:
            d["trace"] = [float(v) for v in self.trace]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExpectationEstimate":
        return cls(
            lam=d["lambda"], mean=d["mean"], variance=d["variance"], mcse=d["mcse"],
            n_draws=d["n_draws"], converged=d["converged"],
            rhat=None if d.get("max_rhat") is None else np.array([d["max_rhat"]]),
            trace=None if d.get("trace") is None else np.asarray(d["trace"], dtype=float),
        )


def summarize_log_ratio(values: np.ndarray, lam: float, rhat: np.ndarray) -> ExpectationEstimate:
    """Reduce a ``(chains, iterations)`` array of integrand values to an estimate."""
    values = np.asarray(values, dtype=float)
    flat = values.ravel()
    var = float(np.var(flat, ddof=1)) if flat.size > 1 else 0.0
    if np.all(flat == flat[0]):
        mcse, var = 0.0, 0.0
    else:
        mcse = batch_means_mcse(values)
    return ExpectationEstimate(
        lam=float(lam),
        mean=float(np.mean(flat)),
        variance=var,
        mcse=mcse,
        n_draws=int(flat.size),
        converged=bool(np.all(rhat <= RHAT_GATE)),
        rhat=rhat,
        trace=values.mean(axis=0),
    )


def _reference_hints(reference):
    loc = getattr(reference, "location", None)
    if loc is None:
        loc = getattr(reference, "initial", None)
    cov = reference.covariance() if hasattr(reference, "covariance") else getattr(reference, "cov_hint", None)
    return loc, cov


def expectation_of_log_ratio(
    target,
    reference,
    lam: float,
    config: SamplerConfig,
    stream: tuple = (),
    init=None,
    init_scale=None,
) -> ExpectationEstimate:
    """Sample ``q^lam q_ref^(1-lam)`` and average ``log q - log q_ref`` over the draws."""
    lam = _check_lambda(lam)
    path = TemperedDensity(target, reference, lam)
    loc, cov = _reference_hints(reference)
    if init is None:
        init = loc if loc is not None else target.initial
    if init_scale is None:
        if cov is not None:
            init_scale = np.sqrt(np.diag(cov))
        else:
            init_scale = getattr(reference, "scale", None)
            if init_scale is None:
                init_scale = target.scale
    chains = sample(
        path, config, init=init, init_scale=init_scale,
        proposal_cov=cov, stream=tuple(stream) + (lambda_key(lam),),
    )
    flat = chains.pooled()
    vals = target.log_density_batch(flat) - reference.log_density_batch(flat)
    vals = vals.reshape(chains.n_chains, chains.n_iter)
    rhat, _ = split_rhat(chains.draws) if chains.n_chains >= 2 and chains.n_iter >= 4 else (
        np.ones(target.dim), None)
    return summarize_log_ratio(vals, lam, rhat)
