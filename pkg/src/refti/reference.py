"""Gaussian reference densities with analytic normalising constants.

Four constructions are provided:

* :func:`reference_from_mode` -- second-order expansion of ``log q`` at a mode;
* :func:`reference_from_samples` -- mean and covariance of posterior draws;
* :func:`reference_diagonal_orthant` -- diagonal covariance with the
  normaliser restricted to the lower-bounded orthant;
* :func:`reference_variational` -- Gaussian maximising the lower bound
  ``log z_ref + E_ref[log q - log q_ref]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, special

from refti.density import NEG_INF, Density, ParamSpace
from refti.errors import (
    DegenerateCovarianceError,
    InvalidArgumentError,
    InvalidReferenceError,
    NonConcaveModeError,
    OptimizationError,
    VariationalError,
)
from refti.sampler import ChainSet, SamplerConfig, compute_rhat, sample

LOG_2PI = math.log(2.0 * math.pi)
SCALE_FORMS = ("hessian", "covariance", "diagonal", "precision")


def log_orthant_mass(z) -> np.ndarray:
    """log of the standard normal mass above ``-z``, i.e. log(1/2 (1 + erf(z / sqrt 2)))."""
    return special.log_ndtr(np.asarray(z, dtype=float))


@dataclass
class GaussianReference:
    """Gaussian reference density ``q_ref`` with an analytic ``log z_ref``.

    ``scale`` is interpreted according to ``scale_form``:

    ``hessian``
        matrix ``H`` of second derivatives of ``log q`` (negative definite);
    ``covariance``
        covariance matrix;
    ``diagonal``
        vector of marginal variances;
    ``precision``
        precision matrix ``S``.

    The density is ``exp(log_peak - 1/2 (x - loc)^T P (x - loc))`` on the
    support of ``space`` and zero outside it.
    """

    location: np.ndarray
    scale_form: str
    scale: np.ndarray
    log_peak: float
    space: ParamSpace
    orthant_corrected: bool = False
    name: str = "reference"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float).copy()
        self.scale = np.asarray(self.scale, dtype=float).copy()
        d = self.space.dim
        if self.scale_form not in SCALE_FORMS:
            raise InvalidReferenceError(f"unknown scale form {self.scale_form!r}")
        if self.location.shape != (d,):
            raise InvalidReferenceError("location does not match the parameter space")
        if self.orthant_corrected and self.scale_form != "diagonal":
            raise InvalidReferenceError("orthant correction requires a diagonal scale")
        if not np.isfinite(self.log_peak):
            raise InvalidReferenceError("log_peak must be finite")
        if self.scale_form == "diagonal":
            if self.scale.shape != (d,) or np.any(self.scale <= 0) or not np.all(np.isfinite(self.scale)):
                raise InvalidReferenceError("diagonal variances must be positive and finite")
            self._prec = np.diag(1.0 / self.scale)
            self._cov = np.diag(self.scale)
        else:
            m = self.scale
            if m.shape != (d, d) or not np.allclose(m, m.T, rtol=1e-8, atol=1e-12 * np.max(np.abs(m))):
                raise InvalidReferenceError("scale matrix must be square and symmetric")
            m = 0.5 * (m + m.T)
            spd = -m if self.scale_form == "hessian" else m
            try:
                chol = np.linalg.cholesky(spd)
            except np.linalg.LinAlgError as exc:
                kind = "negative" if self.scale_form == "hessian" else "positive"
                raise InvalidReferenceError(f"{self.scale_form} must be symmetric {kind} definite") from exc
            inv = np.linalg.inv(spd)
            inv = 0.5 * (inv + inv.T)
            if self.scale_form == "covariance":
                self._cov, self._prec = spd, inv
            else:
                self._prec, self._cov = spd, inv
            self._logdet_prec = -2.0 * float(np.sum(np.log(np.diag(chol)))) if self.scale_form == "covariance" \
                else 2.0 * float(np.sum(np.log(np.diag(chol))))
        if self.scale_form == "diagonal":
            self._logdet_prec = -float(np.sum(np.log(self.scale)))
        if self.orthant_corrected and not _inside(self.space, self.location):
            raise InvalidReferenceError("reference location lies outside the support")
        self._bidx = self.space.bound_index
        self._bval = self.space.bound_values

    # -- density interface -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def initial(self):
        return self.location

    @property
    def has_gradient(self) -> bool:
        return True

    def covariance(self) -> np.ndarray:
        return self._cov.copy()

    def precision(self) -> np.ndarray:
        return self._prec.copy()

    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self._cov))

    def log_density(self, theta) -> float:
        x = np.asarray(theta, dtype=float)
        if self._bidx.size and np.any(x[self._bidx] < self._bval):
            return NEG_INF
        r = x - self.location
        return float(self.log_peak - 0.5 * r @ self._prec @ r)

    __call__ = log_density

    def log_density_batch(self, thetas) -> np.ndarray:
        x = np.atleast_2d(np.asarray(thetas, dtype=float))
        r = x - self.location
        out = self.log_peak - 0.5 * np.einsum("ij,jk,ik->i", r, self._prec, r)
        if self._bidx.size:
            out[np.any(x[:, self._bidx] < self._bval, axis=1)] = NEG_INF
        return out

    def grad(self, theta) -> np.ndarray:
        x = np.asarray(theta, dtype=float)
        return -self._prec @ (x - self.location)

    def as_density(self) -> Density:
        return Density(
            self.space, self.log_density, gradient=self.grad,
            log_q_batch=self.log_density_batch, initial=self.location,
            scale=self.marginal_sd(), name=self.name,
        )

    def log_zref(self) -> float:
        return log_zref(self)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "location": [float(v) for v in self.location],
            "scale_form": self.scale_form,
            "scale": self.scale.tolist(),
            "log_peak": float(self.log_peak),
            "orthant_corrected": bool(self.orthant_corrected),
            "space": self.space.to_dict(),
            "log_zref": float(self.log_zref()),
            "info": dict(self.info or {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianReference":
        return cls(
            location=np.asarray(d["location"], dtype=float),
            scale_form=d["scale_form"],
            scale=np.asarray(d["scale"], dtype=float),
            log_peak=d["log_peak"],
            space=ParamSpace.from_dict(d["space"]),
            orthant_corrected=d["orthant_corrected"],
            name=d.get("name", "reference"),
            info=dict(d.get("info") or {}),
        )


def _inside(space: ParamSpace, x: np.ndarray) -> bool:
    idx = space.bound_index
    return not idx.size or bool(np.all(x[idx] >= space.bound_values))


def log_zref(ref: GaussianReference) -> float:
    """Closed-form log normalising constant of a Gaussian reference.

    ``log_peak + 1/2 log det(2 pi Sigma)`` plus, when orthant corrected,
    ``sum_i log Phi((loc_i - a_i) / sd_i)`` over the lower-bounded dimensions.
    """
    d = ref.space.dim
    val = ref.log_peak + 0.5 * (d * LOG_2PI - ref._logdet_prec)
    if ref.orthant_corrected and ref.space.constrained_set:
        idx = ref.space.bound_index
        sd = np.sqrt(ref.scale[idx])
        val += float(np.sum(log_orthant_mass((ref.location[idx] - ref.space.bound_values) / sd)))
    return float(val)


# ---------------------------------------------------------------------------
# mode / Hessian construction


def _fd_steps(target, x: np.ndarray, rel: float) -> np.ndarray:
    sc = getattr(target, "scale", None)
    if sc is not None:
        return rel * np.asarray(sc, dtype=float)
    return rel * np.maximum(np.abs(x), 1.0)


def fd_hessian(target, x, rel: float = 1e-4) -> np.ndarray:
    """Finite-difference Hessian of ``log q`` built from differences of the gradient.

    Steps that would leave the support use one-sided second-order stencils.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    h = _fd_steps(target, x, rel)
    g0 = None
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h[j]
        lo_ok = np.isfinite(target.log_density(x - e))
        hi_ok = np.isfinite(target.log_density(x + e))
        if lo_ok and hi_ok:
            H[:, j] = (target.grad(x + e) - target.grad(x - e)) / (2 * h[j])
        elif hi_ok:
            if g0 is None:
                g0 = target.grad(x)
            H[:, j] = (-3 * g0 + 4 * target.grad(x + e) - target.grad(x + 2 * e)) / (2 * h[j])
        else:
            if g0 is None:
                g0 = target.grad(x)
            H[:, j] = (3 * g0 - 4 * target.grad(x - e) + target.grad(x - 2 * e)) / (2 * h[j])
    return 0.5 * (H + H.T)


def _projected_grad_norm(space: ParamSpace, x, g) -> float:
    g = np.array(g, dtype=float)
    for i in space.constrained_set:
        if x[i] <= space.lower_bounds[i] and g[i] < 0:
            g[i] = 0.0
    return float(np.max(np.abs(g))) if g.size else 0.0


def find_mode(target, start, max_iter: int = 500, n_starts: int = 5, grad_tol: float = 1e-6, seed: int = 0):
    """Quasi-Newton ascent on ``log q``; returns ``(mode, converged)``.

    Works in units of the target's scale hint; the gradient-norm test is in
    those units too. Restarts from jittered points when the first attempt fails.
    """
    space = target.space
    start = np.asarray(start, dtype=float)
    bounds = [(b, None) for b in space.lower_bounds] if space.constrained_set else None
    sc = getattr(target, "scale", None)
    scale = np.ones(space.dim) if sc is None else np.asarray(sc, dtype=float)
    # optimise in units of the hint scale for conditioning
    def to_x(u):
        return start + u * scale

    def f(u):
        v = target.log_density(to_x(u))
        return 1e300 if not np.isfinite(v) else -v

    def jac(u):
        return -target.grad(to_x(u)) * scale

    ubounds = None
    if bounds is not None:
        ubounds = [((b - s0) / sc_ if b is not None else None, None) for (b, _), s0, sc_ in zip(bounds, start, scale)]
    rng = np.random.default_rng(seed)
    best = None
    u0 = np.zeros(space.dim)
    for attempt in range(n_starts + 1):
        if attempt > 0:
            u0 = rng.standard_normal(space.dim) * 0.5
            if ubounds is not None:
                for i, (lo, _) in enumerate(ubounds):
                    if lo is not None and u0[i] < lo:
                        u0[i] = lo + abs(u0[i] - lo)
        method = "L-BFGS-B" if ubounds is not None else "BFGS"
        opts = {"maxiter": max_iter}
        if method == "BFGS":
            opts["gtol"] = grad_tol * 1e-2
        else:
            opts.update(gtol=grad_tol * 1e-2, ftol=1e-15)
        res = optimize.minimize(f, u0, jac=jac, method=method, bounds=ubounds, options=opts)
        x = to_x(res.x)
        gnorm = _projected_grad_norm(space, x, target.grad(x) * scale)
        if best is None or -res.fun > best[1]:
            best = (x, -res.fun, gnorm)
        if gnorm < grad_tol:
            return x, True
    return best[0], False


def reference_from_mode(target, start=None, max_iter: int = 500, n_starts: int = 5,
                        grad_tol: float = 1e-6, seed: int = 0) -> GaussianReference:
    """Laplace-type reference from the Hessian at a numerically located mode."""
    if start is None:
        start = target.initial if target.initial is not None else np.zeros(target.dim)
    mode, ok = find_mode(target, start, max_iter=max_iter, n_starts=n_starts, grad_tol=grad_tol, seed=seed)
    H1 = fd_hessian(target, mode, rel=1e-4)
    H2 = fd_hessian(target, mode, rel=2.5e-5)
    scale = max(float(np.max(np.abs(H1))), 1e-300)
    smooth = np.all(np.isfinite(H1)) and np.all(np.isfinite(H2)) and \
        float(np.max(np.abs(H1 - H2))) <= 1e-2 * scale
    if not smooth:
        raise NonConcaveModeError(
            f"Hessian of log q is not defined at the located mode {mode} (non-smooth point)"
        )
    try:
        np.linalg.cholesky(-H1)
    except np.linalg.LinAlgError as exc:
        raise NonConcaveModeError(f"-H is not positive definite at {mode}") from exc
    if not ok:
        raise OptimizationError(f"mode search did not reach gradient norm {grad_tol} within {max_iter} iterations")
    return GaussianReference(
        location=mode, scale_form="hessian", scale=H1,
        log_peak=target.log_density(mode), space=target.space, name="mode",
    )


# ---------------------------------------------------------------------------
# sampled constructions

def _draws_for(target, config: Optional[SamplerConfig], chains: Optional[ChainSet]):
    if chains is None:
        if config is None:
            raise InvalidArgumentError("either a sampler config or precomputed chains is required")
        chains = sample(target, config, stream=(0x5EF,))
    return chains


def _sample_info(chains: ChainSet) -> dict:
    info = {"n_draws": int(chains.pooled().shape[0])}
    if chains.n_chains >= 2 and chains.n_iter >= 4:
        info["max_rhat"] = float(compute_rhat(chains).max_rhat)
    return info


def reference_from_samples(target, config: Optional[SamplerConfig] = None,
                           chains: Optional[ChainSet] = None) -> GaussianReference:
    """Reference at the sample mean with the unbiased sample covariance of posterior draws."""
    chains = _draws_for(target, config, chains)
    x = chains.pooled()
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-8 * float(np.mean(np.diag(cov))) * np.eye(cov.shape[0])
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DegenerateCovarianceError("sample covariance is not positive definite") from exc
    log_peak = target.log_density(mean)
    if not np.isfinite(log_peak):
        raise InvalidReferenceError("log q is not finite at the sample mean")
    return GaussianReference(
        location=mean, scale_form="covariance", scale=cov, log_peak=log_peak,
        space=target.space, name="sampled", info=_sample_info(chains),
    )


def reference_diagonal_orthant(target, config: Optional[SamplerConfig] = None,
                               chains: Optional[ChainSet] = None) -> GaussianReference:
    """Diagonal reference whose normaliser is restricted to the lower-bounded orthant."""
    chains = _draws_for(target, config, chains)
    x = chains.pooled()
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    if np.any(var <= 0):
        var = var + 1e-8 * max(float(np.mean(var)), 1e-300)
        if np.any(var <= 0):
            raise DegenerateCovarianceError("zero marginal variance in the draws")
    if not _inside(target.space, mean):
        raise InvalidReferenceError("sample mean lies outside the support")
    log_peak = target.log_density(mean)
    if not np.isfinite(log_peak):
        raise InvalidReferenceError("log q is not finite at the sample mean")
    return GaussianReference(
        location=mean, scale_form="diagonal", scale=var, log_peak=log_peak,
        space=target.space, orthant_corrected=True, name="diagonal-orthant",
        info=_sample_info(chains),
    )


# ---------------------------------------------------------------------------
# variational construction


class _VariationalFamily:
    """Maps an unconstrained parameter vector to (location, covariance factor).

    Unbounded spaces use a full lower-triangular factor; spaces with lower
    bounds use a diagonal Gaussian truncated to the support.
    """

    def __init__(self, space: ParamSpace):
        self.space = space
        self.d = space.dim
        self.truncated = bool(space.constrained_set)
        self.bidx = space.bound_index
        self.bval = space.bound_values
        self.tril = np.tril_indices(self.d, -1)

    def pack(self, loc, cov) -> np.ndarray:
        loc = np.array(loc, dtype=float)
        if self.truncated:
            u = loc.copy()
            u[self.bidx] = np.log(np.maximum(loc[self.bidx] - self.bval, 1e-12))
            return np.concatenate([u, 0.5 * np.log(np.diag(cov))])
        L = np.linalg.cholesky(cov)
        return np.concatenate([loc, np.log(np.diag(L)), L[self.tril]])

    def unpack(self, p):
        d = self.d
        loc = p[:d].copy()
        if self.truncated:
            loc[self.bidx] = self.bval + np.exp(p[:d][self.bidx])
            sd = np.exp(p[d:2 * d])
            return loc, sd
        L = np.diag(np.exp(p[d:2 * d]))
        L[self.tril] = p[2 * d:]
        return loc, L

    def draw(self, p, eps, unif):
        """Reparameterised draws and the log reference density (unnormalised, peak 0)."""
        loc, fac = self.unpack(p)
        if self.truncated:
            sd = fac
            z = eps.copy()
            if self.bidx.size:
                alpha = (self.bval - loc[self.bidx]) / sd[self.bidx]
                lo = special.ndtr(alpha)
                w = lo + unif[:, self.bidx] * (1.0 - lo)
                w = np.clip(w, 1e-300, 1.0 - 1e-16)
                z[:, self.bidx] = np.maximum(special.ndtri(w), alpha)
            theta = loc + z * sd
            return theta, -0.5 * np.sum(z * z, axis=1)
        theta = loc + eps @ fac.T
        return theta, -0.5 * np.sum(eps * eps, axis=1)

    def log_norm_unit(self, p) -> float:
        """log normaliser of the unit-peak reference (truncated to the support)."""
        loc, fac = self.unpack(p)
        d = self.d
        if self.truncated:
            sd = fac
            val = 0.5 * d * LOG_2PI + float(np.sum(np.log(sd)))
            if self.bidx.size:
                val += float(np.sum(log_orthant_mass((loc[self.bidx] - self.bval) / sd[self.bidx])))
            return val
        return 0.5 * d * LOG_2PI + float(np.sum(np.log(np.diag(fac))))

    def to_reference(self, p, target) -> GaussianReference:
        loc, fac = self.unpack(p)
        log_peak = target.log_density(loc)
        if self.truncated:
            return GaussianReference(
                location=loc, scale_form="diagonal", scale=fac**2, log_peak=log_peak,
                space=self.space, orthant_corrected=True, name="variational",
            )
        cov = fac @ fac.T
        prec = np.linalg.inv(cov)
        return GaussianReference(
            location=loc, scale_form="precision", scale=0.5 * (prec + prec.T),
            log_peak=log_peak, space=self.space, name="variational",
        )


def _log_q_rows(target, theta) -> np.ndarray:
    if hasattr(target, "log_density_batch"):
        return target.log_density_batch(theta)
    return np.array([target.log_density(t) for t in theta])


def variational_objective_terms(target, fam: _VariationalFamily, p, eps, unif) -> np.ndarray:
    """Per-draw terms whose mean is ``log z_ref + E_ref[log q - log q_ref]``."""
    theta, log_ref_unit = fam.draw(p, eps, unif)
    lq = _log_q_rows(target, theta)
    return fam.log_norm_unit(p) + lq - log_ref_unit


def reference_variational(
    target,
    init: GaussianReference,
    config: Optional[SamplerConfig] = None,
    n_steps: int = 2000,
    n_mc: int = 64,
    learning_rate: float = 0.02,
    n_eval: int = 4096,
    seed: Optional[int] = None,
) -> GaussianReference:
    """Stochastic ascent on the variational lower bound starting from ``init``.

    Gradients are central differences of the Monte-Carlo objective under
    common random numbers; the step is Adam. The iterate with the best
    exponentially smoothed objective is re-scored on ``n_eval`` fresh draws
    and kept only if it does not score below ``init`` on those draws.
    The returned reference carries ``info['objective']`` and
    ``info['objective_mcse']``.
    """
    if seed is None:
        seed = 0 if config is None else config.seed
    fam = _VariationalFamily(target.space)
    d = fam.d
    p = fam.pack(init.location, init.covariance())
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x7A,)))

    def draws(n):
        return rng.standard_normal((n, d)), rng.random((n, d))

    # shrink the initial scale until the objective is finite
    eps, unif = draws(n_mc)
    for _ in range(10):
        if np.isfinite(np.mean(variational_objective_terms(target, fam, p, eps, unif))):
            break
        p[d:2 * d] += math.log(0.5)
    else:
        raise VariationalError("variational objective is not finite (reference mass outside the support)")

    m = np.zeros_like(p)
    v = np.zeros_like(p)
    b1, b2 = 0.9, 0.999
    h = 1e-4
    smooth = None
    best_p, best_s = p.copy(), -np.inf
    for t in range(1, n_steps + 1):
        eps, unif = draws(n_mc)
        f0 = float(np.mean(variational_objective_terms(target, fam, p, eps, unif)))
        if np.isfinite(f0):
            smooth = f0 if smooth is None else 0.95 * smooth + 0.05 * f0
            if smooth > best_s and t > 20:
                best_s, best_p = smooth, p.copy()
        g = np.zeros_like(p)
        for k in range(p.size):
            pu, pd = p.copy(), p.copy()
            pu[k] += h
            pd[k] -= h
            fu = np.mean(variational_objective_terms(target, fam, pu, eps, unif))
            fd = np.mean(variational_objective_terms(target, fam, pd, eps, unif))
            gk = (fu - fd) / (2 * h)
            g[k] = gk if np.isfinite(gk) else 0.0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = learning_rate * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + 1e-8)
        p = p + step

    eps, unif = draws(n_eval)
    p_init = fam.pack(init.location, init.covariance())
    final_terms = variational_objective_terms(target, fam, best_p, eps, unif)
    init_terms = variational_objective_terms(target, fam, p_init, eps, unif)
    if not np.isfinite(np.mean(final_terms)):
        raise VariationalError("optimised reference has a non-finite objective")
    if np.isfinite(np.mean(init_terms)) and np.mean(init_terms) > np.mean(final_terms):
        best_p, final_terms = p_init, init_terms
    ref = fam.to_reference(best_p, target)
    ref.info.update(
        objective=float(np.mean(final_terms)),
        objective_mcse=float(np.std(final_terms, ddof=1) / math.sqrt(final_terms.size)),
        initial_objective=float(np.mean(init_terms)) if np.isfinite(np.mean(init_terms)) else None,
        n_steps=n_steps,
        n_mc=n_mc,
    )
    return ref


def variational_objective(target, ref: GaussianReference, n: int = 4096, seed: int = 0):
    """Monte-Carlo estimate ``(value, mcse)`` of ``log z_ref + E_ref[log q - log q_ref]``."""
    fam = _VariationalFamily(target.space)
    p = fam.pack(ref.location, ref.covariance())
    rng = np.random.default_rng(seed)
    terms = variational_objective_terms(target, fam, p, rng.standard_normal((n, fam.d)), rng.random((n, fam.d)))
    return float(np.mean(terms)), float(np.std(terms, ddof=1) / math.sqrt(n))
