"""Parameter spaces, un-normalised log-densities and the geometric path between them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from refti.errors import InvalidArgumentError, OutsideSupportError

NEG_INF = -math.inf


@dataclass(frozen=True)
class ParamSpace:
    """Named parameter layout with optional per-dimension lower bounds.

    ``lower_bounds[i] is None`` means dimension ``i`` is unbounded below.
    Only lower bounds are supported.
    """

    names: tuple
    lower_bounds: tuple = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) < 1:
            raise InvalidArgumentError("a parameter space needs at least one dimension")
        if len(set(names)) != len(names):
            raise InvalidArgumentError(f"parameter names must be unique: {names}")
        lb = self.lower_bounds
        if lb is None:
            lb = (None,) * len(names)
        lb = tuple(None if (b is None or not np.isfinite(b)) else float(b) for b in lb)
        if len(lb) != len(names):
            raise InvalidArgumentError("lower_bounds must have one entry per parameter")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower_bounds", lb)

    @classmethod
    def unbounded(cls, dim: int, prefix: str = "theta") -> "ParamSpace":
        return cls(tuple(f"{prefix}{i + 1}" for i in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def constrained_set(self) -> tuple:
        return tuple(i for i, b in enumerate(self.lower_bounds) if b is not None)

    @property
    def bound_index(self) -> np.ndarray:
        return np.array(self.constrained_set, dtype=int)

    @property
    def bound_values(self) -> np.ndarray:
        return np.array([self.lower_bounds[i] for i in self.constrained_set], dtype=float)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "lower_bounds": list(self.lower_bounds)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpace":
        return cls(tuple(d["names"]), tuple(d["lower_bounds"]))


def contains(space: ParamSpace, theta) -> bool:
    """True iff every constrained coordinate of ``theta`` is at or above its bound."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (space.dim,):
        raise InvalidArgumentError(
            f"expected a parameter vector of length {space.dim}, got shape {theta.shape}"
        )
    idx = space.constrained_set
    if not idx:
        return True
    return bool(np.all(theta[list(idx)] >= space.bound_values))


def _fd_gradient(f: Callable, theta: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2.0 * h)
    return g


class Density:
    """An evaluatable un-normalised log-density over a :class:`ParamSpace`.

    Parameters
    ----------
    space : ParamSpace
    log_q : callable
        Maps a parameter vector to ``log q(theta)``. It is only called on
        points inside ``space``; outside the support ``log_density`` returns
        ``-inf`` without calling it.
    gradient : callable, optional
        Gradient of ``log_q``. Central finite differences are used if absent.
    log_q_batch : callable, optional
        Vectorised form taking an ``(n, dim)`` array.
    initial, scale : array-like, optional
        Hints for starting MCMC chains: a typical point and per-dimension
        length scales.
    cov_hint : array, optional
        Approximate posterior covariance used as the initial proposal metric.
    name : str
    """

    def __init__(
        self,
        space: ParamSpace,
        log_q: Callable,
        gradient: Optional[Callable] = None,
        log_q_batch: Optional[Callable] = None,
        initial=None,
        scale=None,
        name: str = "density",
        cov_hint=None,
    ):
        self.space = space
        self._log_q = log_q
        self._gradient = gradient
        self._log_q_batch = log_q_batch
        self.initial = None if initial is None else np.asarray(initial, dtype=float)
        self.scale = None if scale is None else np.asarray(scale, dtype=float)
        self.name = name
        self.cov_hint = None if cov_hint is None else np.atleast_2d(np.asarray(cov_hint, dtype=float))
        self._bidx = space.bound_index
        self._bval = space.bound_values

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def has_gradient(self) -> bool:
        return self._gradient is not None

    def in_support(self, theta: np.ndarray) -> bool:
        if self._bidx.size == 0:
            return True
        return bool(np.all(theta[self._bidx] >= self._bval))

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return NEG_INF
        v = float(self._log_q(theta))
        return v if v == v else NEG_INF

    __call__ = log_density

    def log_density_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self._log_q_batch is not None:
            out = np.asarray(self._log_q_batch(thetas), dtype=float).copy()
            if self._bidx.size:
                bad = np.any(thetas[:, self._bidx] < self._bval, axis=1)
                out[bad] = NEG_INF
            out[np.isnan(out)] = NEG_INF
            return out
        return np.array([self.log_density(t) for t in thetas])

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(theta), dtype=float)
        return _fd_gradient(self._log_q, theta)

    def value_and_grad(self, theta):
        return self.log_density(theta), self.grad(theta)

    def shifted(self, c: float) -> "Density":
        """The density multiplied by ``exp(c)``."""
        f, fb = self._log_q, self._log_q_batch
        return Density(
            self.space,
            lambda t: f(t) + c,
            gradient=self._gradient,
            log_q_batch=None if fb is None else (lambda ts: fb(ts) + c),
            initial=self.initial,
            scale=self.scale,
            name=f"{self.name}+{c:g}",
            cov_hint=self.cov_hint,
        )

    def __repr__(self):
        return f"Density({self.name!r}, dim={self.dim})"


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (0.0 <= lam <= 1.0):
        raise InvalidArgumentError(f"coupling parameter must lie in [0, 1], got {lam}")
    return lam


@dataclass
class TemperedDensity:
    """Geometric path ``q^lam * q_ref^(1 - lam)`` between a reference and a target."""

    target: Density
    reference: Density
    lam: float = field(default=0.0)

    def __post_init__(self):
        self.lam = _check_lambda(self.lam)
        if self.target.space != self.reference.space:
            raise InvalidArgumentError(
                "target and reference must share the same ParamSpace "
                f"({self.target.space} vs {self.reference.space})"
            )

    @property
    def space(self) -> ParamSpace:
        return self.target.space

    @property
    def dim(self) -> int:
        return self.target.space.dim

    @property
    def has_gradient(self) -> bool:
        return True

    def log_density(self, theta) -> float:
        return log_tempered(self, theta)

    __call__ = log_density

    def log_density_batch(self, thetas) -> np.ndarray:
        lt = self.target.log_density_batch(thetas)
        lr = self.reference.log_density_batch(thetas)
        with np.errstate(invalid="ignore"):
            out = self.lam * lt + (1.0 - self.lam) * lr
        out[np.isneginf(lt) | np.isneginf(lr)] = NEG_INF
        return out

    # chain-start hints come from the reference end when it has them
    @property
    def initial(self):
        for end in (self.reference, self.target):
            v = getattr(end, "location", None)
            if v is None:
                v = getattr(end, "initial", None)
            if v is not None:
                return v
        return None

    @property
    def scale(self):
        for end in (self.reference, self.target):
            v = getattr(end, "scale", None) if not hasattr(end, "marginal_sd") else end.marginal_sd()
            if v is not None:
                return v
        return None

    @property
    def cov_hint(self):
        for end in (self.reference, self.target):
            if hasattr(end, "covariance"):
                return end.covariance()
            v = getattr(end, "cov_hint", None)
            if v is not None:
                return v
        return None

    def grad(self, theta) -> np.ndarray:
        lam = self.lam
        if lam == 1.0:
            return self.target.grad(theta)
        if lam == 0.0:
            return self.reference.grad(theta)
        return lam * self.target.grad(theta) + (1.0 - lam) * self.reference.grad(theta)


def log_tempered(path: TemperedDensity, theta) -> float:
    """``lam * log q(theta) + (1 - lam) * log q_ref(theta)``; ``-inf`` if either end is."""
    lam = _check_lambda(path.lam)
    lt = path.target.log_density(theta)
    lr = path.reference.log_density(theta)
    if lt == NEG_INF or lr == NEG_INF:
        return NEG_INF
    if lam == 1.0:
        return lt
    if lam == 0.0:
        return lr
    return lam * lt + (1.0 - lam) * lr


def log_ratio(target, reference, theta) -> float:
    """``log q(theta) - log q_ref(theta)``; both densities must be finite at ``theta``."""
    lt = target.log_density(theta)
    lr = reference.log_density(theta)
    if lt == NEG_INF or lr == NEG_INF:
        raise OutsideSupportError(f"log-ratio evaluated outside the common support at {theta}")
    return lt - lr


def log_ratio_batch(target, reference, thetas) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    lt = target.log_density_batch(thetas)
    lr = reference.log_density_batch(thetas)
    if np.any(np.isneginf(lt)) or np.any(np.isneginf(lr)):
        raise OutsideSupportError("log-ratio evaluated outside the common support")
    return lt - lr


def as_array(theta: Sequence[float]) -> np.ndarray:
    return np.asarray(theta, dtype=float)
