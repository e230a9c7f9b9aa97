"""Closed-form pedagogical targets."""

from __future__ import annotations

import numpy as np

from refti.density import Density, ParamSpace

CUSP_CENTRE = 4.0


def cusp_log_q(theta) -> float:
    d = float(theta[0]) - CUSP_CENTRE
    return -0.5 * np.sqrt(abs(d)) - 0.5 * d**4


def _cusp_batch(thetas):
    d = thetas[:, 0] - CUSP_CENTRE
    return -0.5 * np.sqrt(np.abs(d)) - 0.5 * d**4


def _cusp_grad(theta):
    d = float(theta[0]) - CUSP_CENTRE
    if d == 0.0:
        return np.zeros(1)  # subgradient at the cusp
    return np.array([-0.25 * np.sign(d) / np.sqrt(abs(d)) - 2.0 * d**3])


def cusp1d() -> Density:
    """``log q = -sqrt|x - 4| / 2 - (x - 4)^4 / 2``; finite everywhere, non-smooth at 4."""
    return Density(
        ParamSpace(("theta",)), cusp_log_q, gradient=_cusp_grad, log_q_batch=_cusp_batch,
        initial=[CUSP_CENTRE], scale=[0.65], name="cusp1d",
    )


def constrained2d_log_q(theta) -> float:
    t1, t2 = float(theta[0]), float(theta[1])
    a, b = t1 + 0.5, t2 + 0.5
    return -0.25 * (a * a + a**4 + b * b + b**4 + 0.5 * t1 * t2 * t2)


def _c2_batch(thetas):
    t1, t2 = thetas[:, 0], thetas[:, 1]
    a, b = t1 + 0.5, t2 + 0.5
    return -0.25 * (a * a + a**4 + b * b + b**4 + 0.5 * t1 * t2 * t2)


def _c2_grad(theta):
    t1, t2 = float(theta[0]), float(theta[1])
    a, b = t1 + 0.5, t2 + 0.5
    return np.array([
        -0.25 * (2 * a + 4 * a**3 + 0.5 * t2 * t2),
        -0.25 * (2 * b + 4 * b**3 + t1 * t2),
    ])


def constrained2d(bounded: bool = True) -> Density:
    """Quartic 2-D density with ``theta1 >= 0`` (``bounded=False`` drops the constraint)."""
    space = ParamSpace(("theta1", "theta2"), (0.0 if bounded else None, None))
    return Density(
        space, constrained2d_log_q, gradient=_c2_grad, log_q_batch=_c2_batch,
        initial=[0.4, -0.5], scale=[0.3, 0.73],
        name="constrained2d" if bounded else "constrained2d-unbounded",
    )


def gaussian(mean, cov, log_scale: float = 0.0, name: str = "gaussian", lower_bounds=None) -> Density:
    """Gaussian-shaped target ``exp(log_scale) * exp(-(x-m)' P (x-m) / 2)``.

    Without bounds its log normaliser is ``log_scale + log sqrt(det(2 pi cov))``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    prec = np.linalg.inv(cov)
    d = mean.size
    space = ParamSpace(tuple(f"x{i + 1}" for i in range(d)), lower_bounds)

    def lq(t):
        r = t - mean
        return log_scale - 0.5 * r @ prec @ r

    def lqb(ts):
        r = ts - mean
        return log_scale - 0.5 * np.einsum("ij,jk,ik->i", r, prec, r)

    return Density(space, lq, gradient=lambda t: -prec @ (t - mean), log_q_batch=lqb,
                   initial=mean, scale=np.sqrt(np.diag(cov)), name=name)


def gaussian_log_z(cov, log_scale: float = 0.0) -> float:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(2 * np.pi * cov)
    return float(log_scale + 0.5 * logdet)
