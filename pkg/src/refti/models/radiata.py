"""Radiata pine compression-strength regressions with conjugate normal-gamma priors.

M1: ``y_i = alpha + beta (x_i - mean x) + e_i``; M2 uses adjusted density ``z``.
Both have ``e_i ~ N(0, 1/tau)`` and parameters ``(alpha, beta, tau)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from refti.density import Density, ParamSpace
from refti.errors import DataError, InvalidArgumentError

VARIANTS = {"M1": "x", "M2": "z"}
SPACE = ParamSpace(("alpha", "beta", "tau"), (None, None, 0.0))


def _data_file(name: str):
    return resources.files("refti.models").joinpath("data").joinpath(name)


def load_radiata_data(path: Optional[str] = None) -> dict:
    """Columns ``y``, ``x``, ``z`` as float arrays."""
    src = path or _data_file("radiata.csv")
    try:
        with open(src, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read radiata data: {exc}") from exc
    missing = {"y", "x", "z"} - set(rows[0].keys() if rows else [])
    if missing:
        raise DataError(f"radiata data is missing columns {sorted(missing)}")
    return {k: np.array([float(r[k]) for r in rows]) for k in ("y", "x", "z")}


def load_radiata_priors(path: Optional[str] = None) -> dict:
    src = path or _data_file("radiata_priors.json")
    try:
        with open(src) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read radiata hyperparameters: {exc}") from exc


@dataclass
class RadiataModel:
    variant: str
    y: np.ndarray
    predictor: np.ndarray  # centred
    prior_mean: np.ndarray
    prior_prec_scale: np.ndarray  # diagonal of Q0
    shape: float
    rate: float
    prior_family: str = "normal-gamma"

    @classmethod
    def load(cls, variant: str, data: Optional[dict] = None, priors: Optional[dict] = None) -> "RadiataModel":
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown radiata variant {variant!r}; expected M1 or M2")
        data = load_radiata_data() if data is None else data
        priors = load_radiata_priors() if priors is None else priors
        p = np.asarray(data[VARIANTS[variant]], dtype=float)
        return cls(
            variant=variant,
            y=np.asarray(data["y"], dtype=float),
            predictor=p - p.mean() if p.size else p,
            prior_mean=np.asarray(priors["mean"], dtype=float),
            prior_prec_scale=np.asarray(priors["prior_precision_scale"], dtype=float),
            shape=float(priors["gamma_shape"]),
            rate=float(priors["gamma_rate"]),
            prior_family=priors.get("family", "normal-gamma"),
        )

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.predictor])

    # -- log densities -------------------------------------------------------
    def log_prior(self, params) -> float:
        a, b, tau = (float(v) for v in params)
        if not tau > 0:
            return -math.inf
        r = np.array([a, b]) - self.prior_mean
        q0 = self.prior_prec_scale
        return (
            math.log(tau) + 0.5 * float(np.sum(np.log(q0))) - math.log(2 * math.pi)
            - 0.5 * tau * float(r @ (q0 * r))
            + self.shape * math.log(self.rate) - math.lgamma(self.shape)
            + (self.shape - 1) * math.log(tau) - self.rate * tau
        )

    def log_likelihood(self, params) -> float:
        a, b, tau = (float(v) for v in params)
        if not tau > 0:
            return -math.inf
        res = self.y - a - b * self.predictor
        return 0.5 * self.n * (math.log(tau) - math.log(2 * math.pi)) - 0.5 * tau * float(res @ res)

    def log_posterior(self, params) -> float:
        return self.log_likelihood(params) + self.log_prior(params)

    def grad_prior(self, params) -> np.ndarray:
        a, b, tau = (float(v) for v in params)
        r = np.array([a, b]) - self.prior_mean
        q0 = self.prior_prec_scale
        g_ab = -tau * q0 * r
        g_tau = 1.0 / tau - 0.5 * float(r @ (q0 * r)) + (self.shape - 1) / tau - self.rate
        return np.array([g_ab[0], g_ab[1], g_tau])

    def grad_likelihood(self, params) -> np.ndarray:
        a, b, tau = (float(v) for v in params)
        res = self.y - a - b * self.predictor
        return np.array([
            tau * float(res.sum()),
            tau * float(res @ self.predictor),
            0.5 * self.n / tau - 0.5 * float(res @ res),
        ])

    def _batch(self, thetas, prior_only=False):
        a, b, tau = thetas[:, 0], thetas[:, 1], thetas[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.log(tau)
            r0, r1 = a - self.prior_mean[0], b - self.prior_mean[1]
            q0 = self.prior_prec_scale
            out = (lt + 0.5 * float(np.sum(np.log(q0))) - math.log(2 * math.pi)
                   - 0.5 * tau * (q0[0] * r0 * r0 + q0[1] * r1 * r1)
                   + self.shape * math.log(self.rate) - math.lgamma(self.shape)
                   + (self.shape - 1) * lt - self.rate * tau)
            if not prior_only:
                res = self.y[None, :] - a[:, None] - b[:, None] * self.predictor[None, :]
                out = out + 0.5 * self.n * (lt - math.log(2 * math.pi)) - 0.5 * tau * np.sum(res * res, axis=1)
        out[~(tau > 0)] = -math.inf
        return out

    # -- hints -----------------------------------------------------------------
    def _hints(self):
        if self.n >= 3:
            X = self.design
            coef, *_ = np.linalg.lstsq(X, self.y, rcond=None)
            res = self.y - X @ coef
            s2 = float(res @ res) / (self.n - 2)
            sxx = float(self.predictor @ self.predictor)
            init = np.array([coef[0], coef[1], 1.0 / s2])
            scale = np.array([math.sqrt(s2 / self.n), math.sqrt(s2 / max(sxx, 1e-12)),
                              math.sqrt(2.0 / self.n) / s2])
            return init, scale
        tau0 = self.shape / self.rate
        sd = 1.0 / np.sqrt(tau0 * self.prior_prec_scale)
        return np.array([*self.prior_mean, tau0]), np.array([*sd, tau0 / math.sqrt(self.shape)])

    def posterior(self) -> Density:
        """Unnormalised posterior ``likelihood x prior``; its normaliser is the evidence."""
        init, scale = self._hints()
        return Density(
            SPACE, self.log_posterior,
            gradient=lambda t: self.grad_likelihood(t) + self.grad_prior(t),
            log_q_batch=self._batch, initial=init, scale=scale, name=f"radiata:{self.variant}",
        )

    def prior(self) -> Density:
        tau0 = self.shape / self.rate
        sd = 1.0 / np.sqrt(tau0 * self.prior_prec_scale)
        return Density(
            SPACE, self.log_prior, gradient=self.grad_prior,
            log_q_batch=lambda ts: self._batch(ts, prior_only=True),
            initial=np.array([*self.prior_mean, tau0]),
            scale=np.array([*sd, tau0 / math.sqrt(self.shape)]),
            name=f"radiata:{self.variant}:prior",
        )

    def conditional_mode_ab(self, tau: float) -> np.ndarray:
        """Maximiser of the posterior in (alpha, beta) at fixed tau (weighted least squares)."""
        X = self.design
        Q0 = np.diag(self.prior_prec_scale)
        A = X.T @ X + Q0
        rhs = X.T @ self.y + Q0 @ self.prior_mean
        return np.linalg.solve(A, rhs)
