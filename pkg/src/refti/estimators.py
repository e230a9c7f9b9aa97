"""Baseline evidence estimators and Bayes-factor assembly."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from refti.errors import InvalidArgumentError, InvalidPairingError
from refti.sampler import SamplerConfig
from refti.ti import (
    EvidenceResult,
    LambdaSchedule,
    Z95,
    _summary,
    _warn_if_flagged,
    make_result,
    ti_correction,
)

PP_STREAM = 0x990
SWITCH_STREAM = 0x5A1


def laplace_evidence(ref) -> EvidenceResult:
    """``log z`` approximated by the reference normaliser alone."""
    return make_result(ref.log_zref(), 0.0, 0.0, [], "laplace", {"reference": ref.to_dict()})


def power_posterior_evidence(target_posterior, prior, schedule=None,
                             config: Optional[SamplerConfig] = None,
                             workers: Optional[int] = None) -> EvidenceResult:
    """TI from a normalised prior (``z_ref = 1``); the integrand is the log-likelihood.

    The prior end is sampled by ordinary MCMC. A heavy-tailed integrand
    there is reported through ``diagnostics['lambda0_variance']`` rather
    than treated as an error.
    """
    if target_posterior.space != prior.space:
        raise InvalidPairingError("posterior and prior must share a ParamSpace")
    schedule = LambdaSchedule.equidistant(11) if schedule is None else LambdaSchedule.parse(schedule)
    config = config or SamplerConfig()
    corr = ti_correction(target_posterior, prior, schedule, config, stream=(PP_STREAM,), workers=workers)
    lam0 = [e for e in corr.estimates if e.lam == 0.0]
    extra = {"lambda0_variance": lam0[0].variance if lam0 else None}
    res = make_result(0.0, corr.value, corr.sigma, corr.estimates, "power-posterior",
                      _summary(corr, **extra), corr.converged)
    return _warn_if_flagged(res)


def model_switch_ti(model_a, model_b, schedule=None, config: Optional[SamplerConfig] = None,
                    workers: Optional[int] = None) -> EvidenceResult:
    """``log(z_b / z_a)`` from one path running directly from ``model_a`` to ``model_b``.

    The result's ``log_z`` is the log Bayes factor and ``log_zref`` is 0.
    """
    if model_a.space != model_b.space:
        raise InvalidPairingError(
            f"models must share a ParamSpace to be connected ({model_a.space} vs {model_b.space})"
        )
    schedule = LambdaSchedule.equidistant(11) if schedule is None else LambdaSchedule.parse(schedule)
    config = config or SamplerConfig()
    corr = ti_correction(model_b, model_a, schedule, config, stream=(SWITCH_STREAM,), workers=workers)
    res = make_result(0.0, corr.value, corr.sigma, corr.estimates, "model-switch-ti",
                      _summary(corr), corr.converged)
    return _warn_if_flagged(res)


@dataclass
class BayesFactorMatrix:
    """``log_bf[i, j] = log z_i - log z_j``."""

    model_ids: list
    log_bf: np.ndarray
    se: np.ndarray
    source_results: list = field(default_factory=list)

    def index(self, model_id) -> int:
        return self.model_ids.index(model_id)

    def log_bf_of(self, i_id, j_id) -> float:
        return float(self.log_bf[self.index(i_id), self.index(j_id)])

    def best(self) -> str:
        return self.model_ids[int(np.argmax(self.log_bf[:, 0]))]

    def to_dict(self) -> dict:
        return {
            "model_ids": list(self.model_ids),
            "log_bf": self.log_bf.tolist(),
            "interval95_half_width": (Z95 * self.se).tolist(),
            "log_z": [r.log_z for r in self.source_results],
            "best": self.best(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Square table: row ``i``, column ``j`` holds ``log z_i - log z_j``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + list(self.model_ids))
        for mid, row in zip(self.model_ids, self.log_bf):
            w.writerow([mid] + [repr(float(v)) for v in row])
        return buf.getvalue()


def bayes_factor_matrix(results: Sequence[EvidenceResult], ids: Sequence) -> BayesFactorMatrix:
    ids = list(ids)
    results = list(results)
    if len(ids) != len(results):
        raise InvalidArgumentError("need exactly one result per model id")
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError(f"duplicate model ids: {ids}")
    if not ids:
        raise InvalidArgumentError("no results given")
    lz = np.array([r.log_z for r in results])
    sd = np.array([r.sigma for r in results])
    return BayesFactorMatrix(
        model_ids=ids,
        log_bf=lz[:, None] - lz[None, :],
        se=np.sqrt(sd[:, None] ** 2 + sd[None, :] ** 2),
        source_results=results,
    )


# ---------------------------------------------------------------------------
# draws needed for a target relative standard error


@dataclass
class DrawsToSE:
    reached: bool
    n_iter: int
    total_draws: float
    estimate: float
    se: float
    history: list

    def to_dict(self) -> dict:
        return {"reached": self.reached, "n_iter": self.n_iter, "total_draws": self.total_draws,
                "estimate": self.estimate, "se": self.se, "history": self.history}


def draws_to_relative_se(run: Callable[[int], tuple], rel: float = 0.005, start: int = 64,
                         max_iter: int = 65536, give_up_factor: Optional[float] = None) -> DrawsToSE:
    """Double the per-chain draw count until ``se < rel * |estimate|``.

    ``run(n_iter)`` returns ``(estimate, se, total_post_warmup_draws)``.
    If the cap is reached first, ``reached`` is false and ``total_draws``
    is infinite, so such a method always ranks last. With
    ``give_up_factor`` the search also stops early once ``se`` projected
    to ``max_iter`` by the ``1/sqrt(n)`` law still exceeds the target by
    that factor.
    """
    if start < 1 or max_iter < start:
        raise InvalidArgumentError("need 1 <= start <= max_iter")
    n = int(start)
    history = []
    while True:
        est, se, draws = run(n)
        history.append({"n_iter": n, "estimate": float(est), "se": float(se), "total_draws": int(draws)})
        if math.isfinite(est) and se < rel * abs(est):
            return DrawsToSE(True, n, int(draws), float(est), float(se), history)
        if n * 2 > max_iter:
            return DrawsToSE(False, n, math.inf, float(est), float(se), history)
        if give_up_factor is not None and math.isfinite(est) and \
                se * math.sqrt(n / max_iter) > give_up_factor * rel * abs(est):
            return DrawsToSE(False, n, math.inf, float(est), float(se), history)
        n *= 2
