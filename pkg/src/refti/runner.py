"""End-to-end evidence runs: resolve a model, build a reference, estimate, record."""

from __future__ import annotations

import os
import time
from typing import Optional

from refti.density import TemperedDensity
from refti.errors import InvalidArgumentError, NonConcaveModeError
from refti.estimators import laplace_evidence, model_switch_ti, power_posterior_evidence
from refti.io import RunConfig, RunRecord, atomic_write
from refti.models import resolve_model
from refti.reference import (
    reference_diagonal_orthant,
    reference_from_mode,
    reference_from_samples,
    reference_variational,
)
from refti.ti import TelescopicSchedule, referenced_ti, telescopic_ti

WORKERS_ENV = "REFTI_WORKERS"
EXIT_OK, EXIT_FLAGGED, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4, 5


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidArgumentError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidArgumentError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def default_kernel(model_id: str) -> str:
    # the renewal posteriors have ~100 correlated dimensions; random walk mixes too slowly there
    return "hamiltonian" if model_id.startswith("covid:") else "adaptive-random-walk"


def build_reference(target, kind: str, sampler_config, notes: dict):
    """Reference of the requested kind. A mode reference at a non-smooth mode falls back to sampled."""
    if kind == "mode":
        try:
            return reference_from_mode(target, seed=sampler_config.seed)
        except NonConcaveModeError as exc:
            notes["reference_fallback"] = f"mode -> sampled: {exc}"
            return reference_from_samples(target, sampler_config)
    if kind == "sampled":
        return reference_from_samples(target, sampler_config)
    if kind == "diagonal-orthant":
        return reference_diagonal_orthant(target, sampler_config)
    init = reference_from_samples(target, sampler_config)
    return reference_variational(target, init, sampler_config)


def run_evidence(config: RunConfig, workers: Optional[int] = None) -> RunRecord:
    """Execute ``config`` and return its record; writes it to ``config.output_path`` when set."""
    t0 = time.perf_counter()
    workers = default_workers() if workers is None else workers
    bundle = resolve_model(config.model_id, profile=config.profile, cases_csv=config.cases_csv)
    target = bundle.target
    sc = config.sampler_config(default_kernel(config.model_id))
    schedule = config.schedule()
    sums = {f"{bundle.model_id}:{k}": v for k, v in bundle.data_checksums.items()}
    manifest = {bundle.model_id: bundle.manifest} if bundle.manifest else {}
    extra: dict = {"kernel": sc.kernel}
    if bundle.exact_log_z is not None:
        extra["exact_log_z"] = bundle.exact_log_z

    if config.method == "pp":
        if bundle.prior is None:
            raise InvalidArgumentError(f"model {config.model_id!r} has no normalised prior for power posteriors")
        result = power_posterior_evidence(target, bundle.prior, schedule, sc, workers=workers)
    elif config.method == "model-switch":
        other = resolve_model(config.model_b, profile=config.profile, cases_csv=config.cases_csv)
        sums.update({f"{other.model_id}:{k}": v for k, v in other.data_checksums.items()})
        if other.manifest:
            manifest[other.model_id] = other.manifest
        extra["model_b"] = other.model_id
        result = model_switch_ti(target, other.target, schedule, sc, workers=workers)
    else:
        ref = build_reference(target, config.reference_kind, sc, extra)
        extra["reference"] = ref.to_dict()
        if config.method == "laplace":
            result = laplace_evidence(ref)
        elif config.method == "ref-ti":
            result = referenced_ti(target, ref, schedule, sc, workers=workers)
        else:
            rungs = [ref] + [TemperedDensity(target, ref, t) for t in config.telescope]
            result = telescopic_ti(TelescopicSchedule(rungs, target), schedule, sc, workers=workers)

    converged = bool(result.converged)
    record = RunRecord(
        config=config.to_dict(),
        result=result.to_dict(with_traces=config.emit_traces),
        status="converged" if converged else "flagged",
        exit_code=EXIT_OK if converged else EXIT_FLAGGED,
        data_checksums=sums,
        model_manifest=manifest,
        extra=extra,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    if config.output_path:
        atomic_write(config.output_path, record.to_json())
    return record
