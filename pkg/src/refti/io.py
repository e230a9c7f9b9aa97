"""Run configuration, run records, atomic file output and plot-data CSVs."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np

from refti import __version__
from refti.errors import InvalidArgumentError, MissingTraceError
from refti.sampler import SamplerConfig
from refti.ti import EvidenceResult, LambdaSchedule, spline_eval, spline_integral

RECORD_SCHEMA = "refti.run-record/1"
CONFIG_SCHEMA = "refti.run-config/1"
METHODS = ("ref-ti", "laplace", "pp", "model-switch", "telescopic")
REFERENCE_KINDS = ("mode", "sampled", "diagonal-orthant", "variational")
PLOT_KINDS = ("running-mean", "lambda-curve", "convergence")
SPLINE_SAMPLES = 101
ROLLING_WINDOW = 1500
SAMPLER_KEYS = {f.name for f in fields(SamplerConfig)}


@dataclass
class RunConfig:
    model_id: str
    method: str = "ref-ti"
    reference_kind: str = "sampled"
    lambdas: Union[int, list] = 11
    sampler: dict = field(default_factory=dict)
    output_path: Optional[str] = None
    emit_traces: bool = False
    profile: str = "desk"
    cases_csv: Optional[str] = None
    model_b: Optional[str] = None
    telescope: list = field(default_factory=lambda: [0.5])

    def __post_init__(self):
        if not isinstance(self.model_id, str) or not self.model_id:
            raise InvalidArgumentError("model_id must be a non-empty string")
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.reference_kind not in REFERENCE_KINDS:
            raise InvalidArgumentError(f"reference must be one of {REFERENCE_KINDS}, got {self.reference_kind!r}")
        if self.profile not in ("desk", "full"):
            raise InvalidArgumentError("profile must be desk or full")
        if self.method == "model-switch" and not self.model_b:
            raise InvalidArgumentError("model-switch needs a second model (model_b)")
        if not isinstance(self.sampler, dict):
            raise InvalidArgumentError("sampler must be a mapping of sampler settings")
        unknown = set(self.sampler) - SAMPLER_KEYS
        if unknown:
            raise InvalidArgumentError(f"unknown sampler keys: {sorted(unknown)}")
        self.sampler_config()  # validates values
        if isinstance(self.lambdas, (list, tuple)):
            self.lambdas = [float(v) for v in self.lambdas]
        self.schedule()
        tel = [float(v) for v in self.telescope]
        if any(not (0.0 < v < 1.0) for v in tel) or sorted(set(tel)) != tel:
            raise InvalidArgumentError("telescope points must be increasing values inside (0, 1)")
        self.telescope = tel
        self.emit_traces = bool(self.emit_traces)

    def schedule(self) -> LambdaSchedule:
        return LambdaSchedule.parse(self.lambdas)

    def sampler_config(self, default_kernel: Optional[str] = None) -> SamplerConfig:
        kw = dict(self.sampler)
        if "kernel" not in kw and default_kernel:
            kw["kernel"] = default_kernel
        return SamplerConfig(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = CONFIG_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        schema = d.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise InvalidArgumentError(f"unsupported config schema {schema!r}")
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        if "model_id" not in d:
            raise InvalidArgumentError("config needs a model_id")
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunRecord:
    config: dict
    result: dict
    status: str
    exit_code: int
    data_checksums: dict = field(default_factory=dict)
    model_manifest: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    version: str = __version__
    schema: str = RECORD_SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema") != RECORD_SCHEMA:
            raise InvalidArgumentError(f"not a run record (schema {d.get('schema')!r})")
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidArgumentError(f"unknown record keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def load(cls, path: str) -> "RunRecord":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def evidence(self) -> EvidenceResult:
        return EvidenceResult.from_dict(self.result)

    def deterministic_json(self) -> str:
        """Serialised record with the wall-clock field blanked."""
        d = self.to_dict()
        d["wall_clock_seconds"] = None
        return dumps(d)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# plot data


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _traces(result: EvidenceResult):
    if not result.per_lambda:
        raise MissingTraceError("the record has no per-lambda estimates")
    if any(e.trace is None for e in result.per_lambda):
        raise MissingTraceError("the record has no traces; rerun with emit_traces enabled")
    return [(e.lam, np.asarray(e.trace, dtype=float)) for e in result.per_lambda]


def running_mean_csv(result: EvidenceResult) -> str:
    rows = []
    for lam, tr in _traces(result):
        rm = np.cumsum(tr) / np.arange(1, tr.size + 1)
        rows.extend((lam, i + 1, float(v)) for i, v in enumerate(rm))
    return _csv(rows, ["lambda", "iteration", "running_mean"])


def lambda_curve_csv(result: EvidenceResult, n_samples: int = SPLINE_SAMPLES) -> str:
    if not result.per_lambda:
        raise MissingTraceError("the record has no per-lambda estimates")
    xs = [e.lam for e in result.per_lambda]
    ys = [e.mean for e in result.per_lambda]
    rows = [("measured", e.lam, e.mean, e.mcse) for e in result.per_lambda]
    grid = np.linspace(0.0, 1.0, n_samples)
    rows += [("spline", float(x), float(v), "") for x, v in zip(grid, spline_eval(xs, ys, grid))]
    return _csv(rows, ["kind", "lambda", "expectation", "mcse"])


def convergence_csv(result: EvidenceResult, window: int = ROLLING_WINDOW) -> str:
    """Evidence against iteration from running means and from trailing-window means."""
    tr = _traces(result)
    xs = [lam for lam, _ in tr]
    n = min(t.size for _, t in tr)
    if n == 0:
        raise MissingTraceError("traces are empty")
    mats = np.array([t[:n] for _, t in tr])
    run = np.cumsum(mats, axis=1) / np.arange(1, n + 1)
    cs = np.concatenate([np.zeros((mats.shape[0], 1)), np.cumsum(mats, axis=1)], axis=1)
    w = min(window, n)
    rows = []
    for i in range(n):
        lz = result.log_zref + spline_integral(zip(xs, run[:, i]))
        if i + 1 >= w:
            roll = (cs[:, i + 1] - cs[:, i + 1 - w]) / w
            lr = result.log_zref + spline_integral(zip(xs, roll))
        else:
            lr = ""
        rows.append((i + 1, lz, lr))
    return _csv(rows, ["iteration", "log_z_running", f"log_z_rolling_{w}"])


def plot_csv(result: EvidenceResult, kind: str) -> str:
    if kind == "running-mean":
        return running_mean_csv(result)
    if kind == "lambda-curve":
        return lambda_curve_csv(result)
    if kind == "convergence":
        return convergence_csv(result)
    raise InvalidArgumentError(f"plot kind must be one of {PLOT_KINDS}")
