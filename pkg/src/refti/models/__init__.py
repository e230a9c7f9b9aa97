"""Built-in target densities and the model-id registry.

Model ids:

``cusp1d``, ``constrained2d``
    closed-form pedagogical targets;
``radiata:M1``, ``radiata:M2``
    conjugate linear regressions;
``covid:gi=<days>``, ``covid:ar=<k>``, ``covid:w=<days>``
    renewal models of daily cases;
``gaussian:<sd>[:<log_scale>]``
    1-D Gaussian with a known normaliser;
a path to a JSON model file
    ``{"builtin": id, "cases_csv": path, "profile": "desk"|"full"}`` or
    ``{"gaussian": {"mean": [...], "cov": [[...]], "log_scale": c}}``.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Optional

from refti.density import Density
from refti.errors import DataError, InvalidArgumentError
from refti.models.simple import constrained2d, cusp1d, gaussian, gaussian_log_z

PROFILES = ("desk", "full")
CASES_ENV = "REFTI_CASES_CSV"


class UnknownModelError(InvalidArgumentError):
    pass


@dataclass
class ModelBundle:
    model_id: str
    target: Density
    prior: Optional[Density] = None
    data_checksums: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    exact_log_z: Optional[float] = None
    model: object = None


def file_checksum(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _radiata(variant: str) -> ModelBundle:
    from refti.models import radiata

    m = radiata.RadiataModel.load(variant)
    sums = {
        "radiata.csv": file_checksum(radiata._data_file("radiata.csv")),
        "radiata_priors.json": file_checksum(radiata._data_file("radiata_priors.json")),
    }
    return ModelBundle(f"radiata:{variant}", m.posterior(), prior=m.prior(), data_checksums=sums, model=m)


def _covid(spec: str, profile: str, cases_csv: Optional[str]) -> ModelBundle:
    from refti.models import cases as cases_mod
    from refti.models.renewal import DESK_DAYS, RenewalModel, RenewalModelConfig

    m = re.fullmatch(r"(gi|ar|w)=(\d+(?:\.\d+)?)", spec)
    if not m:
        raise UnknownModelError(f"unknown covid variant {spec!r}; use gi=<days>, ar=<k> or w=<days>")
    kind, val = m.group(1), m.group(2)
    if profile not in PROFILES:
        raise InvalidArgumentError(f"profile must be one of {PROFILES}")
    path = cases_csv or os.environ.get(CASES_ENV) or str(cases_mod.bundled_case_path())
    if not os.path.exists(path):
        raise DataError(f"case data file not found: {path}")
    series = cases_mod.load_case_file(path)
    max_days = DESK_DAYS if profile == "desk" else None
    if kind == "gi":
        cfg = RenewalModelConfig("gi-fixed", series, gi_mean=float(val), max_days=max_days)
    elif kind == "ar":
        cfg = RenewalModelConfig("ar", series, ar_order=int(float(val)), max_days=max_days)
    else:
        cfg = RenewalModelConfig("window", series, window_days=int(float(val)), max_days=max_days)
    model = RenewalModel(cfg)
    manifest = model.manifest()
    manifest.update(profile=profile, case_file=os.path.basename(path),
                    synthetic_data=os.path.basename(path) == cases_mod.SYNTHETIC_FILE)
    return ModelBundle(f"covid:{spec}", model.density(), data_checksums={"cases": file_checksum(path)},
                       manifest=manifest, model=model)


def _gaussian_spec(spec: str) -> ModelBundle:
    parts = spec.split(":")
    try:
        sd = float(parts[0])
        c = float(parts[1]) if len(parts) > 1 else 0.0
    except ValueError as exc:
        raise UnknownModelError(f"bad gaussian spec {spec!r}") from exc
    if not sd > 0:
        raise UnknownModelError("gaussian sd must be positive")
    dens = gaussian([0.0], [[sd * sd]], log_scale=c, name=f"gaussian:{spec}")
    return ModelBundle(f"gaussian:{spec}", dens, exact_log_z=gaussian_log_z([[sd * sd]], c))


def _from_file(path: str, profile: str, cases_csv: Optional[str]) -> ModelBundle:
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(spec, dict):
        raise DataError("model file must hold a JSON object")
    unknown = set(spec) - {"builtin", "cases_csv", "profile", "gaussian"}
    if unknown:
        raise InvalidArgumentError(f"unknown model-file keys: {sorted(unknown)}")
    if "gaussian" in spec:
        g = spec["gaussian"]
        dens = gaussian(g["mean"], g["cov"], log_scale=g.get("log_scale", 0.0), name=os.path.basename(path))
        b = ModelBundle(path, dens, exact_log_z=gaussian_log_z(g["cov"], g.get("log_scale", 0.0)))
    elif "builtin" in spec:
        cases = spec.get("cases_csv")
        if cases and not os.path.isabs(cases):
            cases = os.path.join(os.path.dirname(os.path.abspath(path)), cases)
        b = resolve_model(spec["builtin"], profile=spec.get("profile", profile), cases_csv=cases or cases_csv)
    else:
        raise InvalidArgumentError("model file needs a 'builtin' or 'gaussian' entry")
    b.data_checksums["model_file"] = file_checksum(path)
    return b


def resolve_model(model_id: str, profile: str = "desk", cases_csv: Optional[str] = None) -> ModelBundle:
    if model_id == "cusp1d":
        return ModelBundle("cusp1d", cusp1d())
    if model_id == "constrained2d":
        return ModelBundle("constrained2d", constrained2d())
    if model_id.startswith("radiata:"):
        variant = model_id.split(":", 1)[1]
        if variant not in ("M1", "M2"):
            raise UnknownModelError(f"unknown radiata variant {variant!r}")
        return _radiata(variant)
    if model_id.startswith("covid:"):
        return _covid(model_id.split(":", 1)[1], profile, cases_csv)
    if model_id.startswith("gaussian:"):
        return _gaussian_spec(model_id.split(":", 1)[1])
    if model_id.endswith(".json") or os.path.sep in model_id:
        if not os.path.exists(model_id):
            raise DataError(f"model file not found: {model_id}")
        return _from_file(model_id, profile, cases_csv)
    raise UnknownModelError(f"unknown model {model_id!r}")


__all__ = ["ModelBundle", "resolve_model", "UnknownModelError", "cusp1d", "constrained2d", "gaussian"]
