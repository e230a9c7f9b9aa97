"""``refti`` command line: evidence, compare, fetch-cases, emit-plots.

Exit codes: 0 converged, 2 completed but flagged by the R-hat gate,
3 usage error, 4 data error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import urllib.error
import urllib.request
import warnings
from typing import Optional, Sequence

import numpy as np

from refti import __version__
from refti.errors import (
    ComparisonError,
    DataError,
    FetchError,
    InvalidArgumentError,
    MissingTraceError,
    ReftiError,
)
from refti.estimators import bayes_factor_matrix
from refti.io import PLOT_KINDS, RECORD_SCHEMA, RunConfig, RunRecord, atomic_write, dumps, plot_csv
from refti.models import cases as cases_mod
from refti.runner import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, default_workers, run_evidence

FETCH_TIMEOUT = 60


class UsageError(InvalidArgumentError):
    pass


# ---------------------------------------------------------------------------
# evidence


def _sampler_overrides(args) -> dict:
    s = {}
    for flag, key in (("iters", "n_iter"), ("warmup", "n_warmup"), ("chains", "n_chains"), ("seed", "seed"),
                      ("kernel", "kernel"), ("leapfrog", "hmc_leapfrog_steps"), ("metric", "hmc_metric")):
        v = getattr(args, flag)
        if v is not None:
            s[key] = v
    return s


def _lambdas_arg(text: str):
    text = text.strip()
    return int(text) if text.isdigit() else [float(v) for v in text.split(",") if v.strip()]


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    base.pop("schema", None)
    for flag, key in (("model", "model_id"), ("method", "method"), ("reference", "reference_kind"),
                      ("profile", "profile"), ("cases", "cases_csv"), ("model_b", "model_b"), ("out", "output_path")):
        v = getattr(args, flag)
        if v is not None:
            base[key] = v
    if args.lambdas is not None:
        try:
            base["lambdas"] = _lambdas_arg(args.lambdas)
        except ValueError as exc:
            raise UsageError(f"cannot parse --lambdas {args.lambdas!r}") from exc
    if args.telescope is not None:
        base["telescope"] = [float(v) for v in args.telescope.split(",")]
    if args.traces:
        base["emit_traces"] = True
    sampler = dict(base.get("sampler", {}))
    sampler.update(_sampler_overrides(args))
    base["sampler"] = sampler
    if "model_id" not in base:
        raise UsageError("--model is required (or a --config naming model_id)")
    return RunConfig.from_dict(base)


def cmd_evidence(args) -> int:
    config = config_from_args(args)
    workers = args.workers if args.workers is not None else default_workers()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        record = run_evidence(config, workers=workers)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    res = record.result
    print(json.dumps({"model": config.model_id, "method": config.method, "log_z": res["log_z"],
                      "log_zref": res["log_zref"], "ti_correction": res["ti_correction"],
                      "interval95": res["interval95"], "status": record.status,
                      "output": config.output_path}, sort_keys=True))
    if not config.output_path:
        sys.stdout.write(record.to_json())
    return record.exit_code


# ---------------------------------------------------------------------------
# compare


def _record_paths(items: Sequence[str]) -> list:
    paths = []
    for it in items:
        if os.path.isdir(it):
            for p in sorted(glob.glob(os.path.join(it, "*.json"))):
                try:
                    with open(p) as fh:
                        if json.load(fh).get("schema") == RECORD_SCHEMA:
                            paths.append(p)
                except (OSError, ValueError, AttributeError):
                    continue
        elif os.path.exists(it):
            paths.append(it)
        else:
            raise DataError(f"no such record or directory: {it}")
    return paths


def _checksum_label(key: str) -> str:
    return key.rsplit(":", 1)[-1]


def check_compatible(records: Sequence[RunRecord]) -> None:
    """Refuse records whose same-named input files carry different checksums."""
    seen = {}
    for r in records:
        for k, v in r.data_checksums.items():
            label = _checksum_label(k)
            if label in seen and seen[label][0] != v:
                raise ComparisonError(
                    f"input {label!r} differs between {seen[label][1]} and {r.config.get('model_id')}; "
                    "runs on different datasets cannot be compared"
                )
            seen.setdefault(label, (v, r.config.get("model_id")))


def family_of(model_id: str) -> str:
    return model_id.split(":", 1)[0] if ":" in model_id else model_id


def compare_records(records: Sequence[RunRecord]):
    if len(records) < 2:
        raise UsageError("compare needs at least two runs")
    for r in records:
        if r.config.get("method") == "model-switch":
            raise UsageError("model-switch records hold a Bayes factor, not an evidence; compare the endpoints")
    check_compatible(records)
    ids = [r.config["model_id"] for r in records]
    mat = bayes_factor_matrix([r.evidence() for r in records], ids)
    best = {}
    for fam in sorted({family_of(i) for i in ids}):
        members = [k for k, i in enumerate(ids) if family_of(i) == fam]
        best[fam] = ids[max(members, key=lambda k: mat.source_results[k].log_z)]
    return mat, best


def cmd_compare(args) -> int:
    records = [RunRecord.load(p) for p in _record_paths(args.records)]
    mat, best = compare_records(records)
    d = mat.to_dict()
    d["best_per_family"] = best
    d["methods"] = [r.config["method"] for r in records]
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "bf.json"), dumps(d))
    atomic_write(os.path.join(args.out_dir, "bf.csv"), mat.to_csv())
    print(json.dumps({"models": mat.model_ids, "best_per_family": best, "out_dir": args.out_dir}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fetch-cases


def fetch_bytes(url: str, timeout: float = FETCH_TIMEOUT) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:  # noqa: S310 - user-chosen source
            return resp.read()
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise FetchError(f"cannot download {url}: {exc}; pass --from-file with a local copy") from exc


def cmd_fetch_cases(args) -> int:
    if args.from_file:
        try:
            with open(args.from_file, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read {args.from_file}: {exc}") from exc
        source = os.path.abspath(args.from_file)
    else:
        raw = fetch_bytes(args.url)
        source = args.url
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"case file is not UTF-8 text: {exc}") from exc
    series = cases_mod.parse_ecdc_csv(text, country=args.country)
    atomic_write(args.out, cases_mod.write_normalised_csv(series))
    meta = {"source": source, "source_sha256": cases_mod.sha256_bytes(raw), "country": args.country,
            "rows": len(series.cases), "first_date": str(series.dates[0]) if len(series.dates) else None,
            "last_date": str(series.dates[-1]) if len(series.dates) else None, "version": __version__}
    atomic_write(args.out + ".meta.json", dumps(meta))
    print(json.dumps({"out": args.out, "rows": meta["rows"], "source_sha256": meta["source_sha256"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# emit-plots


def cmd_emit_plots(args) -> int:
    record = RunRecord.load(args.record)
    result = record.evidence()
    kinds = list(PLOT_KINDS) if args.kind == "all" else [args.kind]
    texts = {k: plot_csv(result, k) for k in kinds}  # all or nothing: build before writing
    stem = os.path.splitext(os.path.basename(args.record))[0]
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    for k, t in texts.items():
        p = os.path.join(args.out_dir, f"{stem}.{k}.csv")
        atomic_write(p, t)
        written.append(p)
    print(json.dumps({"written": written}))
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refti", description="Bayesian model evidence by referenced thermodynamic integration.")
    p.add_argument("--version", action="version", version=f"refti {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("evidence", help="estimate the log evidence of one model")
    e.add_argument("--config", help="RunConfig JSON; flags override its fields")
    e.add_argument("--model", help="builtin model id or path to a model JSON file")
    e.add_argument("--method", choices=["ref-ti", "laplace", "pp", "model-switch", "telescopic"])
    e.add_argument("--reference", choices=["mode", "sampled", "diagonal-orthant", "variational"])
    e.add_argument("--lambdas", help="point count (e.g. 11) or comma list (e.g. 0,0.2,0.5,0.8,1)")
    e.add_argument("--telescope", help="comma list of intermediate rung positions in (0, 1)")
    e.add_argument("--iters", type=int)
    e.add_argument("--warmup", type=int)
    e.add_argument("--chains", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--kernel", choices=["adaptive-random-walk", "rwm", "hamiltonian", "hmc"])
    e.add_argument("--leapfrog", type=int, help="leapfrog steps per HMC iteration")
    e.add_argument("--metric", choices=["auto", "diag", "dense"], help="HMC mass-matrix form")
    e.add_argument("--profile", choices=["desk", "full"])
    e.add_argument("--cases", help="normalised or ECDC case CSV for covid models")
    e.add_argument("--model-b", dest="model_b", help="second model for --method model-switch")
    e.add_argument("--out", help="write the RunRecord JSON here")
    e.add_argument("--traces", action="store_true", help="store per-lambda traces in the record")
    e.add_argument("--workers", type=int, help="parallel lambda jobs (default: $REFTI_WORKERS or 1)")
    e.set_defaults(func=cmd_evidence)

    c = sub.add_parser("compare", help="Bayes-factor matrix from run records")
    c.add_argument("records", nargs="+", help="record files or directories holding them")
    c.add_argument("--out-dir", default=".", help="directory for bf.json and bf.csv")
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("fetch-cases", help="download and normalise daily case counts")
    f.add_argument("--url", default=cases_mod.ECDC_URL)
    f.add_argument("--country", default=cases_mod.DEFAULT_COUNTRY)
    f.add_argument("--out", required=True)
    f.add_argument("--from-file", dest="from_file", help="use a local ECDC-format CSV instead of downloading")
    f.set_defaults(func=cmd_fetch_cases)

    g = sub.add_parser("emit-plots", help="write plot-data CSVs from a record with traces")
    g.add_argument("--record", required=True)
    g.add_argument("--kind", choices=list(PLOT_KINDS) + ["all"], default="all")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_emit_plots)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (DataError, ComparisonError)):
        return EXIT_DATA
    if isinstance(exc, (InvalidArgumentError, MissingTraceError)):
        return EXIT_USAGE
    if isinstance(exc, (ReftiError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError)):
        return EXIT_NUMERICAL
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ReftiError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        code = exit_code_for(exc)
        print(f"refti: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
