"""Command-line entry point.

Subcommands: fit, project, simulate, preprocess, icc, compare, validate.
Every run writes a ``run_manifest.json`` next to its outputs (before the
results) recording the command line, a configuration hash, the seed, the tool
version, and content digests of all input files. Exit codes: 0 success,
1 usage error, 2 data/validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from . import __version__
from .curves import CurveSet, load_curves, save_curves, subject_mean_curves
from .errors import ConfigError, DataFormatError
from .harness import (
    StudyConfig,
    config_hash,
    reference_from_curves,
    run_study,
    synthetic_reference,
    validate_workflow,
)
from .mfpca import _atomic_write_text, fit_fpca, fit_mfpca, load_model, save_model
from .preprocess import (
    LandmarkSet,
    boxplot_outliers,
    landmark_register,
    locate_landmarks,
    template_qc,
)
from .project import WITHIN_COLUMNS, mfpca_project
from .simgen import ScenarioSpec
from .valmetrics import icc, mann_whitney


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, argv, seed, cfg_hash, inputs) -> None:
    manifest = {
        "tool": "mfpcakit",
        "version": __version__,
        "command_line": ["mfpcakit"] + list(argv),
        "config_hash": cfg_hash,
        "seed": seed,
        "input_digests": {str(p): _sha256_file(p) for p in inputs if p is not None},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write_text(os.path.join(out_dir, "run_manifest.json"), json.dumps(manifest, indent=2))


def _write_csv(df: pd.DataFrame, path) -> None:
    _atomic_write_text(path, df.to_csv(index=False))


def _load_curves_arg(path, grid_path):
    return load_curves(path, grid_path=grid_path)


def _parse_landmarks(text: str) -> LandmarkSet:
    names, times = [], []
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"bad landmark entry {part!r}; expected NAME=TIME")
        name, value = part.split("=", 1)
        names.append(name.strip())
        times.append(float(value))
    return LandmarkSet(names=tuple(names), times=np.array(times))


def cmd_fit(args, argv) -> int:
    cs = _load_curves_arg(args.curves, args.grid)
    if args.average_subjects:
        cs = subject_mean_curves(cs)
    if args.single_level:
        model = fit_fpca(cs, pve1=args.pve1, k1=args.k1)
    else:
        model = fit_mfpca(cs, pve1=args.pve1, pve2=args.pve2, k1=args.k1, k2=args.k2)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    cfg = {"cmd": "fit", "pve1": args.pve1, "pve2": args.pve2, "k1": args.k1, "k2": args.k2}
    _write_manifest(out_dir, argv, None, _hash_obj(cfg), [args.curves, args.grid])
    save_model(model, args.out)
    print(f"wrote model with K1={model.k1}, K2={model.k2} to {args.out}")
    return 0


def cmd_project(args, argv) -> int:
    model = load_model(args.model)
    cs = _load_curves_arg(args.curves, args.grid)
    table, _ = mfpca_project(model, cs, per_occasion=args.per_occasion)
    frames = []
    if args.levels in ("1", "both"):
        b = table.between.copy()
        b.insert(2, "curve_id", "")
        b.insert(3, "level", 1)
        frames.append(b[["subject_id", "occasion_id", "curve_id", "level", "component", "raw", "score"]])
    if args.levels in ("2", "both") and len(table.within):
        w = table.within.copy()
        w.insert(3, "level", 2)
        frames.append(w[["subject_id", "occasion_id", "curve_id", "level", "component", "raw", "score"]])
    if frames:
        scores = pd.concat(frames, ignore_index=True)
    else:
        scores = pd.DataFrame(columns=WITHIN_COLUMNS[:3] + ["level", "component", "raw", "score"])
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    cfg = {"cmd": "project", "per_occasion": args.per_occasion, "levels": args.levels}
    _write_manifest(out_dir, argv, None, _hash_obj(cfg), [args.model, args.curves, args.grid])
    _write_csv(scores, args.out)
    print(f"wrote {len(scores)} score rows to {args.out}")
    return 0


def _build_reference(config: dict, default_seed: int):
    ref_cfg = dict(config.get("reference", {"kind": "synthetic"}))
    kind = ref_cfg.pop("kind", "synthetic")
    if kind == "synthetic":
        ref_cfg.setdefault("seed", default_seed)
        return synthetic_reference(**ref_cfg)
    if kind == "fitted":
        curves_path = ref_cfg.get("curves")
        if curves_path is None:
            raise ConfigError("fitted reference needs a 'curves' path")
        cs = load_curves(curves_path, grid_path=ref_cfg.get("grid"))
        keys = ("pve1", "pve2", "k1", "k2", "fpca_components")
        return reference_from_curves(cs, **{k: ref_cfg[k] for k in keys if k in ref_cfg})
    raise ConfigError(f"unknown reference kind {kind!r}")


def cmd_simulate(args, argv) -> int:
    with open(args.config, encoding="utf-8") as fh:
        config_doc = json.load(fh)
    scenarios = tuple(ScenarioSpec.from_dict(s) for s in config_doc.get("scenarios", ["no_change"]))
    population = config_doc.get("population", {})
    workers = args.workers or int(os.environ.get("MFPCA_WORKERS", "1"))
    cps = population.get("curves_per_subject", 20)
    study = StudyConfig(
        scenarios=scenarios,
        replications=args.reps,
        base_seed=args.seed,
        n_subjects=population.get("n_subjects", 59),
        curves_per_subject=tuple(cps) if isinstance(cps, list) else cps,
        occasions=population.get("occasions", 2),
        icc_pooling=config_doc.get("icc_pooling", "both"),
        workers=workers,
    )
    reference = _build_reference(config_doc, args.seed)
    cfg_hash = config_hash(study, reference)
    inputs = [args.config]
    if config_doc.get("reference", {}).get("curves"):
        inputs.append(config_doc["reference"]["curves"])
    _write_manifest(args.out, argv, args.seed, cfg_hash, inputs)
    echo = {"config": study.to_dict(), "reference": reference.descriptor, "hash": cfg_hash}
    _atomic_write_text(os.path.join(args.out, "config_echo.json"), json.dumps(echo, indent=2))

    result = run_study(reference, study)
    _write_csv(result.per_replication, os.path.join(args.out, "per_replication.csv"))
    _write_csv(result.aggregate, os.path.join(args.out, "aggregate.csv"))
    print(
        f"ran {study.replications} replications x {len(scenarios)} scenarios; "
        f"outputs in {args.out}"
    )
    return 0


def cmd_preprocess(args, argv) -> int:
    cs = _load_curves_arg(args.curves, args.grid)
    targets = _parse_landmarks(args.landmarks)
    half = args.landmark_window
    lo_span, hi_span = cs.grid.points[0], cs.grid.points[-1]
    # windows clipped at midpoints between adjacent landmarks to stay disjoint
    windows = []
    for i, t in enumerate(targets.times):
        lo = lo_span if i == 0 else (targets.times[i - 1] + t) / 2
        hi = hi_span if i == len(targets.times) - 1 else (t + targets.times[i + 1]) / 2
        windows.append((max(lo, t - half), min(hi, t + half)))

    qc_rows = []
    kept: list[int] = []
    recordings = {}
    for i, key in enumerate(zip(cs.subject_ids, cs.occasion_ids)):
        recordings.setdefault(key, []).append(i)
    for (subject, occasion), ix in recordings.items():
        rec = CurveSet(
            grid=cs.grid,
            subject_ids=tuple(cs.subject_ids[i] for i in ix),
            occasion_ids=tuple(cs.occasion_ids[i] for i in ix),
            curve_ids=tuple(cs.curve_ids[i] for i in ix),
            values=cs.values[ix],
        )
        report = template_qc(rec, r_min=args.qc_rmin, min_good=args.qc_min_good)
        for cq in report.per_cycle:
            qc_rows.append(
                (subject, occasion, cq.curve_id, cq.correlation, cq.passed, report.recording_good)
            )
        if not report.recording_good:
            continue
        passed_ids = set(report.passed_curve_ids())
        good = [i for i in ix if cs.curve_ids[i] in passed_ids]
        if len(good) >= 4:
            sub = CurveSet(
                grid=cs.grid,
                subject_ids=tuple(cs.subject_ids[i] for i in good),
                occasion_ids=tuple(cs.occasion_ids[i] for i in good),
                curve_ids=tuple(cs.curve_ids[i] for i in good),
                values=cs.values[good],
            )
            flagged = set(boxplot_outliers(sub, factor=args.outlier_factor))
            good = [i for i in good if cs.curve_ids[i] not in flagged]
        kept.extend(good)

    registered_rows = []
    kept_final = []
    for i in kept:
        try:
            found = locate_landmarks(cs.values[i], cs.grid, windows, names=targets.names)
        except Exception:
            continue  # curves without all peaks in plausible ranges are discarded
        reg, _ = landmark_register(cs.values[i], cs.grid, found, targets)
        registered_rows.append(reg)
        kept_final.append(i)
    if not kept_final:
        raise DataFormatError("no curves survived quality control and registration")

    clean = CurveSet(
        grid=cs.grid,
        subject_ids=tuple(cs.subject_ids[i] for i in kept_final),
        occasion_ids=tuple(cs.occasion_ids[i] for i in kept_final),
        curve_ids=tuple(cs.curve_ids[i] for i in kept_final),
        values=np.vstack(registered_rows),
    )
    cfg = {
        "cmd": "preprocess",
        "qc_rmin": args.qc_rmin,
        "qc_min_good": args.qc_min_good,
        "outlier_factor": args.outlier_factor,
        "landmarks": args.landmarks,
        "landmark_window": args.landmark_window,
    }
    _write_manifest(args.out, argv, None, _hash_obj(cfg), [args.curves, args.grid])
    qc = pd.DataFrame(
        qc_rows,
        columns=["subject_id", "occasion_id", "curve_id", "correlation", "passed", "recording_good"],
    )
    _write_csv(qc, os.path.join(args.out, "qc_report.csv"))
    save_curves(clean, os.path.join(args.out, "curves_clean.csv"))
    print(
        f"kept {clean.n_curves} of {cs.n_curves} curves; "
        f"outputs in {args.out}"
    )
    return 0


def _summary_columns(df: pd.DataFrame, id_columns: list[str]) -> list[str]:
    extra = [c for c in df.columns if c not in id_columns]
    if not extra:
        raise DataFormatError("score CSV has no summary columns")
    return extra


def cmd_icc(args, argv) -> int:
    df = pd.read_csv(args.scores)
    for col in ("subject_id", "occasion_id"):
        if col not in df.columns:
            raise DataFormatError(f"score CSV needs a {col} column")
    if {"level", "component", "score"} <= set(df.columns):
        # long-format output of `project`: one summary per (level, component)
        df = df.assign(
            summary=["level" + str(l) + "_comp" + str(c) for l, c in zip(df["level"], df["component"])]
        )
        df = df.pivot_table(
            index=["subject_id", "occasion_id"], columns="summary", values="score", sort=False
        ).reset_index()
        df.columns.name = None
    rows = []
    for name in _summary_columns(df, ["subject_id", "occasion_id"]):
        matrix = df.pivot_table(
            index="subject_id", columns="occasion_id", values=name, sort=False
        ).to_numpy()
        res = icc(matrix)
        rows.append(
            (name, res.n_subjects, res.n_occasions, res.ms_rows, res.ms_cols, res.ms_error,
             res.icc_a1, res.icc_c1)
        )
    out = pd.DataFrame(
        rows,
        columns=["summary", "n_subjects", "n_occasions", "ms_rows", "ms_cols", "ms_error",
                 "icc_a1", "icc_c1"],
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, argv, None, _hash_obj({"cmd": "icc"}), [args.scores])
    _write_csv(out, args.out)
    print(out.to_string(index=False))
    return 0


def cmd_compare(args, argv) -> int:
    df = pd.read_csv(args.scores)
    for col in ("subject_id", "group"):
        if col not in df.columns:
            raise DataFormatError(f"score CSV needs a {col} column")
    groups = sorted(df["group"].astype(str).unique())
    if len(groups) != 2:
        raise DataFormatError(f"expected exactly 2 groups, found {groups}")
    g1 = df[df["group"].astype(str) == groups[0]]
    g2 = df[df["group"].astype(str) == groups[1]]
    rows = []
    for name in _summary_columns(df, ["subject_id", "group"]):
        res = mann_whitney(g1[name].to_numpy(float), g2[name].to_numpy(float))
        rows.append((name, groups[0], groups[1], res.n1, res.n2, res.u_statistic,
                     res.p_value, res.auc))
    out = pd.DataFrame(
        rows,
        columns=["summary", "group1", "group2", "n1", "n2", "u_statistic", "p_value", "auc"],
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, argv, None, _hash_obj({"cmd": "compare"}), [args.scores])
    _write_csv(out, args.out)
    print(out.to_string(index=False))
    return 0


def cmd_validate(args, argv) -> int:
    model = load_model(args.model)
    curves_a = _load_curves_arg(args.curves_a, args.grid)
    curves_b = _load_curves_arg(args.curves_b, args.grid)
    clinical = pd.read_csv(args.clinical, dtype={"subject_id": str})
    report = validate_workflow(model, curves_a, curves_b, clinical)
    _write_manifest(args.out, argv, None, _hash_obj({"cmd": "validate"}),
                    [args.model, args.curves_a, args.curves_b, args.clinical, args.grid])
    _write_csv(report, os.path.join(args.out, "validation.csv"))
    print(f"wrote {len(report)} regression rows to {args.out}/validation.csv")
    return 0


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def build_parser() -> _Parser:
    parser = _Parser(prog="mfpcakit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mfpcakit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a reference model to curves")
    p.add_argument("--curves", required=True)
    p.add_argument("--grid", default=None)
    p.add_argument("--pve1", type=float, default=0.95)
    p.add_argument("--pve2", type=float, default=0.90)
    p.add_argument("--k1", type=int, default=None)
    p.add_argument("--k2", type=int, default=None)
    p.add_argument("--single-level", action="store_true")
    p.add_argument("--average-subjects", action="store_true",
                   help="average each subject's curves before fitting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="score curves against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--grid", default=None)
    p.add_argument("--per-occasion", action="store_true")
    p.add_argument("--levels", choices=["1", "2", "both"], default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("simulate", help="run the simulation study")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess",
                       help="QC, outlier screening and landmark registration")
    p.add_argument("--curves", required=True)
    p.add_argument("--grid", default=None)
    p.add_argument("--qc-rmin", type=float, default=0.9)
    p.add_argument("--qc-min-good", type=int, default=10)
    p.add_argument("--outlier-factor", type=float, default=1.5)
    p.add_argument("--landmarks", default="P=0.104,R=0.25,T=0.508")
    p.add_argument("--landmark-window", type=float, default=0.1,
                   help="half-width of the peak search window around each landmark")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("icc", help="test-retest reliability of summaries")
    p.add_argument("--scores", required=True,
                   help="CSV: subject_id, occasion_id, one column per summary "
                        "(or the long-format output of `project`)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_icc)

    p = sub.add_parser("compare", help="known-groups tests of summaries")
    p.add_argument("--scores", required=True,
                   help="CSV: subject_id, group, one column per summary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate",
                       help="convergent validity and responsiveness workflow")
    p.add_argument("--model", required=True)
    p.add_argument("--curves-a", required=True)
    p.add_argument("--curves-b", required=True)
    p.add_argument("--grid", default=None)
    p.add_argument("--clinical", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"mfpcakit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
