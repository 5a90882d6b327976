"""Command-line surface: simulate -> features -> train -> evaluate -> report.

Every subcommand is deterministic given its inputs and seed; errors exit
nonzero with a single machine-readable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifiers import load_model, save_model
from .config import load_config
from .errors import DataError, FastnoseError
from .features import (
    extract_phase_features,
    extract_spectral_features,
    labels_path,
    write_labels,
)
from .dsp_features import write_phase_features, write_spectral_features
from .recordings import read_manifest
from .sensor_physics import load_sensor_params
from .simulate import (
    PROTOCOL_NAMES,
    PlantScalars,
    calibrate_channel,
    parse_cycle_profile,
    run_protocol,
)
from .tasks import (
    FeatureTable,
    concentration_curve,
    evaluate_pulse,
    evaluate_temporal,
    summarize,
    temporal_tasks,
    train_pulse,
    train_temporal,
    write_confusion,
    write_result_rows,
)

TEMPORAL = {"freq": "freq", "freqpair": "freqpair", "corr": "corr"}


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.scale is not None:
        cfg.set("protocol", "scale", args.scale)
    trials = run_protocol(
        args.protocol, args.seed, args.out, cfg=cfg, fmt=args.format,
        params_path=args.params,
        progress=(lambda i, n: print(f"\r{i}/{n} trials", end="", flush=True))
        if args.verbose else None,
    )
    if args.verbose:
        print()
    print(f"simulated {len(trials)} trials -> {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    table = load_sensor_params(args.params)
    plant = PlantScalars.from_config(cfg, amb_phase=0.0)
    (low, _), (high, _) = parse_cycle_profile(cfg)
    with open(args.out, "w") as fh:
        fh.write("sensor_id,slope_c_per_ohm,intercept_c,dt_target_c,v_dac\n")
        for sensor in range(1, 9):
            cal = calibrate_channel(plant, table, [low, high])
            for dt, v in zip(cal.dt_targets_c, cal.v_dac):
                fh.write(
                    f"{sensor},{cal.slope_c_per_ohm!r},{cal.intercept_c!r},"
                    f"{float(dt)!r},{float(v)!r}\n"
                )
    print(f"calibration map -> {args.out}")
    return 0


def _cmd_features(args) -> int:
    if args.mode == "phase":
        fs = extract_phase_features(args.indir, params_path=args.params)
        write_phase_features(args.out, fs.rows)
    else:
        fs = extract_spectral_features(args.indir, params_path=args.params, source=args.source)
        write_spectral_features(args.out, fs.rows)
    write_labels(labels_path(args.out), fs.labels)
    print(f"{len(fs.rows)} {args.mode} features -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    table = FeatureTable.from_files(args.features)
    if args.task == "pulse":
        model, extra = train_pulse(table, cfg, seed=args.seed)
        save_model(args.out, model, extra)
    else:
        bundle = train_temporal(table, TEMPORAL[args.task], cfg, seed=args.seed)
        # one ensemble per (gas pair, subtask); flattened into a single file
        from .classifiers import EnsembleModel

        names, models = [], []
        for pair in sorted(bundle):
            for sub in sorted(bundle[pair]):
                names.append(f"{pair}|{sub}")
                models.append(bundle[pair][sub])
        wrapper = EnsembleModel(models=models, classes=("bundle",), seed=args.seed)
        save_model(args.out, wrapper, {"task": args.task, "names": names, "seed": args.seed})
    print(f"model -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    model, extra = load_model(args.model)
    table = FeatureTable.from_files(args.features)
    task = extra.get("task")
    out = Path(args.out)
    if task == "pulse":
        ev = evaluate_pulse(model, extra, table)
        write_result_rows(out, ev.rows)
        for dur, (classes, conf) in ev.confusions.items():
            write_confusion(out.with_name(out.stem + f"_confusion_{dur}ms.csv"), classes, conf)
    elif task in TEMPORAL:
        bundle: dict = {}
        for name, m in zip(extra["names"], model.models):
            pair, _, sub = name.partition("|")
            bundle.setdefault(pair, {})[sub] = m
        rows = evaluate_temporal(bundle, table, task, seed=extra.get("seed", 0))
        write_result_rows(out, rows)
    else:
        raise DataError(f"model file has unknown task {task!r}")
    print(f"results -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    cfg = load_config(args.config)
    root = Path(args.indir)
    outdir = root / "report"
    outdir.mkdir(parents=True, exist_ok=True)
    made = []

    run_a, run_b, run_c = root / "A", root / "B", root / "C"
    if run_a.exists():
        table = FeatureTable.from_featureset(extract_phase_features(run_a))
        model, extra = train_pulse(table, cfg, seed=cfg.getint("protocol", "seed"))
        ev = evaluate_pulse(model, extra, table)
        write_result_rows(outdir / "pulse_duration_sweep.csv", ev.rows)
        made.append("pulse_duration_sweep.csv")
    if run_b.exists():
        table = FeatureTable.from_featureset(extract_phase_features(run_b))
        raw = FeatureTable.from_featureset(extract_phase_features(run_b, normalized=False))
        rows = [
            dict(r, feature="normalized")
            for r in concentration_curve(table, cfg, seed=cfg.getint("protocol", "seed"))
        ] + [
            dict(r, feature="raw")
            for r in concentration_curve(raw, cfg, seed=cfg.getint("protocol", "seed"))
        ]
        write_result_rows(outdir / "concentration_robustness.csv", rows)
        made.append("concentration_robustness.csv")
    if run_b.exists() and run_c.exists():
        tb = FeatureTable.from_featureset(extract_spectral_features(run_b))
        tc = FeatureTable.from_featureset(extract_spectral_features(run_c))
        seeds = range(cfg.getint("ml", "n_seeds"))
        for task in ("freq", "freqpair", "corr"):
            rows = temporal_tasks(tb, tc, task, cfg, seeds=seeds)
            write_result_rows(outdir / f"results_{task}.csv", rows)
            agg = summarize(rows, ("task", "gas_pair", "frequency_hz"))
            write_result_rows_agg(outdir / f"results_{task}_summary.csv", agg)
            made.append(f"results_{task}.csv")
    if not made:
        raise DataError(f"no protocol runs (A/, B/, C/) found under {root}")
    # chi-square randomisation hygiene over whatever manifests exist
    from .evaluation import chi2_randomization

    lines = []
    for run in (run_a, run_b, run_c):
        mpath = run / "manifest.csv"
        if mpath.exists():
            trials = read_manifest(mpath)
            try:
                p, stat, dof = chi2_randomization(
                    [t.odour_a for t in trials], np.array([t.onset_ms for t in trials])
                )
                lines.append(f"{run.name}: chi2={stat:.2f} dof={dof} p={p:.3f}")
            except DataError as exc:
                lines.append(f"{run.name}: skipped ({exc})")
    (outdir / "randomization_check.txt").write_text("\n".join(lines) + "\n")
    print(f"report -> {outdir} ({', '.join(made)})")
    return 0


def write_result_rows_agg(path, rows: list[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) for c in cols) + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fastnose",
        description="High-speed electronic nose simulator and decoding benchmarks",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one experiment protocol")
    p.add_argument("--protocol", required=True, choices=PROTOCOL_NAMES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "npz"), default="csv")
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--params", default=None, help="sensor parameter file")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="emit the heater calibration map")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--params", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("features", help="extract features from recordings")
    p.add_argument("--mode", required=True, choices=("phase", "dft"))
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", choices=("sensor", "t_hot", "pid"), default="sensor")
    p.add_argument("--params", default=None)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="train a classifier ensemble")
    p.add_argument("--task", required=True, choices=("pulse", "freq", "freqpair", "corr"))
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model on features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="summary tables and plot-ready CSVs")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except FastnoseError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": "FileNotFound", "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
