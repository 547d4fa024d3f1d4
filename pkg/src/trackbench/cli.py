"""Command-line interface: the evaluation pipeline as subcommands.

    trackbench simulate    synthesize ground truth + degraded estimate + IMU
    trackbench sync        serve | client | apply (clock-offset protocol)
    trackbench calibrate   recover device extrinsic + world alignment
    trackbench evaluate    APE/RPE per device with ratios vs. a reference
    trackbench correlate   feature-vs-error Pearson matrices
    trackbench case-study  reference-substitution R^2 report

Exit codes: 0 success, 2 usage or input validation, 3 runtime/IO/network.
Experiment bundles are described by a JSON manifest; all paths inside it are
relative to the manifest's directory. The TRACKBENCH_OUT environment variable
supplies the default output directory. Output files are written atomically
(temp file + rename).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import time

import numpy as np

from . import calibration, features, io, metrics, synth, timesync
from .errors import NoResponseError, SyncTimeoutError, ToolkitError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
ENV_OUT = "TRACKBENCH_OUT"

_RUNTIME_ERRORS = (OSError, SyncTimeoutError, NoResponseError)


def _out_dir(args) -> str:
    out = getattr(args, "out", None) or os.environ.get(ENV_OUT) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _load_manifest(path) -> tuple[dict, str]:
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    return manifest, os.path.dirname(os.path.abspath(path))


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def ratios_vs_reference(means: dict, reference: str) -> dict:
    """Percent of each device's mean error relative to the reference device
    (reference itself reports 100%)."""
    if reference not in means:
        raise ValueError(f"reference device {reference!r} not among {sorted(means)}")
    ref = means[reference]
    if ref <= 0.0:
        raise ValueError("reference mean must be positive")
    return {dev: 100.0 * m / ref for dev, m in means.items()}


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.spec_json:
        with open(args.spec_json, "r", encoding="utf-8") as f:
            doc = json.load(f)
        degradation = doc.pop("degradation", None)
        spec = synth.MotionSpec(**doc)
        model = (synth.DegradationModel(**degradation) if degradation
                 else synth.DegradationModel(rng_seed=args.seed))
    else:
        spec = synth.MotionSpec(
            pattern=args.pattern,
            bpm=args.bpm,
            beats_per_cycle=args.beats_per_cycle,
            amplitude=args.amplitude,
            duration=args.duration,
            gt_rate=args.gt_rate,
            est_rate=args.est_rate,
        )
        model = synth.DegradationModel(
            trans_noise_std=args.trans_noise,
            rot_noise_std=args.rot_noise,
            drift_rate=args.drift_rate,
            latency=args.latency,
            clock_offset=args.clock_offset,
            rng_seed=args.seed,
        )
    out = _out_dir(args)
    gt = synth.generate(spec)
    est = synth.degrade(gt, model, est_rate=spec.est_rate)
    imu = synth.derive_imu(gt, rate=args.imu_rate)
    io.write_trajectory(gt, os.path.join(out, "gt.csv"))
    io.write_trajectory(est, os.path.join(out, "est.csv"))
    io.write_imu(imu, os.path.join(out, "imu.csv"))
    manifest = {
        "reference_device": args.device_id,
        "devices": [{
            "id": args.device_id,
            "label": f"{spec.pattern}-{spec.bpm:g}bpm",
            "estimate": "est.csv",
            "ground_truth": "gt.csv",
            "imu": "imu.csv",
        }],
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(json.dumps({"out": out, **manifest}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sync
# ---------------------------------------------------------------------------

def cmd_sync(args) -> int:
    if args.mode == "serve":
        server = timesync.SyncServer(args.host, args.port, rate=args.rate)
        with server:
            host, port = server.address
            print(f"serving reference time on {host}:{port} at {args.rate:g} msg/s")
            try:
                if args.serve_duration is not None:
                    time.sleep(args.serve_duration)
                else:
                    while True:
                        time.sleep(3600)
            except KeyboardInterrupt:
                pass
        return EXIT_OK

    if args.mode == "client":
        est = timesync.run_sync_session(
            args.host, args.port, duration=args.duration, timeout=args.timeout,
            method="median" if args.median else "mean",
        )
        out = args.offset or os.path.join(_out_dir(args), "offset.txt")
        timesync.save_offset(est, out)
        print(f"delta={est.delta:.6f} s jitter={est.jitter_std:.6f} s "
              f"n={est.n_samples} owd={est.assumed_one_way_delay * 1e3:.3f} ms -> {out}")
        return EXIT_OK

    # apply
    est = timesync.load_offset(args.offset)
    traj = io.read_trajectory(args.input)
    corrected = timesync.apply_offset(traj, est)
    io.write_trajectory(corrected, args.output)
    print(f"shifted {len(corrected)} timestamps by {-est.delta:.6f} s -> {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    gt = io.read_trajectory(args.gt)
    est = io.read_trajectory(args.est)
    if args.offset:
        est = timesync.apply_offset(est, timesync.load_offset(args.offset))
    result = calibration.calibrate_extrinsic(
        gt, est,
        max_iterations=args.max_iterations,
        min_pairs=args.min_pairs,
        trim_fraction=args.trim,
    )
    calibration.save_extrinsic(result, args.out)
    flag = "" if result.converged else " (NOT converged)"
    print(f"residual_rmse={result.residual_rmse:.6g} m "
          f"rotation_rms={result.rotation_residual_rms:.6g} rad "
          f"iterations={result.iterations}{flag} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _prepared_pair(row: dict, base: str):
    """Load one manifest row and apply offset/extrinsic corrections."""
    est = io.read_trajectory(_resolve(base, row["estimate"]))
    gt = io.read_trajectory(_resolve(base, row["ground_truth"]))
    if row.get("offset"):
        est = timesync.apply_offset(est, timesync.load_offset(_resolve(base, row["offset"])))
    if row.get("calibration"):
        result = calibration.load_extrinsic(_resolve(base, row["calibration"]))
        gt = calibration.apply_extrinsic(gt, result.extrinsic)
    return est, gt


def _slug(row: dict) -> str:
    label = row.get("label")
    return f"{row['id']}_{label}" if label else row["id"]


def _evaluate_row(row: dict, base: str, out: str, segment_length: float) -> dict:
    est, gt = _prepared_pair(row, base)
    ape_series = metrics.ape(est, gt)
    rpe_series = metrics.rpe(est, gt, segment_length)
    slug = _slug(row)
    for kind, series in (("ape", ape_series), ("rpe", rpe_series)):
        metrics.write_error_series(
            series,
            os.path.join(out, f"{slug}_{kind}.csv"),
            os.path.join(out, f"{slug}_{kind}_stats.json"),
        )
    return {
        "device": row["id"],
        "label": row.get("label", ""),
        "mean_rpe_cm": rpe_series.mean * 100.0,
        "mean_ape_cm": ape_series.mean * 100.0,
        "n_rpe_segments": rpe_series.n,
        "n_ape_points": ape_series.n,
    }


def cmd_evaluate(args) -> int:
    manifest, base = _load_manifest(args.manifest)
    rows = manifest.get("devices", [])
    if not rows:
        print("manifest lists no devices", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args)
    results = []
    failures = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=min(8, len(rows))) as pool:
        futures = {
            pool.submit(_evaluate_row, row, base, out, args.segment_length): row
            for row in rows
        }
        for fut in concurrent.futures.as_completed(futures):
            row = futures[fut]
            try:
                results.append(fut.result())
            except Exception as e:  # reported per device without aborting others
                failures.append({"device": row.get("id", "?"),
                                 "label": row.get("label", ""),
                                 "error": f"{type(e).__name__}: {e}"})
    if not results:
        for f in failures:
            print(f"{f['device']}: {f['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    # thread completion order is arbitrary; sort for reproducible reports
    results.sort(key=lambda r: (r["device"], r["label"]))
    failures.sort(key=lambda f: (f["device"], f["label"]))

    by_device: dict[str, dict] = {}
    for r in results:
        d = by_device.setdefault(r["device"], {"rpe": [], "ape": []})
        d["rpe"].append(r["mean_rpe_cm"])
        d["ape"].append(r["mean_ape_cm"])
    rpe_means = {dev: float(np.mean(v["rpe"])) for dev, v in by_device.items()}
    ape_means = {dev: float(np.mean(v["ape"])) for dev, v in by_device.items()}

    reference = args.reference or manifest.get("reference_device")
    if not reference or reference not in rpe_means:
        print(f"reference device {reference!r} missing from evaluated devices "
              f"{sorted(rpe_means)}; pass --reference", file=sys.stderr)
        return EXIT_USAGE
    rpe_ratio = ratios_vs_reference(rpe_means, reference)
    ape_ratio = ratios_vs_reference(ape_means, reference)

    devices = [
        {
            "device": dev,
            "runs": len(by_device[dev]["rpe"]),
            "mean_rpe_cm": rpe_means[dev],
            "rpe_ratio_pct": rpe_ratio[dev],
            "mean_ape_cm": ape_means[dev],
            "ape_ratio_pct": ape_ratio[dev],
        }
        for dev in sorted(rpe_means)
    ]
    report = {"reference": reference, "segment_length_m": args.segment_length,
              "devices": devices, "runs": results, "failures": failures}
    _write_json(os.path.join(out, "report.json"), report)

    header = (f"{'device':<10} {'runs':>4} {'RPE (cm)':>9} {'RPE%':>7} "
              f"{'APE (cm)':>9} {'APE%':>7}")
    lines = [header, "-" * len(header)]
    for d in devices:
        lines.append(
            f"{d['device']:<10} {d['runs']:>4} {d['mean_rpe_cm']:>9.3f} "
            f"{d['rpe_ratio_pct']:>6.1f}% {d['mean_ape_cm']:>9.3f} "
            f"{d['ape_ratio_pct']:>6.1f}%"
        )
    for f in failures:
        lines.append(f"{f['device']:<10} FAILED: {f['error']}")
    text = "\n".join(lines)
    _write_text(os.path.join(out, "report.txt"), text + "\n")
    print(text)

    bar_lines = ["device,label,metric,mean_cm"]
    for r in sorted(results, key=lambda r: (r["device"], r["label"])):
        bar_lines.append(f"{r['device']},{r['label']},rpe,{r['mean_rpe_cm']!r}")
        bar_lines.append(f"{r['device']},{r['label']},ape,{r['mean_ape_cm']!r}")
    _write_text(os.path.join(out, "device_bars.csv"), "\n".join(bar_lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# correlate
# ---------------------------------------------------------------------------

def _feature_tables(row: dict, base: str) -> list[features.FeatureTable]:
    tables = []
    if row.get("features"):
        frame_feats = features.read_frame_features(_resolve(base, row["features"]))
        tables.append(features.FeatureTable.from_frame_features(frame_feats))
    elif row.get("frames"):
        index = io.read_frame_index(_resolve(base, row["frames"]), require_files=True)
        counts = None
        if row.get("keypoints"):
            counts = _read_count_column(_resolve(base, row["keypoints"]))
        frame_feats = features.frame_features_from_files(
            index, base_dir=os.path.dirname(_resolve(base, row["frames"])),
            keypoint_counts=counts,
        )
        tables.append(features.FeatureTable.from_frame_features(frame_feats))
    if row.get("imu"):
        samples = io.read_imu(_resolve(base, row["imu"]))
        axis_map = row.get("axis_map", features.DEFAULT_AXIS_MAP)
        tables.append(features.FeatureTable.from_imu_features(
            features.imu_features(samples, axis_map)))
    return tables


def _read_count_column(path) -> list[int]:
    counts = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            last = line.split(",")[-1]
            if lineno == 1 and not last.replace(".", "").lstrip("-").isdigit():
                continue
            counts.append(int(float(last)))
    return counts


def cmd_correlate(args) -> int:
    manifest, base = _load_manifest(args.manifest)
    rows = manifest.get("devices", [])
    out = _out_dir(args)
    all_entries: dict[str, dict] = {}
    any_ok = False
    for row in rows:
        slug = _slug(row)
        try:
            tables = _feature_tables(row, base)
            if not tables:
                continue
            est, gt = _prepared_pair(row, base)
            series = metrics.rpe(est, gt, args.segment_length)
            entries = []
            for table in tables:
                entries.extend(features.correlation_report(table, series).entries)
            report = features.CorrelationReport(entries)
            features.save_correlation_report(
                report, os.path.join(out, f"{slug}_correlation.json"))
            all_entries[slug] = {e.name: e.r for e in entries}
            any_ok = True
        except Exception as e:
            print(f"{slug}: {type(e).__name__}: {e}", file=sys.stderr)
    if not any_ok:
        print("no device produced a correlation report", file=sys.stderr)
        return EXIT_RUNTIME
    names = sorted({n for cols in all_entries.values() for n in cols})
    lines = ["device," + ",".join(names)]
    for slug in sorted(all_entries):
        cols = all_entries[slug]
        cells = ["" if cols.get(n) is None else repr(cols[n]) for n in names]
        lines.append(f"{slug}," + ",".join(cells))
    _write_text(os.path.join(out, "correlation_matrix.csv"), "\n".join(lines) + "\n")
    print(f"wrote correlation matrix for {len(all_entries)} device runs -> "
          f"{os.path.join(out, 'correlation_matrix.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# case study
# ---------------------------------------------------------------------------

def _case_runs(manifest: dict):
    cs = manifest.get("case_study")
    if cs is None:
        return None
    return cs if isinstance(cs, list) else [cs]


def cmd_case_study(args) -> int:
    manifest, base = _load_manifest(args.manifest)
    runs = _case_runs(manifest)
    if not runs:
        print("manifest has no 'case_study' section", file=sys.stderr)
        return EXIT_USAGE
    for run in runs:
        if not run.get("mount"):
            print("case study requires a 'mount' calibration (reference -> target "
                  "extrinsic JSON from `trackbench calibrate`)", file=sys.stderr)
            return EXIT_USAGE
    out = _out_dir(args)

    per_run = []
    pooled = {"rpe": ([], []), "ape": ([], [])}
    for run in runs:
        ref_est = io.read_trajectory(_resolve(base, run["reference_estimate"]))
        target_est = io.read_trajectory(_resolve(base, run["target_estimate"]))
        gt = io.read_trajectory(_resolve(base, run["ground_truth"]))
        if run.get("target_calibration"):
            cal = calibration.load_extrinsic(_resolve(base, run["target_calibration"]))
            gt = calibration.apply_extrinsic(gt, cal.extrinsic)
        mount = calibration.load_extrinsic(_resolve(base, run["mount"])).extrinsic

        true_ape = metrics.ape(target_est, gt)
        true_rpe = metrics.rpe(target_est, gt, args.segment_length)
        _, sub_ape, sub_rpe = metrics.substitute_reference(
            ref_est, mount, target_est, args.segment_length)

        r2 = {}
        for kind, a, b in (("rpe", true_rpe, sub_rpe), ("ape", true_ape, sub_ape)):
            va, vb = metrics._pair_series(a, b)
            pooled[kind][0].append(va)
            pooled[kind][1].append(vb)
            r2[kind] = metrics.compare_error_series(a, b)
        per_run.append({
            "label": run.get("label", ""),
            "r2_rpe": r2["rpe"],
            "r2_ape": r2["ape"],
            "mean_rpe_vs_mocap_cm": true_rpe.mean * 100.0,
            "mean_rpe_vs_reference_cm": sub_rpe.mean * 100.0,
            "mean_ape_vs_mocap_cm": true_ape.mean * 100.0,
            "mean_ape_vs_reference_cm": sub_ape.mean * 100.0,
        })

    def pooled_r2(kind: str) -> float:
        va = np.concatenate(pooled[kind][0])
        vb = np.concatenate(pooled[kind][1])
        da, db = va - va.mean(), vb - vb.mean()
        denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
        r = float(np.sum(da * db)) / denom
        return r * r

    report = {"r2_rpe": pooled_r2("rpe"), "r2_ape": pooled_r2("ape"), "runs": per_run}
    _write_json(os.path.join(out, "case_study.json"), report)
    lines = ["label,metric,r2"]
    for run in per_run:
        lines.append(f"{run['label']},rpe,{run['r2_rpe']!r}")
        lines.append(f"{run['label']},ape,{run['r2_ape']!r}")
    lines.append(f"pooled,rpe,{report['r2_rpe']!r}")
    lines.append(f"pooled,ape,{report['r2_ape']!r}")
    _write_text(os.path.join(out, "case_study.csv"), "\n".join(lines) + "\n")
    print(f"R^2 (RPE) = {report['r2_rpe']:.3f}   R^2 (APE) = {report['r2_ape']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackbench",
        description="Trajectory evaluation toolkit for head-tracking testbeds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic ground truth and estimate")
    p.add_argument("--pattern", default="shift", choices=synth.PATTERNS)
    p.add_argument("--bpm", type=float, default=50.0)
    p.add_argument("--beats-per-cycle", type=int, default=None, dest="beats_per_cycle")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--gt-rate", type=float, default=100.0, dest="gt_rate")
    p.add_argument("--est-rate", type=float, default=90.0, dest="est_rate")
    p.add_argument("--imu-rate", type=float, default=200.0, dest="imu_rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift-rate", type=float, default=0.0, dest="drift_rate")
    p.add_argument("--trans-noise", type=float, default=0.0, dest="trans_noise")
    p.add_argument("--rot-noise", type=float, default=0.0, dest="rot_noise")
    p.add_argument("--latency", type=float, default=0.0)
    p.add_argument("--clock-offset", type=float, default=0.0, dest="clock_offset")
    p.add_argument("--device-id", default="SIM", dest="device_id")
    p.add_argument("--spec-json", default=None, dest="spec_json",
                   help="motion spec as a JSON document (optional "
                        "'degradation' sub-object), overriding the flags")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync", help="clock-offset protocol")
    p.add_argument("mode", choices=["serve", "client", "apply"])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9471)
    p.add_argument("--rate", type=float, default=timesync.DEFAULT_STREAM_RATE)
    p.add_argument("--duration", type=float, default=timesync.DEFAULT_SESSION_DURATION)
    p.add_argument("--serve-duration", type=float, default=None, dest="serve_duration")
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--median", action="store_true",
                   help="median offset estimator for heavy-tailed jitter")
    p.add_argument("--offset", default=None, help="offset record path")
    p.add_argument("--input", default=None, help="pose CSV to correct (apply)")
    p.add_argument("--output", default=None, help="corrected pose CSV (apply)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("calibrate", help="recover extrinsic and world alignment")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--offset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iterations", type=int, default=100, dest="max_iterations")
    p.add_argument("--min-pairs", type=int, default=50, dest="min_pairs")
    p.add_argument("--trim", type=float, default=0.0,
                   help="fraction of worst pairs to drop in a re-fit pass")
    p.set_defaults(func=cmd_calibrate)

    for name, fn in (("evaluate", cmd_evaluate), ("correlate", cmd_correlate),
                     ("case-study", cmd_case_study)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--segment-length", type=float,
                       default=metrics.DEFAULT_SEGMENT_LENGTH, dest="segment_length")
        p.add_argument("--out", default=None)
        if name == "evaluate":
            p.add_argument("--reference", default=None,
                           help="reference device id for the ratio columns")
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ToolkitError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
