"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from fusionloc import formats
from fusionloc.frame_alignment import AlignmentError, alignment_mse, apply_transform, associate, horn_align
from fusionloc.fusion_filter import NumericalFailure, run_filter, sort_measurements
from fusionloc.sim_harness import PRESETS, dead_reckoning, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

SWEEP_PARAMS = ("radius_r", "radius_l", "bias")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _parse_range(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(EXIT_CONFIG, f"--range must be lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--range must be lo:hi:n, got {text!r}") from None
    if n < 1 or not np.isfinite([lo, hi]).all() or hi < lo:
        raise CliError(EXIT_CONFIG, f"--range needs lo <= hi and n >= 1, got {text!r}")
    return np.linspace(lo, hi, n)


def _parse_window(text: str | None):
    if text is None:
        return None
    try:
        t0, t1 = (float(v) for v in text.split(":"))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--window must be t0:t1, got {text!r}") from None
    return t0, t1


def _load_scenario(path):
    try:
        return formats.load_scenario(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read scenario: {exc}") from None


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory: {exc}") from None
    return out


def cmd_run(args) -> int:
    s = _load_scenario(args.scenario)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    estimate = args.estimate_uncertainties == "on"
    result = run_scenario(s, estimate)
    out = _outdir(args.out)
    formats.write_csv(out / "estimate.csv", formats.ESTIMATE_COLUMNS, formats.estimate_table(result.history))
    formats.write_csv(out / "truth.csv", formats.TRUTH_COLUMNS, formats.truth_table(result.truth))
    formats.write_csv(out / "metrics.csv", formats.METRICS_COLUMNS, result.metrics.table())
    if args.export_log:
        formats.write_sensor_log(out / "sensors.jsonl", result.measurements)
        formats.save_params(out / "filter.toml", result.config, result.x0, result.P0, s.n_steps)
    m = result.metrics
    print(
        f"final position error {m.final_pos_err:.4f} m, final yaw error {np.degrees(m.final_yaw_err):.3f} deg "
        f"(estimation {'on' if estimate else 'off'}, seed {s.seed})"
    )
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    values = _parse_range(args.range)
    s = _load_scenario(args.scenario)
    tp = s.true_params
    base = {"radius_r": tp.radius_r, "radius_l": tp.radius_l, "bias": tp.bias}
    out = _outdir(args.out)
    rows = []
    for i, value in enumerate(values):
        nominal = dict(base)
        nominal[args.param] = base[args.param] + value
        try:
            variant = dead_reckoning(s, **nominal)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"grid point {value}: {exc}") from None
        result = run_scenario(variant, estimate_uncertainties=False)
        formats.write_csv(
            out / f"traj_{i:03d}.csv", formats.ESTIMATE_COLUMNS, formats.estimate_table(result.history)
        )
        rows.append((i, value, result.metrics.final_pos_err, result.metrics.final_yaw_err))
        if i == 0:
            formats.write_csv(out / "truth.csv", formats.TRUTH_COLUMNS, formats.truth_table(result.truth))
    formats.write_csv(out / "summary.csv", formats.SUMMARY_COLUMNS, rows)
    for i, value, pe, ye in rows:
        print(f"{args.param} {value:+.6g}: final position error {pe:.4f} m, yaw error {np.degrees(ye):.3f} deg")
    return EXIT_OK


def cmd_align(args) -> int:
    window = _parse_window(args.window)
    try:
        a = formats.read_trajectory(args.path_a)
        b = formats.read_trajectory(args.path_b)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read trajectory: {exc}") from None
    try:
        pa, pb = associate(a, b, window)
        tf = horn_align(pa, pb)
    except AlignmentError as exc:
        raise CliError(EXIT_CONFIG, f"alignment failed: {exc}") from None
    mse = alignment_mse(tf, pa, pb)
    print(f"theta={tf.theta!r} tx={tf.tx!r} ty={tf.ty!r} mse={mse!r} pairs={len(pa)}")
    if args.out:
        out = _outdir(args.out)
        formats.write_csv(out / "alignment.csv", ("theta", "tx", "ty", "mse", "pairs"), [[tf.theta, tf.tx, tf.ty, mse, len(pa)]])
        moved = apply_transform(tf, b.xy)
        formats.write_csv(out / "aligned_b.csv", ("t", "X", "Y"), np.column_stack([b.t, moved]))
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        log = formats.read_sensor_log(args.log)
        config, x0, P0, n_steps, t0, frames = formats.load_params(args.params)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read input: {exc}") from None
    try:
        history = run_filter(sort_measurements(log), x0, P0, config, n_steps, t0, frames=frames)
    except NumericalFailure:
        raise
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    out = _outdir(args.out)
    formats.write_csv(out / "estimate.csv", formats.ESTIMATE_COLUMNS, formats.estimate_table(history))
    print(f"replayed {len(log)} records over {n_steps} filter steps")
    return EXIT_OK


def cmd_preset(args) -> int:
    s = PRESETS[args.name](seed=args.seed)
    text = formats.dumps_scenario(s)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write scenario: {exc}") from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusionloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write estimate/truth/metrics CSVs")
    p.add_argument("scenario")
    p.add_argument("--estimate-uncertainties", choices=("on", "off"), default="on")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--export-log", action="store_true", help="also write sensors.jsonl and filter.toml for replay")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sensitivity", help="dead-reckoning sweep over one model parameter error")
    p.add_argument("scenario")
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--range", required=True, help="lo:hi:n offsets from the true value (m or rad/s); write --range=-a:b:n for a negative start")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("align", help="rigid 2D alignment of trajectory B onto trajectory A")
    p.add_argument("path_a")
    p.add_argument("path_b")
    p.add_argument("--window", help="t0:t1 restricts the associated samples")
    p.add_argument("--out")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("replay", help="run the filter over a recorded JSONL sensor log")
    p.add_argument("log")
    p.add_argument("params")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("preset", help="write a built-in scenario as TOML")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except formats.LogFormatError as exc:
        print(f"error: malformed sensor log, {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except formats.ConfigError as exc:
        print(f"error: invalid configuration, {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"error: numerical failure, {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
