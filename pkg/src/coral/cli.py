"""Command line interface: ``coral <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical or insufficient-data error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .classify import FeatureVector, LogisticModel, TrainConfig, predict, train
from .cloud import RigidTransform, apply_transform, voxel_downsample
from .config import PROFILES, RunConfig, load_config, load_manifest, load_sequence, params_for
from .entropy import coral_quality, export_per_point
from .errors import CoralError, DataError, NumericalError, UsageError
from .fileio import FORMATS, load_cloud, save_cloud, save_poses, write_report, write_surface
from .harness.evaluation import (
    EvaluationReport,
    Protocol,
    evaluate_protocol,
    parameter_record,
    protocol_samples,
    quality_surface,
)
from .harness.methods import METHODS
from .harness.perturb import induce_error
from .harness.synth import KINDS, ScanPair, environment_class, synth_sequence

log = logging.getLogger("coral")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", type=Path, help="run configuration file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="parameter profile (default eth)")
    p.add_argument("--threads", type=int, help="worker threads (overrides CORAL_NUM_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    if seed:
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")


def _pair_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--a", required=True, type=Path, help="first cloud (world frame)")
    p.add_argument("--b", required=True, type=Path, help="second cloud (world frame)")
    p.add_argument("--format", choices=FORMATS, help="cloud format (default: by extension)")
    p.add_argument("--no-downsample", action="store_true", help="skip load-time voxel filter")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="coral", description="Point cloud alignment correctness (CorAl).")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("assess", help="quality of one aligned pair")
    _pair_args(p)
    _common(p, seed=False)
    p.add_argument("--export", type=Path, help="write per-point 'x y z q valid' lines here")
    p.add_argument("--model", type=Path, help="also classify with this model file")

    p = sub.add_parser("train", help="fit a classifier on a dataset manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--out", required=True, type=Path, help="model file to write")
    _common(p)

    p = sub.add_parser("evaluate", help="run an evaluation protocol on a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--model", type=Path, help="score a fixed model instead of training")
    p.add_argument("--folds", type=int)
    p.add_argument("--out", type=Path, help="report directory (default from config)")
    _common(p)

    p = sub.add_parser("sweep", help="Q over a grid of offsets of cloud b")
    _pair_args(p)
    p.add_argument("--range", type=float, default=0.4, help="max |dx|, |dy| in meters")
    p.add_argument("--steps", type=int, default=9)
    p.add_argument("--theta-range", type=float, default=0.0, help="max |dtheta| in degrees")
    p.add_argument("--theta-steps", type=int, default=1)
    p.add_argument("--out", type=Path, help="CSV file (default stdout)")
    _common(p, seed=False)

    p = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kind", action="append", choices=KINDS,
                   help="scene kind, repeatable (default corridor)")
    p.add_argument("--sequences", type=int, default=1, help="sequences per kind")
    p.add_argument("--scans", type=int, default=6, help="scans per sequence")
    p.add_argument("--density", type=float, default=100.0, help="points per m^2")
    p.add_argument("--extent", type=float, default=10.0, help="scene size in meters")
    p.add_argument("--noise", type=float, default=0.01, help="range noise sigma in meters")
    p.add_argument("--falloff", type=float, help="range thinning scale in meters")
    p.add_argument("--format", choices=FORMATS, default="xyz-ascii")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("tune", help="sensitivity ratio Q_s over a parameter grid")
    _pair_args(p)
    p.add_argument("--r-min", type=float, nargs="+")
    p.add_argument("--r-max", type=float, nargs="+")
    p.add_argument("--alpha-deg", type=float, nargs="+")
    p.add_argument("--epsilon", type=float, nargs="+")
    p.add_argument("--e-reject", type=float, nargs="+")
    p.add_argument("--out", type=Path, help="CSV file (default stdout)")
    _common(p)
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.profile)
    return cfg.with_seed(getattr(args, "seed", None))


def _load_pair(args, cfg: RunConfig) -> ScanPair:
    a = load_cloud(args.a, args.format)
    b = load_cloud(args.b, args.format)
    if len(a) == 0 or len(b) == 0:
        raise DataError("both clouds must be non-empty")
    if cfg.downsample > 0 and not args.no_downsample:
        a, b = voxel_downsample(a, cfg.downsample), voxel_downsample(b, cfg.downsample)
    return ScanPair(a, b, "cli", 0)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_assess(args) -> int:
    cfg = _config(args)
    pair = _load_pair(args, cfg)
    res = coral_quality(pair.cloud_a, pair.cloud_b, cfg.entropy)
    out = {"status": res.status.value, "overlap_ratio": res.overlap_ratio,
           "h_sep": res.h_sep, "h_joint": res.h_joint, "q": res.q, "points_used": res.n_used}
    if args.export is not None and res.measured:
        export_per_point(res, pair.cloud_a, pair.cloud_b, args.export)
    if args.model is not None:
        model = LogisticModel.load(args.model)
        if model.method_tag not in ("coral", "coral-median"):
            raise UsageError(f"assess classifies with CorAl features; model is {model.method_tag!r}")
        if res.measured:
            f = FeatureVector(res.h_joint, res.h_sep, None, model.method_tag)
        else:
            f = FeatureVector.forced(method=model.method_tag)
        p, verdict = predict(model, f)
        out.update(probability=p, verdict=verdict.value)
    print(json.dumps(out, indent=2, sort_keys=True, allow_nan=True))
    return 0


def _manifest_samples(args, cfg: RunConfig, method: str):
    manifest = load_manifest(args.manifest)
    seqs, params = [], {}
    for entry in manifest.sequences:
        seqs.append(load_sequence(entry, cfg.downsample))
        params[entry.sequence_id] = params_for(entry, cfg)
    return protocol_samples(seqs, method, params, cfg.error)


def cmd_train(args) -> int:
    cfg = _config(args)
    method = args.method or cfg.method
    samples = _manifest_samples(args, cfg, method)
    model = train([s.example for s in samples], TrainConfig(), method_tag=method)
    model.save(args.out)
    log.info("trained %s model on %d instances", method, len(samples))
    if model.separated:
        print("warning: training data is perfectly separable", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    if args.model is not None:
        model = LogisticModel.load(args.model)
        method = args.method or model.method_tag
        if method != model.method_tag:
            raise UsageError(f"--method {method} does not match model tag {model.method_tag}")
    else:
        method = args.method or cfg.method
    samples = _manifest_samples(args, cfg, method)
    if args.model is not None:
        report = EvaluationReport("fixed-model", method,
                                  parameters=parameter_record(cfg.method_params, cfg.error))
        for s in samples:
            report.record(s, predict(model, s.example.features)[1])
        report.sorted()
    else:
        protocol = Protocol(args.protocol or cfg.protocol)
        report = evaluate_protocol(protocol, samples, method, args.folds or cfg.folds,
                                   cfg.error.seed, parameters=parameter_record(cfg.method_params, cfg.error))
    csv_path, json_path = write_report(report, args.out or Path(cfg.output))
    print(f"{report.protocol} {method}: accuracy {report.accuracy:.4f} "
          f"({report.overall.total} instances) -> {csv_path}, {json_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.steps < 1 or args.theta_steps < 1:
        raise UsageError("--steps and --theta-steps must be >= 1")
    pair = _load_pair(args, cfg)
    xy = np.linspace(-args.range, args.range, args.steps)
    th = np.radians(np.linspace(-args.theta_range, args.theta_range, args.theta_steps))
    rows = quality_surface(pair, cfg.entropy, xy, xy, th)
    if args.out is None:
        sys.stdout.write("dx dy dtheta Q\n")
        for dx, dy, dth, q in rows:
            sys.stdout.write(f"{dx:.6f} {dy:.6f} {dth:.6f} {q:.9f}\n")
    else:
        write_surface(rows, args.out)
    return 0


def cmd_synth(args) -> int:
    kinds = args.kind or ["corridor"]
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    ext = ".pcd" if args.format == "pcd-ascii" else ".xyz"
    sections = []
    seed_seq = np.random.SeedSequence(args.seed)
    children = iter(seed_seq.spawn(len(kinds) * args.sequences))
    for kind in kinds:
        for s in range(args.sequences):
            child = next(children)
            seq_id = f"{kind}-{s:02d}"
            scene_seed, yaw_seed = child.spawn(2)
            _, scans = synth_sequence(kind, args.scans, args.density, args.extent, args.noise,
                                      seed=int(scene_seed.generate_state(1)[0]), falloff=args.falloff)
            yaw_rng = np.random.default_rng(yaw_seed)
            poses, names = [], []
            for i, c in enumerate(scans):
                pose = RigidTransform.translation_only(c.sensor_origin).compose(
                    RigidTransform.about_z(yaw_rng.uniform(-math.pi, math.pi)))
                local = apply_transform(c, pose.inverse())
                name = f"{seq_id}_{i:03d}{ext}"
                save_cloud(local, out / name, args.format)
                poses.append(pose)
                names.append(name)
            save_poses(poses, out / f"{seq_id}_poses.csv")
            sections.append(f"[sequence {seq_id}]\nenvironment = {environment_class(kind)}\n"
                            f"scans = {' '.join(names)}\nposes = {seq_id}_poses.csv\n"
                            f"format = {args.format}\n")
    (out / "manifest.ini").write_text("\n".join(sections))
    print(out / "manifest.ini")
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    pair = _load_pair(args, cfg)
    base = cfg.entropy
    grid = itertools.product(args.r_min or [base.r_min], args.r_max or [base.r_max],
                             args.alpha_deg or [math.degrees(base.alpha)],
                             args.epsilon or [base.epsilon], args.e_reject or [base.e_reject])
    mis = induce_error(pair, cfg.error)
    lines = ["r_min r_max alpha_deg epsilon e_reject q_aligned q_misaligned q_s"]
    for r_min, r_max, alpha_deg, eps, rej in grid:
        if r_min > r_max:
            continue
        p = base.with_(r_min=r_min, r_max=r_max, alpha=math.radians(alpha_deg),
                       epsilon=eps, e_reject=rej)
        qa = coral_quality(pair.cloud_a, pair.cloud_b, p)
        qm = coral_quality(mis.cloud_a, mis.cloud_b, p)
        qs = qm.q / qa.q if (qa.measured and qm.measured and qa.q != 0) else math.nan
        lines.append(f"{r_min:g} {r_max:g} {alpha_deg:g} {eps:g} {rej:g} "
                     f"{qa.q:.9f} {qm.q:.9f} {qs:.6f}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


COMMANDS = {"assess": cmd_assess, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "synth": cmd_synth, "tune": cmd_tune}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return 1
    if isinstance(exc, DataError):
        return 2
    if isinstance(exc, NumericalError):
        return 3
    return 3


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = _accel.configure_threads(getattr(args, "threads", None))
    except ValueError:
        print("coral: CORAL_NUM_THREADS must be an integer", file=sys.stderr)
        return 1
    log.info("%s backend, %d worker thread(s)", _accel.backend_name(), threads)
    try:
        return COMMANDS[args.command](args)
    except CoralError as exc:
        print(f"coral {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
