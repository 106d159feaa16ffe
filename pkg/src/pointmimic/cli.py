"""Operator entry points: demo generation, retargeting, training, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import control, dataio, policy as policy_mod, retarget, simenv
from .errors import (
    CorruptFile,
    EmptyDataset,
    FormatVersionMismatch,
    InvalidSpec,
    PlanningFailed,
    PointMimicError,
    SchemaMismatchAcrossDemos,
    SchemaViolation,
)
from .geometry import Pose, quat_angle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

_DATA_ERRORS = (
    CorruptFile,
    SchemaViolation,
    FormatVersionMismatch,
    SchemaMismatchAcrossDemos,
    EmptyDataset,
    InvalidSpec,
    FileNotFoundError,
    NotADirectoryError,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_bundle(config_path):
    """Load the shared YAML config; fall back to built-in defaults per section."""
    return dataio.load_config(config_path) if config_path else {}


def _cameras(bundle: dict):
    if "cameras" in bundle:
        return dataio.cameras_from_mapping(bundle["cameras"])
    return simenv.default_cameras()


def _noise_from_args(args) -> simenv.NoiseModel:
    return simenv.NoiseModel(
        pixel_sigma=args.noise_px,
        depth_bias=getattr(args, "depth_bias", 0.0),
        depth_jitter=getattr(args, "depth_jitter", 0.0),
        occlusion_prob=getattr(args, "occlusion", 0.0),
    )


def _read_demo_dir(path) -> list:
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"demo directory {directory} does not exist")
    files = sorted(directory.glob("*.jsonl"))
    if not files:
        raise EmptyDataset(f"no .jsonl demos under {directory}")
    return [dataio.read_demo(f) for f in files]


def _write_csv(path, comment_lines, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in comment_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    spec = simenv.make_task(args.task)
    cameras = _cameras(_load_bundle(args.config))
    noise = _noise_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    failed = 0
    for i in range(args.n):
        scene_seed = int(np.random.SeedSequence((args.seed, i)).generate_state(1)[0])
        try:
            demo = simenv.simulate_hand_demo(spec, scene_seed, cameras, noise)
        except PlanningFailed as exc:
            failed += 1
            print(f"demo {i}: planning failed: {exc}", file=sys.stderr)
            continue
        demo.header.extra["gen_seed"] = args.seed
        demo.header.extra["demo_index"] = i
        dataio.write_demo(demo, out / f"{args.task}_{i:03d}.jsonl")
        written += 1
    print(f"seed={args.seed} wrote {written}/{args.n} demos to {out} ({failed} planning failures)")
    if args.n > 0 and written == 0:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_retarget(args) -> int:
    cameras = _cameras(_load_bundle(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    directory = Path(args.data)
    if not directory.is_dir():
        raise FileNotFoundError(f"demo directory {directory} does not exist")
    files = sorted(directory.glob("*.jsonl"))
    if not files:
        raise EmptyDataset(f"no .jsonl demos under {directory}")
    for path in files:
        demo = dataio.read_demo(path)
        converted = retarget.retarget_demo(demo, cameras)
        dataio.write_demo(converted, out / path.name)
    print(f"seed={args.seed} retargeted {len(files)} demos into {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    bundle = _load_bundle(args.config)
    demos = _read_demo_dir(args.data)
    dataset_cfg = dataio.DatasetConfig.from_mapping(bundle.get("dataset", {}))
    dataset = dataio.build_dataset(demos, dataset_cfg)

    train_map = dict(bundle.get("train", {}))
    train_map["seed"] = args.seed
    if args.steps is not None:
        train_map["steps"] = args.steps
    train_cfg = policy_mod.TrainConfig.from_mapping(train_map)

    policy_map = dict(bundle.get("policy", {}))
    policy_map.setdefault("n_robot_points", len(dataset.robot_names))
    policy_map.setdefault("n_object_points", len(dataset.object_names))
    policy_map.setdefault("history", dataset_cfg.history)
    policy_map.setdefault("chunk", dataset_cfg.chunk)
    policy_cfg = policy_mod.PolicyConfig.from_mapping(policy_map)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = policy_mod.train(dataset, train_cfg, policy_cfg, out_dir=out)
    checkpoint = out / "policy.pmck"
    policy_mod.save_policy(result.policy, checkpoint)
    rows = [
        [r.step, f"{r.total:.8e}", f"{r.track_mse:.8e}", f"{r.gripper_bce:.8e}",
         "" if r.val_loss is None else f"{r.val_loss:.8e}"]
        for r in result.history
    ]
    _write_csv(out / "loss.csv",
               [f"seed={args.seed}", f"steps={train_cfg.steps}"],
               ["step", "total", "track_mse", "gripper_bce", "val_loss"], rows)
    digest = policy_mod.checkpoint_sha256(checkpoint)
    print(f"seed={args.seed} checkpoint={checkpoint} sha256={digest}")
    return EXIT_OK


def _load_eval_policy(checkpoint: str):
    if checkpoint == "expert":
        return "expert"
    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return policy_mod.load_policy(path)


def cmd_eval(args) -> int:
    spec = simenv.make_task(args.task)
    cameras = _cameras(_load_bundle(args.config))
    trial_policy = _load_eval_policy(args.checkpoint)
    noise = _noise_from_args(args)
    result = simenv.evaluate(
        trial_policy, spec, args.trials, noise=noise, lifting=args.lifting,
        cameras=cameras, seed=args.seed, use_ensemble=not args.no_ensemble,
        record_trajectories=args.out is not None)
    print(f"{args.task} [{args.lifting}]: {result.successes}/{result.n_trials}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [[r.index, f"{r.seed[0]}:{r.seed[1]}", int(r.success), r.steps]
                for r in result.records]
        _write_csv(out / "results.csv",
                   [f"task={args.task}", f"seed={args.seed}", f"lifting={args.lifting}"],
                   ["trial", "seed", "success", "steps"], rows)
        for i, trajectory in enumerate(result.trajectories):
            dataio.write_demo(trajectory, out / f"rollout_{i:03d}.jsonl")
    return EXIT_OK


def cmd_ablate_depth(args) -> int:
    spec = simenv.make_task(args.task)
    cameras = _cameras(_load_bundle(args.config))
    trial_policy = _load_eval_policy(args.checkpoint)
    clean = simenv.evaluate(
        trial_policy, spec, args.trials, noise=simenv.NoiseModel.zero(),
        lifting="triangulated", cameras=cameras, seed=args.seed)
    corrupted = simenv.evaluate(
        trial_policy, spec, args.trials,
        noise=simenv.NoiseModel(depth_bias=args.depth_bias, depth_jitter=args.depth_jitter),
        lifting="sensor", cameras=cameras, seed=args.seed)
    print(f"{args.task} triangulated: {clean.successes}/{clean.n_trials}")
    print(f"{args.task} sensor-depth (bias={args.depth_bias} m, jitter={args.depth_jitter} m): "
          f"{corrupted.successes}/{corrupted.n_trials}")
    verdict = "holds" if clean.successes >= corrupted.successes else "violated"
    print(f"ordering triangulated >= sensor-depth: {verdict}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ablation.csv",
                   [f"task={args.task}", f"seed={args.seed}"],
                   ["lifting", "successes", "trials"],
                   [["triangulated", clean.successes, clean.n_trials],
                    ["sensor", corrupted.successes, corrupted.n_trials]])
    return EXIT_OK


def cmd_roundtrip_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    offsets = retarget.default_offset_table()
    worst_position = 0.0
    worst_angle = 0.0
    for _ in range(args.n):
        quaternion = rng.normal(size=4)
        quaternion /= np.linalg.norm(quaternion)
        pose = Pose(rng.uniform(-1.0, 1.0, 3), quaternion)
        points = retarget.pose_to_keypoints(pose, offsets).points
        action = control.backtrack_action(points, offsets)
        worst_position = max(worst_position,
                             float(np.linalg.norm(action.position - pose.position)))
        worst_angle = max(worst_angle, quat_angle(action.orientation, pose.orientation))
    print(f"seed={args.seed} n={args.n} "
          f"max position error {worst_position:.3e} m, "
          f"max orientation error {worst_angle:.3e} rad")
    if worst_position > 1e-6 or worst_angle > 1e-6:
        print("roundtrip invariant violated", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotting (standalone SVG, no plotting dependency)
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _read_plot_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) < 2:
        raise CorruptFile(f"{path}: need a header row and at least one data row")
    reader = csv.reader(lines)
    header = next(reader)
    rows = []
    for row in reader:
        if len(row) != len(header):
            raise CorruptFile(f"{path}: ragged row {row!r}")
        rows.append(row)
    return header, rows


def _svg_document(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        + body + "</svg>\n"
    )


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _lines_svg(header, rows) -> str:
    try:
        columns = [[float(row[i]) for row in rows if row[i] != ""] for i in range(len(header))]
    except ValueError as exc:
        raise CorruptFile(f"non-numeric plot data: {exc}") from exc
    x = columns[0]
    series = [(header[i], columns[i]) for i in range(1, len(header)) if columns[i]]
    if not series or not x:
        raise CorruptFile("no numeric series to plot")
    width, height, margin = 640, 480, 50
    y_all = [v for _, col in series for v in col]
    x_lo, x_hi, y_lo, y_hi = min(x), max(x), min(y_all), max(y_all)
    body = [f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
            f'y2="{height - margin}" stroke="black"/>',
            f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
            f'y2="{height - margin}" stroke="black"/>']
    for k, (name, col) in enumerate(series):
        xs = _scale(x[:len(col)], x_lo, x_hi, margin, width - margin)
        ys = _scale(col, y_lo, y_hi, height - margin, margin)
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(xs, ys))
        color = _PALETTE[k % len(_PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{width - margin + 4}" y="{margin + 16 * k}" font-size="12" '
                    f'fill="{color}">{name}</text>')
    return _svg_document(width, height, "\n".join(body) + "\n")


def _bars_svg(header, rows) -> str:
    success_idx = header.index("success")
    label_idx = header.index("task") if "task" in header else None
    groups: dict = {}
    for row in rows:
        key = row[label_idx] if label_idx is not None else "all"
        total, hits = groups.get(key, (0, 0))
        groups[key] = (total + 1, hits + int(float(row[success_idx]) != 0.0))
    width, height, margin = 640, 480, 50
    slot = (width - 2 * margin) / max(len(groups), 1)
    body = [f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
            f'y2="{height - margin}" stroke="black"/>']
    for k, (name, (total, hits)) in enumerate(sorted(groups.items())):
        rate = hits / total
        bar_h = rate * (height - 2 * margin)
        x0 = margin + k * slot + 0.15 * slot
        body.append(f'<rect x="{x0:.2f}" y="{height - margin - bar_h:.2f}" '
                    f'width="{0.7 * slot:.2f}" height="{bar_h:.2f}" '
                    f'fill="{_PALETTE[k % len(_PALETTE)]}"/>')
        body.append(f'<text x="{x0:.2f}" y="{height - margin + 16}" font-size="12">'
                    f'{name} {hits}/{total}</text>')
    return _svg_document(width, height, "\n".join(body) + "\n")


def cmd_plot(args) -> int:
    header, rows = _read_plot_csv(args.input)
    svg = _bars_svg(header, rows) if "success" in header else _lines_svg(header, rows)
    Path(args.out).write_text(svg, encoding="utf-8", newline="\n")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pointmimic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True, config=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if config:
            p.add_argument("--config", default=None, help="shared YAML config path")

    p = sub.add_parser("gen-demos", help="write scripted-expert demonstrations")
    p.add_argument("--task", required=True, choices=simenv.TASK_IDS)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--occlusion", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("retarget", help="lift two-view hand demos to robot-frame 3D")
    p.add_argument("--data", required=True, help="directory of raw demos")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("train", help="train the track-prediction policy")
    p.add_argument("--data", required=True, help="directory of retargeted demos")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="override configured step count")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run seeded evaluation trials")
    p.add_argument("--checkpoint", required=True, help="policy checkpoint path or 'expert'")
    p.add_argument("--task", required=True, choices=simenv.TASK_IDS)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--lifting", choices=simenv.LIFTING_MODES, default="triangulated")
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--depth-bias", type=float, default=0.0)
    p.add_argument("--depth-jitter", type=float, default=0.0)
    p.add_argument("--occlusion", type=float, default=0.0)
    p.add_argument("--no-ensemble", action="store_true")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-depth", help="evaluate triangulated vs sensor-depth lifting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True, choices=simenv.TASK_IDS)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--depth-bias", type=float, default=0.02)
    p.add_argument("--depth-jitter", type=float, default=0.01)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_ablate_depth)

    p = sub.add_parser("roundtrip-check", help="verify keypoint->pose backtracking roundtrip")
    p.add_argument("--n", type=int, default=1000)
    common(p, config=False)
    p.set_defaults(func=cmd_roundtrip_check)

    p = sub.add_parser("plot", help="render a loss or results CSV as standalone SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PointMimicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
