"""Command-line interface.

Every command is a thin wrapper over the library: read inputs, call one
module function, write outputs. Inputs are never mutated. Failures exit
nonzero after printing a machine-parsable JSON error record to stderr.
"""

import functools
import json
import sys

import click
import numpy as np

from . import bench as bench_mod
from . import metrics as metrics_mod
from . import seqio, so3, testbed
from .ik import IKConfig, generate_pseudo_labels, solve_sequence
from .kinematics import BodyShape, PoseSequence, flip_sequence, forward_kinematics_batch, load_tree, project

_REP_CHOICE = click.Choice(so3.REPRESENTATIONS)
_LOSS_CHOICE = click.Choice(so3.LOSSES)


def _fail(kind, message):
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")
    sys.exit(2)


def _guarded(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except seqio.ParseError as exc:
            _fail("parse", str(exc))
        except (ValueError, FileNotFoundError, OSError) as exc:
            _fail(type(exc).__name__.lower().removesuffix("error") or "value", str(exc))

    return wrapper


def _load_tree_shape(tree_name, shape_path):
    tree = load_tree(tree_name)
    shape = seqio.load_shape(shape_path) if shape_path else BodyShape.neutral(tree.joint_count)
    if shape.bone_scales.shape[0] != tree.joint_count:
        raise ValueError(
            f"shape has {shape.bone_scales.shape[0]} scales for a {tree.joint_count}-joint tree"
        )
    return tree, shape


def _subset(tree, name, joints):
    if name == "custom":
        if not joints:
            raise ValueError("--subset custom requires --joints i,j,...")
        idx = np.array([int(t) for t in joints.split(",")], dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= tree.joint_count:
            raise ValueError("custom joint indices out of range")
        return idx
    return metrics_mod.subset_indices(name, tree)


@click.group()
def main():
    """Rotation and kinematics toolkit for full 3D human pose estimation."""


@main.command()
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--to", "target", type=_REP_CHOICE, required=True, help="Target rotation representation.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output file.")
@_guarded
def convert(input_file, target, out):
    """Re-tag the rotations of a pose-sequence file in another representation."""
    seq = seqio.read_sequence(input_file)
    if seq.rotations is None:
        raise ValueError(f"{input_file}: no rotations to convert")
    seqio.write_sequence(out, seq, representation=target)


@main.command()
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tree", default="body22", show_default=True, help="Tree preset name or JSON file.")
@click.option("--shape", "shape_path", default=None, type=click.Path(exists=True), help="Body shape JSON.")
@click.option("--representation", type=_REP_CHOICE, default=so3.REP_MATRIX, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guarded
def fk(input_file, tree, shape_path, representation, out):
    """Fill in 3D joint positions by forward kinematics over stored rotations."""
    tree_obj, shape = _load_tree_shape(tree, shape_path)
    seq = seqio.read_sequence(input_file)
    if seq.rotations is None:
        raise ValueError(f"{input_file}: forward kinematics needs rotations")
    positions, _ = forward_kinematics_batch(tree_obj, shape, seq.rotations)
    seq.pose3d = positions
    seqio.write_sequence(out, seq, representation=representation)


@main.command("project")
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--scale", default=1.0, show_default=True, help="Weak-perspective scale.")
@click.option("--offset-x", default=0.0, show_default=True)
@click.option("--offset-y", default=0.0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guarded
def project_cmd(input_file, scale, offset_x, offset_y, out):
    """Project stored 3D positions to 2D with a weak-perspective camera."""
    seq = seqio.read_sequence(input_file)
    if seq.pose3d is None:
        raise ValueError(f"{input_file}: projection needs 3D positions")
    seq.pose2d = project(seq.pose3d, scale, (offset_x, offset_y))
    seqio.write_sequence(out, seq)


@main.command()
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tree", default="body22", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guarded
def flip(input_file, tree, out):
    """Horizontally flip every frame (positions, 2D pose, rotations)."""
    tree_obj = load_tree(tree)
    seq = seqio.read_sequence(input_file)
    seqio.write_sequence(out, flip_sequence(tree_obj, seq))


def _ik_options(func):
    for deco in (
        click.option("--tree", default="body22", show_default=True),
        click.option("--shape", "shape_path", default=None, type=click.Path(exists=True)),
        click.option("--prior-weight", default=1e-3, show_default=True),
        click.option("--warm-start/--cold-start", default=True, show_default=True),
        click.option("--tolerance", default=1e-4, show_default=True, help="Position tolerance in meters."),
        click.option("--max-iterations", default=200, show_default=True),
        click.option("--optimize-scales", is_flag=True, default=False),
    ):
        func = deco(func)
    return func


@main.command()
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@_ik_options
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guarded
def ik(input_file, tree, shape_path, prior_weight, warm_start, tolerance, max_iterations,
       optimize_scales, out):
    """Recover joint rotations for the 3D positions of a sequence file."""
    tree_obj, shape = _load_tree_shape(tree, shape_path)
    seq = seqio.read_sequence(input_file)
    if seq.pose3d is None:
        raise ValueError(f"{input_file}: inverse kinematics needs 3D positions")
    cfg = IKConfig(
        max_iterations=max_iterations,
        position_tolerance=tolerance,
        prior_weight=prior_weight,
        warm_start=warm_start,
        optimize_scales=optimize_scales,
    )
    results = solve_sequence(tree_obj, shape, seq.pose3d, cfg=cfg)
    labeled = PoseSequence(
        timestamps=seq.timestamps,
        pose2d=seq.pose2d,
        pose3d=seq.pose3d,
        rotations=np.stack([r.pose for r in results]),
        frame_rate=seq.frame_rate,
        provenance="ik",
        converged=np.array([r.converged for r in results], dtype=bool),
    )
    seqio.write_sequence(out, labeled)
    click.echo(json.dumps({
        "frames": len(results),
        "converged": int(sum(r.converged for r in results)),
        "mean_residual_mm": float(np.mean([r.final_residual_mm for r in results])),
        "mean_iterations": float(np.mean([r.iterations_used for r in results])),
        "mean_wall_time_ms": float(np.mean([r.wall_time_ms for r in results])),
    }))


@main.command("pseudo-label")
@click.argument("input_files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@_ik_options
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_guarded
def pseudo_label(input_files, tree, shape_path, prior_weight, warm_start, tolerance,
                 max_iterations, optimize_scales, out_dir):
    """Generate rotation pseudo labels for 3D-annotated sequence files."""
    import os

    tree_obj, shape = _load_tree_shape(tree, shape_path)
    cfg = IKConfig(
        max_iterations=max_iterations,
        position_tolerance=tolerance,
        prior_weight=prior_weight,
        warm_start=warm_start,
        optimize_scales=optimize_scales,
    )
    sequences = [seqio.read_sequence(path) for path in input_files]
    labeled = generate_pseudo_labels(tree_obj, shape, sequences, cfg=cfg)
    os.makedirs(out_dir, exist_ok=True)
    for path, seq in zip(input_files, labeled):
        out_path = os.path.join(out_dir, os.path.basename(path))
        seqio.write_sequence(out_path, seq)
    click.echo(json.dumps({
        "sequences": len(labeled),
        "frames": int(sum(len(s) for s in labeled)),
        "converged_frames": int(sum(int(s.converged.sum()) for s in labeled)),
    }))


@main.command("metrics")
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tree", default="body22", show_default=True)
@click.option("--subset", default="body22", show_default=True,
              type=click.Choice(metrics_mod.SUBSET_PRESETS + ("custom",)))
@click.option("--joints", default=None, help="Comma-separated indices for --subset custom.")
@click.option("--global-rotations", is_flag=True, default=False,
              help="Compare composed global rotations instead of parent-relative ones.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Also write the report JSON here.")
@_guarded
def metrics_cmd(pred, gt, tree, subset, joints, global_rotations, out):
    """Evaluate a predicted sequence against ground truth."""
    tree_obj = load_tree(tree)
    pred_seq = seqio.read_sequence(pred)
    gt_seq = seqio.read_sequence(gt)
    if pred_seq.pose3d is None or gt_seq.pose3d is None:
        raise ValueError("both files need 3D positions")
    if pred_seq.rotations is None or gt_seq.rotations is None:
        raise ValueError("both files need rotations")
    pred_rot = metrics_mod.with_identity_fill(pred_seq.rotations, tree_obj.joint_count)
    gt_rot = gt_seq.rotations
    if global_rotations:
        shape = BodyShape.neutral(tree_obj.joint_count)
        _, pred_rot = forward_kinematics_batch(tree_obj, shape, pred_rot)
        _, gt_rot = forward_kinematics_batch(tree_obj, shape, gt_rot)
    report = metrics_mod.MetricReport.compute(
        pred_seq.pose3d, gt_seq.pose3d, pred_rot, gt_rot,
        subset=_subset(tree_obj, subset, joints),
    )
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json(indent=2) + "\n")
    click.echo(json.dumps({"mpjpe_mm": report.mpjpe_mm, "mpjae_deg": report.mpjae_deg}))


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--tree", default="body22", show_default=True)
@click.option("--sequences", default=8, show_default=True)
@click.option("--frames", default=40, show_default=True)
@click.option("--keyframes", default=5, show_default=True)
@click.option("--noise", default=0.0, show_default=True, help="2D noise std in normalized units.")
@click.option("--seed", default=0, show_default=True)
@click.option("--representation", type=_REP_CHOICE, default=so3.REP_MATRIX, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_guarded
def synth(config_path, tree, sequences, frames, keyframes, noise, seed, representation, out_dir):
    """Generate a seeded synthetic dataset as one JSONL file per sequence."""
    import os

    if config_path:
        spec, _ = seqio.load_config(config_path)
        if spec is None:
            raise ValueError(f"{config_path}: no synthetic section")
    else:
        spec = testbed.SyntheticSpec(
            tree=tree, num_sequences=sequences, frames_per_sequence=frames,
            keyframe_count=keyframes, noise_std_2d=noise, seed=seed,
        )
    dataset = testbed.generate_synthetic(spec)
    os.makedirs(out_dir, exist_ok=True)
    for i, seq in enumerate(dataset):
        seqio.write_sequence(os.path.join(out_dir, f"seq_{i:03d}.jsonl"), seq,
                             representation=representation)
    click.echo(json.dumps({"sequences": len(dataset), "frames_each": len(dataset[0])}))


def _read_dataset(data_dir):
    import os

    files = sorted(
        os.path.join(data_dir, name) for name in os.listdir(data_dir) if name.endswith(".jsonl")
    )
    if not files:
        raise ValueError(f"{data_dir}: no .jsonl sequence files")
    return [seqio.read_sequence(path) for path in files]


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--tree", default="body22", show_default=True)
@click.option("--representation", type=_REP_CHOICE, default=so3.REP_MATRIX, show_default=True)
@click.option("--loss", type=_LOSS_CHOICE, default=so3.LOSS_GEODESIC, show_default=True)
@click.option("--wba", is_flag=True, default=False)
@click.option("--head", type=click.Choice(testbed.HEADS), default="naive", show_default=True)
@click.option("--epochs", default=60, show_default=True)
@click.option("--hidden-width", default=64, show_default=True)
@click.option("--learning-rate", default=0.05, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--loss-weight-lambda", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guarded
def train(data_dir, tree, representation, loss, wba, head, epochs, hidden_width,
          learning_rate, batch_size, loss_weight_lambda, seed, out):
    """Train one regressor cell on a dataset directory."""
    tree_obj = load_tree(tree)
    dataset = _read_dataset(data_dir)
    cfg = testbed.RegressorConfig(
        representation=representation, loss=loss, wba=wba, head=head,
        hidden_width=hidden_width, learning_rate=learning_rate, epochs=epochs,
        batch_size=batch_size, loss_weight_lambda=loss_weight_lambda, seed=seed,
    )
    report = testbed.train_regressor(dataset, cfg, tree=tree_obj)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report.to_dict(), indent=2) + "\n")
    summary = {"code": report.code, "diverged": report.diverged}
    if report.val_metrics is not None:
        summary["val_mpjpe_mm"] = report.val_metrics.mpjpe_mm
        summary["val_mpjae_deg"] = report.val_metrics.mpjae_deg
    click.echo(json.dumps(summary))


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="JSON config with synthetic spec and/or grid cells.")
@click.option("--data-dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Use an existing dataset instead of generating one.")
@click.option("--tree", default="body22", show_default=True)
@click.option("--head", type=click.Choice(testbed.HEADS), default="naive", show_default=True)
@click.option("--epochs", default=60, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Write grid reports JSON here.")
@_guarded
def grid(config_path, data_dir, tree, head, epochs, seed, out):
    """Run the representation x loss x augmentation comparison grid."""
    tree_obj = load_tree(tree)
    spec = cells = None
    if config_path:
        spec, cells = seqio.load_config(config_path)
    if data_dir is not None:
        dataset = _read_dataset(data_dir)
    else:
        spec = spec or testbed.SyntheticSpec(tree=tree, seed=seed)
        dataset = testbed.generate_synthetic(spec)
    cells = cells or testbed.default_grid(head=head, epochs=epochs, seed=seed)
    reports, table = testbed.run_grid(dataset, cells, tree=tree_obj)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(testbed.grid_report_json(reports, indent=2) + "\n")
    click.echo(table)


@main.command("bench")
@click.option("--modes", default=",".join(bench_mod.BENCH_MODES), show_default=True,
              help="Comma-separated: regress, ik-warm, ik-cold.")
@click.option("--samples", default=bench_mod.DEFAULT_MIN_SAMPLES, show_default=True,
              help="Timed frames per mode (after warm-up).")
@click.option("--warmup", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tree", default="body22", show_default=True)
@click.option("--prior-weight", default=1e-3, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guarded
def bench_cmd(modes, samples, warmup, seed, tree, prior_weight, out):
    """Per-frame runtime comparison across solver and regression modes."""
    report = bench_mod.run_bench(
        modes=tuple(m.strip() for m in modes.split(",") if m.strip()),
        samples=samples, warmup=warmup, seed=seed, tree_name=tree,
        ik_cfg=IKConfig(prior_weight=prior_weight),
    )
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json(indent=2) + "\n")
    click.echo(report.format_table())


if __name__ == "__main__":
    main()
