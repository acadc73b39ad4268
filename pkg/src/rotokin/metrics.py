"""Pose evaluation: angular error over rotations, positional error in mm.

Angles are radians internally and degrees at the reporting boundary;
positions are meters internally and millimeters in reports.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import so3

SUBSET_PRESETS = ("body22", "body26")


def subset_indices(preset, tree):
    """Joint indices for a named evaluation subset, validated against the tree."""
    if preset == "body22":
        needed = 22
    elif preset == "body26":
        needed = 26
    else:
        raise ValueError(f"unknown subset preset {preset!r}")
    if tree.joint_count < needed:
        raise ValueError(f"subset {preset} needs {needed} joints, tree has {tree.joint_count}")
    return np.arange(needed)


def per_joint_angular_error(pred_rot, gt_rot, subset=None):
    """Geodesic angle per joint in degrees, averaged over any batch axes.

    Rotations are compared as given (parent-relative by convention); pass
    composed global rotations for a global-frame diagnostic.
    """
    pred_rot = np.asarray(pred_rot, dtype=np.float64)
    gt_rot = np.asarray(gt_rot, dtype=np.float64)
    if pred_rot.shape != gt_rot.shape:
        raise ValueError(f"rotation sets differ in shape: {pred_rot.shape} vs {gt_rot.shape}")
    if subset is not None:
        pred_rot = pred_rot[..., subset, :, :]
        gt_rot = gt_rot[..., subset, :, :]
    ang = so3.geodesic_distance(pred_rot, gt_rot)
    if ang.ndim > 1:
        ang = ang.mean(axis=tuple(range(ang.ndim - 1)))
    return np.degrees(ang)


def mpjae(pred_rot, gt_rot, subset=None):
    """Mean per-joint angular error in degrees over the joint subset."""
    per_joint = per_joint_angular_error(pred_rot, gt_rot, subset)
    if per_joint.size == 0:
        raise ValueError("empty joint subset")
    return float(per_joint.mean())


def _root_relative(positions):
    return positions - positions[..., :1, :]


def per_joint_position_error(pred_pos, gt_pos, subset=None):
    """Euclidean error per joint in millimeters after root alignment."""
    pred_pos = _root_relative(np.asarray(pred_pos, dtype=np.float64))
    gt_pos = _root_relative(np.asarray(gt_pos, dtype=np.float64))
    if pred_pos.shape != gt_pos.shape:
        raise ValueError(f"position sets differ in shape: {pred_pos.shape} vs {gt_pos.shape}")
    if subset is not None:
        pred_pos = pred_pos[..., subset, :]
        gt_pos = gt_pos[..., subset, :]
    dist = np.linalg.norm(pred_pos - gt_pos, axis=-1)
    if dist.ndim > 1:
        dist = dist.mean(axis=tuple(range(dist.ndim - 1)))
    return 1000.0 * dist


def mpjpe(pred_pos, gt_pos, subset=None):
    """Root-relative mean per-joint position error in millimeters."""
    per_joint = per_joint_position_error(pred_pos, gt_pos, subset)
    if per_joint.size == 0:
        raise ValueError("empty joint subset")
    return float(per_joint.mean())


def with_identity_fill(rotations, joint_count):
    """Extend a rotation set to ``joint_count`` joints with identity entries.

    Mirrors the reporting convention for models that predict no hand
    rotations: missing joints count as held in the template pose.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    k = rotations.shape[-3]
    if k > joint_count:
        raise ValueError(f"rotation set already has {k} > {joint_count} joints")
    if k == joint_count:
        return rotations
    pad_shape = rotations.shape[:-3] + (joint_count - k, 3, 3)
    pad = np.broadcast_to(np.eye(3), pad_shape)
    return np.concatenate([rotations, pad], axis=-3)


@dataclass(frozen=True)
class MetricReport:
    """Aggregate and per-joint errors over one joint subset."""

    mpjpe_mm: float
    mpjae_deg: float
    per_joint_mpjpe: np.ndarray
    per_joint_mpjae: np.ndarray
    joint_subset: np.ndarray

    @classmethod
    def compute(cls, pred_pos, gt_pos, pred_rot, gt_rot, subset=None):
        if subset is None:
            subset = np.arange(np.asarray(gt_pos).shape[-2])
        subset = np.asarray(subset, dtype=np.int64)
        if subset.size == 0:
            raise ValueError("empty joint subset")
        pj_pos = per_joint_position_error(pred_pos, gt_pos, subset)
        pj_ang = per_joint_angular_error(pred_rot, gt_rot, subset)
        return cls(
            mpjpe_mm=float(pj_pos.mean()),
            mpjae_deg=float(pj_ang.mean()),
            per_joint_mpjpe=pj_pos,
            per_joint_mpjae=pj_ang,
            joint_subset=subset,
        )

    def to_dict(self):
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "mpjae_deg": self.mpjae_deg,
            "per_joint_mpjpe": self.per_joint_mpjpe.tolist(),
            "per_joint_mpjae": self.per_joint_mpjae.tolist(),
            "joint_subset": self.joint_subset.tolist(),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def format_table(rows, columns=("model", "loss", "wba", "mpjpe_mm", "mpjae_deg"), highlight_best=True):
    """Aligned-column text table for lists of row dicts.

    Numeric cells print with two decimals; the best (lowest) mpjpe/mpjae
    cells are marked with a trailing ``*``.
    """
    headers = {
        "model": "Model", "loss": "Loss", "wba": "WBA",
        "mpjpe_mm": "MPJPE [mm]", "mpjae_deg": "MPJAE [deg]",
        "diverged": "Diverged",
    }
    best = {}
    if highlight_best:
        for col in ("mpjpe_mm", "mpjae_deg"):
            vals = [r[col] for r in rows if col in r and np.isfinite(r[col])]
            if vals:
                best[col] = min(vals)

    def fmt(row, col):
        v = row.get(col, "")
        if isinstance(v, bool):
            return "yes" if v else "-"
        if isinstance(v, float):
            s = f"{v:.2f}" if np.isfinite(v) else "nan"
            if col in best and np.isfinite(v) and v == best[col]:
                s += " *"
            return s
        return str(v)

    table = [[headers.get(c, c) for c in columns]] + [[fmt(r, c) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(columns))]
    out = []
    for i, line in enumerate(table):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
