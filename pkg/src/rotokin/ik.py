"""Optimization-based inverse kinematics over a kinematic tree.

Recovers parent-relative joint rotations (optionally per-bone scales) from
root-relative target joint positions by damped least squares. Parameter
increments are axis-angle vectors composed multiplicatively onto the
current rotations, which keeps the iteration free of representation
singularities. A rest-pose proximity prior (squared geodesic angle per
joint) regularizes the unobservable degrees of freedom, e.g. twist about
bones whose children are collinear.

solve_frame is pure and safe to run concurrently across frames; a
warm-started sequence is inherently serial within itself, so parallelism
belongs across sequences (see generate_pseudo_labels and ROTOKIN_THREADS).
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, so3
from .kinematics import PoseSequence, forward_kinematics

_LAMBDA_FLOOR = 1e-10
_LAMBDA_CEILING = 1e12


@dataclass(frozen=True)
class IKConfig:
    """Solver settings; rotation increments are always axis-angle."""

    max_iterations: int = 200
    position_tolerance: float = 1e-4  # meters, mean per-joint
    damping_lambda: float = 1e-3
    prior_weight: float = 1e-3
    warm_start: bool = True
    optimize_scales: bool = False

    def __post_init__(self):
        if self.position_tolerance <= 0.0:
            raise ValueError("position_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.damping_lambda < 0.0 or self.prior_weight < 0.0:
            raise ValueError("damping and prior weight must be non-negative")


@dataclass
class IKResult:
    pose: np.ndarray
    final_residual_mm: float
    iterations_used: int
    converged: bool
    wall_time_ms: float
    degenerate_target: bool = False
    bone_scales: np.ndarray | None = None
    objective_trace: list = field(default_factory=list)


def _objective(positions, targets, rotations, prior_weight):
    diff = positions - targets
    value = float(np.sum(diff * diff))
    if prior_weight > 0.0:
        aa = kernels.log_rotations(rotations)
        value += prior_weight * float(np.sum(aa * aa))
    return value


def _mean_joint_distance(positions, targets):
    return float(np.mean(np.linalg.norm(positions - targets, axis=-1)))


def solve_frame(tree, shape, targets, init=None, cfg=None):
    """Fit joint rotations to one frame of target positions.

    ``targets`` is (K, 3) and is re-rooted internally. ``init`` is a
    (K, 3, 3) stack of starting rotations, the rest pose by default. The
    objective sum of squared position errors plus the weighted rest-pose
    prior never increases across accepted steps; steps that would increase
    it are rejected and retried with tenfold damping.
    """
    cfg = cfg or IKConfig()
    t_start = time.perf_counter()
    k = tree.joint_count
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (k, 3):
        raise ValueError(f"expected targets of shape ({k}, 3), got {targets.shape}")
    targets = targets - targets[0]
    degenerate = bool(np.ptp(targets, axis=0).max() < 1e-9)

    rotations = so3.identity_rotations(k) if init is None else np.array(init, dtype=np.float64)
    if rotations.shape != (k, 3, 3):
        raise ValueError(f"expected init of shape ({k}, 3, 3), got {rotations.shape}")
    scales = shape.bone_scales.copy()
    offsets = tree.template_offsets * scales[:, None]
    parents = tree.parents
    desc_mask = tree.descendant_mask
    chain_mask = tree.chain_mask
    w = cfg.prior_weight
    sqrt_w = np.sqrt(w)

    positions, globals_ = kernels.fk(parents, offsets, rotations)
    energy = _objective(positions, targets, rotations, w)
    residual = _mean_joint_distance(positions, targets)
    trace = [energy]

    lam = cfg.damping_lambda
    iterations = 0
    converged = residual <= cfg.position_tolerance
    n_rot = 3 * k
    jac = None

    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        if jac is None:
            jac = kernels.position_jacobian(positions, globals_, desc_mask)
            if cfg.optimize_scales:
                jac = np.hstack([jac, kernels.scale_jacobian(parents, positions, chain_mask)])
            res = (positions - targets).ravel()
            if w > 0.0:
                aa = kernels.log_rotations(rotations)
                jr_inv = kernels.inv_right_jacobians(aa)
                prior_jac = np.zeros((n_rot, jac.shape[1]), dtype=np.float64)
                for j in range(k):
                    prior_jac[3 * j:3 * j + 3, 3 * j:3 * j + 3] = sqrt_w * jr_inv[j]
                jac = np.vstack([jac, prior_jac])
                res = np.concatenate([res, sqrt_w * aa.ravel()])
            jtj = jac.T @ jac
            jtr = jac.T @ res

        step = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), -jtr)
        cand_rot = kernels.apply_rotation_step(rotations, step[:n_rot])
        if cfg.optimize_scales:
            cand_scales = scales * np.exp(step[n_rot:])
            cand_offsets = tree.template_offsets * cand_scales[:, None]
        else:
            cand_scales, cand_offsets = scales, offsets
        cand_pos, cand_glob = kernels.fk(parents, cand_offsets, cand_rot)
        cand_energy = _objective(cand_pos, targets, cand_rot, w)

        if cand_energy < energy:
            improvement = energy - cand_energy
            rotations, scales, offsets = cand_rot, cand_scales, cand_offsets
            positions, globals_ = cand_pos, cand_glob
            energy = cand_energy
            trace.append(energy)
            residual = _mean_joint_distance(positions, targets)
            lam = max(lam / 10.0, _LAMBDA_FLOOR)
            jac = None
            if residual <= cfg.position_tolerance:
                converged = True
            elif improvement < 1e-10 * max(energy, 1e-12):
                break  # stalled at a prior/position trade-off plateau
        else:
            lam *= 10.0
            if lam > _LAMBDA_CEILING:
                break

    return IKResult(
        pose=rotations,
        final_residual_mm=1000.0 * residual,
        iterations_used=iterations,
        converged=converged,
        wall_time_ms=1000.0 * (time.perf_counter() - t_start),
        degenerate_target=degenerate,
        bone_scales=scales if cfg.optimize_scales else None,
        objective_trace=trace,
    )


def solve_sequence(tree, shape, target_frames, cfg=None):
    """Solve a sequence of target frames in order.

    Frame 0 starts from the rest pose; with warm starting each later frame
    starts from the previous frame's solution. Per-frame wall time and
    convergence flags come back in the per-frame results.
    """
    cfg = cfg or IKConfig()
    target_frames = np.asarray(target_frames, dtype=np.float64)
    if len(target_frames) == 0:
        raise ValueError("empty target sequence")
    results = []
    init = None
    for targets in target_frames:
        result = solve_frame(tree, shape, targets, init=init, cfg=cfg)
        results.append(result)
        if cfg.warm_start:
            init = result.pose
    return results


def _worker_count():
    cap = os.environ.get("ROTOKIN_THREADS", "")
    cpus = os.cpu_count() or 1
    if cap.strip():
        try:
            return max(1, min(cpus, int(cap)))
        except ValueError:
            return cpus
    return cpus


def generate_pseudo_labels(tree, shape, sequences, cfg=None, workers=None):
    """Run IK over 3D-annotated sequences to produce rotation pseudo labels.

    Returns new PoseSequence objects with rotations filled in, provenance
    ``"ik-pseudo"`` and per-frame convergence flags. Frames that fail to
    converge are flagged, never dropped, so downstream training can decide.
    Sequences are independent and solved in a small thread pool capped by
    ROTOKIN_THREADS; each sequence stays serial for warm starting.
    """
    cfg = cfg or IKConfig()
    sequences = list(sequences)
    if not sequences:
        return []
    for i, seq in enumerate(sequences):
        if seq.pose3d is None:
            raise ValueError(f"sequence {i} has no 3D positions to label")

    def _label(seq):
        results = solve_sequence(tree, shape, seq.pose3d, cfg=cfg)
        return PoseSequence(
            timestamps=seq.timestamps.copy(),
            pose2d=seq.pose2d.copy(),
            pose3d=seq.pose3d.copy(),
            rotations=np.stack([r.pose for r in results]),
            frame_rate=seq.frame_rate,
            provenance="ik-pseudo",
            converged=np.array([r.converged for r in results], dtype=bool),
        )

    workers = workers or min(_worker_count(), len(sequences))
    if workers <= 1:
        return [_label(seq) for seq in sequences]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_label, sequences))
