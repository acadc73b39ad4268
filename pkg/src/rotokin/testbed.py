"""Synthetic-data testbed: representation x loss x augmentation comparison.

Generates seeded synthetic pose sequences (keyframed random joint
rotations, slerp in between, forward kinematics, weak-perspective
projection, optional 2D noise), trains a small per-frame regressor from
flattened 2D keypoints with hand-derived backpropagation, and runs the
full comparison grid.

Two head variants exist. The ``naive`` head predicts 3D positions and
rotation parameters as two independent linear heads off a shared hidden
layer. The ``fk`` head predicts rotation parameters only and obtains
positions by running forward kinematics on the decoded rotations, so the
position loss supervises the rotations too.

Losses: ``L = L_joint + lambda * L_angle`` with L_joint the root-relative
mean per-joint distance in meters and L_angle per rotokin.so3.loss_and_grad.
The optimizer is plain mini-batch gradient descent with a fixed learning
rate; that keeps every gradient auditable against finite differences.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import metrics, so3
from .kinematics import (
    BodyShape,
    PoseSequence,
    flip_positions,
    flip_positions_2d,
    flip_rotations,
    forward_kinematics_batch,
    forward_kinematics_vjp,
    load_tree,
    project,
)

HEADS = ("naive", "fk")

_REP_CODES = {so3.REP_AA: "AA", so3.REP_QUAT: "Q", so3.REP_MATRIX: "RM"}
_HEAD_PREFIXES = {"naive": "N", "fk": "S"}
_REP_DIMS = {so3.REP_MATRIX: 9, so3.REP_QUAT: 4, so3.REP_AA: 3}


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic recipe for a synthetic dataset."""

    tree: str = "body22"
    num_sequences: int = 8
    frames_per_sequence: int = 40
    keyframe_count: int = 5
    noise_std_2d: float = 0.0
    camera_scale: float = 1.0
    camera_offset: tuple = (0.0, 0.0)
    max_joint_angle: float = 2.0 * np.pi / 3.0
    frame_rate: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.num_sequences < 1 or self.frames_per_sequence < 1:
            raise ValueError("need at least one sequence and one frame")
        if self.keyframe_count < 2 and self.frames_per_sequence > 1:
            raise ValueError("need at least two keyframes to interpolate")


@dataclass(frozen=True)
class RegressorConfig:
    """One grid cell: representation, loss, augmentation and hyperparameters."""

    representation: str = so3.REP_MATRIX
    loss: str = so3.LOSS_GEODESIC
    wba: bool = False
    head: str = "naive"
    hidden_width: int = 64
    learning_rate: float = 0.05
    epochs: int = 60
    batch_size: int = 32
    loss_weight_lambda: float = 1.0
    val_fraction: float = 0.25
    seed: int = 0
    preflight: bool = True

    def __post_init__(self):
        if self.representation not in so3.REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.loss not in so3.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if min(self.hidden_width, self.epochs, self.batch_size) < 1 or self.learning_rate <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.loss_weight_lambda < 0:
            raise ValueError("loss_weight_lambda must be non-negative")

    @property
    def code(self):
        idx = 1 + (2 if self.wba else 0) + (1 if self.loss == so3.LOSS_GEODESIC else 0)
        return f"{_HEAD_PREFIXES[self.head]}-{_REP_CODES[self.representation]}-{idx}"

    def to_dict(self):
        return {
            "representation": self.representation,
            "loss": self.loss,
            "wba": self.wba,
            "head": self.head,
            "hidden_width": self.hidden_width,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "loss_weight_lambda": self.loss_weight_lambda,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
        }


@dataclass
class TrainReport:
    """Outcome of one grid cell."""

    code: str
    config: RegressorConfig
    train_metrics: metrics.MetricReport | None
    val_metrics: metrics.MetricReport | None
    loss_curve: list
    diverged: bool

    def to_dict(self):
        return {
            "code": self.code,
            "config": self.config.to_dict(),
            "train_metrics": None if self.train_metrics is None else self.train_metrics.to_dict(),
            "val_metrics": None if self.val_metrics is None else self.val_metrics.to_dict(),
            "loss_curve": self.loss_curve,
            "diverged": self.diverged,
        }


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _keyframe_interpolation(quats, keyframe_idx, num_frames):
    """Slerp (key, K, 4) keyframe quaternions onto a dense frame grid."""
    k = quats.shape[1]
    out = np.empty((num_frames, k, 4), dtype=np.float64)
    for seg in range(len(keyframe_idx) - 1):
        a, b = keyframe_idx[seg], keyframe_idx[seg + 1]
        span = max(b - a, 1)
        last = num_frames if seg == len(keyframe_idx) - 2 else b
        for t in range(a, last):
            u = (t - a) / span
            out[t] = so3.slerp(quats[seg], quats[seg + 1], u)
    return out


def generate_synthetic(spec):
    """Build a list of fully annotated PoseSequence objects from a spec.

    Same spec (including seed) always returns a bit-identical dataset.
    """
    tree = load_tree(spec.tree)
    shape = BodyShape.neutral(tree.joint_count)
    k = tree.joint_count
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_sequences)
    sequences = []
    for seq_seed in seeds:
        rng = np.random.default_rng(seq_seed)
        n_key = min(spec.keyframe_count, max(spec.frames_per_sequence, 2))
        key_rot = so3.random_rotations(n_key * k, rng, max_angle=spec.max_joint_angle)
        key_quat = so3.matrix_to_quat(key_rot.reshape(n_key, k, 3, 3), validate=False)
        if spec.frames_per_sequence == 1:
            quats = key_quat[:1]
        else:
            keyframe_idx = np.linspace(0, spec.frames_per_sequence - 1, n_key).astype(int)
            quats = _keyframe_interpolation(key_quat, keyframe_idx, spec.frames_per_sequence)
        rotations = so3.quat_to_matrix(quats)
        positions, _ = forward_kinematics_batch(tree, shape, rotations)
        pose2d = project(positions, spec.camera_scale, spec.camera_offset)
        if spec.noise_std_2d > 0.0:
            pose2d = pose2d + rng.normal(0.0, spec.noise_std_2d, size=pose2d.shape)
        sequences.append(
            PoseSequence(
                timestamps=np.arange(spec.frames_per_sequence) / spec.frame_rate,
                pose2d=pose2d,
                pose3d=positions,
                rotations=rotations,
                frame_rate=spec.frame_rate,
                provenance="synthetic",
            )
        )
    return sequences


# ---------------------------------------------------------------------------
# regressor
# ---------------------------------------------------------------------------

def _identity_raw(representation, k):
    if representation == so3.REP_MATRIX:
        return np.tile(np.eye(3).ravel(), k)
    if representation == so3.REP_QUAT:
        return np.tile(np.array([1.0, 0.0, 0.0, 0.0]), k)
    return np.zeros(3 * k)


def _gt_in_representation(representation, rotations):
    if representation == so3.REP_MATRIX:
        return rotations
    if representation == so3.REP_QUAT:
        return so3.matrix_to_quat(rotations, validate=False)
    return so3.matrix_to_aa(rotations, validate=False)


def init_params(cfg, k, rng):
    """Xavier-ish init; rotation-head bias starts at the identity rotation."""
    n_in = 2 * k
    h = cfg.hidden_width
    d = _REP_DIMS[cfg.representation] * k
    params = {
        "w1": rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, h)),
        "b1": np.zeros(h),
        "wr": rng.normal(0.0, 0.01 / np.sqrt(h), size=(h, d)),
        "br": _identity_raw(cfg.representation, k),
    }
    if cfg.head == "naive":
        params["wp"] = rng.normal(0.0, 0.01 / np.sqrt(h), size=(h, 3 * k))
        params["bp"] = np.zeros(3 * k)
    return params


def _joint_loss_and_grad(pos, gt_pos):
    """Root-relative mean per-joint distance (meters) and d/dpos."""
    rel = pos - pos[:, :1]
    diff = rel - gt_pos
    dist = np.linalg.norm(diff, axis=-1)
    value = float(dist.mean())
    denom = np.maximum(dist, 1e-12)[..., None]
    g_rel = np.where(dist[..., None] > 1e-12, diff / denom, 0.0) / dist.size
    g_pos = g_rel.copy()
    g_pos[:, 0] -= g_rel.sum(axis=1)
    return value, g_pos


def forward_backward(tree, shape, params, cfg, x, gt_pos, gt_rep):
    """One batch: loss value plus gradients for every parameter tensor.

    ``x`` is (B, 2K) flattened 2D keypoints, ``gt_pos`` (B, K, 3)
    root-relative positions, ``gt_rep`` the targets in the configured
    representation.
    """
    b = x.shape[0]
    k = tree.joint_count
    d = _REP_DIMS[cfg.representation]
    lam = cfg.loss_weight_lambda

    z1 = x @ params["w1"] + params["b1"]
    h = np.tanh(z1)
    raw = (h @ params["wr"] + params["br"]).reshape(b, k, d)
    if cfg.representation == so3.REP_MATRIX:
        raw = raw.reshape(b, k, 3, 3)

    angle_value, g_raw_angle = so3.loss_and_grad(cfg.loss, cfg.representation, raw, gt_rep)
    g_raw = lam * g_raw_angle

    if cfg.head == "naive":
        pos = (h @ params["wp"] + params["bp"]).reshape(b, k, 3)
        joint_value, g_pos = _joint_loss_and_grad(pos, gt_pos)
        g_wp = h.T @ g_pos.reshape(b, 3 * k)
        g_bp = g_pos.reshape(b, 3 * k).sum(axis=0)
        g_h = g_pos.reshape(b, 3 * k) @ params["wp"].T
    else:
        rot = so3.decode_rotations(cfg.representation, raw)
        pos, globals_ = forward_kinematics_batch(tree, shape, rot)
        joint_value, g_pos = _joint_loss_and_grad(pos, gt_pos)
        g_rot = forward_kinematics_vjp(tree, shape, rot, globals_, g_pos)
        g_raw = g_raw + so3.decode_rotations_vjp(cfg.representation, raw, rot, g_rot)
        g_h = np.zeros_like(h)

    g_raw_flat = g_raw.reshape(b, k * d)
    g_wr = h.T @ g_raw_flat
    g_br = g_raw_flat.sum(axis=0)
    g_h = g_h + g_raw_flat @ params["wr"].T
    g_z1 = g_h * (1.0 - h * h)
    grads = {
        "w1": x.T @ g_z1,
        "b1": g_z1.sum(axis=0),
        "wr": g_wr,
        "br": g_br,
    }
    if cfg.head == "naive":
        grads["wp"] = g_wp
        grads["bp"] = g_bp
    value = joint_value + lam * angle_value
    return value, grads


def batch_loss(tree, shape, params, cfg, x, gt_pos, gt_rep):
    """Loss value only, for finite-difference checks."""
    value, _ = forward_backward(tree, shape, params, cfg, x, gt_pos, gt_rep)
    return value


def preflight_gradients(tree, shape, params, cfg, x, gt_pos, gt_rep,
                        samples_per_tensor=8, step=1e-6, tol=1e-4, rng=None):
    """Spot-check analytic gradients against central finite differences.

    Probes a few entries of every parameter tensor; raises on relative
    error beyond ``tol`` (scaled by the largest sampled magnitude).
    """
    rng = rng or np.random.default_rng(0)
    _, grads = forward_backward(tree, shape, params, cfg, x, gt_pos, gt_rep)
    for name, tensor in params.items():
        idx = rng.choice(tensor.size, size=min(samples_per_tensor, tensor.size), replace=False)
        scale = max(np.abs(grads[name]).max(), 1e-8)
        for i in idx:
            orig = tensor.flat[i]
            tensor.flat[i] = orig + step
            up = batch_loss(tree, shape, params, cfg, x, gt_pos, gt_rep)
            tensor.flat[i] = orig - step
            down = batch_loss(tree, shape, params, cfg, x, gt_pos, gt_rep)
            tensor.flat[i] = orig
            fd = (up - down) / (2.0 * step)
            if abs(fd - grads[name].flat[i]) > tol * max(scale, 1.0):
                raise FloatingPointError(
                    f"gradient check failed for {name}[{i}]: analytic "
                    f"{grads[name].flat[i]:.3e} vs fd {fd:.3e}"
                )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _stack_dataset(sequences):
    x = np.concatenate([s.pose2d.reshape(len(s), -1) for s in sequences])
    gt_pos = np.concatenate([s.pose3d for s in sequences])
    gt_rot = np.concatenate([s.rotations for s in sequences])
    return x, gt_pos, gt_rot


def _split_sequences(sequences, val_fraction):
    n_val = int(round(len(sequences) * val_fraction))
    n_val = min(max(n_val, 0), len(sequences) - 1)
    if n_val == 0:
        return list(sequences), list(sequences)
    return list(sequences[:-n_val]), list(sequences[-n_val:])


def _wba_augment(tree, x, gt_pos, gt_rot, k):
    """Flip the second half of a batch in place of the originals."""
    b = x.shape[0]
    half = b // 2
    p2d = x[half:].reshape(-1, k, 2)
    x = x.copy()
    x[half:] = flip_positions_2d(tree, p2d).reshape(b - half, -1)
    gt_pos = gt_pos.copy()
    gt_pos[half:] = flip_positions(tree, gt_pos[half:])
    gt_rot = gt_rot.copy()
    gt_rot[half:] = flip_rotations(tree, gt_rot[half:])
    return x, gt_pos, gt_rot


def _evaluate(tree, shape, params, cfg, sequences):
    x, gt_pos, gt_rot = _stack_dataset(sequences)
    b, k = x.shape[0], tree.joint_count
    h = np.tanh(x @ params["w1"] + params["b1"])
    raw = (h @ params["wr"] + params["br"]).reshape(b, k, _REP_DIMS[cfg.representation])
    if cfg.representation == so3.REP_MATRIX:
        raw = raw.reshape(b, k, 3, 3)
    rot = so3.decode_rotations(cfg.representation, raw)
    if cfg.head == "naive":
        pos = (h @ params["wp"] + params["bp"]).reshape(b, k, 3)
    else:
        pos, _ = forward_kinematics_batch(tree, shape, rot)
    return metrics.MetricReport.compute(pos, gt_pos, rot, gt_rot)


def train_regressor(dataset, cfg, tree=None):
    """Train one grid cell and report metrics, loss curve and divergence.

    Divergence (non-finite epoch loss, or loss above ten times the initial
    value) stops training for the cell and is reported, not raised; the
    comparison grid treats it as an outcome.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if any(s.rotations is None or s.pose3d is None for s in dataset):
        raise ValueError("training needs rotations (ground truth or pseudo labels) and 3D positions")
    tree = tree or load_tree("body22" if dataset[0].joint_count == 22 else "body26")
    k = tree.joint_count
    shape = BodyShape.neutral(k)
    rng = np.random.default_rng(cfg.seed)

    train_seqs, val_seqs = _split_sequences(dataset, cfg.val_fraction)
    x, gt_pos, gt_rot = _stack_dataset(train_seqs)
    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    if cfg.wba and batch % 2 != 0:
        raise ValueError("within-batch augmentation needs an even batch size")

    params = init_params(cfg, k, rng)

    if cfg.preflight:
        pf = slice(0, min(4, n))
        pf_rot = gt_rot[pf]
        preflight_gradients(
            tree, shape, params, cfg, x[pf], gt_pos[pf],
            _gt_in_representation(cfg.representation, pf_rot),
            rng=np.random.default_rng(cfg.seed + 1),
        )

    loss_curve = []
    diverged = False
    initial = None
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - batch + 1, batch):
            take = order[start:start + batch]
            bx, bpos, brot = x[take], gt_pos[take], gt_rot[take]
            if cfg.wba:
                bx, bpos, brot = _wba_augment(tree, bx, bpos, brot, k)
            brep = _gt_in_representation(cfg.representation, brot)
            value, grads = forward_backward(tree, shape, params, cfg, bx, bpos, brep)
            epoch_losses.append(value)
            if not np.isfinite(value):
                break
            for name in params:
                params[name] -= cfg.learning_rate * grads[name]
        epoch_mean = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        loss_curve.append(epoch_mean)
        if initial is None:
            initial = epoch_mean
        if not np.isfinite(epoch_mean) or epoch_mean > 10.0 * max(initial, 1e-12):
            diverged = True
            break

    if diverged:
        train_m = val_m = None
    else:
        train_m = _evaluate(tree, shape, params, cfg, train_seqs)
        val_m = _evaluate(tree, shape, params, cfg, val_seqs)
    return TrainReport(
        code=cfg.code,
        config=cfg,
        train_metrics=train_m,
        val_metrics=val_m,
        loss_curve=loss_curve,
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def default_grid(head="naive", **overrides):
    """The 12-cell comparison grid: 3 representations x 2 losses x WBA on/off."""
    cells = []
    for rep in (so3.REP_AA, so3.REP_QUAT, so3.REP_MATRIX):
        for wba in (False, True):
            for loss in (so3.LOSS_MSE, so3.LOSS_GEODESIC):
                cells.append(RegressorConfig(representation=rep, loss=loss, wba=wba,
                                             head=head, **overrides))
    return cells


def run_grid(dataset, configs, tree=None):
    """Train every cell and build the comparison table.

    Returns ``(reports, table)``; reports keep the configured order, the
    table shows validation scores with best cells starred.
    """
    if not configs:
        raise ValueError("no grid cells configured")
    reports = [train_regressor(dataset, cfg, tree=tree) for cfg in configs]
    rows = []
    for rep in reports:
        rows.append({
            "model": rep.code,
            "loss": rep.config.loss,
            "wba": rep.config.wba,
            "mpjpe_mm": float("nan") if rep.val_metrics is None else rep.val_metrics.mpjpe_mm,
            "mpjae_deg": float("nan") if rep.val_metrics is None else rep.val_metrics.mpjae_deg,
            "diverged": rep.diverged,
        })
    table = metrics.format_table(
        rows, columns=("model", "loss", "wba", "mpjpe_mm", "mpjae_deg", "diverged")
    )
    return reports, table


def grid_report_json(reports, **kwargs):
    return json.dumps([r.to_dict() for r in reports], **kwargs)
