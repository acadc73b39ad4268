"""Kinematic trees, forward kinematics, camera projection and flipping.

Trees are rooted at index 0 with parent indices in topological order, so a
single forward pass over the joint list accumulates global rotations and
root-relative positions. Template bone offsets are in meters; the mirror
plane for horizontal flipping is x = 0.
"""

import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources

import numpy as np

from . import kernels, so3

_MIRROR = np.diag([-1.0, 1.0, 1.0])

TREE_PRESETS = ("body22", "body26")


@dataclass(frozen=True)
class KinematicTree:
    """Joint hierarchy with template offsets and a left/right joint pairing."""

    joint_names: tuple
    parents: np.ndarray
    template_offsets: np.ndarray
    left_right_map: np.ndarray

    def __post_init__(self):
        names = tuple(self.joint_names)
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.template_offsets, dtype=np.float64)
        lr = np.asarray(self.left_right_map, dtype=np.int64)
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "template_offsets", offsets)
        object.__setattr__(self, "left_right_map", lr)

        k = len(names)
        if parents.shape != (k,) or offsets.shape != (k, 3) or lr.shape != (k,):
            raise ValueError("tree field lengths disagree")
        if k == 0:
            raise ValueError("tree has no joints")
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, k):
            if not 0 <= parents[j] < j:
                raise ValueError(f"parents must be topologically ordered; joint {j} has parent {parents[j]}")
        if not np.array_equal(lr[lr], np.arange(k)):
            raise ValueError("left_right_map must be an involution")
        for j in range(1, k):
            if parents[lr[j]] != lr[parents[j]]:
                raise ValueError(f"left_right_map does not preserve the hierarchy at joint {j}")
        if np.any(offsets[0] != 0.0):
            raise ValueError("root template offset must be zero")

    @property
    def joint_count(self):
        return len(self.joint_names)

    @cached_property
    def descendant_mask(self):
        """(K, K) bool; entry [i, j] marks j a strict descendant of i."""
        k = self.joint_count
        mask = np.zeros((k, k), dtype=bool)
        for j in range(1, k):
            p = self.parents[j]
            mask[p, j] = True
            mask[:, j] |= mask[:, p]
        return mask

    @cached_property
    def chain_mask(self):
        """(K, K) bool; entry [i, j] marks i an ancestor of j or j itself."""
        return self.descendant_mask | np.eye(self.joint_count, dtype=bool)

    def to_dict(self):
        return {
            "joint_names": list(self.joint_names),
            "parents": self.parents.tolist(),
            "template_offsets": self.template_offsets.tolist(),
            "left_right_map": self.left_right_map.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        missing = [f for f in ("joint_names", "parents", "template_offsets", "left_right_map") if f not in data]
        if missing:
            raise ValueError(f"tree definition missing field(s): {', '.join(missing)}")
        return cls(
            joint_names=tuple(data["joint_names"]),
            parents=np.asarray(data["parents"]),
            template_offsets=np.asarray(data["template_offsets"]),
            left_right_map=np.asarray(data["left_right_map"]),
        )


def load_tree(name_or_path):
    """Load a preset tree (``body22``/``body26``) or a tree JSON file."""
    if name_or_path in TREE_PRESETS:
        text = resources.files("rotokin.data").joinpath(f"{name_or_path}.json").read_text()
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    return KinematicTree.from_dict(json.loads(text))


@dataclass(frozen=True)
class BodyShape:
    """Per-joint positive scale factors applied to the template bone offsets."""

    bone_scales: np.ndarray

    def __post_init__(self):
        scales = np.asarray(self.bone_scales, dtype=np.float64)
        object.__setattr__(self, "bone_scales", scales)
        if scales.ndim != 1:
            raise ValueError("bone_scales must be a flat vector")
        if np.any(scales <= 0.0):
            raise ValueError("bone scales must be positive")

    @classmethod
    def neutral(cls, joint_count):
        return cls(np.ones(joint_count))

    def to_dict(self):
        return {"bone_scales": self.bone_scales.tolist()}

    @classmethod
    def from_dict(cls, data):
        if "bone_scales" not in data:
            raise ValueError("shape definition missing field: bone_scales")
        return cls(np.asarray(data["bone_scales"]))


@dataclass
class PoseSequence:
    """Time-ordered frames sharing one tree: 2D poses plus optional 3D/rotations."""

    timestamps: np.ndarray
    pose2d: np.ndarray
    pose3d: np.ndarray | None = None
    rotations: np.ndarray | None = None
    frame_rate: float = 30.0
    provenance: str = ""
    converged: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.pose2d = np.asarray(self.pose2d, dtype=np.float64)
        if self.pose3d is not None:
            self.pose3d = np.asarray(self.pose3d, dtype=np.float64)
        if self.rotations is not None:
            self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.converged is not None:
            self.converged = np.asarray(self.converged, dtype=bool)
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    @property
    def joint_count(self):
        return self.pose2d.shape[1]


def _scaled_offsets(tree, shape):
    if shape.bone_scales.shape != (tree.joint_count,):
        raise ValueError(
            f"shape has {shape.bone_scales.shape[0]} scales for a {tree.joint_count}-joint tree"
        )
    return tree.template_offsets * shape.bone_scales[:, None]


def forward_kinematics(tree, shape, rotations):
    """Root-relative joint positions and composed global rotations.

    ``rotations`` is a (K, 3, 3) stack of parent-relative rotations, entry 0
    being the global root rotation. Global rotations compose down the tree
    and each child position adds its parent's global rotation applied to
    the scaled template offset.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.shape != (tree.joint_count, 3, 3):
        raise ValueError(f"expected rotations of shape ({tree.joint_count}, 3, 3), got {rotations.shape}")
    offsets = _scaled_offsets(tree, shape)
    return kernels.fk(tree.parents, offsets, rotations)


def forward_kinematics_batch(tree, shape, rotations):
    """Vectorized FK over leading batch axes: ``(..., K, 3, 3) -> (..., K, 3)``.

    Returns (positions, globals) like forward_kinematics.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    k = tree.joint_count
    if rotations.shape[-3:] != (k, 3, 3):
        raise ValueError(f"expected trailing shape ({k}, 3, 3), got {rotations.shape}")
    offsets = _scaled_offsets(tree, shape)
    lead = rotations.shape[:-3]
    globals_ = np.empty(lead + (k, 3, 3), dtype=np.float64)
    positions = np.zeros(lead + (k, 3), dtype=np.float64)
    globals_[..., 0, :, :] = rotations[..., 0, :, :]
    for j in range(1, k):
        p = tree.parents[j]
        globals_[..., j, :, :] = globals_[..., p, :, :] @ rotations[..., j, :, :]
        positions[..., j, :] = positions[..., p, :] + np.einsum(
            "...ab,b->...a", globals_[..., p, :, :], offsets[j]
        )
    return positions, globals_


def forward_kinematics_vjp(tree, shape, rotations, globals_, grad_positions):
    """Pull a position-space gradient back to the local joint rotations.

    Reverse pass of forward_kinematics_batch: walks joints in reverse
    topological order, accumulating gradients through both the position
    chain (parent position plus rotated offset) and the rotation chain
    (global = parent global times local). The root position is constant,
    so its incoming gradient is ignored.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    offsets = _scaled_offsets(tree, shape)
    k = tree.joint_count
    g_pos = np.array(grad_positions, dtype=np.float64)
    g_glob = np.zeros_like(globals_)
    g_rot = np.empty_like(rotations)
    for j in range(k - 1, 0, -1):
        p = tree.parents[j]
        g_pos[..., p, :] += g_pos[..., j, :]
        g_glob[..., p, :, :] += g_pos[..., j, :, None] * offsets[j][..., None, :]
        g_glob[..., p, :, :] += g_glob[..., j, :, :] @ np.swapaxes(rotations[..., j, :, :], -1, -2)
        g_rot[..., j, :, :] = np.swapaxes(globals_[..., p, :, :], -1, -2) @ g_glob[..., j, :, :]
    g_rot[..., 0, :, :] = g_glob[..., 0, :, :]
    return g_rot


def positions_from_globals(tree, shape, globals_):
    """Rebuild joint positions from global rotations alone (consistency check)."""
    offsets = _scaled_offsets(tree, shape)
    k = tree.joint_count
    positions = np.zeros(globals_.shape[:-3] + (k, 3), dtype=np.float64)
    for j in range(1, k):
        p = tree.parents[j]
        positions[..., j, :] = positions[..., p, :] + np.einsum(
            "...ab,b->...a", globals_[..., p, :, :], offsets[j]
        )
    return positions


def project(positions3d, scale=1.0, offset=(0.0, 0.0)):
    """Weak-perspective projection: drop z, then ``scale * (x, y) + offset``."""
    positions3d = np.asarray(positions3d, dtype=np.float64)
    return scale * positions3d[..., :2] + np.asarray(offset, dtype=np.float64)


def flip_rotations(tree, rotations):
    """Mirror parent-relative rotations across x = 0 and swap left/right joints.

    Conjugation by the reflection keeps determinants at +1, so outputs are
    valid rotations.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    permuted = rotations[..., tree.left_right_map, :, :]
    return _MIRROR @ permuted @ _MIRROR


def flip_positions(tree, positions):
    """Mirror 3D positions across x = 0 and swap left/right joints."""
    positions = np.asarray(positions, dtype=np.float64)
    out = positions[..., tree.left_right_map, :].copy()
    out[..., 0] = -out[..., 0]
    return out


def flip_positions_2d(tree, positions2d, axis_x=0.0):
    """Mirror 2D positions about the vertical line ``x = axis_x`` and swap sides."""
    positions2d = np.asarray(positions2d, dtype=np.float64)
    out = positions2d[..., tree.left_right_map, :].copy()
    out[..., 0] = 2.0 * axis_x - out[..., 0]
    return out


def flip_sequence(tree, seq):
    """Horizontal flip of every frame of a PoseSequence."""
    return PoseSequence(
        timestamps=seq.timestamps.copy(),
        pose2d=flip_positions_2d(tree, seq.pose2d),
        pose3d=None if seq.pose3d is None else flip_positions(tree, seq.pose3d),
        rotations=None if seq.rotations is None else flip_rotations(tree, seq.rotations),
        frame_rate=seq.frame_rate,
        provenance=seq.provenance,
        converged=None if seq.converged is None else seq.converged.copy(),
    )


def build_wba_batch(tree, windows, mode="distinct"):
    """Compose a within-batch-augmentation batch: originals then flips.

    ``duplicate`` keeps the first half of the input and appends its flips
    index-aligned (window i + n is the flip of window i); ``distinct``
    keeps the first half as-is and flips the second half in place, so no
    effective batch-size halving occurs.
    """
    if len(windows) % 2 != 0:
        raise ValueError("batch size must be even for within-batch augmentation")
    half = len(windows) // 2
    if mode == "duplicate":
        kept = list(windows[:half])
        return kept + [flip_sequence(tree, w) for w in kept]
    if mode == "distinct":
        return list(windows[:half]) + [flip_sequence(tree, w) for w in windows[half:]]
    raise ValueError(f"unknown wba mode {mode!r}")
