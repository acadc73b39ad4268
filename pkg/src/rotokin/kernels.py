"""Hot single-frame kernels for forward kinematics and the IK inner loop.

Each kernel exists twice: a numba @njit loop build (suffix ``_nb``) and a
vectorized numpy build (suffix ``_np``). The module-level names dispatch
to the numba build unless ROTOKIN_NO_NUMBA is set (see rotokin.accel).
Both builds take the same arguments and agree to float64 round-off;
tests/test_kernels.py cross-checks them.

Layout conventions: ``parents`` is int64 with -1 for the root, offsets and
positions are (K, 3), rotations (K, 3, 3). The position Jacobian maps
right-multiplicative axis-angle increments per joint (3K parameters) to
joint positions (3K outputs): column block i of row block j is
``cross(world_axis_a(i), p_j - p_i)`` for strict descendants j of i.
"""

import math

import numpy as np

from . import so3
from .accel import NUMBA_ENABLED, njit

__all__ = [
    "fk",
    "position_jacobian",
    "scale_jacobian",
    "apply_rotation_step",
    "log_rotations",
    "inv_right_jacobians",
    "NUMBA_ENABLED",
]


# ---------------------------------------------------------------------------
# numpy builds
# ---------------------------------------------------------------------------

def fk_np(parents, offsets, rotations):
    """Accumulate global rotations and root-relative positions joint by joint."""
    k = len(parents)
    globals_ = np.empty((k, 3, 3), dtype=np.float64)
    positions = np.zeros((k, 3), dtype=np.float64)
    globals_[0] = rotations[0]
    for j in range(1, k):
        p = parents[j]
        globals_[j] = globals_[p] @ rotations[j]
        positions[j] = positions[p] + globals_[p] @ offsets[j]
    return positions, globals_


def position_jacobian_np(positions, globals_, desc_mask):
    k = len(positions)
    # axes[i, a] is world axis a of joint i; d[i, j] = p_j - p_i
    axes = np.swapaxes(globals_, -1, -2)
    d = positions[None, :, :] - positions[:, None, :]
    blocks = np.cross(axes[:, None, :, :], d[:, :, None, :])
    blocks *= desc_mask[:, :, None, None]
    # J[3j + r, 3i + a] = blocks[i, j, a, r]
    return blocks.transpose(1, 3, 0, 2).reshape(3 * k, 3 * k)


def scale_jacobian_np(parents, positions, chain_mask):
    k = len(positions)
    bones = positions - positions[np.maximum(parents, 0)]
    cols = chain_mask[:, :, None] * bones[:, None, :]
    # J[3j + r, i] = cols[i, j, r]
    return cols.transpose(1, 2, 0).reshape(3 * k, k)


def apply_rotation_step_np(rotations, delta):
    return rotations @ so3.aa_to_matrix(delta.reshape(-1, 3))


def log_rotations_np(rotations):
    return so3.matrix_to_aa(rotations, validate=False)


def inv_right_jacobians_np(aa):
    """Inverse right Jacobian of the exponential map, batched over joints.

    Jr^-1(v) = I + [v]x/2 + c [v]x^2 with
    c = 1/t^2 - (1 + cos t)/(2 t sin t), series c = 1/12 + t^2/720 near 0.
    """
    aa = np.asarray(aa, dtype=np.float64)
    t_sq = np.einsum("...i,...i->...", aa, aa)
    t = np.sqrt(t_sq)
    small = t < 1e-5
    safe_t = np.where(small, 1.0, t)
    safe_t_sq = np.where(small, 1.0, t_sq)
    c = np.where(
        small,
        1.0 / 12.0 + t_sq / 720.0,
        1.0 / safe_t_sq - (1.0 + np.cos(safe_t)) / (2.0 * safe_t * np.sin(safe_t)),
    )
    k = so3.skew(aa)
    return np.eye(3) + 0.5 * k + c[..., None, None] * (k @ k)


# ---------------------------------------------------------------------------
# numba builds
# ---------------------------------------------------------------------------

@njit(cache=True)
def _fk_nb(parents, offsets, rotations):
    k = parents.shape[0]
    globals_ = np.empty((k, 3, 3), dtype=np.float64)
    positions = np.zeros((k, 3), dtype=np.float64)
    for a in range(3):
        for b in range(3):
            globals_[0, a, b] = rotations[0, a, b]
    for j in range(1, k):
        p = parents[j]
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += globals_[p, a, c] * rotations[j, c, b]
                globals_[j, a, b] = acc
        for a in range(3):
            positions[j, a] = (
                positions[p, a]
                + globals_[p, a, 0] * offsets[j, 0]
                + globals_[p, a, 1] * offsets[j, 1]
                + globals_[p, a, 2] * offsets[j, 2]
            )
    return positions, globals_


@njit(cache=True)
def _position_jacobian_nb(positions, globals_, desc_mask):
    k = positions.shape[0]
    jac = np.zeros((3 * k, 3 * k), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            if not desc_mask[i, j]:
                continue
            dx = positions[j, 0] - positions[i, 0]
            dy = positions[j, 1] - positions[i, 1]
            dz = positions[j, 2] - positions[i, 2]
            for a in range(3):
                ax = globals_[i, 0, a]
                ay = globals_[i, 1, a]
                az = globals_[i, 2, a]
                jac[3 * j + 0, 3 * i + a] = ay * dz - az * dy
                jac[3 * j + 1, 3 * i + a] = az * dx - ax * dz
                jac[3 * j + 2, 3 * i + a] = ax * dy - ay * dx
    return jac


@njit(cache=True)
def _scale_jacobian_nb(parents, positions, chain_mask):
    k = positions.shape[0]
    jac = np.zeros((3 * k, k), dtype=np.float64)
    for i in range(k):
        p = parents[i]
        if p < 0:
            continue
        bx = positions[i, 0] - positions[p, 0]
        by = positions[i, 1] - positions[p, 1]
        bz = positions[i, 2] - positions[p, 2]
        for j in range(k):
            if chain_mask[i, j]:
                jac[3 * j + 0, i] = bx
                jac[3 * j + 1, i] = by
                jac[3 * j + 2, i] = bz
    return jac


@njit(cache=True)
def _aa_to_matrix_single(vx, vy, vz, out):
    t_sq = vx * vx + vy * vy + vz * vz
    t = math.sqrt(t_sq)
    if t < 1e-6:
        sin_c = 1.0 - t_sq / 6.0
        cos_c = 0.5 - t_sq / 24.0
    else:
        sin_c = math.sin(t) / t
        cos_c = (1.0 - math.cos(t)) / t_sq
    out[0, 0] = 1.0 - cos_c * (vy * vy + vz * vz)
    out[0, 1] = -sin_c * vz + cos_c * vx * vy
    out[0, 2] = sin_c * vy + cos_c * vx * vz
    out[1, 0] = sin_c * vz + cos_c * vx * vy
    out[1, 1] = 1.0 - cos_c * (vx * vx + vz * vz)
    out[1, 2] = -sin_c * vx + cos_c * vy * vz
    out[2, 0] = -sin_c * vy + cos_c * vx * vz
    out[2, 1] = sin_c * vx + cos_c * vy * vz
    out[2, 2] = 1.0 - cos_c * (vx * vx + vy * vy)


@njit(cache=True)
def _apply_rotation_step_nb(rotations, delta):
    k = rotations.shape[0]
    out = np.empty((k, 3, 3), dtype=np.float64)
    step = np.empty((3, 3), dtype=np.float64)
    for j in range(k):
        _aa_to_matrix_single(delta[3 * j], delta[3 * j + 1], delta[3 * j + 2], step)
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += rotations[j, a, c] * step[c, b]
                out[j, a, b] = acc
    return out


@njit(cache=True)
def _log_rotations_nb(rotations):
    k = rotations.shape[0]
    out = np.empty((k, 3), dtype=np.float64)
    for j in range(k):
        m00 = rotations[j, 0, 0]
        m01 = rotations[j, 0, 1]
        m02 = rotations[j, 0, 2]
        m10 = rotations[j, 1, 0]
        m11 = rotations[j, 1, 1]
        m12 = rotations[j, 1, 2]
        m20 = rotations[j, 2, 0]
        m21 = rotations[j, 2, 1]
        m22 = rotations[j, 2, 2]
        tr = m00 + m11 + m22
        # largest-component quaternion extraction, then half-angle map
        if tr >= m00 and tr >= m11 and tr >= m22:
            s = 2.0 * math.sqrt(max(1.0 + tr, 1e-300))
            qw = 0.25 * s
            qx = (m21 - m12) / s
            qy = (m02 - m20) / s
            qz = (m10 - m01) / s
        elif m00 >= m11 and m00 >= m22:
            s = 2.0 * math.sqrt(max(1.0 + m00 - m11 - m22, 1e-300))
            qw = (m21 - m12) / s
            qx = 0.25 * s
            qy = (m01 + m10) / s
            qz = (m02 + m20) / s
        elif m11 >= m22:
            s = 2.0 * math.sqrt(max(1.0 + m11 - m00 - m22, 1e-300))
            qw = (m02 - m20) / s
            qx = (m01 + m10) / s
            qy = 0.25 * s
            qz = (m12 + m21) / s
        else:
            s = 2.0 * math.sqrt(max(1.0 + m22 - m00 - m11, 1e-300))
            qw = (m10 - m01) / s
            qx = (m02 + m20) / s
            qy = (m12 + m21) / s
            qz = 0.25 * s
        norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= norm
        qx /= norm
        qy /= norm
        qz /= norm
        if qw < 0.0:
            qw, qx, qy, qz = -qw, -qx, -qy, -qz
        n = math.sqrt(qx * qx + qy * qy + qz * qz)
        if n < 1e-9:
            f = 2.0 + n * n / 3.0
        else:
            f = 2.0 * math.atan2(n, qw) / n
        out[j, 0] = f * qx
        out[j, 1] = f * qy
        out[j, 2] = f * qz
    return out


@njit(cache=True)
def _inv_right_jacobians_nb(aa):
    k = aa.shape[0]
    out = np.empty((k, 3, 3), dtype=np.float64)
    for j in range(k):
        vx, vy, vz = aa[j, 0], aa[j, 1], aa[j, 2]
        t_sq = vx * vx + vy * vy + vz * vz
        t = math.sqrt(t_sq)
        if t < 1e-5:
            c = 1.0 / 12.0 + t_sq / 720.0
        else:
            c = 1.0 / t_sq - (1.0 + math.cos(t)) / (2.0 * t * math.sin(t))
        xx, yy, zz = vx * vx, vy * vy, vz * vz
        xy, xz, yz = vx * vy, vx * vz, vy * vz
        # I + [v]x / 2 + c [v]x^2
        out[j, 0, 0] = 1.0 + c * (-zz - yy)
        out[j, 0, 1] = -0.5 * vz + c * xy
        out[j, 0, 2] = 0.5 * vy + c * xz
        out[j, 1, 0] = 0.5 * vz + c * xy
        out[j, 1, 1] = 1.0 + c * (-zz - xx)
        out[j, 1, 2] = -0.5 * vx + c * yz
        out[j, 2, 0] = -0.5 * vy + c * xz
        out[j, 2, 1] = 0.5 * vx + c * yz
        out[j, 2, 2] = 1.0 + c * (-yy - xx)
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    fk = _fk_nb
    position_jacobian = _position_jacobian_nb
    scale_jacobian = _scale_jacobian_nb
    apply_rotation_step = _apply_rotation_step_nb
    log_rotations = _log_rotations_nb
    inv_right_jacobians = _inv_right_jacobians_nb
else:
    fk = fk_np
    position_jacobian = position_jacobian_np
    scale_jacobian = scale_jacobian_np
    apply_rotation_step = apply_rotation_step_np
    log_rotations = log_rotations_np
    inv_right_jacobians = inv_right_jacobians_np
