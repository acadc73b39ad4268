"""Rotation representations, conversions, distances, losses and gradients.

Conventions used across the package:

* Rotation matrices are 3x3, act on column vectors (``R @ v``), batches
  stack on leading axes: ``(..., 3, 3)``.
* Quaternions are ``[w, x, y, z]``, shape ``(..., 4)``. ``q`` and ``-q``
  encode the same rotation (double cover).
* Axis-angle vectors are ``angle * unit_axis``, shape ``(..., 3)``,
  canonical angle range ``[0, pi]``.
* A set of joint rotations is a ``(K, 3, 3)`` stack aligned with a
  kinematic tree.

All functions are pure and operate on float64 arrays.
"""

import numpy as np

REP_MATRIX = "matrix"
REP_QUAT = "quat"
REP_AA = "aa"
REPRESENTATIONS = (REP_MATRIX, REP_QUAT, REP_AA)

LOSS_MSE = "mse"
LOSS_GEODESIC = "geodesic"
LOSSES = (LOSS_MSE, LOSS_GEODESIC)

# Width of the guard band around angle 0 and pi inside which the arccos
# derivative is replaced by a C1 linear-in-cosine continuation.
GRADIENT_GUARD_ANGLE = 1e-4

# Threshold on the smallest singular value below which the nearest-rotation
# projection is flagged as non-unique.
DEGENERATE_SINGULAR_VALUE = 1e-12

_ORTHONORMAL_ATOL = 1e-6


def is_rotation_matrix(m, atol=_ORTHONORMAL_ATOL):
    """True where ``m`` is orthonormal with determinant +1 (elementwise over batch)."""
    m = np.asarray(m, dtype=np.float64)
    gram = np.einsum("...ji,...jk->...ik", m, m)
    eye = np.eye(3)
    ortho_err = np.linalg.norm(gram - eye, axis=(-2, -1))
    det_err = np.abs(np.linalg.det(m) - 1.0)
    return (ortho_err < atol) & (det_err < atol)


def _require_rotation(m, name="matrix"):
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"{name} must have shape (..., 3, 3), got {m.shape}")
    ok = is_rotation_matrix(m)
    if not np.all(ok):
        bad = int(np.count_nonzero(~np.atleast_1d(ok)))
        raise ValueError(f"{name} contains {bad} non-orthonormal 3x3 block(s)")


def normalize_quat(q):
    """Scale quaternions to unit norm."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q):
    """Convert quaternions ``(..., 4)`` to rotation matrices ``(..., 3, 3)``.

    Input is normalized first, so any nonzero 4-vector is accepted.
    """
    q = normalize_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m, validate=True):
    """Convert rotation matrices to unit quaternions with ``w >= 0``.

    Uses the branch with the largest quaternion component for stability
    near angle pi. Raises ValueError on non-orthonormal input when
    ``validate`` is set.
    """
    m = np.asarray(m, dtype=np.float64)
    if validate:
        _require_rotation(m)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    tr = m00 + m11 + m22

    # 4 * (component)^2, used to pick the numerically largest branch
    w_sq = 1.0 + tr
    x_sq = 1.0 + m00 - m11 - m22
    y_sq = 1.0 + m11 - m00 - m22
    z_sq = 1.0 + m22 - m00 - m11
    branch = np.argmax(np.stack([w_sq, x_sq, y_sq, z_sq], axis=-1), axis=-1)

    tiny = np.finfo(np.float64).tiny
    sw = 2.0 * np.sqrt(np.maximum(w_sq, tiny))
    sx = 2.0 * np.sqrt(np.maximum(x_sq, tiny))
    sy = 2.0 * np.sqrt(np.maximum(y_sq, tiny))
    sz = 2.0 * np.sqrt(np.maximum(z_sq, tiny))

    cand = np.empty(m.shape[:-2] + (4, 4), dtype=np.float64)
    cand[..., 0, 0] = 0.25 * sw
    cand[..., 0, 1] = (m21 - m12) / sw
    cand[..., 0, 2] = (m02 - m20) / sw
    cand[..., 0, 3] = (m10 - m01) / sw
    cand[..., 1, 0] = (m21 - m12) / sx
    cand[..., 1, 1] = 0.25 * sx
    cand[..., 1, 2] = (m01 + m10) / sx
    cand[..., 1, 3] = (m02 + m20) / sx
    cand[..., 2, 0] = (m02 - m20) / sy
    cand[..., 2, 1] = (m01 + m10) / sy
    cand[..., 2, 2] = 0.25 * sy
    cand[..., 2, 3] = (m12 + m21) / sy
    cand[..., 3, 0] = (m10 - m01) / sz
    cand[..., 3, 1] = (m02 + m20) / sz
    cand[..., 3, 2] = (m12 + m21) / sz
    cand[..., 3, 3] = 0.25 * sz

    idx = branch[..., None, None]
    q = np.take_along_axis(cand, np.broadcast_to(idx, branch.shape + (1, 4)), axis=-2)
    q = normalize_quat(q[..., 0, :])
    # canonical sign: nonnegative scalar part
    q = np.where(q[..., :1] < 0.0, -q, q)
    return q


def aa_to_quat(v):
    """Axis-angle vectors ``(..., 3)`` to quaternions via the half-angle map."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1)
    half = 0.5 * angle
    # sin(angle/2)/angle, series below 1e-6 to dodge 0/0
    small = angle < 1e-6
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / safe)
    q = np.empty(v.shape[:-1] + (4,), dtype=np.float64)
    q[..., 0] = np.cos(half)
    q[..., 1:] = v * k[..., None]
    return q


def quat_to_aa(q):
    """Quaternions to canonical axis-angle vectors (angle in ``[0, pi]``)."""
    q = normalize_quat(q)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    xyz = q[..., 1:]
    n = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(n, w)
    # angle / sin(angle/2); -> 2 as angle -> 0
    small = n < 1e-9
    safe_n = np.where(small, 1.0, n)
    k = np.where(small, 2.0 + n * n / 3.0, angle / safe_n)
    return xyz * k[..., None]


def aa_to_matrix(v):
    """Rodrigues formula with small-angle series, ``(..., 3) -> (..., 3, 3)``."""
    v = np.asarray(v, dtype=np.float64)
    angle_sq = np.einsum("...i,...i->...", v, v)
    angle = np.sqrt(angle_sq)
    small = angle < 1e-6
    safe = np.where(small, 1.0, angle)
    safe_sq = np.where(small, 1.0, angle_sq)
    sin_c = np.where(small, 1.0 - angle_sq / 6.0, np.sin(safe) / safe)
    cos_c = np.where(small, 0.5 - angle_sq / 24.0, (1.0 - np.cos(safe)) / safe_sq)
    k = skew(v)
    kk = k @ k
    return np.eye(3) + sin_c[..., None, None] * k + cos_c[..., None, None] * kk


def matrix_to_aa(m, validate=True):
    """Rotation matrices to canonical axis-angle vectors (angle in ``[0, pi]``)."""
    return quat_to_aa(matrix_to_quat(m, validate=validate))


def canonicalize_aa(v):
    """Map any axis-angle vector to the equivalent one with angle in ``[0, pi]``."""
    return quat_to_aa(aa_to_quat(v))


def skew(v):
    """Cross-product matrices ``[v]x`` with ``skew(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def svd_orthogonalize(a, return_degenerate=False):
    """Project arbitrary 3x3 matrices to the nearest rotation in Frobenius norm.

    Computes ``U diag(1, 1, det(U V^T)) V^T`` from the SVD, which minimizes
    ``||a - R||_F`` over SO(3) and keeps ``det = +1`` even for inputs with
    negative determinant.

    With ``return_degenerate`` also returns a boolean mask marking inputs
    whose minimizer is not unique (rank-deficient, or negative determinant
    with tied trailing singular values); a valid minimizer is still returned
    for those.
    """
    a = np.asarray(a, dtype=np.float64)
    u, s, vt = np.linalg.svd(a)
    d3 = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    d3 = np.where(d3 == 0.0, 1.0, d3)
    signs = np.ones(a.shape[:-2] + (3,), dtype=np.float64)
    signs[..., 2] = d3
    r = (u * signs[..., None, :]) @ vt
    if not return_degenerate:
        return r
    rank_def = s[..., 2] < DEGENERATE_SINGULAR_VALUE
    tied_reflection = (d3 < 0.0) & (s[..., 1] - s[..., 2] < DEGENERATE_SINGULAR_VALUE)
    return r, rank_def | tied_reflection


def geodesic_distance(r_a, r_b):
    """Minimal rotation angle (radians, in ``[0, pi]``) between two rotations.

    ``arccos((trace(Ra Rb^T) - 1) / 2)`` with the cosine clamped to [-1, 1]
    to absorb floating-point drift.
    """
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    c = 0.5 * (np.einsum("...ij,...ij->...", r_a, r_b) - 1.0)
    return np.arccos(np.clip(c, -1.0, 1.0))


def relative_angle(r_a, r_b):
    """Rotation angle between two rotations via ``atan2(sin, cos)``.

    Same quantity as geodesic_distance but numerically exact down to
    machine precision for near-zero angles, where the arccos form bottoms
    out around 1.5e-8 rad. Preferred for measuring round-trip errors.
    """
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    rel = r_a @ np.swapaxes(r_b, -1, -2)
    cos = 0.5 * (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0)
    sin = 0.5 * np.linalg.norm(_vexa(rel), axis=-1)
    return np.arctan2(sin, np.clip(cos, -1.0, 1.0))


def chordal_distance(r_a, r_b):
    """Frobenius-norm distance between rotation matrices."""
    return np.linalg.norm(np.asarray(r_a, dtype=np.float64) - r_b, axis=(-2, -1))


def geodesic_loss(pred, gt):
    """Mean per-joint geodesic angle between two rotation sets, in radians.

    Both arguments are ``(..., K, 3, 3)``; the mean runs over all leading
    axes and joints. Zero iff every pair is geodesically equal.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"joint rotation sets differ in shape: {pred.shape} vs {gt.shape}")
    return float(np.mean(geodesic_distance(pred, gt)))


def mse_loss(pred, gt):
    """Mean squared element-wise difference in the representation space.

    The reduction is the mean over representation elements, then over
    joints (and any batch axes) - equal to the global element mean.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    d = pred - gt
    return float(np.mean(d * d))


def random_quats(n, rng):
    """Uniform random unit quaternions (normalized 4D Gaussian draws)."""
    q = rng.standard_normal((n, 4))
    return normalize_quat(q)


def random_rotations(n, rng, max_angle=None):
    """Uniform random rotation matrices, optionally conditioned on angle.

    With ``max_angle`` set, draws are rejection-sampled until every
    rotation angle is at most the bound, preserving uniformity on the
    constrained set.
    """
    if max_angle is None:
        return quat_to_matrix(random_quats(n, rng))
    out = np.empty((n, 4), dtype=np.float64)
    filled = 0
    while filled < n:
        q = random_quats(n - filled, rng)
        angle = 2.0 * np.arccos(np.clip(np.abs(q[:, 0]), -1.0, 1.0))
        keep = q[angle <= max_angle]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
    return quat_to_matrix(out)


# ---------------------------------------------------------------------------
# Losses with analytic gradients w.r.t. raw (unconstrained) parameters.
# ---------------------------------------------------------------------------

def _smoothed_arccos(c):
    """arccos with a C1 linear-in-cosine continuation near both endpoints.

    Inside the guard band the value is exact arccos. Outside, the function
    continues linearly in the cosine, which is quadratic in the angle, so
    the derivative stays bounded by 1/sin(guard) instead of diverging.
    Returns (value, d value / d cosine).
    """
    phi0 = GRADIENT_GUARD_ANGLE
    c_hi = np.cos(phi0)
    s0 = np.sin(phi0)
    c = np.asarray(c, dtype=np.float64)
    inside = np.abs(c) <= c_hi
    val = np.where(inside, np.arccos(np.clip(c, -1.0, 1.0)), 0.0)
    val = np.where(c > c_hi, phi0 + (c_hi - c) / s0, val)
    val = np.where(c < -c_hi, (np.pi - phi0) + (-c_hi - c) / s0, val)
    sin_phi = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    dval = np.where(inside, -1.0 / np.maximum(sin_phi, s0), -1.0 / s0)
    return val, dval


def _geodesic_loss_and_matrix_grad(pred_rot, gt_rot):
    """Smoothed geodesic loss and its gradient w.r.t. the predicted matrices.

    ``d/dR arccos((tr(R G^T) - 1)/2) = dval/dcos * G / 2``, averaged over
    joints.
    """
    c = 0.5 * (np.einsum("...ij,...ij->...", pred_rot, gt_rot) - 1.0)
    val, dval = _smoothed_arccos(c)
    n = val.size
    grad = (dval / n)[..., None, None] * (0.5 * gt_rot)
    return float(np.mean(val)), grad


def quat_matrix_jacobian(q):
    """Jacobian of quat_to_matrix at unit ``q``: shape ``(..., 3, 3, 4)``.

    Entry ``[..., a, b, i]`` is the derivative of matrix element (a, b)
    with respect to quaternion component i in [w, x, y, z] order, taking
    the unit-normalized formula at face value (normalization itself is
    chained separately).
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)
    jac = np.empty(q.shape[:-1] + (3, 3, 4), dtype=np.float64)
    # d/d[w, x, y, z] of each entry; factor 2 applied at the end
    jac[..., 0, 0, :] = np.stack([zero, zero, -2 * y, -2 * z], axis=-1)
    jac[..., 0, 1, :] = np.stack([-z, y, x, -w], axis=-1)
    jac[..., 0, 2, :] = np.stack([y, z, w, x], axis=-1)
    jac[..., 1, 0, :] = np.stack([z, y, x, w], axis=-1)
    jac[..., 1, 1, :] = np.stack([zero, -2 * x, zero, -2 * z], axis=-1)
    jac[..., 1, 2, :] = np.stack([-x, -w, z, y], axis=-1)
    jac[..., 2, 0, :] = np.stack([-y, z, -w, x], axis=-1)
    jac[..., 2, 1, :] = np.stack([x, w, z, y], axis=-1)
    jac[..., 2, 2, :] = np.stack([zero, -2 * x, -2 * y, zero], axis=-1)
    return 2.0 * jac


def _vexa(p):
    """Axial vector of ``p - p^T``: contracts a matrix against skew bases.

    Satisfies ``<p, skew(u)>_F == dot(u, _vexa(p))`` for any 3-vector u.
    """
    out = np.empty(p.shape[:-2] + (3,), dtype=np.float64)
    out[..., 0] = p[..., 2, 1] - p[..., 1, 2]
    out[..., 1] = p[..., 0, 2] - p[..., 2, 0]
    out[..., 2] = p[..., 1, 0] - p[..., 0, 1]
    return out


def aa_matrix_vjp(v, rot, grad_rot):
    """Pull a matrix-space gradient back to axis-angle parameters.

    For ``R = aa_to_matrix(v)`` and an upstream gradient ``grad_rot`` of
    shape ``(..., 3, 3)``, returns ``g`` with ``g_i = <grad_rot, dR/dv_i>``
    using the closed-form differential of the exponential map:

        dR/dv_i = (v_i [v]x + [v x ((I - R) e_i)]x) / |v|^2 . R

    and the exact limit ``vexa(grad_rot R^T)`` below a small-angle cutoff.
    """
    v = np.asarray(v, dtype=np.float64)
    theta_sq = np.einsum("...i,...i->...", v, v)
    p = grad_rot @ np.swapaxes(rot, -1, -2)
    a = _vexa(p)
    small = theta_sq < 1e-12
    safe = np.where(small, 1.0, theta_sq)
    av = np.cross(a, v)
    eye_minus_rt = np.swapaxes(np.eye(3) - rot, -1, -2)
    exact = (np.einsum("...i,...i->...", v, a)[..., None] * v
             + np.einsum("...ij,...j->...i", eye_minus_rt, av)) / safe[..., None]
    return np.where(small[..., None], a, exact)


def svd_orthogonalize_vjp(a, grad_rot):
    """Pull a matrix-space gradient back through the nearest-rotation map.

    Uses the SVD perturbation expansion of ``R = U diag(1,1,s) V^T``; the
    result is exact wherever the projection is differentiable (distinct
    singular values when det < 0; any full-rank input when det > 0).
    Denominators are clamped at 1e-12 as a guard for degenerate input.
    """
    a = np.asarray(a, dtype=np.float64)
    u, s, vt = np.linalg.svd(a)
    s3 = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    s3 = np.where(s3 == 0.0, 1.0, s3)
    d = np.ones(a.shape[:-2] + (3,), dtype=np.float64)
    d[..., 2] = s3
    h = np.swapaxes(u, -1, -2) @ grad_rot @ np.swapaxes(vt, -1, -2)
    dd = d[..., :, None] * d[..., None, :]
    den = s[..., :, None] + dd * s[..., None, :]
    eps = 1e-12
    den = np.where(np.abs(den) < eps, np.where(den < 0.0, -eps, eps), den)
    c = d[..., :, None] * (h - dd * np.swapaxes(h, -1, -2)) / den
    idx = np.arange(3)
    c[..., idx, idx] = 0.0
    return u @ c @ vt


def _chain_through_normalization(q_unit, raw_norm, grad_q):
    """Project a gradient at the unit quaternion back to the raw 4-vector."""
    radial = np.einsum("...i,...i->...", q_unit, grad_q)
    return (grad_q - radial[..., None] * q_unit) / raw_norm[..., None]


def loss_and_grad(kind, representation, pred_raw, gt):
    """Loss value and analytic gradient w.r.t. raw rotation parameters.

    ``pred_raw`` holds unconstrained per-joint parameters in the given
    representation: ``(..., K, 3, 3)`` arbitrary matrices, ``(..., K, 4)``
    unnormalized quaternions, or ``(..., K, 3)`` axis-angle vectors.
    ``gt`` holds valid targets in the same representation.

    * ``mse``: computed in representation space (quaternions normalized
      first, matrices and axis-angle taken as-is).
    * ``geodesic``: pred decoded to a valid rotation first (SVD projection
      for matrices, normalization for quaternions), then the mean
      guard-banded geodesic angle to the target rotations; gradients flow
      through the decoding step.

    Returns ``(value, grad)`` with ``grad.shape == pred_raw.shape``.
    """
    pred_raw = np.asarray(pred_raw, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred_raw.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred_raw.shape} vs {gt.shape}")
    if kind not in LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}")
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}")

    if kind == LOSS_MSE:
        if representation == REP_QUAT:
            raw_norm = np.linalg.norm(pred_raw, axis=-1)
            q = pred_raw / raw_norm[..., None]
            diff = q - gt
            value = float(np.mean(diff * diff))
            grad_q = 2.0 * diff / diff.size
            return value, _chain_through_normalization(q, raw_norm, grad_q)
        diff = pred_raw - gt
        value = float(np.mean(diff * diff))
        return value, 2.0 * diff / diff.size

    if representation == REP_MATRIX:
        rot = svd_orthogonalize(pred_raw)
        value, grad_rot = _geodesic_loss_and_matrix_grad(rot, gt)
        return value, svd_orthogonalize_vjp(pred_raw, grad_rot)
    if representation == REP_QUAT:
        raw_norm = np.linalg.norm(pred_raw, axis=-1)
        q = pred_raw / raw_norm[..., None]
        rot = quat_to_matrix(q)
        value, grad_rot = _geodesic_loss_and_matrix_grad(rot, quat_to_matrix(gt))
        grad_q = np.einsum("...abi,...ab->...i", quat_matrix_jacobian(q), grad_rot)
        return value, _chain_through_normalization(q, raw_norm, grad_q)
    rot = aa_to_matrix(pred_raw)
    value, grad_rot = _geodesic_loss_and_matrix_grad(rot, aa_to_matrix(gt))
    return value, aa_matrix_vjp(pred_raw, rot, grad_rot)


def identity_rotations(k):
    """Stack of ``k`` identity matrices, the rest pose of a joint set."""
    return np.broadcast_to(np.eye(3), (k, 3, 3)).copy()


def decode_rotations(representation, raw):
    """Turn raw regression output into valid rotation matrices.

    Matrices go through the nearest-rotation projection, quaternions are
    normalized, axis-angle vectors decode directly.
    """
    if representation == REP_MATRIX:
        return svd_orthogonalize(raw)
    if representation == REP_QUAT:
        return quat_to_matrix(raw)
    if representation == REP_AA:
        return aa_to_matrix(raw)
    raise ValueError(f"unknown representation {representation!r}")


def decode_rotations_vjp(representation, raw, rot, grad_rot):
    """Pull a matrix-space gradient back through decode_rotations.

    ``rot`` must be the decode output for ``raw`` (avoids recomputing it).
    """
    if representation == REP_MATRIX:
        return svd_orthogonalize_vjp(raw, grad_rot)
    if representation == REP_QUAT:
        raw = np.asarray(raw, dtype=np.float64)
        raw_norm = np.linalg.norm(raw, axis=-1)
        q = raw / raw_norm[..., None]
        grad_q = np.einsum("...abi,...ab->...i", quat_matrix_jacobian(q), grad_rot)
        return _chain_through_normalization(q, raw_norm, grad_q)
    if representation == REP_AA:
        return aa_matrix_vjp(raw, rot, grad_rot)
    raise ValueError(f"unknown representation {representation!r}")


def slerp(q_a, q_b, u):
    """Shortest-path spherical interpolation between unit quaternions.

    Elementwise over leading axes; ``u`` broadcasts. Near-parallel pairs
    fall back to normalized linear interpolation, which stays on the same
    great arc.
    """
    q_a = normalize_quat(q_a)
    q_b = normalize_quat(q_b)
    dot = np.einsum("...i,...i->...", q_a, q_b)
    q_b = np.where(dot[..., None] < 0.0, -q_b, q_b)
    dot = np.abs(dot)
    u = np.asarray(u, dtype=np.float64)
    close = dot > 0.9995
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    safe_sin = np.where(close, 1.0, sin_theta)
    w_a = np.where(close, 1.0 - u, np.sin((1.0 - u) * theta) / safe_sin)
    w_b = np.where(close, u, np.sin(u * theta) / safe_sin)
    out = w_a[..., None] * q_a + w_b[..., None] * q_b
    return normalize_quat(out)
