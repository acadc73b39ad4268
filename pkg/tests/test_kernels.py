"""Cross-checks between the numba kernels and their numpy fallbacks."""

import numpy as np
import pytest

from rotokin import kernels, so3
from rotokin.kinematics import BodyShape

needs_numba = pytest.mark.skipif(
    not kernels.NUMBA_ENABLED, reason="numba disabled; only the numpy build is active"
)


@pytest.fixture
def frame(tree22, rng):
    rot = so3.random_rotations(tree22.joint_count, rng)
    offsets = tree22.template_offsets * BodyShape.neutral(tree22.joint_count).bone_scales[:, None]
    return tree22, offsets, rot


@needs_numba
def test_fk_builds_agree(frame):
    tree, offsets, rot = frame
    p_nb, g_nb = kernels._fk_nb(tree.parents, offsets, rot)
    p_np, g_np = kernels.fk_np(tree.parents, offsets, rot)
    np.testing.assert_allclose(p_nb, p_np, atol=1e-14)
    np.testing.assert_allclose(g_nb, g_np, atol=1e-14)


@needs_numba
def test_position_jacobian_builds_agree(frame):
    tree, offsets, rot = frame
    p, g = kernels.fk_np(tree.parents, offsets, rot)
    j_nb = kernels._position_jacobian_nb(p, g, tree.descendant_mask)
    j_np = kernels.position_jacobian_np(p, g, tree.descendant_mask)
    np.testing.assert_allclose(j_nb, j_np, atol=1e-14)


@needs_numba
def test_scale_jacobian_builds_agree(frame):
    tree, offsets, rot = frame
    p, _ = kernels.fk_np(tree.parents, offsets, rot)
    j_nb = kernels._scale_jacobian_nb(tree.parents, p, tree.chain_mask)
    j_np = kernels.scale_jacobian_np(tree.parents, p, tree.chain_mask)
    np.testing.assert_allclose(j_nb, j_np, atol=1e-14)


@needs_numba
def test_rotation_step_builds_agree(frame, rng):
    _, _, rot = frame
    delta = 0.3 * rng.standard_normal(3 * len(rot))
    r_nb = kernels._apply_rotation_step_nb(rot, delta)
    r_np = kernels.apply_rotation_step_np(rot, delta)
    np.testing.assert_allclose(r_nb, r_np, atol=1e-13)
    assert np.all(so3.is_rotation_matrix(r_nb))


@needs_numba
def test_log_builds_agree(frame):
    _, _, rot = frame
    np.testing.assert_allclose(
        kernels._log_rotations_nb(rot), kernels.log_rotations_np(rot), atol=1e-12
    )


@needs_numba
def test_inv_right_jacobian_builds_agree(frame):
    _, _, rot = frame
    aa = kernels.log_rotations_np(rot)
    np.testing.assert_allclose(
        kernels._inv_right_jacobians_nb(aa), kernels.inv_right_jacobians_np(aa), atol=1e-12
    )


def test_inv_right_jacobian_linearizes_log(rng):
    # log(R exp(d)) ~= log(R) + Jr_inv(log R) d for small d
    rot = so3.random_rotations(16, rng, max_angle=2.5)
    aa = kernels.log_rotations_np(rot)
    jr_inv = kernels.inv_right_jacobians_np(aa)
    delta = 1e-6 * rng.standard_normal((16, 3))
    stepped = kernels.apply_rotation_step_np(rot, delta.ravel())
    lhs = kernels.log_rotations_np(stepped) - aa
    rhs = np.einsum("kij,kj->ki", jr_inv, delta)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)
