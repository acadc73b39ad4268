import numpy as np
import pytest

from rotokin import so3
from rotokin.ik import IKConfig, generate_pseudo_labels, solve_frame, solve_sequence
from rotokin.kinematics import BodyShape, PoseSequence, forward_kinematics, project
from rotokin.metrics import mpjae, mpjpe
from rotokin.testbed import SyntheticSpec, generate_synthetic

NO_PRIOR = IKConfig(prior_weight=0.0)


def _random_problem(tree, shape, rng):
    gt = so3.random_rotations(tree.joint_count, rng, max_angle=2.0 * np.pi / 3.0)
    targets, _ = forward_kinematics(tree, shape, gt)
    return gt, targets


class TestSolveFrame:
    def test_already_optimal_needs_no_iterations(self, tree22, shape22, rng):
        gt, targets = _random_problem(tree22, shape22, rng)
        result = solve_frame(tree22, shape22, targets, init=gt, cfg=NO_PRIOR)
        assert result.iterations_used <= 1
        assert result.converged
        assert result.final_residual_mm < 1e-6

    def test_round_trip_submillimeter(self, tree22, shape22, rng):
        for _ in range(10):
            _, targets = _random_problem(tree22, shape22, rng)
            result = solve_frame(tree22, shape22, targets, cfg=NO_PRIOR)
            positions, _ = forward_kinematics(tree22, shape22, result.pose)
            assert mpjpe(positions, targets) < 1.0
            assert result.converged

    def test_objective_monotone(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        result = solve_frame(tree22, shape22, targets, cfg=IKConfig(prior_weight=1e-3))
        trace = result.objective_trace
        assert all(b < a for a, b in zip(trace, trace[1:]))

    def test_strong_prior_pulls_to_rest(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        result = solve_frame(tree22, shape22, targets, cfg=IKConfig(prior_weight=1e9))
        angles = so3.relative_angle(result.pose, so3.identity_rotations(22))
        assert angles.max() < 1e-3

    def test_solutions_stay_valid_rotations(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        result = solve_frame(tree22, shape22, targets)
        assert np.all(so3.is_rotation_matrix(result.pose))

    def test_equivariance_under_global_rotation(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        q = so3.random_rotations(1, rng)[0]
        base = solve_frame(tree22, shape22, targets, cfg=NO_PRIOR)
        rotated = solve_frame(tree22, shape22, targets @ q.T, cfg=NO_PRIOR)
        pos_rot, _ = forward_kinematics(tree22, shape22, rotated.pose)
        assert mpjpe(pos_rot, targets @ q.T) < 1.0
        assert abs(rotated.final_residual_mm - base.final_residual_mm) < 0.2

    def test_degenerate_target_flagged(self, tree22, shape22):
        result = solve_frame(tree22, shape22, np.zeros((22, 3)), cfg=IKConfig(max_iterations=5))
        assert result.degenerate_target

    def test_converged_respects_tolerance_invariant(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        cfg = IKConfig(prior_weight=1e-3, max_iterations=40)
        result = solve_frame(tree22, shape22, targets, cfg=cfg)
        if result.converged:
            assert result.final_residual_mm <= cfg.position_tolerance * 1000.0

    def test_optimize_scales_recovers_sized_body(self, tree22, rng):
        true_shape = BodyShape(rng.uniform(0.8, 1.2, size=22))
        gt = so3.random_rotations(22, rng, max_angle=1.5)
        targets, _ = forward_kinematics(tree22, true_shape, gt)
        cfg = IKConfig(prior_weight=0.0, optimize_scales=True, max_iterations=400)
        result = solve_frame(tree22, BodyShape.neutral(22), targets, cfg=cfg)
        fitted, _ = forward_kinematics(tree22, BodyShape(result.bone_scales), result.pose)
        assert mpjpe(fitted, targets) < 1.0

    def test_bad_target_shape_rejected(self, tree22, shape22):
        with pytest.raises(ValueError, match="targets"):
            solve_frame(tree22, shape22, np.zeros((5, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IKConfig(position_tolerance=0.0)
        with pytest.raises(ValueError):
            IKConfig(max_iterations=0)


def _smooth_targets(n_frames, seed):
    spec = SyntheticSpec(num_sequences=1, frames_per_sequence=n_frames,
                         keyframe_count=max(2, n_frames // 15), seed=seed)
    seq = generate_synthetic(spec)[0]
    return seq.pose3d


class TestSolveSequence:
    def test_constant_pose_warm_start_is_instant(self, tree22, shape22, rng):
        _, targets = _random_problem(tree22, shape22, rng)
        frames = np.tile(targets, (5, 1, 1))
        results = solve_sequence(tree22, shape22, frames, cfg=NO_PRIOR)
        assert all(r.iterations_used <= 1 for r in results[1:])

    def test_warm_beats_cold_on_smooth_motion(self, tree22, shape22):
        frames = _smooth_targets(40, seed=4)
        warm = solve_sequence(tree22, shape22, frames, cfg=IKConfig(prior_weight=0.0, warm_start=True))
        cold = solve_sequence(tree22, shape22, frames, cfg=IKConfig(prior_weight=0.0, warm_start=False))
        warm_iters = np.mean([r.iterations_used for r in warm])
        cold_iters = np.mean([r.iterations_used for r in cold])
        assert warm_iters < cold_iters

    def test_shuffled_frames_remove_warm_advantage(self, tree22, shape22, rng):
        # temporally incoherent frames: the previous solution is no better
        # an initialization than the rest pose
        frames = []
        for _ in range(40):
            gt = so3.random_rotations(22, rng, max_angle=2.0 * np.pi / 3.0)
            positions, _ = forward_kinematics(tree22, shape22, gt)
            frames.append(positions)
        frames = np.stack(frames)
        warm = solve_sequence(tree22, shape22, frames, cfg=IKConfig(prior_weight=0.0, warm_start=True))
        cold = solve_sequence(tree22, shape22, frames, cfg=IKConfig(prior_weight=0.0, warm_start=False))
        warm_iters = np.mean([r.iterations_used for r in warm])
        cold_iters = np.mean([r.iterations_used for r in cold])
        assert warm_iters / cold_iters > 0.9

    def test_empty_sequence_rejected(self, tree22, shape22):
        with pytest.raises(ValueError, match="empty"):
            solve_sequence(tree22, shape22, np.empty((0, 22, 3)))


class TestPseudoLabels:
    def _dataset(self, tree, shape, n_seq, n_frames, seed):
        spec = SyntheticSpec(num_sequences=n_seq, frames_per_sequence=n_frames,
                             keyframe_count=3, seed=seed)
        return generate_synthetic(spec)

    def test_labels_reproduce_positions(self, tree22, shape22):
        dataset = self._dataset(tree22, shape22, 2, 6, seed=6)
        labeled = generate_pseudo_labels(tree22, shape22, dataset, cfg=NO_PRIOR)
        for src, lab in zip(dataset, labeled):
            assert lab.provenance == "ik-pseudo"
            assert lab.converged.all()
            positions, _ = zip(*(forward_kinematics(tree22, shape22, r) for r in lab.rotations))
            assert mpjpe(np.stack(positions), src.pose3d) < 1.0

    def test_rotation_error_nonzero_from_twist_ambiguity(self, tree22, shape22):
        dataset = self._dataset(tree22, shape22, 1, 6, seed=7)
        labeled = generate_pseudo_labels(tree22, shape22, dataset, cfg=NO_PRIOR)
        # positions match but the generating rotations are underdetermined
        assert mpjae(labeled[0].rotations, dataset[0].rotations) > 1.0

    def test_empty_dataset(self, tree22, shape22):
        assert generate_pseudo_labels(tree22, shape22, []) == []

    def test_requires_positions(self, tree22, shape22):
        seq = PoseSequence(timestamps=[0.0], pose2d=np.zeros((1, 22, 2)))
        with pytest.raises(ValueError, match="no 3D positions"):
            generate_pseudo_labels(tree22, shape22, [seq])

    def test_parallel_matches_serial(self, tree22, shape22):
        dataset = self._dataset(tree22, shape22, 3, 4, seed=8)
        serial = generate_pseudo_labels(tree22, shape22, dataset, cfg=NO_PRIOR, workers=1)
        threaded = generate_pseudo_labels(tree22, shape22, dataset, cfg=NO_PRIOR, workers=3)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.rotations, b.rotations)
