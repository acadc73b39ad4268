import numpy as np
import pytest

from rotokin import so3, testbed
from rotokin.kinematics import BodyShape, flip_positions, flip_positions_2d, flip_rotations, load_tree, project
from rotokin.metrics import mpjpe


class TestSyntheticData:
    def test_deterministic_given_seed(self):
        spec = testbed.SyntheticSpec(num_sequences=3, frames_per_sequence=10, seed=42)
        a = testbed.generate_synthetic(spec)
        b = testbed.generate_synthetic(spec)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.pose2d, sb.pose2d)
            np.testing.assert_array_equal(sa.pose3d, sb.pose3d)
            np.testing.assert_array_equal(sa.rotations, sb.rotations)

    def test_zero_noise_matches_projection(self):
        spec = testbed.SyntheticSpec(num_sequences=1, frames_per_sequence=8,
                                     camera_scale=1.3, camera_offset=(0.1, -0.2),
                                     noise_std_2d=0.0, seed=1)
        seq = testbed.generate_synthetic(spec)[0]
        np.testing.assert_allclose(seq.pose2d, project(seq.pose3d, 1.3, (0.1, -0.2)), atol=1e-15)

    def test_noise_perturbs_2d_only(self):
        base = testbed.SyntheticSpec(num_sequences=1, frames_per_sequence=8, seed=1)
        noisy = testbed.SyntheticSpec(num_sequences=1, frames_per_sequence=8, seed=1,
                                      noise_std_2d=0.05)
        a = testbed.generate_synthetic(base)[0]
        b = testbed.generate_synthetic(noisy)[0]
        np.testing.assert_array_equal(a.pose3d, b.pose3d)
        assert np.abs(a.pose2d - b.pose2d).max() > 1e-3

    def test_joint_angles_bounded(self):
        spec = testbed.SyntheticSpec(num_sequences=2, frames_per_sequence=12,
                                     max_joint_angle=1.0, seed=3)
        for seq in testbed.generate_synthetic(spec):
            angles = so3.geodesic_distance(seq.rotations, np.eye(3))
            assert angles.max() <= 1.0 + 1e-9

    def test_frames_lie_on_keyframe_geodesics(self):
        spec = testbed.SyntheticSpec(num_sequences=1, frames_per_sequence=21,
                                     keyframe_count=2, seed=5)
        seq = testbed.generate_synthetic(spec)[0]
        first, mid, last = seq.rotations[0], seq.rotations[10], seq.rotations[20]
        total = so3.geodesic_distance(first, last)
        split = so3.geodesic_distance(first, mid) + so3.geodesic_distance(mid, last)
        assert np.abs(split - total).max() < 1e-9


@pytest.fixture(scope="module")
def memo_dataset():
    spec = testbed.SyntheticSpec(num_sequences=1, frames_per_sequence=1,
                                 keyframe_count=2, seed=11)
    return testbed.generate_synthetic(spec)


@pytest.fixture(scope="module")
def small_dataset():
    spec = testbed.SyntheticSpec(num_sequences=4, frames_per_sequence=10,
                                 keyframe_count=3, noise_std_2d=0.01, seed=12)
    return testbed.generate_synthetic(spec)


def _memo_config(rep, loss, **kw):
    defaults = dict(representation=rep, loss=loss, head="naive", hidden_width=16,
                    epochs=5000, batch_size=4, learning_rate=0.2, seed=2, preflight=False)
    defaults.update(kw)
    return testbed.RegressorConfig(**defaults)


class TestRegressor:
    def test_preflight_runs_for_every_combo(self, small_dataset):
        for head in testbed.HEADS:
            for rep in so3.REPRESENTATIONS:
                for loss in so3.LOSSES:
                    cfg = testbed.RegressorConfig(representation=rep, loss=loss, head=head,
                                                  hidden_width=6, epochs=1, batch_size=8, seed=3)
                    report = testbed.train_regressor(small_dataset, cfg)
                    assert not report.diverged

    def test_lambda_zero_decouples_rotation_head(self, small_dataset, tree22, shape22):
        cfg = testbed.RegressorConfig(loss_weight_lambda=0.0, hidden_width=6,
                                      head="naive", preflight=False)
        rng = np.random.default_rng(0)
        params = testbed.init_params(cfg, 22, rng)
        x, gt_pos, gt_rot = testbed._stack_dataset(small_dataset)
        gt_rep = testbed._gt_in_representation(cfg.representation, gt_rot)
        _, grads = testbed.forward_backward(tree22, shape22, params, cfg,
                                            x[:8], gt_pos[:8], gt_rep[:8])
        np.testing.assert_array_equal(grads["wr"], 0.0)
        np.testing.assert_array_equal(grads["br"], 0.0)
        assert np.abs(grads["wp"]).max() > 0.0

    def test_fk_head_perfect_rotations_zero_joint_loss(self, tree22, shape22, memo_dataset):
        # constants wired through the bias reproduce the targets exactly:
        # ground truth positions are the FK of the decoded constants
        seq = memo_dataset[0]
        cfg = testbed.RegressorConfig(head="fk", representation=so3.REP_AA,
                                      loss_weight_lambda=0.0, hidden_width=4, preflight=False)
        params = testbed.init_params(cfg, 22, np.random.default_rng(0))
        params["w1"][:] = 0.0
        params["b1"][:] = 0.0
        params["wr"][:] = 0.0
        aa = so3.matrix_to_aa(seq.rotations[0])
        params["br"][:] = aa.ravel()
        decoded = so3.aa_to_matrix(aa)[None]
        from rotokin.kinematics import forward_kinematics_batch
        gt_pos, _ = forward_kinematics_batch(tree22, shape22, decoded)
        x = seq.pose2d.reshape(1, -1)
        value, _ = testbed.forward_backward(
            tree22, shape22, params, cfg, x, gt_pos,
            testbed._gt_in_representation(cfg.representation, decoded),
        )
        assert value == 0.0

    @pytest.mark.parametrize("rep", so3.REPRESENTATIONS)
    @pytest.mark.parametrize("loss", so3.LOSSES)
    def test_memorization_below_one_degree(self, memo_dataset, rep, loss):
        report = testbed.train_regressor(memo_dataset, _memo_config(rep, loss))
        assert not report.diverged
        assert report.val_metrics.mpjae_deg < 1.0
        # loss-decrease sanity on the noiseless memorization task
        assert report.loss_curve[-1] < 0.2 * report.loss_curve[0]

    def test_divergence_reported_not_raised(self, small_dataset):
        cfg = testbed.RegressorConfig(learning_rate=1e4, hidden_width=6, epochs=10,
                                      preflight=False, seed=5)
        report = testbed.train_regressor(small_dataset, cfg)
        assert report.diverged
        assert report.val_metrics is None

    def test_wba_needs_even_batch(self, small_dataset):
        cfg = testbed.RegressorConfig(wba=True, batch_size=7, preflight=False)
        with pytest.raises(ValueError, match="even"):
            testbed.train_regressor(small_dataset, cfg)

    def test_training_needs_labels(self, small_dataset):
        stripped = [
            type(s)(timestamps=s.timestamps, pose2d=s.pose2d, pose3d=s.pose3d, rotations=None)
            for s in small_dataset
        ]
        with pytest.raises(ValueError, match="rotations"):
            testbed.train_regressor(stripped, testbed.RegressorConfig())


class TestWbaEquivariance:
    def test_mpjpe_invariant_under_joint_flip(self, tree22, rng):
        pred = rng.standard_normal((6, 22, 3))
        gt = rng.standard_normal((6, 22, 3))
        flipped = mpjpe(flip_positions(tree22, pred), flip_positions(tree22, gt))
        assert abs(flipped - mpjpe(pred, gt)) < 1e-9

    def test_flip_equivariant_model_scores_identically(self, tree22, shape22, small_dataset):
        # constant rest-pose predictor is flip-equivariant on a symmetric tree
        cfg = testbed.RegressorConfig(head="fk", representation=so3.REP_AA, preflight=False)
        params = testbed.init_params(cfg, 22, np.random.default_rng(0))
        params["w1"][:] = 0.0
        params["wr"][:] = 0.0

        def predict_positions(x2d):
            h = np.tanh(x2d.reshape(len(x2d), -1) @ params["w1"] + params["b1"])
            raw = (h @ params["wr"] + params["br"]).reshape(-1, 22, 3)
            from rotokin.kinematics import forward_kinematics_batch
            pos, _ = forward_kinematics_batch(tree22, shape22, so3.aa_to_matrix(raw))
            return pos

        seq = small_dataset[0]
        base = mpjpe(predict_positions(seq.pose2d), seq.pose3d)
        flipped = mpjpe(
            predict_positions(flip_positions_2d(tree22, seq.pose2d)),
            flip_positions(tree22, seq.pose3d),
        )
        assert abs(base - flipped) < 1e-9


class TestGrid:
    def test_default_grid_has_twelve_cells(self):
        cells = testbed.default_grid()
        assert len(cells) == 12
        assert len({c.code for c in cells}) == 12

    def test_grid_of_one_reduces_to_train(self, memo_dataset):
        cfg = _memo_config(so3.REP_AA, so3.LOSS_MSE, epochs=50)
        reports, table = testbed.run_grid(memo_dataset, [cfg])
        single = testbed.train_regressor(memo_dataset, cfg)
        assert len(reports) == 1
        assert reports[0].to_dict() == single.to_dict()
        assert cfg.code in table

    def test_grid_rows_match_cells_and_rerun_identical(self, small_dataset):
        cells = testbed.default_grid(epochs=2, hidden_width=6, seed=9)
        reports, table = testbed.run_grid(small_dataset, cells)
        assert len(reports) == 12
        assert len(table.splitlines()) == 14  # header + rule + 12 rows
        reports2, table2 = testbed.run_grid(small_dataset, cells)
        assert table == table2
        assert testbed.grid_report_json(reports) == testbed.grid_report_json(reports2)

    def test_empty_grid_rejected(self, small_dataset):
        with pytest.raises(ValueError, match="no grid cells"):
            testbed.run_grid(small_dataset, [])
