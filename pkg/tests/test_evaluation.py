import dataclasses
import math

import numpy as np
import pytest
import torch

import oracles as O
from egoforecast.baselines import anchor_mean_pose, baseline_cvm, baseline_static, cvm_prediction
from egoforecast.data import HEAD_JOINTS, LEFT_WRIST, RIGHT_WRIST, compute_stats, partition_by_view
from egoforecast.denoiser import Denoiser, DenoiserConfig
from egoforecast.evaluation import (
    PARTITIONS, CVMForecaster, DiffusionForecaster, GroundTruthForecaster, StaticForecaster, evaluate,
    format_table, load_reports, save_reports,
)
from egoforecast.geometry import CameraPose, heading_yaw, rot_z
from egoforecast.metrics import MetricContractError
from egoforecast.synthgen import GenConfig, generate_sequence


@pytest.fixture(scope="module")
def turn_set():
    cfg = GenConfig(seed=8, d_img=4, motion_mix={"turn-and-reach": 0.5, "reach": 0.5})
    return [generate_sequence(cfg, i) for i in range(10)]


class TestCVM:
    def test_example(self):
        out = baseline_cvm([(0, 0, 0), (0.1, 0, 0)], 3)
        np.testing.assert_allclose(out, [(0.2, 0, 0), (0.3, 0, 0), (0.4, 0, 0)], atol=1e-15)

    def test_zero_velocity_is_static(self):
        p = np.array([[0.3, 0.2, 1.0]] * 4)
        np.testing.assert_array_equal(baseline_cvm(p, 5), np.repeat(p[-1:], 5, axis=0))

    def test_linear_in_step(self):
        a = baseline_cvm([(0, 0, 0), (0.1, 0.2, 0)], 4)
        b = baseline_cvm([(0, 0, 0), (0.2, 0.4, 0)], 4)
        np.testing.assert_allclose(b, 2 * a, atol=1e-15)

    def test_too_short(self):
        with pytest.raises(MetricContractError):
            baseline_cvm([(0, 0, 0)], 3)

    def test_sequence_prediction_moves_hands_rigidly(self, turn_set):
        s = turn_set[0]
        out = cvm_prediction(s)
        np.testing.assert_array_equal(out[:s.T], s.obs_joints)
        for wi, hs in ((LEFT_WRIST, slice(15, 36)), (RIGHT_WRIST, slice(36, 57))):
            np.testing.assert_allclose(out[s.T:, wi], baseline_cvm(s.obs_joints[:, wi], s.F), atol=1e-12)
            rel = out[s.T:, hs] - out[s.T:, wi:wi + 1]
            np.testing.assert_allclose(rel, np.broadcast_to(s.obs_joints[-1, hs] - s.obs_joints[-1, wi], rel.shape),
                                       atol=1e-12)


class TestStatic:
    def test_same_final_camera_same_prediction(self, turn_set):
        stats = compute_stats(turn_set)
        a, b = turn_set[0], turn_set[1]
        b = dataclasses.replace(b, obs_poses=b.obs_poses[:-1] + [a.obs_poses[-1]])
        np.testing.assert_array_equal(baseline_static(a, stats), baseline_static(b, stats))

    def test_time_constant(self, turn_set):
        out = baseline_static(turn_set[2], compute_stats(turn_set))
        assert (out == out[-1]).all()

    def test_constant_training_pose_reanchored(self, turn_set):
        s = turn_set[3]
        pose = s.obs_joints[0]
        const = dataclasses.replace(s, obs_joints=np.repeat(pose[None], s.T, 0), fut_joints=np.repeat(pose[None], s.F, 0),
                                    obs_mask=np.ones_like(s.obs_mask), fut_mask=np.ones_like(s.fut_mask))
        stats = compute_stats([const])
        np.testing.assert_allclose(stats.mean_pose, pose, atol=1e-12)
        head = pose[list(HEAD_JOINTS)].mean(axis=0)
        # the canonical first camera looks along +x, so its heading is zero before the turn
        assert abs(heading_yaw(s.obs_poses[0].R)) < 1e-12
        cam = CameraPose.from_matrix(rot_z(0.7) @ s.obs_poses[0].R, [1.0, -2.0, 1.6],
                                     s.obs_poses[0].intrinsics, s.obs_poses[0].image_size)
        expected = (pose - head) @ rot_z(0.7).T + cam.translation
        np.testing.assert_allclose(anchor_mean_pose(stats, cam), expected, atol=1e-9)


class TestEvaluate:
    def test_ground_truth_scores_zero(self, turn_set):
        rep = evaluate(GroundTruthForecaster(), turn_set)
        for (p, side, m), cell in rep.cells.items():
            assert cell.count == 0 or cell.value == 0.0, (p, side, m)
        assert all(c.value == 0.0 for c in rep.body.values() if c.count)
        assert rep.visibility_accuracy == 1.0

    def test_counts_match_partition(self, turn_set):
        rep = evaluate(CVMForecaster(), turn_set)
        parts = partition_by_view(turn_set)
        assert rep.pair_counts["in_view"] == len(parts["in_view"]) > 0
        assert rep.pair_counts["out_of_view"] == len(parts["out_of_view"]) > 0
        assert rep.cells[("all", "pooled", "ADE")].count == 2 * len(turn_set)
        assert "CVM consumes ground-truth past 3D joints" in rep.notes

    @pytest.mark.parametrize("metric", ["ADE", "FDE", "MPJPE", "MPJPE-F", "MPJVE", "WR-MPJPE-obs"])
    def test_pooled_is_count_weighted(self, turn_set, metric):
        rep = evaluate(StaticForecaster(compute_stats(turn_set)), turn_set)
        cells = [rep.cells[(p, "pooled", metric)] for p in ("in_view", "out_of_view")]
        total = sum(c.count for c in cells)
        weighted = sum(c.value * c.count for c in cells if c.count) / total
        assert abs(rep.value("all", "pooled", metric) - weighted) < 1e-9

    def test_cell_by_hand(self, turn_set):
        # recompute the out-of-view left ADE for CVM with the scalar oracle
        rep = evaluate(CVMForecaster(), turn_set)
        vals = []
        for i, side in partition_by_view(turn_set)["out_of_view"]:
            if side == "left":
                s = turn_set[i]
                vals.append(O.ade(cvm_prediction(s)[s.T:, LEFT_WRIST], s.fut_joints[:, LEFT_WRIST]))
        assert rep.cells[("out_of_view", "left", "ADE")].count == len(vals)
        assert abs(rep.value("out_of_view", "left", "ADE") - sum(vals) / len(vals)) < 1e-12
        assert all(math.isfinite(rep.value(p, "pooled", "ADE")) for p in PARTITIONS)

    def test_gamma_table_counts(self, turn_set):
        rep = evaluate(CVMForecaster(), turn_set)
        binned = sum(rep.gamma[(g, "ADE")].count for g in {k[0] for k in rep.gamma})
        assert binned == rep.pair_counts["out_of_view"]

    def test_report_round_trip(self, turn_set, tmp_path):
        reps = [evaluate(CVMForecaster(), turn_set), evaluate(StaticForecaster(compute_stats(turn_set)), turn_set)]
        save_reports(reps, tmp_path / "r.jsonl")
        back = load_reports(tmp_path / "r.jsonl")
        assert [r.method for r in back] == ["CVM", "Static"]
        assert format_table(back) == format_table(reps)
        for a, b in zip(reps, back):
            for key, cell in a.cells.items():
                other = b.cells[key]
                assert cell.count == other.count
                assert (math.isnan(cell.value) and math.isnan(other.value)) or cell.value == other.value

    def test_diffusion_forecaster_deterministic(self, turn_set):
        torch.manual_seed(0)
        model = Denoiser(DenoiserConfig(d_z=16, n_layers=1, n_heads=1, d_img=4, N=5))
        a, va = DiffusionForecaster(model, seed=3, batch_size=4)(turn_set[:5])
        b, vb = DiffusionForecaster(model, seed=3, batch_size=4)(turn_set[:5])
        assert a.shape == (5, 30, 57, 3) and va.shape == (5, 20, 2)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(va, vb)
        rep = evaluate(DiffusionForecaster(model, seed=3), turn_set)
        assert 0.0 <= rep.visibility_accuracy <= 1.0
