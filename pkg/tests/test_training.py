import csv
import math
import warnings

import numpy as np
import pytest
import torch

from egoforecast.denoiser import DenoiserConfig, load_checkpoint
from egoforecast.diffusion import make_schedule, q_sample
from egoforecast.synthgen import GenConfig, generate_sequence
from egoforecast.training import (
    EmptyMaskWarning, LossContractError, TrainConfig, TrainingAbort, collate, compute_losses, init_state,
    joint_loss, reprojection_loss, resume_state, smoothed, total_loss, train, train_step, visibility_loss,
)
from tiny import WRISTS, tiny_batch, tiny_model

D = torch.float64


def t(x):
    return torch.tensor(x, dtype=D)


class TestJointLoss:
    def test_exact(self):
        x = torch.randn(2, 5, 6, 3, dtype=D)
        assert float(joint_loss(x, x, torch.ones(2, 5, 6, dtype=torch.bool))) == 0.0

    def test_single_joint_arithmetic(self):
        x0 = torch.zeros(1, 2, 3, 3, dtype=D)
        pred = x0.clone()
        pred[0, 1, 2] = t([0.3, 0.0, 0.0])
        mask = torch.zeros(1, 2, 3, dtype=torch.bool)
        mask[0, 1, 2] = True
        assert float(joint_loss(pred, x0, mask)) == pytest.approx(0.1, abs=1e-15)

    def test_masked_poison_ignored(self):
        g = torch.Generator().manual_seed(0)
        x0 = torch.randn(2, 5, 6, 3, generator=g, dtype=D)
        pred = torch.randn(2, 5, 6, 3, generator=g, dtype=D)
        mask = torch.rand(2, 5, 6, generator=g) > 0.5
        poisoned = torch.where(mask[..., None], x0, torch.tensor(1e6, dtype=D))
        assert float(joint_loss(pred, poisoned, mask)) == float(joint_loss(pred, x0, mask))

    def test_empty_mask(self):
        x = torch.ones(1, 2, 3, 3, dtype=D, requires_grad=True)
        with pytest.warns(EmptyMaskWarning):
            out = joint_loss(x, torch.zeros_like(x), torch.zeros(1, 2, 3, dtype=torch.bool))
        assert float(out.detach()) == 0.0

    def test_shape_contract(self):
        with pytest.raises(LossContractError):
            joint_loss(torch.zeros(1, 2, 3, 3), torch.zeros(1, 2, 4, 3), torch.ones(1, 2, 3, dtype=torch.bool))


class TestVisibilityLoss:
    def test_chance(self):
        assert float(visibility_loss(torch.full((20, 2), 0.5, dtype=D), torch.rand(20, 2) > 0.5)) == \
            pytest.approx(math.log(2), abs=1e-15)

    def test_confident_and_right(self):
        v = torch.rand(20, 2, generator=torch.Generator().manual_seed(1)) > 0.5
        v_hat = torch.where(v, t(1 - 1e-7), t(1e-7))
        assert float(visibility_loss(v_hat, v)) < 1e-6

    def test_single_entry(self):
        assert float(visibility_loss(t([0.25]), torch.tensor([True]))) == pytest.approx(-math.log(0.25), abs=1e-12)

    @pytest.mark.parametrize("bad", [0.0, 1.0, 1.5])
    def test_range(self, bad):
        with pytest.raises(LossContractError):
            visibility_loss(t([0.5, bad]), torch.tensor([True, False]))


def one_camera_batch(pred_wrist, target_uv, visible):
    """One frame, camera at the origin looking along +z, 100 x 100 image, f = 100."""
    x0_hat = torch.zeros(1, 1, 6, 3, dtype=D)
    x0_hat[0, 0, WRISTS[0]] = t(pred_wrist)
    x0_hat[0, 0, WRISTS[1]] = t([0.0, 0.0, 1.0])
    hands = t([[[target_uv, [0.5, 0.5]]]])
    vis = torch.tensor([[[visible, False]]])
    return dict(x0_hat=x0_hat, hands2d=hands, R=torch.eye(3, dtype=D)[None, None], t=torch.zeros(1, 1, 3, dtype=D),
                intrinsics=t([[100.0, 100.0, 50.0, 50.0]]), image_size=t([[100.0, 100.0]]), vis=vis, wrist_idx=WRISTS)


class TestReprojection:
    def test_arithmetic(self):
        loss, skipped = reprojection_loss(**one_camera_batch([0.0, 0.0, 2.0], [0.6, 0.5], True))
        assert float(loss) == pytest.approx(0.1, abs=1e-15) and skipped == 0

    def test_exact_projection(self):
        loss, _ = reprojection_loss(**one_camera_batch([0.2, -0.4, 2.0], [0.6, 0.3], True))
        assert float(loss) == pytest.approx(0.0, abs=1e-15)

    def test_invisible_contributes_zero(self):
        loss, _ = reprojection_loss(**one_camera_batch([40.0, 9.0, 0.3], [-1.0, -1.0], False))
        assert float(loss) == 0.0

    def test_camera_plane_skipped(self):
        loss, skipped = reprojection_loss(**one_camera_batch([0.5, 0.5, 0.0], [0.6, 0.5], True))
        assert float(loss) == 0.0 and skipped == 1
        loss, skipped = reprojection_loss(**one_camera_batch([0.0, 0.0, 0.03], [0.6, 0.5], True), min_depth=0.05)
        assert float(loss) == 0.0 and skipped == 1

    def test_gating_invariance(self):
        b = tiny_batch(3)
        pred = torch.randn_like(b.x0)
        args = (b.cond.hands2d, b.R, b.t, b.intrinsics, b.image_size, b.vis, WRISTS)
        base, _ = reprojection_loss(pred, *args)
        moved = pred.clone()
        for s, w in enumerate(WRISTS):
            hidden = ~b.vis[..., s]                                   # (B, T)
            moved[:, :3, w] += torch.where(hidden[..., None], t(7.0), t(0.0))
        assert float(reprojection_loss(moved, *args)[0]) == float(base)


class TestTotal:
    def test_paper_weights(self):
        assert float(total_loss(t(1.0), t(1.0), t(1.0))) == pytest.approx(1.15, abs=1e-15)

    def test_zero_weights_and_parts(self):
        assert float(total_loss(t(0.7), t(3.0), t(9.0), 0.0, 0.0)) == 0.7
        assert float(total_loss(t(0.0), t(0.0), t(0.0))) == 0.0

    @pytest.mark.parametrize("which", [0, 1, 2])
    def test_non_finite_abort(self, which):
        parts = [t(1.0), t(1.0), t(1.0)]
        parts[which] = t(float("nan"))
        with pytest.raises(TrainingAbort, match=("L_joint", "L_vis", "L_reproj")[which]):
            total_loss(*parts)

    def test_derivative_in_lambda_vis(self):
        lam = torch.tensor(0.1, dtype=D, requires_grad=True)
        lv = t(0.83)
        total_loss(t(0.4), lv, t(2.0), lam, 0.05).backward()
        assert float(lam.grad) == pytest.approx(float(lv), abs=1e-15)


def fixed_noise(batch, seed=5):
    g = torch.Generator().manual_seed(seed)
    return torch.tensor([3, 7]), torch.randn(batch.x0.shape, generator=g, dtype=D)


class TestGradients:
    sched = make_schedule("linear", 10)

    def grads(self, model, batch, cfg):
        n, eps = fixed_noise(batch)
        model.zero_grad()
        total, parts = compute_losses(model, batch, self.sched, cfg, n, eps, WRISTS)
        total.backward()
        return float(total.detach()), [p.grad.clone() for p in model.parameters()], parts

    def test_mask_invariance(self):
        # the network input x_n is held fixed; only the supervision targets change
        model, batch = tiny_model(), tiny_batch()
        n, eps = fixed_noise(batch)
        x_n = q_sample(batch.x0, n, eps, self.sched)
        cfg = TrainConfig(N=10)

        def loss_and_grads(x0):
            model.zero_grad()
            x0_hat, v_hat = model(x_n, batch.cond, n)
            rep, _ = reprojection_loss(x0_hat, batch.cond.hands2d, batch.R, batch.t, batch.intrinsics,
                                       batch.image_size, batch.vis, WRISTS, cfg.reproj_min_depth)
            total = total_loss(joint_loss(x0_hat, x0, batch.mask), visibility_loss(v_hat, batch.vis), rep)
            total.backward()
            return float(total.detach()), [p.grad.clone() for p in model.parameters()]

        base, g0 = loss_and_grads(batch.x0)
        poisoned = torch.where(batch.mask[..., None], batch.x0, torch.randn_like(batch.x0) * 1e3)
        other, g1 = loss_and_grads(poisoned)
        assert base == other
        assert all(torch.equal(a, b) for a, b in zip(g0, g1))

    def test_zero_lambdas_leave_joint_gradient(self):
        model, batch = tiny_model(), tiny_batch()
        n, eps = fixed_noise(batch)
        cfg0 = TrainConfig(N=10, lambda_vis=0.0, lambda_reproj=0.0)
        _, g_total, _ = self.grads(model, batch, cfg0)
        model.zero_grad()
        x0_hat, _ = model(q_sample(batch.x0, n, eps, self.sched), batch.cond, n)
        joint_loss(x0_hat, batch.x0, batch.mask).backward()
        for a, p in zip(g_total, model.parameters()):
            ref = torch.zeros_like(a) if p.grad is None else p.grad   # visibility head: no joint-loss path
            assert torch.allclose(a, ref, rtol=0, atol=1e-15)

    def test_finite_differences_sampled(self):
        # a quick spot check; the acceptance suite covers every parameter
        model, batch = tiny_model(1), tiny_batch(1)
        cfg = TrainConfig(N=10)
        _, grads, parts = self.grads(model, batch, cfg)
        assert all(float(p.detach()) > 0 for p in parts[:3])                 # all three terms active
        n, eps = fixed_noise(batch)
        rng = np.random.default_rng(0)
        params = list(model.parameters())
        h = 1e-5
        with torch.no_grad():
            for _ in range(60):
                k = int(rng.integers(len(params)))
                flat = params[k].view(-1)
                i = int(rng.integers(flat.numel()))
                keep = flat[i].item()
                vals = []
                for step in (h, -h):
                    flat[i] = keep + step
                    vals.append(float(compute_losses(model, batch, self.sched, cfg, n, eps, WRISTS)[0]))
                flat[i] = keep
                num, ana = (vals[0] - vals[1]) / (2 * h), grads[k].view(-1)[i].item()
                assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-4


def toy_data(n=8, seed=3):
    cfg = GenConfig(seed=seed, d_img=4)
    return [generate_sequence(cfg, i) for i in range(n)]


SMALL = dict(d_z=32, n_layers=1, n_heads=2, d_img=4, N=10)


class TestLoop:
    def test_step_deterministic(self):
        data = collate(toy_data(4))
        out = []
        for _ in range(2):
            cfg = TrainConfig(N=10, seed=4)
            state = init_state(DenoiserConfig(**SMALL), cfg)
            parts = [train_step(state.model, state.optimizer, data, make_schedule("linear", 10), cfg, state.generator)
                     for _ in range(2)]
            out.append([(p.joint, p.vis, p.reproj) for p in parts])
        assert out[0] == out[1]

    def test_zero_iterations_is_init(self, tmp_path):
        cfg = TrainConfig(iterations=0, N=10, seed=2)
        train(toy_data(2), cfg, DenoiserConfig(**SMALL), out_dir=tmp_path)
        fresh = init_state(DenoiserConfig(**SMALL), cfg).model
        loaded, payload = load_checkpoint(tmp_path / "model.pt")
        assert payload["iteration"] == 0
        for a, b in zip(fresh.state_dict().values(), loaded.state_dict().values()):
            assert torch.equal(a, b)

    def test_resume_matches_straight_run(self, tmp_path):
        data = toy_data(4)
        mc = DenoiserConfig(**SMALL)
        straight = train(data, TrainConfig(iterations=6, N=10, batch_size=3), mc, out_dir=tmp_path / "a")
        train(data, TrainConfig(iterations=3, N=10, batch_size=3), mc, out_dir=tmp_path / "b")
        cfg6 = TrainConfig(iterations=6, N=10, batch_size=3)
        resumed = train(data, cfg6, out_dir=tmp_path / "b", state=resume_state(tmp_path / "b" / "model.pt", cfg6))
        for a, b in zip(straight.model.state_dict().values(), resumed.model.state_dict().values()):
            assert torch.equal(a, b)
        assert (tmp_path / "a" / "loss.csv").read_text() == (tmp_path / "b" / "loss.csv").read_text()

    def test_loss_log_and_decrease(self, tmp_path):
        cfg = TrainConfig(iterations=200, N=10, batch_size=8, learning_rate=1e-3, seed=1)
        train(toy_data(8), cfg, DenoiserConfig(**SMALL), out_dir=tmp_path)
        with open(tmp_path / "loss.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "L_joint", "L_vis", "L_reproj", "L_total"]
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 201))
        total = smoothed([float(r[4]) for r in rows[1:]], 50)
        assert total[-1] < 0.5 * total[0]

    def test_empty_mask_batches_counted(self):
        data = toy_data(2)
        for s in data:
            s.obs_mask[:] = False
            s.fut_mask[:] = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            state = train(data, TrainConfig(iterations=2, N=10, batch_size=2), DenoiserConfig(**SMALL))
        assert state.empty_batches == 2
        assert state.history[0].joint == 0.0

    def test_schedule_mismatch(self):
        with pytest.raises(ValueError):
            init_state(DenoiserConfig(**SMALL), TrainConfig(N=20))

    @pytest.mark.parametrize("kw", [dict(iterations=-1), dict(learning_rate=0), dict(lambda_vis=-1),
                                    dict(schedule="cosine")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
