import matplotlib.image as mpimg
import numpy as np
import pytest
import torch

from egoforecast.cli import forecast_record
from egoforecast.denoiser import Denoiser, DenoiserConfig
from egoforecast.evaluation import CVMForecaster, evaluate
from egoforecast.plotting import plot_overlay, plot_per_timestep, plot_topdown
from egoforecast.synthgen import GenConfig, generate_sequence


@pytest.fixture(scope="module")
def forecast():
    seq = generate_sequence(GenConfig(seed=6, d_img=4, motion_mix={"turn-and-reach": 1.0}), 0)
    torch.manual_seed(0)
    model = Denoiser(DenoiserConfig(d_z=16, n_layers=1, n_heads=1, d_img=4, N=5))
    return forecast_record(model, seq, seed=1), seq


@pytest.mark.parametrize("fn", [plot_topdown, plot_overlay])
def test_forecast_figures_reproducible(forecast, tmp_path, fn):
    rec, _ = forecast
    fn(rec, tmp_path / "a.png")
    fn(rec, tmp_path / "b.png")
    a, b = mpimg.imread(tmp_path / "a.png"), mpimg.imread(tmp_path / "b.png")
    assert a.shape == b.shape and a.ndim == 3
    np.testing.assert_array_equal(a, b)
    assert a.std() > 0          # something was drawn


def test_overlay_tolerates_points_behind_camera(forecast, tmp_path):
    rec, seq = forecast
    moved = dict(rec)
    joints = np.asarray(rec["joints"])
    cam = np.asarray(rec["camera"][seq.T - 1]["t"])
    joints[seq.T:] = cam - 5 * seq.obs_poses[-1].R[:, 2]     # all forecast joints far behind the lens
    moved["joints"] = joints.tolist()
    plot_overlay(moved, tmp_path / "o.png")
    assert (tmp_path / "o.png").stat().st_size > 0


def test_per_timestep(tmp_path, forecast):
    _, seq = forecast
    rep = evaluate(CVMForecaster(), [seq])
    plot_per_timestep([rep], tmp_path / "p.png", fps=10)
    assert mpimg.imread(tmp_path / "p.png").std() > 0
