import dataclasses

import numpy as np
import pytest

from mbexwn.config import PipelineConfig
from mbexwn.training import (Adam, TrainingDiverged, block_means, make_batch, moving_average,
                             synthetic_dataset, train_f0_toy)

TINY = "C:3x8, C:3x10x2, C:3x10x5, C:3x10x5, C:1x2, L:2"


@pytest.fixture(scope="module")
def data():
    return synthetic_dataset(n_clips=3, n_samples=4800, seed=1)


def _cfg(dtype="float64"):
    cfg = PipelineConfig()
    cfg.train.f0_spec = TINY
    cfg.train.dtype = dtype
    cfg.train.checkpoint_every = 2
    cfg.optimizer.lr = 1e-3
    return cfg


def test_adam_matches_reference_update():
    opt = Adam(["w"], lr=0.1)
    p = {"w": np.array([1.0, -1.0])}
    g = {"w": np.array([0.5, 2.0])}
    p1 = opt.step(p, g)
    # first bias-corrected step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p1["w"], [0.9, -1.1], atol=1e-6)
    p2 = opt.step(p1, g)
    np.testing.assert_allclose(p2["w"], [0.8, -1.2], atol=1e-6)


def test_adam_state_round_trip(tmp_path):
    opt = Adam(["a"], lr=0.01)
    opt.step({"a": np.ones(3)}, {"a": np.arange(3.0)})
    opt.save(tmp_path / "s.npz")
    other = Adam(["a"], lr=0.01)
    other.load(tmp_path / "s.npz")
    assert other.t == 1
    np.testing.assert_array_equal(other.m["a"], opt.m["a"])


def test_batch_layout(data):
    b = make_batch(data, 100, 0.0, 1.0)
    assert b.mel.shape == (3, 21, 80)
    assert b.target.shape == b.core.shape == (3, 2100)
    assert b.samples_per_point == pytest.approx(2.4)
    assert np.all(b.target[b.core] > 0)


def test_training_reduces_loss_and_writes_artifacts(data, tmp_path):
    res = train_f0_toy(data, _cfg("float32"), steps=30, out_dir=tmp_path)
    assert res.losses[-1] < res.losses[0]
    assert np.isfinite(res.boundary_recon)
    assert (tmp_path / "loss_curve.csv").read_text().startswith("step,loss\n")
    assert (tmp_path / "metrics.json").exists()
    assert (tmp_path / "f0_step000030.json").exists()


def test_resume_reproduces_next_loss_bitwise(data, tmp_path):
    full = train_f0_toy(data, _cfg(), steps=3, out_dir=tmp_path / "a")
    resumed = train_f0_toy(data, _cfg(), steps=1, resume=tmp_path / "a" / "f0_step000002")
    assert resumed.losses[-1] == full.losses[2]
    assert resumed.steps == 3


def test_divergence_aborts_with_report(data, tmp_path):
    bad = synthetic_dataset(n_clips=2, n_samples=4800, seed=2)
    bad[0] = dataclasses.replace(bad[0], mel=np.full_like(bad[0].mel, np.nan))
    with pytest.raises(TrainingDiverged) as info:
        train_f0_toy(bad, _cfg(), steps=3, out_dir=tmp_path)
    assert info.value.step == 1
    assert (tmp_path / "diverged.json").exists()


def test_curve_helpers():
    x = np.arange(10.0)[::-1]
    np.testing.assert_allclose(moving_average(x, 5), [7, 6, 5, 4, 3, 2])
    np.testing.assert_allclose(block_means(x, 5), [7, 2])
