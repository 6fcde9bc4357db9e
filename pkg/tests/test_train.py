import numpy as np
import pytest

from windfno import fno
from windfno.dataset import build_dataset
from windfno.errors import ContractError, EmptyDatasetError, TrainingDiverged
from windfno.fields import FieldSeries, GridSpec
from windfno.train import Adam, TrainConfig, fit, train


def toy_problem():
    # loss = (a - 3)^2 + 2 (b + 1)^2
    def lg(p, idx):
        a, b = p["w"]
        return (a - 3) ** 2 + 2 * (b + 1) ** 2, {"w": np.array([2 * (a - 3), 4 * (b + 1)])}
    return {"w": np.array([0.5, 0.5])}, lg


def test_one_step_matches_hand_adam():
    p0, lg = toy_problem()
    cfg = TrainConfig(epochs=1, batch_size=4, lr=0.1)
    out, hist = fit(p0, lg, 1, cfg)
    g = np.array([2 * (0.5 - 3), 4 * (0.5 + 1)])
    m = 0.1 * g
    v = 0.001 * g * g
    step = 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    assert np.allclose(out["w"], p0["w"] - step, rtol=0, atol=1e-15)
    assert len(hist) == 1


def test_adam_converges_on_toy():
    p0, lg = toy_problem()
    out, _ = fit(p0, lg, 1, TrainConfig(epochs=400, batch_size=1, lr=0.05))
    assert np.allclose(out["w"], [3, -1], atol=1e-2)


def test_weight_decay_shrinks():
    opt = Adam({"w": np.ones(2)}, lr=0.1, weight_decay=0.5)
    out = opt.step({"w": np.ones(2)}, {"w": np.zeros(2)})
    assert np.allclose(out["w"], 0.95)


def test_divergence_is_reported():
    def lg(p, idx):
        return float("nan"), {"w": np.zeros(1)}
    with pytest.raises(TrainingDiverged) as err:
        fit({"w": np.zeros(1)}, lg, 3, TrainConfig(epochs=2, batch_size=2))
    assert err.value.epoch == 0 and err.value.batch == 0


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(loss="l1")
    with pytest.raises(EmptyDatasetError):
        fit({"w": np.zeros(1)}, None, 0, TrainConfig())


def _small_dataset():
    r = np.random.default_rng(0)
    t = np.arange(30)[:, None, None]
    ys, xs = np.mgrid[0:8, 0:8]
    v = 4 + np.sin(0.3 * t + 0.5 * xs[None]) + 0.5 * np.cos(0.2 * t + 0.4 * ys[None]) + 0.01 * r.random((30, 8, 8))
    return build_dataset(FieldSeries(GridSpec(8, 8), 0.1, v), None, "T")


def test_training_is_deterministic_and_keeps_best():
    ds = _small_dataset()
    mcfg = fno.FnoConfig(in_channels=7, width=4, modes=2, hidden=8, layers=2)
    cfg = TrainConfig(epochs=4, batch_size=3, seed=3)
    p1, h1 = train(ds, mcfg, cfg)
    p2, h2 = train(ds, mcfg, cfg)
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert [h["val_loss"] for h in h1] == [h["val_loss"] for h in h2]
    best = fno.loss_value(p1, ds.inputs[ds.val_indices], ds.targets[ds.val_indices], mcfg)
    assert best == pytest.approx(min(h["val_loss"] for h in h1))
    assert best <= h1[0]["val_loss"]
    assert h1[-1]["train_loss"] < h1[0]["train_loss"]
