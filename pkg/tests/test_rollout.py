import numpy as np
import pytest

from windfno import fno
from windfno.errors import ContractError
from windfno.fields import FieldSeries, GridSpec
from windfno.rollout import RolloutPlan, n_calls, persistence, predict_series, rollout


class CountingModel:
    """Emits the mean of the 5 input frames 10 times; counts calls."""

    def __init__(self):
        self.calls = 0
        self.batch_sizes = []

    def __call__(self, x):
        self.calls += 1
        self.batch_sizes.append(len(x))
        m = x[:, :5].mean(axis=1, keepdims=True)
        return np.repeat(m + 0.01 * self.calls, 10, axis=1)


def test_call_budget():
    for horizon, calls in ((10, 1), (25, 3), (150, 15), (1, 1)):
        model = CountingModel()
        out = rollout(None, None, np.ones((5, 8, 8)), RolloutPlan(horizon, "T", 2.0), model)
        assert len(out) == horizon and model.calls == calls == n_calls(horizon)


def test_feedback_uses_last_five_emitted_frames():
    model = CountingModel()
    init = np.arange(5.0)[:, None, None] * np.ones((5, 4, 4))
    out = rollout(None, None, init, RolloutPlan(20, "T", 1.0), model).values
    assert np.allclose(out[:10], 2.0 + 0.01)
    assert np.allclose(out[10:], 2.0 + 0.01 + 0.02)


def test_patched_rollout_stitches_independent_patches():
    model = CountingModel()
    init = np.random.default_rng(0).random((5, 8, 8))
    out = rollout(None, None, init, RolloutPlan(10, "P", 1.0, patch=4), model)
    assert model.batch_sizes == [4]
    assert np.allclose(out.values[0], init.mean(axis=0) + 0.01)


def test_constant_field_patched_equals_whole():
    cfg = fno.FnoConfig(in_channels=7, width=4, modes=2, hidden=8, layers=2)
    p = fno.zero_params(cfg)
    p["proj2.b"] = np.full(10, 0.3)
    init = np.full((5, 8, 8), 0.5)
    whole = rollout(p, cfg, init, RolloutPlan(20, "T", 7.8))
    patched = rollout(p, cfg, init, RolloutPlan(20, "P", 7.8, patch=4))
    assert np.array_equal(whole.values, patched.values)
    assert np.allclose(whole.values, 0.3 * 7.8)


def test_rollout_deterministic(rng):
    cfg = fno.FnoConfig(in_channels=8, width=4, modes=2, hidden=8, layers=2)
    p = fno.init_params(cfg, 0)
    init = rng.random((5, 8, 8))
    sdf = rng.random((8, 8))
    plan = RolloutPlan(15, "P-SDF", 7.8, sdf=sdf, patch=4)
    assert np.array_equal(rollout(p, cfg, init, plan).values, rollout(p, cfg, init, plan).values)


def test_plan_and_channel_validation():
    with pytest.raises(ContractError):
        RolloutPlan(0, "T", 1.0)
    with pytest.raises(ContractError):
        RolloutPlan(5, "T-SDF", 1.0)
    with pytest.raises(ContractError):
        RolloutPlan(5, "P", 1.0)
    cfg = fno.FnoConfig(in_channels=8, width=4, modes=2)
    with pytest.raises(ContractError):
        rollout(fno.init_params(cfg), cfg, np.ones((5, 8, 8)), RolloutPlan(5, "T", 1.0))


def test_predict_series_alignment():
    truth = FieldSeries(GridSpec(8, 8), 0.1, np.random.default_rng(0).random((15, 8, 8)))
    cfg = fno.FnoConfig(in_channels=7, width=4, modes=2, hidden=8, layers=2)
    p = fno.zero_params(cfg)
    f, t = predict_series(p, cfg, truth, RolloutPlan(10, "T", 1.0), 0)
    assert np.array_equal(t.values, truth.values[5:15]) and len(f) == 10
    with pytest.raises(ContractError):
        predict_series(p, cfg, truth, RolloutPlan(11, "T", 1.0), 0)


def test_zero_model_on_zero_data():
    truth = FieldSeries(GridSpec(8, 8), 0.1, np.zeros((15, 8, 8)))
    cfg = fno.FnoConfig(in_channels=7, width=4, modes=2, hidden=8, layers=2)
    f, _ = predict_series(fno.zero_params(cfg), cfg, truth, RolloutPlan(10, "T", 1.0))
    assert np.all(f.values == 0)


def test_persistence_repeats_last_input():
    v = np.random.default_rng(1).random((20, 4, 4))
    p = persistence(v, 2, 7)
    assert p.shape == (7, 4, 4) and np.all(p == v[6])


@pytest.mark.parametrize("regime,patch", [("P-SDF", 4), ("P", 4), ("T-SDF", None), ("T", None)])
def test_first_call_sees_training_sample_layout(rng, regime, patch):
    from windfno.dataset import build_dataset

    values = rng.random((15, 8, 8)) + 0.5
    truth = FieldSeries(GridSpec(8, 8), 0.1, values)
    sdf = rng.uniform(-1, 1, (8, 8)) if regime.endswith("SDF") else None
    ds = build_dataset(truth, sdf, regime, patch=patch or 8)
    seen = []

    def model(x):
        seen.append(x.copy())
        return np.zeros((len(x), 10) + x.shape[2:])

    plan = RolloutPlan(10, regime, ds.scale, sdf, patch)
    predict_series(None, None, truth, plan, 0, model)
    n = 4 if patch else 1
    np.testing.assert_allclose(seen[0], ds.inputs[:n], rtol=0, atol=1e-15)
