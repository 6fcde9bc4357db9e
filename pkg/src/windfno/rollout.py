"""Autoregressive forecasting with a trained operator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fno
from .dataset import (IN_LEN, OUT_LEN, check_regime, in_channels, layout_for, regime_has_sdf, regime_patched,
                      sample_static, stitch_array, tile_array)
from .errors import ContractError
from .fields import FieldSeries, GridSpec
from .geometry import SdfGrid, normalize_sdf


@dataclass(frozen=True)
class RolloutPlan:
    horizon: int
    regime: str
    scale: float
    sdf: object = None  # normalized (H, W) array or SdfGrid
    patch: int | None = None
    dt: float = 0.1
    dx: float = 2.0

    def __post_init__(self):
        check_regime(self.regime)
        if int(self.horizon) < 1:
            raise ContractError("horizon must be at least 1")
        if not self.scale > 0:
            raise ContractError("scale must be positive")
        if regime_has_sdf(self.regime) != (self.sdf is not None):
            raise ContractError(f"regime {self.regime} and the presence of an SDF disagree")
        if regime_patched(self.regime) and not self.patch:
            raise ContractError("patched regime needs a patch size")


def n_calls(horizon):
    return math.ceil(horizon / OUT_LEN)


def _sdf_array(sdf):
    if sdf is None:
        return None
    if isinstance(sdf, SdfGrid):
        return normalize_sdf(sdf).values
    return np.asarray(sdf, dtype=np.float64)


def rollout(params, cfg, initial, plan, model=None):
    """Forecast ``plan.horizon`` frames from 5 normalized frames; returns m/s.

    ``model`` replaces the network (a callable mapping (B, C, h, w) to
    (B, 10, h, w)); tests use it to count calls.
    """
    initial = np.asarray(initial, dtype=np.float64)
    if initial.ndim != 3 or initial.shape[0] != IN_LEN:
        raise ContractError(f"need {IN_LEN} initial frames, got shape {initial.shape}")
    if cfg is not None and cfg.in_channels != in_channels(plan.regime):
        raise ContractError(f"model expects {cfg.in_channels} channels, regime {plan.regime} gives "
                            f"{in_channels(plan.regime)}")
    h, w = initial.shape[1:]
    static_b = sample_static(h, w, _sdf_array(plan.sdf), plan.patch if regime_patched(plan.regime) else None)
    if model is None:
        def model(x):
            return fno.predict(params, x, cfg)
    layout = layout_for(h, w, plan.patch) if regime_patched(plan.regime) else None
    frames = [f for f in initial]
    out = []
    while len(out) < plan.horizon:
        recent = np.stack(frames[-IN_LEN:])
        if layout is not None:
            tiles, _ = tile_array(recent, plan.patch)  # (5, P, p, p)
            x = np.concatenate([np.moveaxis(tiles, 1, 0), static_b], axis=1)
            pred = model(x)  # (P, 10, p, p)
            pred = stitch_array(np.moveaxis(pred, 0, 1), layout)  # (10, H, W)
        else:
            x = np.concatenate([recent[None], static_b], axis=1)
            pred = model(x)[0]
        frames.extend(pred)
        out.extend(pred)
    values = np.stack(out[:plan.horizon]) * plan.scale
    return FieldSeries(GridSpec(w, h, plan.dx), plan.dt, values)


def predict_series(params, cfg, truth, plan, start_index=0, model=None):
    """Roll out from ``truth[start:start+5]``; returns ``(forecast, aligned truth)`` in m/s."""
    values = truth.values if isinstance(truth, FieldSeries) else np.asarray(truth, dtype=np.float64)
    need = start_index + IN_LEN + plan.horizon
    if start_index < 0 or len(values) < need:
        raise ContractError(f"truth has {len(values)} frames, need {need}")
    initial = values[start_index:start_index + IN_LEN] / plan.scale
    forecast = rollout(params, cfg, initial, plan, model)
    aligned = values[start_index + IN_LEN:need]
    spec = truth.spec if isinstance(truth, FieldSeries) else forecast.spec
    return forecast, FieldSeries(spec, forecast.dt, aligned)


def persistence(truth, start_index, horizon):
    """Baseline that repeats the last observed input frame."""
    values = truth.values if isinstance(truth, FieldSeries) else np.asarray(truth)
    last = values[start_index + IN_LEN - 1]
    return np.broadcast_to(last, (horizon,) + last.shape).copy()
