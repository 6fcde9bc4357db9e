"""Desk-scale experiments: obstacle layouts, wind directions, case ids and the train/test matrix.

A north wind over a layout is produced by turning the layout a quarter turn
counterclockwise (north edge becomes the west inflow edge), simulating the
usual west wind, and turning the result back.
"""
from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import fno, metrics
from .dataset import build_dataset, in_channels, layout_for, regime_patched
from .errors import ContractError
from .fields import FieldSeries, GridSpec, flip_vertical, rotate90_ccw, rotate90_cw
from .flow import FlowConfig, run_simulation
from .geometry import BuildingMask, compute_sdf, normalize_sdf
from .rollout import RolloutPlan, persistence, predict_series
from .train import TrainConfig, train

log = logging.getLogger(__name__)

# obstacle rectangles as (row0, row1, col0, col1), half-open, on a 64x64 grid
LAYOUTS = {
    "Nii": [(10, 18, 12, 20), (30, 40, 16, 22), (44, 52, 30, 40), (20, 28, 38, 46)],
    "Mon": [(6, 12, 20, 32), (20, 34, 10, 14), (40, 46, 20, 26), (50, 60, 40, 44), (14, 22, 44, 56)],
}


def rect_mask(rects, n=64, dx=2.0):
    inside = np.zeros((n, n), dtype=bool)
    for r0, r1, c0, c1 in rects:
        inside[r0:r1, c0:c1] = True
    return BuildingMask(GridSpec(n, n, dx), inside)


def random_rects(seed, n=64, count=None, min_side=5, max_side=11, gap=3, first_col=10):
    """3 to 5 non-touching rectangles clear of the inflow columns and the side walls."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 6)) if count is None else count
    rects, tries = [], 0
    while len(rects) < count:
        tries += 1
        if tries > 10000:
            raise ContractError("could not place obstacles")
        hgt, wid = rng.integers(min_side, max_side + 1, size=2)
        r0 = int(rng.integers(4, n - 4 - hgt))
        c0 = int(rng.integers(first_col, n - 6 - wid))
        cand = (r0, r0 + int(hgt), c0, c0 + int(wid))
        if all(cand[0] >= r[1] + gap or cand[1] + gap <= r[0] or cand[2] >= r[3] + gap or cand[3] + gap <= r[2]
               for r in rects):
            rects.append(cand)
    return rects


def layout_mask(name_or_seed, n=64, dx=2.0):
    if isinstance(name_or_seed, str):
        if name_or_seed not in LAYOUTS:
            raise ContractError(f"unknown layout {name_or_seed!r}")
        return rect_mask(LAYOUTS[name_or_seed], n, dx)
    return rect_mask(random_rects(int(name_or_seed), n), n, dx)


def rotate_mask(mask):
    return BuildingMask(mask.spec.rotated(), np.rot90(mask.inside))


def flip_mask(mask):
    return BuildingMask(mask.spec, mask.inside[::-1])


def simulate_wind(mask, direction, cfg, n_frames, spinup=0, record_every=1):
    """Wind-speed magnitude series for wind from the west ("W") or the north ("N")."""
    return simulate_velocity(mask, direction, cfg, n_frames, spinup, record_every)[0]


def simulate_velocity(mask, direction, cfg, n_frames, spinup=0, record_every=1):
    """``(magnitude series, u, v)`` with u toward +column (east) and v toward +row (south)."""
    if direction == "W":
        res = run_simulation(mask, cfg, spinup + n_frames * record_every, record_every)
        k = spinup // record_every
        return _drop(res.magnitude, k), res.u[k:], res.v[k:]
    if direction == "N":
        mag, u_r, v_r = simulate_velocity(rotate_mask(mask), "W", cfg, n_frames, spinup, record_every)
        # a quarter turn back maps rotated-frame (u, v) to (-v, u)
        back = np.rot90(np.stack([u_r, v_r]), k=-1, axes=(2, 3))
        return rotate90_cw(mag), -back[1], back[0].copy()
    raise ContractError(f"direction must be W or N, got {direction!r}")


def _drop(series, n):
    return FieldSeries(series.spec, series.dt, series.values[n:])


def split_series(series, n_first):
    v = series.values
    return FieldSeries(series.spec, series.dt, v[:n_first]), FieldSeries(series.spec, series.dt, v[n_first:])


# case ids ---------------------------------------------------------------------

_CASE_RE = re.compile(r"^(W|N)-([A-Za-z]+)-(T|P)(-SDF)?(-CFD)?(-R|-VF)?$")
TRANSFORMS = {None: "none", "R": "rotate90ccw", "VF": "vflip"}


@dataclass(frozen=True)
class CaseId:
    direction: str
    city: str
    mode: str
    sdf: bool = False
    cfd: bool = False
    suffix: str | None = None

    @property
    def regime(self):
        return self.mode + ("-SDF" if self.sdf else "")

    @property
    def transform(self):
        return TRANSFORMS[self.suffix]

    def __str__(self):
        parts = [self.direction, self.city, self.mode]
        if self.sdf:
            parts.append("SDF")
        if self.cfd:
            parts.append("CFD")
        if self.suffix:
            parts.append(self.suffix)
        return "-".join(parts)


def parse_case_id(text):
    m = _CASE_RE.match(text)
    if not m:
        raise ContractError(f"case id {text!r} does not follow DIR-City-T|P[-SDF][-CFD][-R|-VF]")
    d, city, mode, sdf, cfd, suf = m.groups()
    return CaseId(d, city, mode, bool(sdf), bool(cfd), suf[1:] if suf else None)


def apply_transform(series, sdf, transform):
    """Transform a truth series and its (normalized) SDF array together."""
    if transform == "none":
        return series, sdf
    if transform == "rotate90ccw":
        return rotate90_ccw(series), None if sdf is None else np.rot90(sdf)
    if transform == "vflip":
        return flip_vertical(series), None if sdf is None else sdf[::-1]
    raise ContractError(f"unknown transform {transform!r}")


# desk experiment ----------------------------------------------------------------

@dataclass(frozen=True)
class DeskSetup:
    grid: int = 64
    dx: float = 2.0
    train_steps: int = 600
    eval_frames: int = 100
    spinup: int = 100
    patch: int = 32
    epochs: int = 30
    batch_size: int = 20
    coverage: float = 0.5
    preset: str = "desk"
    seed: int = 0
    split_seed: int = 42
    starts: tuple = (0, 20, 40)
    horizon: int = 50  # 5 s at 0.1 s per frame
    check_step: int = 10
    flow: dict = field(default_factory=dict)

    def flow_config(self):
        return FlowConfig.from_dict({"seed": self.seed, **self.flow})

    def to_dict(self):
        d = asdict(self)
        d["starts"] = list(self.starts)
        return d


def flow_data(mask, direction, setup):
    """One continuous run split into a training part and a later held-out part."""
    cfg = setup.flow_config()
    full = simulate_wind(mask, direction, cfg, setup.train_steps + setup.eval_frames, setup.spinup)
    return split_series(full, setup.train_steps)


def sdf_array(mask):
    return normalize_sdf(compute_sdf(mask)).values


def train_regime(series, sdf, regime, setup, seed=None):
    seed = setup.seed if seed is None else seed
    ds = build_dataset(series, sdf if regime.endswith("SDF") else None, regime, setup.split_seed,
                       patch=setup.patch if regime_patched(regime) else series.values.shape[-1],
                       coverage=setup.coverage)
    h = ds.inputs.shape[-1]
    mcfg = fno.preset_config(setup.preset, in_channels(regime))
    if 2 * mcfg.modes > h:
        mcfg = replace(mcfg, modes=h // 2)
    tcfg = TrainConfig(epochs=setup.epochs, batch_size=setup.batch_size, seed=seed)
    params, history = train(ds, mcfg, tcfg)
    return params, mcfg, ds, history


def rollout_errors(params, mcfg, regime, scale, truth, sdf, setup):
    """Mean MAE curves (model and persistence) over the configured start frames."""
    plan = RolloutPlan(setup.horizon, regime, scale, sdf if regime.endswith("SDF") else None,
                       setup.patch if regime_patched(regime) else None, truth.dt, truth.spec.dx)
    curves, base, reports = [], [], []
    for s in setup.starts:
        pred, aligned = predict_series(params, mcfg, truth, plan, s)
        curves.append(metrics.accumulated_abs_error(pred, aligned))
        base.append(metrics.accumulated_abs_error(persistence(truth, s, setup.horizon), aligned.values))
        layout = layout_for(*aligned.spec.shape, setup.patch)
        reports.append(metrics.evaluate(pred, aligned, truth.dt, layout=layout))
    return np.mean(curves, axis=0), np.mean(base, axis=0), reports


def _best_val(history):
    return min(h["val_loss"] for h in history)


def run_end_to_end(setup=DeskSetup(), regimes=("P-SDF", "P", "T"), layout="Nii"):
    """Simulate, train each regime, roll out on held-out frames; returns a JSON-able summary."""
    mask = layout_mask(layout, setup.grid, setup.dx)
    train_s, eval_s = flow_data(mask, "W", setup)
    sdf = sdf_array(mask)
    out = {"setup": setup.to_dict(), "layout": layout, "regimes": {}}
    k = setup.check_step - 1
    for regime in regimes:
        params, mcfg, ds, history = train_regime(train_s, sdf, regime, setup)
        mae, base, reports = rollout_errors(params, mcfg, regime, ds.scale, eval_s, sdf, setup)
        out["regimes"][regime] = {
            "val_rel_l2": _best_val(history),
            "final_val_rel_l2": history[-1]["val_loss"],
            "history": [{"epoch": h["epoch"], "train_loss": h["train_loss"], "val_loss": h["val_loss"]}
                        for h in history],
            "mae_curve": [float(v) for v in mae],
            "persistence_curve": [float(v) for v in base],
            "mae_at_check": float(mae[k]),
            "persistence_at_check": float(base[k]),
            "mae_at_horizon": float(mae[-1]),
            "reports": [r.to_dict() for r in reports],
            "samples": int(ds.count),
            "scale": float(ds.scale),
        }
        log.info("%s: val %.4f mae@%d %.4f (persistence %.4f) mae@%d %.4f", regime, _best_val(history),
                 setup.check_step, mae[k], base[k], setup.horizon, mae[-1])
    return out


def run_transform_experiment(seed, setup=DeskSetup(), regime="P-SDF", other_layout="Mon"):
    """Train on west wind over a seeded layout; test on N, N-R, VF and a different layout."""
    setup = replace(setup, seed=seed)
    mask = layout_mask(seed + 1000, setup.grid, setup.dx)
    sdf = sdf_array(mask)
    train_s, eval_w = flow_data(mask, "W", setup)
    params, mcfg, ds, _ = train_regime(train_s, sdf, regime, setup)
    _, eval_n = flow_data(mask, "N", setup)
    other = layout_mask(other_layout, setup.grid, setup.dx)
    _, eval_other = flow_data(other, "W", setup)
    cases = {
        "N": (eval_n, sdf),
        "N-R": apply_transform(eval_n, sdf, "rotate90ccw"),
        "VF": apply_transform(eval_w, sdf, "vflip"),
        "other": (eval_other, sdf_array(other)),
        "W": (eval_w, sdf),
    }
    result = {"seed": seed, "rects": random_rects(seed + 1000, setup.grid), "cases": {}}
    for name, (truth, s) in cases.items():
        mae, base, _ = rollout_errors(params, mcfg, regime, ds.scale, truth, s, setup)
        result["cases"][name] = {"mean_mae": float(np.mean(mae)), "mae_at_horizon": float(mae[-1]),
                                 "persistence_mean_mae": float(np.mean(base))}
    return result
