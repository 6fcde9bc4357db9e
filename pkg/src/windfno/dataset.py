"""Turn wind-speed series into FNO samples: windows, patches, extra channels, split.

Sample channel order is ``[5 input frames, (sdf), x ramp, y ramp]`` with the
ramps spanning each sample; targets
hold the next 10 frames. All speeds are divided by one scale, the maximum
magnitude seen in the training split.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EmptyDatasetError, TilingError
from .fields import FieldSeries, GridSpec, ScalarField2D
from .geometry import SdfGrid, normalize_sdf
from .npyio import load_array, save_array

IN_LEN = 5
OUT_LEN = 10
STRIDE = 2
REGIMES = ("T", "T-SDF", "P", "P-SDF")


def window_starts(n_frames, in_len=IN_LEN, out_len=OUT_LEN, stride=STRIDE):
    span = in_len + out_len
    if n_frames < span:
        raise EmptyDatasetError(f"series has {n_frames} frames, a window needs {span}")
    return list(range(0, n_frames - span + 1, stride))


def slide_windows(series, in_len=IN_LEN, out_len=OUT_LEN, stride=STRIDE):
    """List of ``(inputs, targets)`` array pairs, shapes (in_len, H, W) and (out_len, H, W)."""
    values = series.values if isinstance(series, FieldSeries) else np.asarray(series)
    return [(values[s:s + in_len], values[s + in_len:s + in_len + out_len])
            for s in window_starts(len(values), in_len, out_len, stride)]


@dataclass(frozen=True)
class PatchLayout:
    patch: int
    grid_rows: int
    grid_cols: int

    @property
    def count(self):
        return self.grid_rows * self.grid_cols

    @property
    def shape(self):
        return (self.grid_rows * self.patch, self.grid_cols * self.patch)

    def origins(self):
        """(row, col) offset of each patch in row-major order."""
        return [(r * self.patch, c * self.patch) for r in range(self.grid_rows) for c in range(self.grid_cols)]


def layout_for(h, w, patch):
    for name, n in (("height", h), ("width", w)):
        if patch < 1 or n % patch:
            raise TilingError(f"{name} {n} is not divisible by patch size {patch}")
    return PatchLayout(patch, h // patch, w // patch)


def tile_array(a, patch):
    """(..., H, W) -> (..., P, patch, patch) in row-major patch order."""
    a = np.asarray(a)
    h, w = a.shape[-2:]
    lay = layout_for(h, w, patch)
    lead = a.shape[:-2]
    t = a.reshape(*lead, lay.grid_rows, patch, lay.grid_cols, patch)
    t = np.moveaxis(t, -3, -2)  # (..., rows, cols, patch, patch)
    return t.reshape(*lead, lay.count, patch, patch), lay


def stitch_array(p, layout):
    p = np.asarray(p)
    if p.shape[-3] != layout.count or p.shape[-1] != layout.patch or p.shape[-2] != layout.patch:
        raise TilingError(f"expected {layout.count} patches of {layout.patch}x{layout.patch}, got {p.shape[-3:]}")
    lead = p.shape[:-3]
    t = p.reshape(*lead, layout.grid_rows, layout.grid_cols, layout.patch, layout.patch)
    t = np.moveaxis(t, -2, -3)
    return t.reshape(*lead, *layout.shape)


def tile_patches(frame, patch=64):
    tiles, lay = tile_array(frame.values, patch)
    spec = frame.spec
    return [ScalarField2D(GridSpec(patch, patch, spec.dx), t) for t in tiles], lay


def stitch_patches(patches, layout):
    if len(patches) != layout.count:
        raise TilingError(f"layout needs {layout.count} patches, got {len(patches)}")
    arr = stitch_array(np.stack([p.values for p in patches]), layout)
    dx = patches[0].spec.dx
    return ScalarField2D(GridSpec(arr.shape[1], arr.shape[0], dx), arr)


def coord_channels(h, w):
    """x and y ramps across one sample, each in [0, 1]."""
    x = np.broadcast_to(np.linspace(0.0, 1.0, w)[None, :], (h, w))
    y = np.broadcast_to(np.linspace(0.0, 1.0, h)[:, None], (h, w))
    return np.stack([x, y])


def static_channels(h, w, sdf=None):
    """Channels attached to every sample: optional normalized SDF, then the coordinate ramps."""
    parts = []
    if sdf is not None:
        parts.append(np.asarray(sdf)[None])
    parts.append(coord_channels(h, w))
    return np.concatenate(parts, axis=0)


def sample_static(h, w, sdf=None, patch=None):
    """Static channels per sample, ``(P, S, patch, patch)`` or ``(1, S, h, w)`` without patches.

    The SDF is tiled with the frames; the coordinate ramps span each sample,
    so a patch sees local coordinates.
    """
    if patch is None:
        return static_channels(h, w, sdf)[None]
    layout = layout_for(h, w, patch)
    coords = np.broadcast_to(coord_channels(patch, patch)[None], (layout.count, 2, patch, patch))
    if sdf is None:
        return np.array(coords)
    sdf_t, _ = tile_array(np.asarray(sdf), patch)
    return np.concatenate([sdf_t[:, None], coords], axis=1)


def in_channels(regime):
    return IN_LEN + (1 if regime_has_sdf(regime) else 0) + 2


def regime_has_sdf(regime):
    return regime.endswith("SDF")


def regime_patched(regime):
    return regime.startswith("P")


def check_regime(regime):
    if regime not in REGIMES:
        raise ContractError(f"regime must be one of {REGIMES}, got {regime!r}")


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, C, h, w), normalized
    targets: np.ndarray  # (N, 10, h, w), normalized
    train_indices: np.ndarray
    val_indices: np.ndarray
    scale: float
    regime: str
    split_seed: int
    layout: PatchLayout | None
    source: dict = field(default_factory=dict)

    @property
    def count(self):
        return len(self.inputs)

    def manifest(self):
        return {
            "count": int(self.count),
            "scale": float(self.scale),
            "regime": self.regime,
            "split_seed": int(self.split_seed),
            "train_indices": [int(i) for i in self.train_indices],
            "val_indices": [int(i) for i in self.val_indices],
            "patch": None if self.layout is None else self.layout.patch,
            "patch_grid": None if self.layout is None else [self.layout.grid_rows, self.layout.grid_cols],
            "source": self.source,
        }

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        save_array(os.path.join(out_dir, "inputs.npy"), self.inputs.reshape(len(self.inputs), -1))
        save_array(os.path.join(out_dir, "targets.npy"), self.targets.reshape(len(self.targets), -1))
        meta = self.manifest()
        meta["input_shape"] = list(self.inputs.shape)
        meta["target_shape"] = list(self.targets.shape)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, out_dir):
        with open(os.path.join(out_dir, "manifest.json")) as fh:
            meta = json.load(fh)
        x = load_array(os.path.join(out_dir, "inputs.npy")).reshape(meta["input_shape"])
        y = load_array(os.path.join(out_dir, "targets.npy")).reshape(meta["target_shape"])
        layout = PatchLayout(meta["patch"], *meta["patch_grid"]) if meta["patch"] else None
        return cls(x, y, np.array(meta["train_indices"], dtype=np.int64), np.array(meta["val_indices"], dtype=np.int64),
                   meta["scale"], meta["regime"], meta["split_seed"], layout, meta["source"])


def split_indices(n, seed=42, train_fraction=0.8):
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def sample_count(n_frames, h, w, regime, patch=64, stride=STRIDE, coverage=1.0):
    n_win = len(window_starts(n_frames, stride=stride))
    n_win = _covered(n_win, coverage)
    return n_win * (layout_for(h, w, patch).count if regime_patched(regime) else 1)


def _covered(n_win, coverage):
    if not 0.0 < coverage <= 1.0:
        raise ContractError("coverage must lie in (0, 1]")
    return max(1, int(np.floor(coverage * n_win)))


def build_dataset(series, sdf=None, regime="P-SDF", split_seed=42, patch=64, stride=STRIDE,
                  coverage=1.0, train_fraction=0.8):
    """Window, optionally tile, attach static channels, split and normalize.

    ``coverage < 1`` keeps an evenly spaced subset of the windows.
    Sample ``k`` of a patched regime is window ``k // P``, patch ``k % P``.
    """
    check_regime(regime)
    values = series.values if isinstance(series, FieldSeries) else np.asarray(series, dtype=np.float64)
    h, w = values.shape[1:]
    if regime_has_sdf(regime) != (sdf is not None):
        raise ContractError(f"regime {regime} {'needs' if regime_has_sdf(regime) else 'takes no'} SDF")
    sdf_norm = None
    if sdf is not None:
        if isinstance(sdf, SdfGrid):
            if sdf.spec.shape != (h, w):
                raise ContractError(f"SDF grid {sdf.spec.shape} does not match frames {(h, w)}")
            sdf_norm = normalize_sdf(sdf).values
        else:
            sdf_norm = np.asarray(sdf, dtype=np.float64)
            if sdf_norm.shape != (h, w):
                raise ContractError(f"SDF grid {sdf_norm.shape} does not match frames {(h, w)}")
    starts = window_starts(len(values), stride=stride)
    keep = _covered(len(starts), coverage)
    if keep < len(starts):
        pick = np.unique(np.floor(np.linspace(0, len(starts) - 1, keep)).astype(int))
        starts = [starts[i] for i in pick]
    static = sample_static(h, w, sdf_norm, patch if regime_patched(regime) else None)
    raw_in = np.stack([values[s:s + IN_LEN] for s in starts])
    raw_out = np.stack([values[s + IN_LEN:s + IN_LEN + OUT_LEN] for s in starts])
    layout = None
    if regime_patched(regime):
        tin, layout = tile_array(raw_in, patch)  # (n, 5, P, p, p)
        tout, _ = tile_array(raw_out, patch)
        n, P = len(starts), layout.count
        raw_in = np.moveaxis(tin, 2, 1).reshape(n * P, IN_LEN, patch, patch)
        raw_out = np.moveaxis(tout, 2, 1).reshape(n * P, OUT_LEN, patch, patch)
        stat = np.broadcast_to(static[None], (n,) + static.shape).reshape(n * P, -1, patch, patch)
    else:
        stat = np.broadcast_to(static, (len(starts),) + static.shape[1:])
    n = len(raw_in)
    tr, va = split_indices(n, split_seed, train_fraction)
    scale = float(max(np.abs(raw_in[tr]).max(), np.abs(raw_out[tr]).max()))
    if scale <= 0:
        scale = 1.0
    inputs = np.concatenate([raw_in / scale, stat], axis=1)
    targets = raw_out / scale
    source = {"frames": int(len(values)), "stride": int(stride), "in_len": IN_LEN, "out_len": OUT_LEN,
              "coverage": float(coverage), "windows": int(len(starts))}
    return Dataset(inputs, targets, tr, va, scale, regime, split_seed, layout, source)
