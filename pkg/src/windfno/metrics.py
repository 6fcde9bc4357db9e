"""Forecast evaluation: patch RMS, per-step MAE, radial energy spectrum, global SSIM."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import layout_for, tile_array
from .errors import ContractError
from .fft import fft2, fftfreq_int, is_power_of_two
from .fields import FieldSeries, ScalarField2D

MAE_THRESHOLD = 0.5  # m/s


def _arr(x):
    if isinstance(x, (ScalarField2D, FieldSeries)):
        return x.values
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class RadialSpectrum:
    bin_energy: np.ndarray

    @property
    def n_bins(self):
        return len(self.bin_energy)


def radial_spectrum(frame):
    """Bin |FFT|^2 by floor of the radial integer wave number; energy past the last bin folds into it."""
    a = _arr(frame)
    h, w = a.shape
    if h != w or not is_power_of_two(h) or h < 2:
        raise ContractError(f"radial spectrum needs a square power-of-two grid, got {h}x{w}")
    power = np.abs(fft2(a)) ** 2
    k = fftfreq_int(h)
    r = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    n_bins = h // 2
    idx = np.minimum(np.floor(r).astype(np.int64), n_bins - 1)
    energy = np.bincount(idx.ravel(), weights=power.ravel(), minlength=n_bins)
    return RadialSpectrum(energy)


def spectrum_abs_diff(a, b, wave_numbers):
    """|a - b| at each requested wave number; ``n_bins`` itself maps to the last (folded) bin."""
    if a.n_bins != b.n_bins:
        raise ContractError(f"spectra have {a.n_bins} and {b.n_bins} bins")
    out = {}
    for k in wave_numbers:
        k = int(k)
        if k < 0 or k > a.n_bins:
            raise ContractError(f"wave number {k} outside 0..{a.n_bins}")
        i = min(k, a.n_bins - 1)
        out[k] = float(abs(a.bin_energy[i] - b.bin_energy[i]))
    return out


def _check_aligned(pred, truth):
    p, t = _arr(pred), _arr(truth)
    if p.shape != t.shape:
        raise ContractError(f"misaligned series: {p.shape} vs {t.shape}")
    return p, t


def default_layout(h, w, patch=64):
    """Virtual tiling used when a whole-domain forecast has no patches of its own."""
    try:
        return layout_for(h, w, patch)
    except ContractError:
        return layout_for(h, w, int(np.gcd(h, w)))


def rms_stats(pred, truth, layout=None, at_frame=None):
    """(max, mean) over patches of the RMS error at one frame."""
    p, t = _check_aligned(pred, truth)
    if p.ndim == 3:
        if at_frame is None or not -len(p) <= at_frame < len(p):
            raise ContractError(f"frame index {at_frame} invalid for {len(p)} frames")
        p, t = p[at_frame], t[at_frame]
    layout = layout or default_layout(*p.shape)
    err, _ = tile_array(p - t, layout.patch)
    rms = np.sqrt(np.mean(err.reshape(layout.count, -1) ** 2, axis=1))
    return float(rms.max()), float(rms.mean())


def accumulated_abs_error(pred, truth, cumulative=False):
    """Per-step mean absolute error; ``cumulative=True`` gives the running sum instead."""
    p, t = _check_aligned(pred, truth)
    curve = np.mean(np.abs(p - t).reshape(len(p), -1), axis=1)
    return np.cumsum(curve) if cumulative else curve


def ssim(a, b):
    """Global structural similarity with C1=(0.01 L)^2, C2=(0.03 L)^2 and L the joint value range."""
    x, y = _check_aligned(a, b)
    L = max(float(max(x.max(), y.max()) - min(x.min(), y.min())), 1e-12)
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cxy = np.mean((x - mx) * (y - my))
    return float(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))


@dataclass
class EvaluationReport:
    mae: list
    at_frame: int
    at_time: float
    mae_at: float
    max_rms: float
    mean_rms: float
    spectrum_diff: dict
    ssim: float
    threshold_exceeded: bool
    threshold: float = MAE_THRESHOLD
    notes: list = field(default_factory=lambda: [
        "max/mean RMS are statistics over square patches of the domain",
        "mae is the per-step mean absolute error of the rollout",
    ])

    def to_dict(self):
        d = asdict(self)
        d["spectrum_diff"] = {str(k): v for k, v in self.spectrum_diff.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_csv(self, path, dt):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "time_s", "mae_m_s"])
            for i, v in enumerate(self.mae):
                wr.writerow([i + 1, repr((i + 1) * dt), repr(float(v))])


def evaluate(pred, truth, dt, at_frame=None, layout=None, wave_numbers=None):
    """Run the full battery; ``at_frame`` defaults to the last frame."""
    p, t = _check_aligned(pred, truth)
    at = len(p) - 1 if at_frame is None else int(at_frame)
    curve = accumulated_abs_error(p, t)
    mx, mean = rms_stats(p, t, layout, at)
    diffs = {}
    h, w = p.shape[1:]
    if h == w and is_power_of_two(h):
        sa, sb = radial_spectrum(p[at]), radial_spectrum(t[at])
        ks = wave_numbers if wave_numbers is not None else [max(1, sa.n_bins * q // 4) for q in (1, 2, 3, 4)]
        diffs = spectrum_abs_diff(sa, sb, ks)
    mae_at = float(curve[at])
    return EvaluationReport(
        mae=[float(v) for v in curve], at_frame=at, at_time=float((at + 1) * dt), mae_at=mae_at,
        max_rms=mx, mean_rms=mean, spectrum_diff=diffs, ssim=ssim(p[at], t[at]),
        threshold_exceeded=bool(mae_at > MAE_THRESHOLD),
    )
