"""Fourier neural operator for 2D wind-speed sequences.

Layout of one forward pass on a batch of shape (B, C, H, W)::

    lift (C -> width)
    4 x  w <- GeLU(M w + K(w) + bias)      K = truncated spectral convolution
    project (width -> 128, GeLU, 128 -> out)

Parameters live in a plain ordered ``dict`` of float64 arrays so the
optimizer, the finite-difference checks and the file format all see the
same flat view.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, FormatError, UnsupportedLayoutError

MAGIC = b"FNO1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FnoConfig:
    in_channels: int = 8
    out_channels: int = 10
    width: int = 32
    modes: int = 12
    layers: int = 4
    hidden: int = 128

    def __post_init__(self):
        for key in ("in_channels", "out_channels", "width", "modes", "layers", "hidden"):
            if int(getattr(self, key)) < 1:
                raise ContractError(f"{key} must be at least 1")


PRESETS = {
    "desk": dict(width=32, modes=12),
    "paper": dict(width=64, modes=32),
}


def preset_config(name, in_channels, out_channels=10):
    if name not in PRESETS:
        raise ContractError(f"unknown preset {name!r}")
    return FnoConfig(in_channels=in_channels, out_channels=out_channels, **PRESETS[name])


def parameter_shapes(cfg):
    m, w = cfg.modes, cfg.width
    shapes = {"lift.w": (cfg.in_channels, w), "lift.b": (w,)}
    for k in range(cfg.layers):
        shapes[f"layer{k}.wr"] = (2 * m - 1, m, w, w)
        shapes[f"layer{k}.wi"] = (2 * m - 1, m, w, w)
        shapes[f"layer{k}.m"] = (w, w)
        shapes[f"layer{k}.b"] = (w,)
    shapes["proj1.w"] = (w, cfg.hidden)
    shapes["proj1.b"] = (cfg.hidden,)
    shapes["proj2.w"] = (cfg.hidden, cfg.out_channels)
    shapes["proj2.b"] = (cfg.out_channels,)
    return shapes


def parameter_count(cfg):
    return int(sum(np.prod(s) for s in parameter_shapes(cfg).values()))


def init_params(cfg, seed=0):
    """Spectral weights ~ U[0, 1) / width^2 (real and imaginary); affine maps ~ U(+-1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith((".wr", ".wi")):
            params[name] = rng.random(shape) / (cfg.width * cfg.width)
        else:
            fan_in = shape[0] if name.endswith((".w", ".m")) else _fan_in_for_bias(name, cfg)
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _fan_in_for_bias(name, cfg):
    if name.startswith("lift"):
        return cfg.in_channels
    if name.startswith("proj1"):
        return cfg.width
    if name.startswith("proj2"):
        return cfg.hidden
    return cfg.width


def zero_params(cfg):
    return {name: np.zeros(shape) for name, shape in parameter_shapes(cfg).items()}


def forward(params, x, cfg, tape=None):
    """Run the network on ``x`` (B, C, H, W); returns ``(output node, leaves)``.

    With ``tape=None`` an inference tape is used and nothing is retained.
    """
    tape = tape if tape is not None else ad.Tape(recording=False)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ContractError(f"expected input (B, {cfg.in_channels}, H, W), got {x.shape}")
    ad.check_modes(x.shape[2], x.shape[3], cfg.modes)
    leaves = {name: tape.leaf(params[name], name) for name in parameter_shapes(cfg)}
    h = ad.channel_affine(tape.constant(x), leaves["lift.w"], leaves["lift.b"])
    for k in range(cfg.layers):
        local = ad.channel_affine(h, leaves[f"layer{k}.m"], leaves[f"layer{k}.b"])
        spec = ad.spectral_conv(h, leaves[f"layer{k}.wr"], leaves[f"layer{k}.wi"])
        h = ad.gelu(ad.add(local, spec))
    h = ad.gelu(ad.channel_affine(h, leaves["proj1.w"], leaves["proj1.b"]))
    out = ad.channel_affine(h, leaves["proj2.w"], leaves["proj2.b"])
    return out, leaves


def predict(params, x, cfg, batch_size=32):
    """Inference in chunks; returns a (B, out, H, W) array."""
    x = np.asarray(x, dtype=np.float64)
    outs = [forward(params, x[i:i + batch_size], cfg)[0].value for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def loss_and_grad(params, x, y, cfg, loss="relative-l2"):
    tape = ad.Tape()
    out, leaves = forward(params, x, cfg, tape)
    node = _loss(out, y, loss)
    tape.backward(node)
    grads = tape.gradients(leaves)
    tape.release()
    return float(node.value), grads


def loss_value(params, x, y, cfg, loss="relative-l2", batch_size=32):
    """Batch-size weighted mean loss over ``x``; matches the per-sample mean of the loss."""
    total, n = 0.0, len(x)
    for i in range(0, n, batch_size):
        out, _ = forward(params, x[i:i + batch_size], cfg)
        part = _loss(out, y[i:i + batch_size], loss)
        total += float(part.value) * len(out.value)
    return total / max(n, 1)


def _loss(out, y, loss):
    if loss == "relative-l2":
        return ad.relative_l2(out, y)
    if loss == "mse":
        return ad.mse(out, y)
    raise ContractError(f"unknown loss {loss!r}")


# parameter files --------------------------------------------------------------

def save_params(path, params, cfg, seed=0):
    shapes = parameter_shapes(cfg)
    header = {
        "version": FORMAT_VERSION,
        "config": asdict(cfg),
        "seed": int(seed),
        "tensors": [[name, list(shape)] for name, shape in shapes.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params[name], dtype="<f8").tobytes() for name in shapes)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(blob)) + blob + body)
    os.replace(tmp, path)


def load_params(path, expect=None):
    """Read a parameter file; returns ``(params, cfg, seed)``.

    ``expect`` is an optional :class:`FnoConfig` the file must match.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not an FNO parameter file")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise UnsupportedLayoutError(f"{path}: format version {header.get('version')} != {FORMAT_VERSION}")
    cfg = FnoConfig(**header["config"])
    if expect is not None and expect != cfg:
        raise ContractError(f"{path}: file holds {cfg}, expected {expect}")
    shapes = parameter_shapes(cfg)
    declared = {name: tuple(shape) for name, shape in header["tensors"]}
    if declared != shapes:
        raise FormatError(f"{path}: tensor table does not match the configuration")
    need = 8 * sum(int(np.prod(s)) for s in shapes.values())
    body = data[8 + hlen:]
    if len(body) != need:
        raise FormatError(f"{path}: truncated or oversized body ({len(body)} bytes, expected {need})")
    params, off = {}, 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
    return params, cfg, header["seed"]
