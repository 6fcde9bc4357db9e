"""Minimal reader/writer for version 1.0 ``.npy`` files holding float arrays.

Only what the pipeline exchanges is supported: little-endian ``<f4``/``<f8``
data in C order. Everything is returned as float64 and written as ``<f8``.
"""
from __future__ import annotations

import ast
import os
import struct

import numpy as np

from .errors import ContractError, FormatError, UnsupportedLayoutError

MAGIC = b"\x93NUMPY"
_ALIGN = 64
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _parse_header(raw):
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unreadable header dictionary: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError("header must be a dict with keys descr, fortran_order, shape")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise FormatError(f"invalid shape {shape!r}")
    return header


def read_npy(path):
    """Read ``path`` and return ``(shape, values)`` with ``values`` a flat float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:6] != MAGIC:
        raise FormatError(f"{path}: missing .npy magic")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise UnsupportedLayoutError(f"{path}: .npy version {major}.{minor} not supported")
    (hlen,) = struct.unpack("<H", data[8:10])
    if len(data) < 10 + hlen:
        raise FormatError(f"{path}: truncated header")
    header = _parse_header(data[10:10 + hlen])
    if header["fortran_order"]:
        raise UnsupportedLayoutError(f"{path}: Fortran-ordered arrays are not supported")
    dtype = _DTYPES.get(header["descr"])
    if dtype is None:
        raise UnsupportedLayoutError(f"{path}: dtype {header['descr']!r} not supported")
    shape = list(header["shape"])
    if len(shape) not in (1, 2, 3):
        raise UnsupportedLayoutError(f"{path}: {len(shape)}-D arrays not supported")
    count = int(np.prod(shape)) if shape else 1
    body = data[10 + hlen:]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{path}: expected {count * dtype.itemsize} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype=dtype).astype(np.float64)
    return shape, values


def write_npy(path, shape, values):
    shape = tuple(int(n) for n in shape)
    values = np.ascontiguousarray(values, dtype="<f8").ravel()
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ContractError(f"shape {shape} needs {expected} values, got {values.size}")
    text = "{'descr': '<f8', 'fortran_order': False, 'shape': %r, }" % (shape,)
    # pad so that magic + version + length + header is a multiple of 64, newline-terminated
    pad = (-(10 + len(text) + 1)) % _ALIGN
    header = (text + " " * pad + "\n").encode("latin1")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header)
        fh.write(values.tobytes())
    os.replace(tmp, path)


def load_array(path):
    """Convenience wrapper returning an ndarray with the stored shape."""
    shape, values = read_npy(path)
    return values.reshape(shape)


def save_array(path, array):
    array = np.asarray(array, dtype=np.float64)
    write_npy(path, array.shape, array)
