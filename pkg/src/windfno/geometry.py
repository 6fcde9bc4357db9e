"""Building geometry: binary STL parsing, footprint rasterization and signed distance fields."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .fields import GridSpec, ScalarField2D

_HEADER = 80
_RECORD = 50
_FAR = 1e20


@dataclass(frozen=True)
class TriangleMesh:
    triangles: np.ndarray  # (n, 3, 3): triangle, vertex, xyz

    def __post_init__(self):
        tri = np.array(self.triangles, dtype=np.float64)
        if tri.ndim != 3 or tri.shape[1:] != (3, 3) or tri.shape[0] < 1:
            raise ContractError(f"triangles must have shape (n>=1, 3, 3), got {tri.shape}")
        if not np.all(np.isfinite(tri)):
            raise ContractError("vertex coordinates must be finite")
        tri.setflags(write=False)
        object.__setattr__(self, "triangles", tri)

    def __len__(self):
        return self.triangles.shape[0]

    def z_range(self):
        return float(self.triangles[..., 2].min()), float(self.triangles[..., 2].max())


@dataclass(frozen=True)
class BuildingMask:
    spec: GridSpec
    inside: np.ndarray

    def __post_init__(self):
        arr = np.array(self.inside, dtype=bool)
        if arr.size != self.spec.nx * self.spec.ny:
            raise ContractError(f"mask needs {self.spec.nx * self.spec.ny} cells, got {arr.size}")
        arr = arr.reshape(self.spec.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "inside", arr)

    @classmethod
    def from_array(cls, inside, dx=2.0):
        inside = np.asarray(inside, dtype=bool)
        ny, nx = inside.shape
        return cls(GridSpec(nx, ny, dx), inside)

    @classmethod
    def empty(cls, spec):
        return cls(spec, np.zeros(spec.shape, dtype=bool))


@dataclass(frozen=True)
class SdfGrid:
    spec: GridSpec
    distance: np.ndarray

    def __post_init__(self):
        arr = np.array(self.distance, dtype=np.float64).reshape(self.spec.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "distance", arr)


def parse_stl(data, translate=(0.0, 0.0, 0.0), scale=1.0):
    """Parse a binary STL byte string.

    ``scale`` and ``translate`` realize the projected-coordinate step: every
    vertex becomes ``scale * v + translate`` (meters).
    """
    data = bytes(data)
    if len(data) < _HEADER + 4:
        raise FormatError(f"binary STL needs at least 84 bytes, got {len(data)}")
    (count,) = struct.unpack_from("<I", data, _HEADER)
    expected = _HEADER + 4 + _RECORD * count
    if len(data) != expected:
        if data[:5].lower() == b"solid":
            raise FormatError("ASCII STL is not supported; convert to binary")
        raise FormatError(f"header declares {count} triangles ({expected} bytes) but file has {len(data)} bytes")
    if count == 0:
        raise FormatError("STL contains no triangles")
    records = np.frombuffer(
        data, offset=_HEADER + 4, count=count,
        dtype=np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
    )
    tri = records["v"].astype(np.float64) * float(scale) + np.asarray(translate, dtype=np.float64)
    return TriangleMesh(tri)


def write_stl(path, mesh):
    tri = np.asarray(mesh.triangles, dtype=np.float64)
    rec = np.zeros(len(tri), dtype=np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]))
    rec["v"] = tri
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    rec["normal"] = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    with open(path, "wb") as fh:
        fh.write(b"windfno binary stl".ljust(_HEADER, b" "))
        fh.write(struct.pack("<I", len(tri)))
        fh.write(rec.tobytes())


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize_footprint(mesh, spec, slice_height, mode="span"):
    """Mark cells whose center falls inside a triangle's xy-projection.

    With ``mode="span"`` only triangles whose z-range contains ``slice_height``
    are used. ``mode="extrusion"`` instead uses every triangle reaching at
    least ``slice_height``; this is the right choice for closed extruded
    building meshes, whose walls project to zero-area segments.
    Points exactly on an edge count as inside.
    """
    if mode not in ("span", "extrusion"):
        raise ContractError(f"unknown rasterization mode {mode!r}")
    tri = mesh.triangles
    zmin, zmax = tri[..., 2].min(axis=1), tri[..., 2].max(axis=1)
    if mode == "span":
        active = (zmin <= slice_height) & (zmax >= slice_height)
    else:
        active = zmax >= slice_height
    inside = np.zeros(spec.shape, dtype=bool)
    x0, y0 = spec.origin
    for (a, b, c) in tri[active]:
        xs = np.array([a[0], b[0], c[0]])
        ys = np.array([a[1], b[1], c[1]])
        i_lo = max(int(np.floor((xs.min() - x0) / spec.dx - 0.5)), 0)
        i_hi = min(int(np.ceil((xs.max() - x0) / spec.dx - 0.5)), spec.nx - 1)
        j_lo = max(int(np.floor((ys.min() - y0) / spec.dx - 0.5)), 0)
        j_hi = min(int(np.ceil((ys.max() - y0) / spec.dx - 0.5)), spec.ny - 1)
        if i_lo > i_hi or j_lo > j_hi:
            continue
        px, py = np.meshgrid(x0 + (np.arange(i_lo, i_hi + 1) + 0.5) * spec.dx,
                             y0 + (np.arange(j_lo, j_hi + 1) + 0.5) * spec.dx)
        e0 = _edge(a[0], a[1], b[0], b[1], px, py)
        e1 = _edge(b[0], b[1], c[0], c[1], px, py)
        e2 = _edge(c[0], c[1], a[0], a[1], px, py)
        hit = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
        inside[j_lo:j_hi + 1, i_lo:i_hi + 1] |= hit
    return BuildingMask(spec, inside)


def _lower_envelope_1d(f):
    """Squared-distance transform of one line: min_q (p - q)^2 + f[q] (Felzenszwalb-Huttenlocher)."""
    n = len(f)
    out = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0], z[1] = -np.inf, np.inf
    for q in range(1, n):
        p = v[k]
        s = ((f[q] + q * q) - (f[p] + p * p)) / (2 * q - 2 * p)
        while s <= z[k]:
            k -= 1
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2 * q - 2 * p)
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        d = p - v[k]
        out[p] = d * d + f[v[k]]
    return out


def squared_edt(features):
    """Exact squared Euclidean distance (in cells) from each cell to the nearest True cell.

    Two separable passes: columns, then rows. Cells are at integer positions, so
    all intermediate values are exact integers in float64.
    """
    f = np.where(features, 0.0, _FAR)
    ny, nx = f.shape
    g = np.empty_like(f)
    for i in range(nx):
        g[:, i] = _lower_envelope_1d(f[:, i])
    out = np.empty_like(f)
    for j in range(ny):
        out[j, :] = _lower_envelope_1d(g[j, :])
    return out


def sdf_cap(spec):
    return max(spec.nx, spec.ny) * spec.dx


def compute_sdf(mask):
    """Signed distance (m) between cell centers: positive outside, negative inside buildings."""
    spec = mask.spec
    inside = mask.inside
    cap = sdf_cap(spec)
    if not inside.any():
        return SdfGrid(spec, np.full(spec.shape, cap))
    if inside.all():
        return SdfGrid(spec, np.full(spec.shape, -cap))
    d_out = np.sqrt(squared_edt(inside)) * spec.dx
    d_in = np.sqrt(squared_edt(~inside)) * spec.dx
    return SdfGrid(spec, np.where(inside, -d_in, d_out))


def normalize_sdf(sdf):
    cap = sdf_cap(sdf.spec)
    return ScalarField2D(sdf.spec, np.clip(sdf.distance / cap, -1.0, 1.0))
