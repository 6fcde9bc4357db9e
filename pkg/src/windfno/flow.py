"""Desk-scale 2D incompressible solver used to generate wind-field training data.

One step is a fractional step: semi-Lagrangian advection, explicit diffusion
with Smagorinsky eddy viscosity, optional Boussinesq buoyancy, and a pressure
projection. Velocities are cell-centered on the same grid as the building
mask; obstacle cells are staircase blocks held at zero velocity.

Units: grid spacing in meters, velocity in m/s, time in seconds. The
molecular viscosity is ``1 / reynolds`` in m^2/s.

Channel boundaries: power-law inflow through the west edge (column 0 side),
zero-gradient outflow on the east edge, free-slip walls on the two
remaining edges. The inflow profile coordinate runs from the last row
(bottom edge, ``h = dx/2``) to the first row (top edge, ``h = H - dx/2``).
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, SimulationDiverged
from .fft import fft2, fftfreq_int, ifft2, is_power_of_two
from .fields import FieldSeries, GridSpec, ScalarField2D, VectorField2D
from .geometry import BuildingMask

log = logging.getLogger(__name__)

TURBULENT_PRANDTL = 0.9
CONFIG_KEYS = (
    "reynolds", "grashof", "prandtl", "smagorinsky_cs", "dt", "inflow_speed_ref",
    "inflow_exponent", "boundary_mode", "projection_iters", "projection_tol", "seed",
)


@dataclass(frozen=True)
class FlowConfig:
    reynolds: float = 1.0e4
    grashof: float = 0.0
    prandtl: float = 0.71
    smagorinsky_cs: float = 0.17
    dt: float = 0.1
    inflow_speed_ref: float = 7.8
    inflow_exponent: float = 0.25
    boundary_mode: str = "channel"
    projection_iters: int = 2000
    projection_tol: float = 1.0e-3
    seed: int = 0

    def __post_init__(self):
        # smagorinsky_cs == 0 switches the eddy viscosity off; any other value
        # must sit in the usual 0.1-0.24 band.
        cs = self.smagorinsky_cs
        if not (cs == 0.0 or 0.1 <= cs <= 0.24):
            raise ConfigError("smagorinsky_cs", f"must be 0 (off) or within [0.1, 0.24], got {cs}")
        for key in ("reynolds", "prandtl", "dt", "projection_tol"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        if self.grashof < 0:
            raise ConfigError("grashof", "must be non-negative")
        if self.inflow_speed_ref < 0:
            raise ConfigError("inflow_speed_ref", "must be non-negative")
        if self.boundary_mode not in ("periodic", "channel"):
            raise ConfigError("boundary_mode", f"must be 'periodic' or 'channel', got {self.boundary_mode!r}")
        if int(self.projection_iters) < 1:
            raise ConfigError("projection_iters", "must be at least 1")

    @property
    def periodic(self):
        return self.boundary_mode == "periodic"

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            try:
                if f.name == "boundary_mode":
                    value = str(value)
                elif f.name in ("projection_iters", "seed"):
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError
                    value = int(value)
                else:
                    if isinstance(value, bool):
                        raise TypeError
                    value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f.name, f"invalid value {value!r}") from None
            kwargs[f.name] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<document>", "expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FlowState:
    velocity: VectorField2D
    theta: ScalarField2D | None = None
    time: float = 0.0
    # previous pressure solution, used only to warm-start the next solve
    pressure: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class StepDiagnostics:
    step: int
    projection_iters: int
    divergence: float
    converged: bool
    substeps: int = 1


# ---------------------------------------------------------------------------
# stencils and boundary padding


def inflow_profile(spec, cfg):
    """Power-law inflow speed for each row (m/s)."""
    h = (spec.ny - np.arange(spec.ny) - 0.5) * spec.dx
    return cfg.inflow_speed_ref * (h / (spec.ny * spec.dx)) ** cfg.inflow_exponent


def _pad_velocity(u, v, cfg, profile):
    if cfg.periodic:
        return np.pad(u, 1, mode="wrap"), np.pad(v, 1, mode="wrap")
    up = np.pad(u, 1, mode="edge")
    vp = np.pad(v, 1, mode="edge")
    # inflow and wall values sit on the boundary faces, so ghosts mirror about them
    up[1:-1, 0] = 2.0 * profile - u[:, 0]
    vp[1:-1, 0] = -v[:, 0]
    # free-slip: normal component mirrors with opposite sign
    vp[0, 1:-1] = -v[0]
    vp[-1, 1:-1] = -v[-1]
    return up, vp


def _pad_scalar(a, periodic):
    return np.pad(a, 1, mode="wrap" if periodic else "edge")


def _laplacian_padded(p, dx):
    return (p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4.0 * p[1:-1, 1:-1]) / (dx * dx)


def _strain_rate(u, v, dx, periodic):
    if periodic:
        dudx = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) / (2 * dx)
        dudy = (np.roll(u, -1, 0) - np.roll(u, 1, 0)) / (2 * dx)
        dvdx = (np.roll(v, -1, 1) - np.roll(v, 1, 1)) / (2 * dx)
        dvdy = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) / (2 * dx)
    else:
        dudy, dudx = np.gradient(u, dx)
        dvdy, dvdx = np.gradient(v, dx)
    sxy = 0.5 * (dudy + dvdx)
    return np.sqrt(2.0 * (dudx ** 2 + dvdy ** 2 + 2.0 * sxy ** 2))


def eddy_viscosity(velocity, cs, dx=None, periodic=False):
    """Smagorinsky eddy viscosity ``(cs * dx)**2 * |S|`` with ``|S| = sqrt(2 S_ij S_ij)``."""
    dx = velocity.spec.dx if dx is None else dx
    s = _strain_rate(velocity.u, velocity.v, dx, periodic)
    return ScalarField2D(velocity.spec, (cs * dx) ** 2 * s)


def _bilinear(a, x, y, periodic):
    """Sample ``a`` at fractional index coordinates (x = column, y = row)."""
    ny, nx = a.shape
    if periodic:
        x = np.mod(x, nx)
        y = np.mod(y, ny)
    else:
        x = np.clip(x, 0.0, nx - 1)
        y = np.clip(y, 0.0, ny - 1)
    i0 = np.floor(x).astype(np.int64)
    j0 = np.floor(y).astype(np.int64)
    fx = x - i0
    fy = y - j0
    if periodic:
        i0 %= nx
        j0 %= ny
        i1 = (i0 + 1) % nx
        j1 = (j0 + 1) % ny
    else:
        i0 = np.minimum(i0, nx - 1)
        j0 = np.minimum(j0, ny - 1)
        i1 = np.minimum(i0 + 1, nx - 1)
        j1 = np.minimum(j0 + 1, ny - 1)
    top = a[j0, i0] * (1 - fx) + a[j0, i1] * fx
    bot = a[j1, i0] * (1 - fx) + a[j1, i1] * fx
    return top * (1 - fy) + bot * fy


def _departure(u, v, dt, dx):
    ny, nx = u.shape
    jj, ii = np.meshgrid(np.arange(ny, dtype=np.float64), np.arange(nx, dtype=np.float64), indexing="ij")
    return ii - u * dt / dx, jj - v * dt / dx


def semi_lagrangian_advect(field, velocity, dt, periodic=False):
    """Carry ``field`` along ``velocity`` for ``dt`` seconds.

    Each cell takes the bilinearly interpolated value at its departure point
    ``x - U(x) dt``. Departure points wrap in periodic mode and are clamped
    to the grid otherwise.
    """
    if field.spec.shape != velocity.spec.shape:
        raise ContractError("field and velocity grids differ")
    x, y = _departure(velocity.u, velocity.v, dt, field.spec.dx)
    return ScalarField2D(field.spec, _bilinear(field.values, x, y, periodic))


# ---------------------------------------------------------------------------
# pressure projection


class _DivergenceOperator:
    """Central-difference divergence ``div(w) = M w + b`` restricted to fluid cells.

    ``w`` stacks u then v over all cells. Obstacle velocities are known zeros,
    so their columns are empty and a projection never moves them.
    """

    def __init__(self, spec, inside, periodic):
        ny, nx = spec.shape
        n = nx * ny
        self.shape = (ny, nx)
        self.fluid = np.flatnonzero(~inside.ravel())
        self.periodic = periodic
        row_of = -np.ones(n, dtype=np.int64)
        row_of[self.fluid] = np.arange(self.fluid.size)
        solid = inside.ravel()
        h = 0.5 / spec.dx
        jj, ii = np.divmod(self.fluid, nx)
        rows, cols, vals = [], [], []

        def add(mask, r, c, val):
            keep = mask & ~solid[c % n]
            rows.append(r[keep])
            cols.append(c[keep] if np.ndim(c) else c)
            vals.append(np.broadcast_to(val, keep.shape)[keep])

        r = row_of[self.fluid]
        ones = np.ones_like(r, dtype=bool)
        if periodic:
            east = jj * nx + (ii + 1) % nx
            west = jj * nx + (ii - 1) % nx
            south = ((jj + 1) % ny) * nx + ii
            north = ((jj - 1) % ny) * nx + ii
            add(ones, r, east, h)
            add(ones, r, west, -h)
            add(ones, r, n + south, h)
            add(ones, r, n + north, -h)
        else:
            inner_e = ii < nx - 1
            inner_w = ii > 0
            inner_s = jj < ny - 1
            inner_n = jj > 0
            self_u = jj * nx + ii
            add(inner_e, r, jj * nx + np.minimum(ii + 1, nx - 1), h)
            add(~inner_e, r, self_u, h)  # outflow ghost copies the last column
            add(inner_w, r, jj * nx + np.maximum(ii - 1, 0), -h)
            add(~inner_w, r, self_u, h)  # inflow ghost 2*U_in - u
            add(inner_s, r, n + np.minimum(jj + 1, ny - 1) * nx + ii, h)
            add(~inner_s, r, n + self_u, h)  # wall ghost v = -v
            add(inner_n, r, n + np.maximum(jj - 1, 0) * nx + ii, -h)
            add(~inner_n, r, n + self_u, h)
            self.inflow_rows = r[~inner_w]
            self.inflow_j = jj[~inner_w]
        # obstacle columns were dropped by ``add``; entries referring to the
        # second (v) block carry an offset of n so the mod above checks the cell
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.fluid.size, 2 * n),
        )
        M.sum_duplicates()
        self.M = M
        self.MT = M.T.tocsr()
        self.A = (M @ self.MT).tocsr()
        diag = self.A.diagonal()
        self.inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
        self.h = h

    def offset(self, profile):
        b = np.zeros(self.fluid.size)
        if not self.periodic:
            np.add.at(b, self.inflow_rows, -2.0 * self.h * profile[self.inflow_j])
        return b

    def divergence(self, u, v, b):
        return self.M @ np.concatenate((u.ravel(), v.ravel())) + b


_OPERATORS: dict = {}


def _operator(spec, inside, periodic):
    key = (spec.nx, spec.ny, spec.dx, periodic, inside.tobytes())
    op = _OPERATORS.get(key)
    if op is None:
        if len(_OPERATORS) > 16:
            _OPERATORS.clear()
        op = _OPERATORS[key] = _DivergenceOperator(spec, inside, periodic)
    return op


def _profile_for(spec, cfg):
    return np.zeros(spec.ny) if cfg.periodic else inflow_profile(spec, cfg)


def divergence(velocity, mask, cfg):
    """Discrete divergence (1/s) on the solver's stencil; zero on obstacle cells."""
    spec = velocity.spec
    op = _operator(spec, mask.inside, cfg.periodic)
    d = op.divergence(velocity.u, velocity.v, op.offset(_profile_for(spec, cfg)))
    out = np.zeros(spec.nx * spec.ny)
    out[op.fluid] = d
    return out.reshape(spec.shape)


def _spectral_projection(u, v, dx):
    ny, nx = u.shape
    sx = np.sin(2 * np.pi * fftfreq_int(nx) / nx)[None, :] / dx
    sy = np.sin(2 * np.pi * fftfreq_int(ny) / ny)[:, None] / dx
    uh, vh = fft2(u), fft2(v)
    s2 = sx * sx + sy * sy
    # div_hat = i (sx uh + sy vh); removing its component along (sx, sy)
    coef = np.where(s2 > 1e-30, (sx * uh + sy * vh) / np.where(s2 > 1e-30, s2, 1.0), 0.0)
    return ifft2(uh - sx * coef).real, ifft2(vh - sy * coef).real


def _pcg(op, rhs, x0, tol, max_iter):
    """Jacobi-preconditioned CG on ``A x = rhs``; stops on the max-norm of the residual."""
    A, inv_d = op.A, op.inv_diag
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - A @ x
    if np.max(np.abs(r), initial=0.0) <= tol:
        return x, 0, True
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            return x, it, False
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.max(np.abs(r)) <= tol:
            return x, it, True
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter, False


def _project_arrays(u, v, spec, inside, cfg, profile, guess=None):
    periodic = cfg.periodic
    if periodic and not inside.any() and is_power_of_two(spec.nx) and is_power_of_two(spec.ny):
        u2, v2 = _spectral_projection(u, v, spec.dx)
        return u2, v2, None, 0, True
    op = _operator(spec, inside, periodic)
    rhs = op.divergence(u, v, op.offset(profile))
    lam, iters, ok = _pcg(op, rhs, guess, cfg.projection_tol, int(cfg.projection_iters))
    corr = op.MT @ lam
    n = u.size
    u2 = u - corr[:n].reshape(u.shape)
    v2 = v - corr[n:].reshape(v.shape)
    u2[inside] = 0.0
    v2[inside] = 0.0
    return u2, v2, lam, iters, ok


def project_divergence_free(velocity, mask, cfg, diagnostics=None):
    """Remove the divergent part of ``velocity``.

    The result is the orthogonal projection onto fields whose discrete
    divergence vanishes (spectrally exact for periodic obstacle-free grids,
    conjugate-gradient to ``cfg.projection_tol`` otherwise). Non-convergence
    is recorded in ``diagnostics`` (a dict) rather than raised.
    """
    spec = velocity.spec
    u = np.array(velocity.u)
    v = np.array(velocity.v)
    u[mask.inside] = 0.0
    v[mask.inside] = 0.0
    u2, v2, _, iters, ok = _project_arrays(u, v, spec, mask.inside, cfg, _profile_for(spec, cfg))
    if diagnostics is not None:
        diagnostics.update(iterations=iters, converged=ok)
    return VectorField2D(spec, u2, v2)


# ---------------------------------------------------------------------------
# time stepping


def _diffusion_substeps(dt, dx, nu_max):
    limit = dx * dx / (4.0 * nu_max) if nu_max > 0 else math.inf
    if dt <= limit:
        return 1
    n = int(math.ceil(dt / limit))
    warnings.warn(f"explicit diffusion unstable at dt={dt}; using {n} substeps", RuntimeWarning, stacklevel=3)
    return n


def step(state, mask, cfg, step_index=0, diagnostics=None):
    """Advance ``state`` by one time step ``cfg.dt``."""
    spec = state.velocity.spec
    if mask.spec.shape != spec.shape:
        raise ContractError("mask and state grids differ")
    inside = mask.inside
    periodic = cfg.periodic
    dt, dx = cfg.dt, spec.dx
    profile = _profile_for(spec, cfg)
    u, v = np.array(state.velocity.u), np.array(state.velocity.v)
    theta = None if state.theta is None else np.array(state.theta.values)

    nu_t = (cfg.smagorinsky_cs * dx) ** 2 * _strain_rate(u, v, dx, periodic) if cfg.smagorinsky_cs else 0.0

    # (1) semi-Lagrangian advection on ghost-padded arrays
    up, vp = _pad_velocity(u, v, cfg, profile)
    x, y = _departure(u, v, dt, dx)
    ua = _bilinear(up, x + 1, y + 1, False) if not periodic else _bilinear(u, x, y, True)
    va = _bilinear(vp, x + 1, y + 1, False) if not periodic else _bilinear(v, x, y, True)
    if periodic and not inside.any():
        # bilinear remapping is not conservative; restore the mean mode
        ua += u.mean() - ua.mean()
        va += v.mean() - va.mean()
    if theta is not None:
        tp = _pad_scalar(theta, periodic)
        theta = _bilinear(tp, x + 1, y + 1, False) if not periodic else _bilinear(theta, x, y, True)
    u, v = ua, va
    u[inside] = 0.0
    v[inside] = 0.0

    # (2) explicit diffusion, substepped if the stability bound is violated
    nu = 1.0 / cfg.reynolds + nu_t
    nu_max = float(np.max(nu))
    kappa = 1.0 / (cfg.reynolds * cfg.prandtl) + nu_t / TURBULENT_PRANDTL
    nsub = _diffusion_substeps(dt, dx, max(nu_max, float(np.max(kappa))) if theta is not None else nu_max)
    h = dt / nsub
    for _ in range(nsub):
        up, vp = _pad_velocity(u, v, cfg, profile)
        u = u + h * nu * _laplacian_padded(up, dx)
        v = v + h * nu * _laplacian_padded(vp, dx)
        u[inside] = 0.0
        v[inside] = 0.0
        if theta is not None:
            theta = theta + h * kappa * _laplacian_padded(_pad_scalar(theta, periodic), dx)

    # (3) buoyancy
    if theta is not None and cfg.grashof:
        v = v - dt * (cfg.grashof / cfg.reynolds ** 2) * theta
        v[inside] = 0.0

    # (4)-(6) boundary data enters through the projection offset; obstacles re-zeroed
    u, v, lam, iters, ok = _project_arrays(u, v, spec, inside, cfg, profile, state.pressure)

    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or (
        theta is not None and not np.all(np.isfinite(theta))
    ):
        raise SimulationDiverged(step_index)
    if diagnostics is not None:
        div = 0.0
        if lam is not None:
            op = _operator(spec, inside, periodic)
            div = float(np.max(np.abs(op.divergence(u, v, op.offset(profile))), initial=0.0))
        diagnostics.append(StepDiagnostics(step_index, iters, div, ok, nsub))
    return FlowState(
        VectorField2D(spec, u, v),
        None if theta is None else ScalarField2D(spec, theta),
        state.time + dt,
        lam,
    )


def initial_state(mask, cfg, noise=0.05, with_theta=False):
    """Inflow profile everywhere (zero in periodic mode) plus seeded perturbations."""
    spec = mask.spec
    rng = np.random.default_rng(cfg.seed)
    if cfg.periodic:
        u = np.zeros(spec.shape)
    else:
        u = np.repeat(inflow_profile(spec, cfg)[:, None], spec.nx, axis=1)
    scale = noise * cfg.inflow_speed_ref
    u = u + scale * rng.standard_normal(spec.shape)
    v = scale * rng.standard_normal(spec.shape)
    u[mask.inside] = 0.0
    v[mask.inside] = 0.0
    theta = ScalarField2D(spec, np.zeros(spec.shape)) if with_theta else None
    return FlowState(VectorField2D(spec, u, v), theta, 0.0)


@dataclass
class SimulationResult:
    magnitude: FieldSeries
    u: np.ndarray  # (T, ny, nx)
    v: np.ndarray
    times: np.ndarray
    diagnostics: list

    @property
    def velocity_frames(self):
        spec = self.magnitude.spec
        return [VectorField2D(spec, a, b) for a, b in zip(self.u, self.v)]


def run_simulation(mask, cfg, n_steps, record_every=1, state=None, noise=0.05):
    """Integrate ``n_steps`` steps and record the flow every ``record_every`` steps."""
    if n_steps < 1 or record_every < 1:
        raise ContractError("n_steps and record_every must be at least 1")
    if state is None:
        state = initial_state(mask, cfg, noise=noise)
    us, vs, times, diags = [], [], [], []
    for n in range(1, n_steps + 1):
        state = step(state, mask, cfg, step_index=n, diagnostics=diags)
        if n % record_every == 0:
            us.append(np.array(state.velocity.u))
            vs.append(np.array(state.velocity.v))
            times.append(state.time)
    bad = [d for d in diags if not d.converged]
    if bad:
        log.warning("pressure solve missed tolerance on %d of %d steps", len(bad), len(diags))
    u, v = np.stack(us), np.stack(vs)
    series = FieldSeries(mask.spec, cfg.dt * record_every, np.hypot(u, v))
    return SimulationResult(series, u, v, np.array(times), diags)
