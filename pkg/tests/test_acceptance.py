"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The end-to-end and transform experiments train several desk-preset models and
dominate the runtime (tens of minutes on one core).
"""
import json
import time

import numpy as np
import pytest

from acceptance_log import check
from oracles import brute_sdf, direct_dft2, fd_gradient_check, spectral_conv_oracle
from windfno import autodiff as ad
from windfno import experiment as ex
from windfno import fno, metrics
from windfno.dataset import layout_for, split_indices, stitch_array, tile_array, window_starts
from windfno.fft import fft2, ifft2
from windfno.fields import GridSpec, ScalarField2D, VectorField2D
from windfno.flow import (FlowConfig, FlowState, divergence, eddy_viscosity, project_divergence_free,
                          run_simulation, step)
from windfno.geometry import BuildingMask, compute_sdf


def test_c1_fft_parseval():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_rt = worst_energy = worst_oracle = 0.0
    for n in (2, 4, 8, 16, 32, 64, 128, 256):
        for shape in ((n, n), (n, max(2, n // 2))):
            x = rng.normal(size=shape)
            X = fft2(x)
            worst_rt = max(worst_rt, np.abs(ifft2(X).real - x).max())
            parseval = abs(np.sum(np.abs(X) ** 2) / x.size - np.sum(x ** 2)) / np.sum(x ** 2)
            worst_energy = max(worst_energy, parseval)
        x = rng.normal(size=(n, n))
        total = np.sum(np.abs(fft2(x)) ** 2)
        worst_energy = max(worst_energy, abs(metrics.radial_spectrum(x).bin_energy.sum() - total) / total)
    for _ in range(5):
        x = rng.normal(size=(8, 8))
        worst_oracle = max(worst_oracle, np.abs(fft2(x) - direct_dft2(x)).max())
    dt = time.perf_counter() - t0
    ok = worst_rt <= 1e-10 and worst_energy <= 1e-10 and worst_oracle <= 1e-10 and dt < 10
    check("C1 fft/parseval", ok,
          f"roundtrip {worst_rt:.1e}, energy {worst_energy:.1e}, oracle {worst_oracle:.1e}, {dt:.1f}s")


def test_c2_spectral_conv_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        x = r.normal(size=(1, 2, 8, 8))
        wr, wi = r.normal(size=(3, 2, 2, 2)), r.normal(size=(3, 2, 2, 2))
        got = ad.spectral_conv_values(x, wr, wi)[0]
        worst = max(worst, np.abs(got - spectral_conv_oracle(x[0], wr, wi)).max())
    dt = time.perf_counter() - t0
    check("C2 spectral conv oracle", worst <= 1e-10 and dt < 30, f"max error {worst:.1e} over 100 seeds, {dt:.1f}s")


def test_c3_gradients():
    t0 = time.perf_counter()
    cfg = fno.FnoConfig(in_channels=3, out_channels=2, width=3, modes=2, layers=2, hidden=5)
    worst = {}
    for seed in range(20):
        r = np.random.default_rng(seed)
        p = {k: v + r.normal(0, 0.3, v.shape) for k, v in fno.init_params(cfg, seed).items()}
        x, y = r.normal(size=(2, 3, 8, 8)), r.normal(size=(2, 2, 8, 8))
        _, g = fno.loss_and_grad(p, x, y, cfg)
        errs = fd_gradient_check(lambda q: fno.loss_value(q, x, y, cfg), p, g, h=1e-5, rng=r, floor=1e-6)
        for name, e in errs.items():
            cls = name.split(".")[-1] if name.startswith("layer") else name
            worst[cls] = max(worst.get(cls, 0.0), e)
    dt = time.perf_counter() - t0
    classes = {"lift.w", "lift.b", "wr", "wi", "m", "b", "proj1.w", "proj1.b", "proj2.w", "proj2.b"}
    ok = set(worst) == classes and max(worst.values()) <= 1e-4 and dt < 120
    check("C3 gradients", ok, f"worst relative error {max(worst.values()):.1e} over {len(worst)} classes, {dt:.1f}s")


def test_c4_sdf_oracle():
    t0 = time.perf_counter()
    worst, lip_ok, sign_ok = 0.0, True, True
    for seed in range(200):
        r = np.random.default_rng(seed)
        inside = r.random((32, 32)) < r.uniform(0.05, 0.6)
        if not inside.any() or inside.all():
            inside[r.integers(32), r.integers(32)] = not inside.all()
        d = compute_sdf(BuildingMask.from_array(inside, 2.0)).distance
        worst = max(worst, np.abs(d - brute_sdf(inside, 2.0)).max())
        sign_ok &= bool(np.all(d[inside] < 0) and np.all(d[~inside] > 0))
        # 1-Lipschitz along axes, up to the jump of one cell across the boundary
        for ax in (0, 1):
            step_d = np.abs(np.diff(d, axis=ax))
            same = np.diff(inside.astype(int), axis=ax) == 0
            lip_ok &= bool(np.all(step_d[same] <= 2.0 + 1e-12) and np.all(step_d <= 2 * 2.0 + 1e-12))
    dt = time.perf_counter() - t0
    check("C4 sdf oracle", worst <= 1e-12 and lip_ok and sign_ok and dt < 30,
          f"max error {worst:.1e}, lipschitz {lip_ok}, sign {sign_ok}, {dt:.1f}s")


def _circular_centre(w, coord, n):
    a = 2 * np.pi * coord / n
    return (np.angle(np.sum(w * np.exp(1j * a))) % (2 * np.pi)) * n / (2 * np.pi)


def physics_metrics():
    """Numbers behind the solver criterion, as a JSON-able dict."""
    out = {}
    # (a) Taylor-Green vortex, kinetic energy decays as exp(-4 nu t) for unit wave number
    n, L, U0 = 64, 2 * np.pi, 0.05
    spec = GridSpec(n, n, L / n)
    x, y = spec.cell_centers()
    cfg = FlowConfig(boundary_mode="periodic", smagorinsky_cs=0.0, reynolds=20.0, dt=0.04, inflow_speed_ref=0.0)
    st = FlowState(VectorField2D(spec, U0 * np.sin(x) * np.cos(y), -U0 * np.cos(x) * np.sin(y)))
    ke0 = np.mean(np.asarray(st.velocity.u) ** 2 + np.asarray(st.velocity.v) ** 2)
    empty = BuildingMask.empty(spec)
    for i in range(50):
        st = step(st, empty, cfg, i)
    ratio = np.mean(np.asarray(st.velocity.u) ** 2 + np.asarray(st.velocity.v) ** 2) / ke0
    analytic = np.exp(-4.0 / cfg.reynolds * 50 * cfg.dt)
    out["taylor_green_ratio"] = float(ratio)
    out["taylor_green_rel_error"] = float(abs(ratio - analytic) / analytic)

    # (b) projection: periodic random field, channel flow past the Nii layout
    r = np.random.default_rng(5)
    vel = VectorField2D(spec, r.normal(size=(n, n)), r.normal(size=(n, n)))
    out["periodic_divergence"] = float(np.abs(divergence(project_divergence_free(vel, empty, cfg), empty, cfg)).max())
    ccfg = FlowConfig(seed=0)
    mask = ex.layout_mask("Nii")
    res = run_simulation(mask, ccfg, 20)
    fluid = ~mask.inside
    last = VectorField2D(mask.spec, res.u[-1], res.v[-1])
    out["channel_divergence"] = float(np.abs(divergence(last, mask, ccfg)).max())
    out["channel_speed_rms"] = float(np.sqrt(np.mean(res.u[-1][fluid] ** 2 + res.v[-1][fluid] ** 2)))

    # (c) passive Gaussian blob carried by a uniform periodic flow
    bspec = GridSpec(64, 64, 1.0)
    bx, by = bspec.cell_centers()
    U, V = 3.7, -2.3
    bcfg = FlowConfig(boundary_mode="periodic", smagorinsky_cs=0.0, reynolds=1e6, dt=0.1, inflow_speed_ref=0.0)
    blob = np.exp(-((bx - 20.5) ** 2 + (by - 30.5) ** 2) / (2 * 3.0 ** 2))
    st = FlowState(VectorField2D(bspec, np.full((64, 64), U), np.full((64, 64), V)), ScalarField2D(bspec, blob))
    bempty = BuildingMask.empty(bspec)
    for i in range(100):
        st = step(st, bempty, bcfg, i)
    th = np.asarray(st.theta.values)
    want = np.array([(20.5 + U * 10.0) % 64, (30.5 + V * 10.0) % 64])
    got = np.array([_circular_centre(th, bx, 64), _circular_centre(th, by, 64)])
    delta = (got - want + 32) % 64 - 32
    out["blob_centre_error_cells"] = float(np.hypot(*delta))

    # (d) uniform shear
    sspec = GridSpec(16, 16, 2.0)
    _, sy = sspec.cell_centers()
    gamma, cs = 0.3, 0.17
    nut = eddy_viscosity(VectorField2D(sspec, gamma * sy, np.zeros(sspec.shape)), cs).values
    out["shear_nut_error"] = float(np.abs(nut - (cs * sspec.dx) ** 2 * gamma).max())
    return out


@pytest.fixture(scope="module")
def physics():
    t0 = time.perf_counter()
    m = physics_metrics()
    return m, time.perf_counter() - t0


def test_c5_solver_physics(physics):
    m, dt = physics
    ok_a = m["taylor_green_rel_error"] <= 0.2
    ok_b = m["periodic_divergence"] <= 1e-8 and m["channel_divergence"] <= 1e-3 * m["channel_speed_rms"]
    ok_c = m["blob_centre_error_cells"] <= 1.0
    ok_d = m["shear_nut_error"] <= 1e-10
    check("C5 solver physics", ok_a and ok_b and ok_c and ok_d and dt < 120,
          f"TG {m['taylor_green_rel_error']:.3f}, div {m['periodic_divergence']:.1e}/"
          f"{m['channel_divergence']:.1e}, blob {m['blob_centre_error_cells']:.3f} cells, "
          f"shear {m['shear_nut_error']:.1e}, {dt:.1f}s")


def test_c6_pipeline_arithmetic():
    n_win = len(window_starts(1020, stride=2))
    field = np.random.default_rng(0).normal(size=(3, 256, 256))
    tiles, lay = tile_array(field, 64)
    exact = lay.count == 16 and tiles.shape == (3, 16, 64, 64) and np.array_equal(stitch_array(tiles, lay), field)
    split_ok = True
    for n in (n_win, n_win * 16, 7, 101, 1000):
        tr, va = split_indices(n, 42)
        split_ok &= abs(len(tr) - 0.8 * n) <= 1 and len(tr) + len(va) == n and not set(tr) & set(va)
    check("C6 pipeline arithmetic", n_win == 503 and exact and split_ok and layout_for(256, 256, 64) == lay,
          f"{n_win} windows, {lay.count} patches, split ok {split_ok}")


@pytest.fixture(scope="module")
def end_to_end():
    t0 = time.perf_counter()
    res = ex.run_end_to_end(ex.DeskSetup(), ("P-SDF", "P", "T"), "Nii")
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c7a_validation_loss(end_to_end):
    res, dt = end_to_end
    v = res["regimes"]["P-SDF"]["final_val_rel_l2"]
    check("C7a final validation relative L2", v <= 0.25, f"{v:.4f} (limit 0.25), experiment took {dt / 60:.1f} min")


@pytest.mark.slow
def test_c7b_beats_persistence(end_to_end):
    r = end_to_end[0]["regimes"]["P-SDF"]
    check("C7b MAE at 10 steps below persistence", r["mae_at_check"] < r["persistence_at_check"],
          f"model {r['mae_at_check']:.4f} vs persistence {r['persistence_at_check']:.4f} m/s")


@pytest.mark.slow
def test_c7c_regime_ordering(end_to_end):
    rg = end_to_end[0]["regimes"]
    a, b, c = (rg[k]["mae_at_horizon"] for k in ("P-SDF", "P", "T"))
    check("C7c MAE at 5 s P-SDF <= P <= T", a <= b <= c, f"{a:.4f} / {b:.4f} / {c:.4f} m/s")


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_c8_transform_orderings(seed):
    res = ex.run_transform_experiment(seed)
    c = res["cases"]
    ok_r = c["N-R"]["mean_mae"] < c["N"]["mean_mae"]
    ok_vf = c["VF"]["mean_mae"] < c["other"]["mean_mae"]
    check(f"C8 transform orderings seed {seed}", ok_r and ok_vf,
          f"N-R {c['N-R']['mean_mae']:.4f} < N {c['N']['mean_mae']:.4f}; "
          f"VF {c['VF']['mean_mae']:.4f} < other {c['other']['mean_mae']:.4f}")


def test_c9_metric_self_consistency():
    rng = np.random.default_rng(9)
    x = rng.random((64, 64)) * 5
    ssim_ok = abs(metrics.ssim(x, x) - 1.0) <= 1e-12
    s0 = metrics.radial_spectrum(x).bin_energy
    rot_ok = all(np.allclose(metrics.radial_spectrum(np.rot90(x, k)).bin_energy, s0, rtol=1e-10, atol=0)
                 for k in (1, 2, 3))
    y = x.copy()
    zero_ok = metrics.rms_stats(x, y) == (0.0, 0.0) and metrics.accumulated_abs_error(x[None], y[None])[0] == 0.0
    y[10, 20] += 1e-9
    nonzero_ok = metrics.rms_stats(x, y)[0] > 0 and metrics.accumulated_abs_error(x[None], y[None])[0] > 0
    truth = np.zeros((3, 64, 64))
    flags = {}
    for c in (0.25, 0.5, np.nextafter(0.5, 1.0), 0.75):
        flags[c] = metrics.evaluate(truth + c, truth, 0.1).threshold_exceeded
    flag_ok = flags == {0.25: False, 0.5: False, np.nextafter(0.5, 1.0): True, 0.75: True}
    check("C9 metric self-consistency", ssim_ok and rot_ok and zero_ok and nonzero_ok and flag_ok,
          f"ssim {ssim_ok}, rotation {rot_ok}, zero-iff-equal {zero_ok and nonzero_ok}, threshold {flag_ok}")


@pytest.mark.slow
def test_c10_determinism(physics, end_to_end):
    first5 = json.dumps(physics[0], sort_keys=True)
    again5 = json.dumps(physics_metrics(), sort_keys=True)
    first7 = json.dumps(end_to_end[0], sort_keys=True)
    again7 = json.dumps(ex.run_end_to_end(ex.DeskSetup(), ("P-SDF", "P", "T"), "Nii"), sort_keys=True)
    check("C10 determinism", first5 == again5 and first7 == again7,
          f"solver metrics identical {first5 == again5}, end-to-end identical {first7 == again7}")
