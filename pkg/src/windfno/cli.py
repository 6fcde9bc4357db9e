"""Command-line entry point: ``windfno <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
diverged, 5 simulation diverged.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

log = logging.getLogger("windfno")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN, EXIT_SIM = 0, 2, 3, 4, 5


def _sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path):
    with open(path, "rb") as fh:
        return _sha256_bytes(fh.read())


def _json_hash(obj):
    return _sha256_bytes(json.dumps(obj, sort_keys=True).encode())


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    from .errors import ConfigError
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("--config", "expected a JSON object")
    return data


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_mask(args, dx):
    from .experiment import layout_mask
    from .geometry import BuildingMask
    from .npyio import load_array
    if args.mask:
        arr = load_array(args.mask)
        return BuildingMask.from_array(arr > 0.5, dx)
    return layout_mask(args.layout if not args.layout.isdigit() else int(args.layout), args.grid, dx)


# commands -----------------------------------------------------------------------

def cmd_simulate(args):
    from .experiment import simulate_velocity
    from .flow import FlowConfig
    from .npyio import save_array
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = FlowConfig.from_dict(raw)
    mask = _load_mask(args, args.dx)
    series, u, v = simulate_velocity(mask, args.direction, cfg, args.frames, args.spinup, args.record_every)
    out = _out_dir(args)
    save_array(os.path.join(out, "magnitude.npy"), series.values)
    save_array(os.path.join(out, "u.npy"), u)
    save_array(os.path.join(out, "v.npy"), v)
    save_array(os.path.join(out, "mask.npy"), mask.inside.astype(float))
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": _json_hash(cfg.to_dict()),
        "direction": args.direction,
        "frames": len(series),
        "frame_dt": series.dt,
        "dx": mask.spec.dx,
        "spinup_steps": args.spinup,
        "record_every": args.record_every,
        "mask_hash": _sha256_bytes(mask.inside.tobytes()),
        "mask_source": os.path.abspath(args.mask) if args.mask else f"layout:{args.layout}",
        "velocity_axes": "u toward +column (east), v toward +row (south)",
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(series)} frames to {out}")
    return EXIT_OK


def cmd_sdf(args):
    from .geometry import BuildingMask, compute_sdf, normalize_sdf
    from .npyio import load_array, save_array
    mask = BuildingMask.from_array(load_array(args.mask) > 0.5, args.dx)
    sdf = compute_sdf(mask)
    out = args.output or os.path.join(_out_dir(args), "sdf.npy")
    save_array(out, sdf.distance)
    if args.normalized:
        save_array(args.normalized, normalize_sdf(sdf).values)
    print(f"wrote {out}")
    return EXIT_OK


def _series_from(path, dt, dx):
    from .fields import FieldSeries, GridSpec
    from .npyio import load_array
    v = load_array(path)
    if v.ndim != 3:
        from .errors import FormatError
        raise FormatError(f"{path}: expected a (T, H, W) array")
    return FieldSeries(GridSpec(v.shape[2], v.shape[1], dx), dt, v)


def _sdf_from(path, dx):
    from .fields import GridSpec
    from .geometry import SdfGrid
    from .npyio import load_array
    if not path:
        return None
    d = load_array(path)
    return SdfGrid(GridSpec(d.shape[1], d.shape[0], dx), d)


def cmd_make_dataset(args):
    from .dataset import build_dataset
    series = _series_from(args.series, args.dt, args.dx)
    ds = build_dataset(series, _sdf_from(args.sdf, args.dx), args.regime, args.split_seed, args.patch,
                       coverage=args.coverage)
    ds.source["path"] = os.path.abspath(args.series)
    ds.source["series_hash"] = _sha256_file(args.series)
    out = _out_dir(args)
    ds.save(out)
    print(f"{ds.count} samples ({len(ds.train_indices)} train / {len(ds.val_indices)} val), scale {ds.scale:.4f}")
    return EXIT_OK


def cmd_train(args):
    from dataclasses import replace
    from . import fno
    from .dataset import Dataset, in_channels
    from .errors import ConfigError
    from .train import DESK_TRAIN, PAPER_TRAIN, TrainConfig, train
    ds = Dataset.load(args.dataset)
    raw = {**(DESK_TRAIN if args.preset == "desk" else PAPER_TRAIN), **_read_json(args.config)}
    if args.epochs is not None:
        raw["epochs"] = args.epochs
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        tcfg = TrainConfig(**raw)
    except TypeError as exc:
        raise ConfigError("--config", str(exc)) from None
    mcfg = fno.preset_config(args.preset, in_channels(ds.regime))
    h = ds.inputs.shape[-1]
    if 2 * mcfg.modes > h:
        mcfg = replace(mcfg, modes=h // 2)
    params, history = train(ds, mcfg, tcfg)
    out = _out_dir(args)
    fno.save_params(os.path.join(out, "model.fno"), params, mcfg, tcfg.seed)
    with open(os.path.join(out, "train_log.jsonl"), "w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_json(os.path.join(out, "model.json"), {"scale": ds.scale, "regime": ds.regime,
                                                   "patch": ds.layout.patch if ds.layout else None,
                                                   "train": tcfg.to_dict()})
    print(f"best validation loss {min(r['val_loss'] for r in history if r['val_loss'] is not None):.5f}"
          if ds.val_indices.size else "trained")
    return EXIT_OK


def cmd_evaluate(args):
    from . import fno, metrics
    from .dataset import layout_for, regime_patched
    from .experiment import apply_transform, parse_case_id
    from .errors import ContractError
    from .geometry import normalize_sdf
    from .npyio import save_array
    from .rollout import RolloutPlan, predict_series
    case = parse_case_id(args.case)
    params, mcfg, _ = fno.load_params(args.model)
    meta_path = os.path.join(os.path.dirname(os.path.abspath(args.model)), "model.json")
    meta = _read_json(meta_path) if os.path.exists(meta_path) else {}
    scale = args.scale or meta.get("scale")
    if not scale:
        raise ContractError("evaluation needs --scale or a model.json next to the model")
    if meta.get("regime") and meta["regime"] != case.regime:
        raise ContractError(f"model was trained on {meta['regime']}, case {case} needs {case.regime}")
    truth = _series_from(args.truth, args.dt, args.dx)
    sdf = _sdf_from(args.sdf, args.dx)
    sdf_arr = normalize_sdf(sdf).values if sdf is not None else None
    truth, sdf_arr = apply_transform(truth, sdf_arr, case.transform)
    patch = args.patch or meta.get("patch")
    plan = RolloutPlan(args.horizon, case.regime, scale, sdf_arr if case.sdf else None,
                       patch if regime_patched(case.regime) else None, args.dt, args.dx)
    pred, aligned = predict_series(params, mcfg, truth, plan, args.start)
    h, w = aligned.spec.shape
    layout = layout_for(h, w, patch) if patch else None
    report = metrics.evaluate(pred, aligned, args.dt, layout=layout)
    out = _out_dir(args)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    report.write_csv(os.path.join(out, "mae.csv"), args.dt)
    save_array(os.path.join(out, "forecast.npy"), pred.values)
    _write_json(os.path.join(out, "forecast.json"), {"scale": scale, "regime": case.regime, "case": str(case),
                                                     "horizon": args.horizon, "model_sha256": _sha256_file(args.model)})
    print(f"{case}: MAE at {report.at_time:.2f} s = {report.mae_at:.4f} m/s, SSIM {report.ssim:.4f}")
    return EXIT_OK


def run_matrix(spec, out):
    """Train each listed regime once (cached by content hash) and evaluate every case."""
    from dataclasses import replace
    from . import fno
    from .errors import WindFnoError
    from .experiment import DeskSetup, apply_transform, flow_data, layout_mask, parse_case_id, rollout_errors
    from .experiment import sdf_array, train_regime
    setup = DeskSetup(**{k: (tuple(v) if k == "starts" else v) for k, v in spec.get("setup", {}).items()})
    train_city = spec.get("train_city", "Nii")
    regimes = list(spec.get("train", []))
    cases = list(spec.get("cases", []))
    os.makedirs(os.path.join(out, "models"), exist_ok=True)
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    data_cache = {}

    def data(city, direction):
        key = (city, direction)
        if key not in data_cache:
            mask = layout_mask(city, setup.grid, setup.dx)
            data_cache[key] = flow_data(mask, direction, setup) + (sdf_array(mask),)
        return data_cache[key]

    models = {}
    for regime in regimes:
        key = _json_hash({"setup": setup.to_dict(), "regime": regime, "city": train_city, "code": _code_version()})
        path = os.path.join(out, "models", f"{regime}-{key[:16]}.fno")
        scale_path = path + ".json"
        if os.path.exists(path) and os.path.exists(scale_path):
            params, mcfg, _ = fno.load_params(path)
            scale = _read_json(scale_path)["scale"]
        else:
            train_s, _, sdf = data(train_city, "W")
            params, mcfg, ds, history = train_regime(train_s, sdf, regime, setup)
            scale = ds.scale
            fno.save_params(path, params, mcfg, setup.seed)
            _write_json(scale_path, {"scale": scale, "history": history})
        models[regime] = (params, mcfg, scale)
    rows = []
    for text in cases:
        row = {"case": text}
        try:
            case = parse_case_id(text)
            if case.regime not in models:
                raise WindFnoError(f"no model trained for regime {case.regime}")
            params, mcfg, scale = models[case.regime]
            _, truth, sdf = data(case.city, case.direction)
            truth, sdf = apply_transform(truth, sdf, case.transform)
            mae, base, reports = rollout_errors(params, mcfg, case.regime, scale, truth, sdf, setup)
            rep = reports[0].to_dict()
            row.update(status="ok", mean_mae=float(mae.mean()), mae_at_horizon=float(mae[-1]),
                       persistence_at_horizon=float(base[-1]), max_rms=rep["max_rms"], mean_rms=rep["mean_rms"],
                       ssim=rep["ssim"], threshold_exceeded=rep["threshold_exceeded"])
            _write_json(os.path.join(out, "reports", f"{text}.json"),
                        {"case": text, "mae_curve": [float(v) for v in mae], "reports": [r.to_dict() for r in reports]})
        except WindFnoError as exc:
            row.update(status="failed", error=str(exc))
        rows.append(row)
    _write_json(os.path.join(out, "summary.json"), {"setup": setup.to_dict(), "rows": rows})
    _write_summary_csv(os.path.join(out, "summary.csv"), rows)
    return rows


def _write_summary_csv(path, rows):
    import csv
    cols = ["case", "status", "mean_mae", "mae_at_horizon", "persistence_at_horizon", "max_rms", "mean_rms", "ssim",
            "threshold_exceeded", "error"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, cols, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


def _code_version():
    from . import __version__
    return __version__


def cmd_matrix(args):
    spec = _read_json(args.config)
    if args.seed is not None:
        spec.setdefault("setup", {})["seed"] = args.seed
    if args.preset:
        spec.setdefault("setup", {}).setdefault("preset", args.preset)
    rows = run_matrix(spec, _out_dir(args))
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cases, {len(failed)} failed")
    for r in failed:
        print(f"  {r['case']}: {r['error']}")
    return EXIT_OK


def cmd_report(args):
    out = _out_dir(args)
    path = os.path.join(out, "summary.json")
    if not os.path.exists(path):
        from .errors import FormatError
        raise FormatError(f"{path} not found; run the matrix command first")
    rows = _read_json(path)["rows"]
    _write_summary_csv(os.path.join(out, "summary.csv"), rows)
    print(f"{'case':<24} {'status':<7} {'mean MAE':>9} {'MAE end':>9} {'SSIM':>7}")
    for r in rows:
        if r["status"] == "ok":
            print(f"{r['case']:<24} {'ok':<7} {r['mean_mae']:9.4f} {r['mae_at_horizon']:9.4f} {r['ssim']:7.4f}")
        else:
            print(f"{r['case']:<24} failed  {r.get('error', '')}")
    return EXIT_OK


# parser -------------------------------------------------------------------------

def _add_common(parser, suppress):
    # subcommands repeat the global flags with suppressed defaults so that a
    # flag given before the subcommand is not reset by the subparser
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="JSON configuration file")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--seed", type=int, default=d(None))
    parser.add_argument("--deterministic", action="store_true", default=d(False), help="pin BLAS to one thread")
    parser.add_argument("--preset", choices=("desk", "paper"), default=d("desk"))
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)

    p = argparse.ArgumentParser(prog="windfno",
                                description="Wind-field simulation and Fourier neural operator forecasting")
    _add_common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the flow solver")
    s.add_argument("--mask", help=".npy building mask (nonzero = building)")
    s.add_argument("--layout", default="Nii", help="built-in layout name or integer seed when no mask is given")
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--dx", type=float, default=2.0)
    s.add_argument("--frames", type=int, default=600)
    s.add_argument("--spinup", type=int, default=100)
    s.add_argument("--record-every", type=int, default=1)
    s.add_argument("--direction", choices=("W", "N"), default="W")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sdf", parents=[common], help="signed distance field of a mask")
    s.add_argument("--mask", required=True)
    s.add_argument("--dx", type=float, default=2.0)
    s.add_argument("--output", help="distance file (m); default <out>/sdf.npy")
    s.add_argument("--normalized", help="optional path for the [-1, 1] normalized field")
    s.set_defaults(func=cmd_sdf)

    s = sub.add_parser("make-dataset", parents=[common], help="window, tile and split a series")
    s.add_argument("--series", required=True)
    s.add_argument("--sdf", help="distance field .npy (m)")
    s.add_argument("--regime", choices=("T", "T-SDF", "P", "P-SDF"), required=True)
    s.add_argument("--patch", type=int, default=64)
    s.add_argument("--coverage", type=float, default=1.0)
    s.add_argument("--split-seed", type=int, default=42)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--dx", type=float, default=2.0)
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("train", parents=[common], help="train an FNO on a dataset directory")
    s.add_argument("--dataset", required=True)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="roll out a model on one case")
    s.add_argument("--model", required=True)
    s.add_argument("--case", required=True, help="case id such as W-Nii-P-SDF or N-Nii-P-SDF-R")
    s.add_argument("--truth", required=True)
    s.add_argument("--sdf")
    s.add_argument("--horizon", type=int, default=50)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--scale", type=float)
    s.add_argument("--patch", type=int)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--dx", type=float, default=2.0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("matrix", parents=[common], help="train regimes and evaluate a list of cases")
    s.set_defaults(func=cmd_matrix)

    s = sub.add_parser("report", parents=[common], help="print the summary table of a matrix run")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .errors import (ConfigError, ContractError, EmptyDatasetError, FormatError, SimulationDiverged,
                         TrainingDiverged, WindFnoError)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_SIM
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (FormatError, EmptyDatasetError, ContractError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except WindFnoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
