"""Command-line interface: gen, train, eval, export.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import fileio, geometry, plotting
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .data import KINDS, PointCloud, SyntheticSurfaceSpec, generate
from .losses import PRESETS, LossWeights
from .metrics import OLAP_THRESHOLDS, distortion_maps, evaluate_atlas
from .trainer import TrainConfig, TrainingDiverged, fit

log = logging.getLogger("diffpatch")

EXIT_USAGE = 2
EXIT_NUMERIC = 3

CLOUD_NAME = "cloud.ply"
AREA_NAME = "area.txt"


class UsageError(Exception):
    """Bad flags or unusable input; maps to exit code 2."""


# --------------------------------------------------------------------------
# helpers


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc.strerror or exc}") from None
    return out


def _float_list(text: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("thresholds must be positive")
    return vals


def _load_target(args) -> tuple[PointCloud, float | None]:
    """Cloud and optional GT area from --data DIR or --cloud/--area."""
    cloud_path, area = args.cloud, None
    if args.data:
        cloud_path = cloud_path or Path(args.data) / CLOUD_NAME
        sidecar = Path(args.data) / AREA_NAME
        if sidecar.exists():
            area = fileio.read_area(sidecar)
    if cloud_path is None:
        raise UsageError("give --data DIR or --cloud FILE")
    if not Path(cloud_path).exists():
        raise UsageError(f"no such point cloud: {cloud_path}")
    if getattr(args, "area", None) is not None:
        area = args.area
        if not area > 0:
            raise UsageError("--area must be positive")
    cloud = fileio.load_cloud(cloud_path)
    if len(cloud) == 0:
        raise UsageError(f"{cloud_path} holds no points")
    return cloud, area


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


_CFG_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}


def _coerce(key, value):
    kind = _CFG_TYPES.get(key, "float")
    try:
        if "int" in str(kind):
            return int(value)
        if "bool" in str(kind):
            return str(value).lower() in ("1", "true", "yes", "on")
        if "str" in str(kind):
            return str(value)
        return float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def build_config(args) -> TrainConfig:
    """Preset, then config file, then explicit flags (later wins)."""
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
    weights = asdict(PRESETS[args.preset])
    settings = {}
    if args.config:
        for key, value in read_config(args.config).items():
            if key in _WEIGHT_KEYS:
                weights[key] = _coerce(key, value)
            elif key in _CFG_TYPES and key != "weights":
                settings[key] = _coerce(key, value)
            else:
                raise UsageError(f"{args.config}: unknown key {key!r}")
    for key in _WEIGHT_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            weights[key] = val
    for key in ("n_patches", "points_per_patch", "steps", "lr", "seed", "latent_dim",
                "hidden_layers", "width", "eval_interval", "converge_window"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    try:
        return TrainConfig(weights=LossWeights(**weights), **settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _print_table(row: dict, stream=None) -> None:
    stream = stream or sys.stdout
    width = max(len(k) for k in row)
    for k, v in row.items():
        text = f"{v:.6g}" if isinstance(v, float) else str(v)
        print(f"{k:<{width}}  {text}", file=stream)


def _open_checkpoint(args):
    expect = {k: getattr(args, k, None) for k in ("K", "W")}
    try:
        read_header(args.checkpoint)
        return load_checkpoint(args.checkpoint, expect)
    except FileNotFoundError:
        raise UsageError(f"no such checkpoint: {args.checkpoint}") from None
    except CheckpointError as exc:
        raise UsageError(f"incompatible checkpoint: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    try:
        spec = SyntheticSurfaceSpec(args.kind, n=args.n, noise=args.noise, seed=args.seed,
                                    amplitude=args.amplitude, frequency=args.frequency,
                                    radius=args.radius)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    cloud, area = generate(spec)
    fileio.save_ply(out / CLOUD_NAME, cloud)
    fileio.write_area(out / AREA_NAME, area)
    print(f"wrote {len(cloud)} points ({spec.kind}) to {out / CLOUD_NAME}; area {area:.6g}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    cloud, area = _load_target(args)
    if cfg.weights.alpha_ol > 0 and area is None:
        raise UsageError("the overlap term needs the GT area: give --area or a dataset with area.txt")
    out = _out_dir(args.out)
    cfg = replace(cfg, checkpoint_path=str(out / "model.ckpt"), log_path=str(out / "log.csv"))
    atlas = state = None
    if args.resume:
        atlas, state = load_checkpoint(args.resume, {"K": cfg.n_patches, "W": cfg.width})
    (out / "config.json").write_text(json.dumps(
        {**{k: v for k, v in asdict(cfg).items() if k != "weights"},
         "weights": asdict(cfg.weights), "preset": args.preset}, indent=2) + "\n")
    try:
        result = fit(cloud, cfg, area, atlas=atlas, state=state)
    except TrainingDiverged as exc:
        diag = out / "diagnostics.json"
        diag.write_text(json.dumps({"step": exc.step, "terms": exc.terms,
                                    "patch": exc.patch}, indent=2, default=repr) + "\n")
        print(f"error: {exc}; diagnostics in {diag}", file=sys.stderr)
        return EXIT_NUMERIC
    with open(out / "log.csv") as fh:
        plotting.loss_curves(list(csv.DictReader(fh)), out / "loss.png")
    row = result.metrics.row()
    _write_rows(out / "metrics.csv", [row])
    print(f"stopped after {result.state.step} steps ({result.stop_reason})")
    _print_table(row)
    return 0


def cmd_eval(args) -> int:
    atlas, _ = _open_checkpoint(args)
    cloud, area = _load_target(args)
    if not 0 <= args.shape < atlas.n_shapes:
        raise UsageError(f"shape {args.shape} out of range (checkpoint holds {atlas.n_shapes})")
    out = _out_dir(args.out)
    report, _ = evaluate_atlas(atlas, cloud, shape=args.shape, n_eval=args.n_eval,
                               thresholds=args.olap_t)
    row = report.row()
    _print_table(row)
    _write_rows(out / "metrics.csv", [row])
    _write_rows(out / "areas.csv", [{"patch": k, "area": a} for k, a in enumerate(report.patch_areas)]
                + [{"patch": "sum", "area": float(sum(report.patch_areas))}])
    plotting.overlap_curve(report.m_olap, out / "olap.png")
    plotting.patch_areas(report.patch_areas, out / "areas.png", area)
    if args.distortion_maps:
        ddir = _out_dir(args.distortion_maps)
        K = atlas.n_patches
        maps = distortion_maps([atlas.patch(k, args.shape) for k in range(K)], [None] * K,
                               args.map_resolution)
        for k, dm in enumerate(maps):
            for name, grid in dm.items():
                np.savetxt(ddir / f"patch{k}_{name}.csv", grid, delimiter=",", fmt="%.17g")
            np.savetxt(ddir / f"patch{k}_degenerate.csv", dm.degenerate.astype(int),
                       delimiter=",", fmt="%d")
            plotting.distortion_figure(dm, ddir / f"patch{k}.png", title=f"patch {k}")
    return 0


def cmd_export(args) -> int:
    if args.resolution < 2:
        raise UsageError("--resolution must be at least 2")
    atlas, _ = _open_checkpoint(args)
    from .surface import lattice_uv

    uv = lattice_uv(args.resolution)
    parts = [geometry.evaluate(atlas.patch(k, args.shape), None, uv) for k in range(atlas.n_patches)]
    points = np.concatenate([sp.position for sp in parts])
    normals = np.concatenate([sp.normal for sp in parts])
    degenerate = np.concatenate([sp.degenerate for sp in parts])
    # degenerate points carry a zero normal in the data; give the file a valid
    # unit vector and the flag column instead
    normals[degenerate] = (0.0, 0.0, 1.0)
    extras = {"degenerate": degenerate.astype(float)}
    if args.curvature:
        extras["c_mean"] = np.concatenate([sp.c_mean for sp in parts])
        extras["c_gauss"] = np.concatenate([sp.c_gauss for sp in parts])
    ids = np.repeat(np.arange(atlas.n_patches), len(uv))
    out = Path(args.out)
    _out_dir(out.parent if str(out.parent) else ".")
    fileio.save_ply(out, PointCloud(points, normals, ids, extras))
    print(f"wrote {len(points)} points from {atlas.n_patches} patches to {out}"
          f" ({int(degenerate.sum())} degenerate)")
    return 0


# --------------------------------------------------------------------------
# parser


def _target_flags(p):
    p.add_argument("--data", help=f"dataset directory holding {CLOUD_NAME} and optionally {AREA_NAME}")
    p.add_argument("--cloud", help="point cloud file (.ply or .obj); overrides --data")
    p.add_argument("--area", type=float, help="ground-truth surface area; overrides the sidecar")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffpatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic ground-truth point cloud")
    g.add_argument("--kind", required=True, choices=KINDS, help="surface type")
    g.add_argument("--n", type=int, default=8000, help="number of points (default 8000)")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--noise", type=float, default=0.0, help="std. dev. of Gaussian point noise")
    g.add_argument("--amplitude", type=float, default=0.1, help="wavy-cloth amplitude")
    g.add_argument("--frequency", type=float, default=1.0, help="wavy-cloth frequency")
    g.add_argument("--radius", type=float, default=1.0, help="sphere-cap / cylinder radius")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit a patch atlas to one point cloud")
    _target_flags(t)
    t.add_argument("--preset", default="ours", help=f"loss weights: {', '.join(PRESETS)}")
    t.add_argument("--config", help="flat key = value file with TrainConfig / weight fields")
    t.add_argument("--K", dest="n_patches", type=int, help="number of patches")
    t.add_argument("--M", dest="points_per_patch", type=int, help="UV samples per patch and step")
    t.add_argument("--steps", type=int, help="step budget")
    t.add_argument("--lr", type=float, help="Adam learning rate")
    t.add_argument("--seed", type=int, help="seed for initialisation and UV sampling")
    t.add_argument("--latent-dim", dest="latent_dim", type=int, help="codeword size D")
    t.add_argument("--hidden-layers", dest="hidden_layers", type=int, help="hidden layers H")
    t.add_argument("--width", type=int, help="hidden width W")
    t.add_argument("--eval-interval", dest="eval_interval", type=int,
                   help="checkpoint and log every this many steps")
    t.add_argument("--converge-window", dest="converge_window", type=int,
                   help="moving-average window of the stopping rule (0 disables)")
    for name in sorted(_WEIGHT_KEYS):
        t.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float,
                       help=f"override {name} of the preset")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint against a point cloud")
    e.add_argument("--checkpoint", required=True, help="model checkpoint")
    _target_flags(e)
    e.add_argument("--shape", type=int, default=0, help="codeword index")
    e.add_argument("--olap-t", type=_float_list, default=list(OLAP_THRESHOLDS),
                   help="comma-separated overlap thresholds (default 0.01,0.05,0.1)")
    e.add_argument("--n-eval", type=int, help="UV grid points per patch (default: N / K)")
    e.add_argument("--K", type=int, help="reject checkpoints without this many patches")
    e.add_argument("--W", type=int, help="reject checkpoints without this hidden width")
    e.add_argument("--distortion-maps", help="directory for per-patch D_* grids and figures")
    e.add_argument("--map-resolution", type=int, default=64, help="distortion-map grid size")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="decode a checkpoint to a labelled point cloud")
    x.add_argument("--checkpoint", required=True, help="model checkpoint")
    x.add_argument("--resolution", type=int, default=32,
                   help="UV cells per side; each patch yields (r+1)^2 points")
    x.add_argument("--shape", type=int, default=0, help="codeword index")
    x.add_argument("--curvature", action="store_true", help="add c_mean and c_gauss properties")
    x.add_argument("--K", type=int, help="reject checkpoints without this many patches")
    x.add_argument("--W", type=int, help="reject checkpoints without this hidden width")
    x.add_argument("--out", required=True, help="output PLY path")
    x.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (fileio.ParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
