"""Command-line interface: ``planar-mvs <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, LoadError, MVSError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("planar_mvs")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="scene directory (images/, cams/, optional gt/)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-prior", action="store_true", help="skip the planar-prior phase")
    p.add_argument("--no-geom", action="store_true", help="stop before the geometric-consistency phase")
    p.add_argument("--max-dim", type=int, help="downscale so the longer image side is at most N px")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planar-mvs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    p.add_argument("--preset", choices=["textured", "lowtex"], default="textured")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("depthmap", help="estimate depth/normal maps for every view")
    _add_run_flags(p)

    p = sub.add_parser("fuse", help="fuse estimated maps into a point cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--maps", required=True, help="directory holding depth/ and normal/")
    p.add_argument("--out", required=True, help="output PLY path")
    p.add_argument("--config")
    p.add_argument("--max-dim", type=int)

    p = sub.add_parser("eval-depth", help="depth-map error fractions against ground truth")
    p.add_argument("--est", required=True, help="estimated .dmap file or directory")
    p.add_argument("--gt", required=True, help="ground-truth .dmap file or directory")
    p.add_argument("--thresholds", default="0.02,0.1", help="comma-separated thresholds")
    p.add_argument("--relative", action="store_true", help="thresholds are relative errors")
    p.add_argument("--out", required=True, help="report stem (writes .txt and .json)")
    p.add_argument("--figures", help="directory for PNG error figures")

    p = sub.add_parser("eval-cloud", help="accuracy/completeness/F1 between two PLY clouds")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True, help="report stem (writes .txt and .json)")

    p = sub.add_parser("pipeline", help="estimate, fuse and (with ground truth) evaluate")
    _add_run_flags(p)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _config(args):
    from .config import load_config, parse_config_text

    extra = parse_config_text("\n".join(args.set), "--set") if getattr(args, "set", None) else {}
    overrides = dict(
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        max_dim=getattr(args, "max_dim", None),
    )
    if getattr(args, "no_prior", False):
        overrides["use_prior"] = False
    if getattr(args, "no_geom", False):
        overrides["use_geom"] = False
    extra.update({k: v for k, v in overrides.items() if v is not None})
    return load_config(args.config, **extra)


def _progress(phase: str, view: int, it: int, mean: float) -> None:
    log.info("%-8s view %d iteration %d mean cost %.4f", phase, view, it + 1, mean)


def _depth_files(path: Path) -> dict[str, Path]:
    if path.is_dir():
        return {p.stem: p for p in sorted(path.glob("*.dmap"))}
    return {path.stem: path}


def cmd_synth(args) -> int:
    from .dataset import PRESETS, render_synthetic_scene, save_scene

    spec = PRESETS[args.preset](args.width, args.height, args.views)
    ds = render_synthetic_scene(spec, seed=args.seed)
    save_scene(ds, args.out)
    print(f"wrote {len(ds)} views to {args.out}")
    return EXIT_OK


def _evaluate_run(res, out: Path, figures: bool) -> dict:
    from .evaluate import depth_metrics

    ds = res.dataset
    values = {}
    if ds.gt_depth is None:
        return values
    errs = []
    for name, m, gt in zip(ds.names, res.maps, ds.gt_depth):
        g = gt.values.astype(np.float64)
        rel = depth_metrics(m.depth, g, (0.01,), relative=True)
        values[f"view_{name}_rel_lt_0.01"] = rel.fractions[0]
        if ds.lowtex_masks is not None:
            mask = ds.lowtex_masks[int(ds.names.index(name))]
            if (mask & (g > 0)).any():
                lt = depth_metrics(m.depth, g, (0.01,), relative=True, mask=mask)
                values[f"view_{name}_lowtex_rel_lt_0.01"] = lt.fractions[0]
        valid = g > 0
        errs.append(np.where(m.depth[valid] > 0, np.abs(m.depth[valid] - g[valid]) / g[valid], np.inf))
        if figures:
            from .plotting import depth_figure

            depth_figure(m.depth, g, out / "figures" / f"depth_{name}.png", title=f"view {name}")
    allerr = np.concatenate(errs)
    values["rel_lt_0.01"] = float(np.mean(allerr < 0.01))
    if figures:
        from .plotting import threshold_curve, timing_figure

        threshold_curve([allerr], ["all views"], out / "figures" / "error_curve.png")
        timing_figure(res.timings, out / "figures" / "timing.png")
    return values


def cmd_run(args, fuse_and_eval: bool) -> int:
    from .evaluate import format_report, write_report
    from .pipeline import run_pipeline

    cfg = _config(args)
    out = Path(args.out)
    res = run_pipeline(args.scene, cfg, out_dir=out, progress=_progress, do_fuse=fuse_and_eval, keep_stages=False)
    report = {f"time_{k}_s": v for k, v in res.timings.items()}
    if res.cloud is not None:
        report["fused_points"] = len(res.cloud)
    if fuse_and_eval:
        report.update(_evaluate_run(res, out, figures=not args.no_figures))
        write_report(report, out / "report")
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_fuse(args) -> int:
    from .dataset import load_depth_map, load_normal_map, load_scene
    from .fusion import fuse, write_ply
    from .pipeline import resize_dataset

    cfg = _config(args)
    ds = resize_dataset(load_scene(args.scene), cfg.max_dim)
    maps = Path(args.maps)
    depths, normals = [], []
    for name in ds.names:
        d = load_depth_map(maps / "depth" / f"{name}.dmap").values.astype(np.float64)
        n = load_normal_map(maps / "normal" / f"{name}.nmap").values.astype(np.float64)
        if d.shape != ds.images[len(depths)].shape:
            raise ValidationError(f"depth map {name} does not match the scene image size")
        depths.append(d)
        normals.append(n)
    cloud = fuse(depths, normals, ds.cameras, cfg.fusion_params(), ds.colors)
    write_ply(cloud, args.out)
    print(f"fused_points={len(cloud)}")
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    from .dataset import load_depth_map
    from .evaluate import depth_metrics, format_report, write_report

    try:
        ts = [float(t) for t in args.thresholds.split(",") if t.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad thresholds {args.thresholds!r}") from exc
    est, gt = _depth_files(Path(args.est)), _depth_files(Path(args.gt))
    if len(est) == 1 and len(gt) == 1:
        pairs = [(next(iter(est)), next(iter(est.values())), next(iter(gt.values())))]
    else:
        missing = sorted(set(gt) - set(est))
        if missing:
            raise LoadError(f"no estimate for ground-truth maps {missing}")
        pairs = [(k, est[k], gt[k]) for k in sorted(gt)]
    values = {}
    total = np.zeros(len(ts))
    count = 0
    for name, pe, pg in pairs:
        e = load_depth_map(pe).values.astype(np.float64)
        g = load_depth_map(pg).values.astype(np.float64)
        m = depth_metrics(e, g, ts, relative=args.relative)
        for k, v in m.as_dict().items():
            values[f"{name}_{k}"] = v
        total += np.array(m.fractions) * m.valid_pixels
        count += m.valid_pixels
        if args.figures:
            from .plotting import depth_figure

            depth_figure(e, g, Path(args.figures) / f"depth_{name}.png", title=name)
    kind = "rel" if args.relative else "abs"
    for t, f in zip(ts, total / count):
        values[f"depth_{kind}_lt_{t:g}"] = float(f)
    write_report(values, args.out)
    sys.stdout.write(format_report(values))
    return EXIT_OK


def cmd_eval_cloud(args) -> int:
    from .evaluate import cloud_metrics, format_report, write_report
    from .fusion import read_ply

    m = cloud_metrics(read_ply(args.est), read_ply(args.gt), args.tau)
    write_report(m.as_dict(), args.out)
    sys.stdout.write(format_report(m.as_dict()))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {
        "synth": cmd_synth,
        "depthmap": lambda a: cmd_run(a, fuse_and_eval=False),
        "pipeline": lambda a: cmd_run(a, fuse_and_eval=True),
        "fuse": cmd_fuse,
        "eval-depth": cmd_eval_depth,
        "eval-cloud": cmd_eval_cloud,
    }
    try:
        return handlers[args.command](args)
    except (ValidationError, InvalidArgumentError, LoadError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MVSError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
