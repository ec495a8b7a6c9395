"""Command-line front end.

Subcommands: ``make-scene``, ``select-pairs``, ``refine``, ``evaluate`` and
``render-depth``.  Settings come from flags, optionally seeded by a TOML file
(``--config``) whose top level may hold ``threads`` and ``seed`` and whose
``[selection]`` and ``[refine]`` tables mirror :class:`SelectionConfig` and
:class:`RefineConfig`.  Flags override the file.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli

from . import io
from .errors import (EmptyInput, FormatError, InvalidCamera, InvalidMesh, InvalidParams,
                     MVSRefineError, NoMutualCoverage, NumericalFailure)
from .evaluation import accuracy_completeness, depth_mae_rmse, format_table
from .masking import valid_count_map
from .pairs import PairSet, SelectionConfig, select_pairs
from .raster import render_depth, reproject
from .refine import RefineConfig, refine, render_views
from .scenes import KINDS, make_scene

logger = logging.getLogger("mvsrefine")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(MVSRefineError):
    """Bad command-line input (missing file, bad config value)."""


@dataclass
class RunConfig:
    mesh: Path | None = None
    cameras: Path | None = None
    images: Path | None = None
    out: Path | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    threads: int = 1
    seed: int = 0

    def validate(self, need=()):
        for name in need:
            p = getattr(self, name)
            if p is None:
                raise InputError(f"--{name} is required")
            if not Path(p).exists():
                raise InputError(f"{p}: no such file or directory")
        if self.threads < 1:
            raise InputError("--threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InputError("--seed must fit in 64 bits")


def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file or directory") from None
    except tomli.TOMLDecodeError as exc:
        raise FormatError(str(exc), path) from None


def _build(cls, table, overrides, path):
    known = {f.name for f in fields(cls)}
    kw = {}
    for k, v in (table or {}).items():
        if k not in known:
            raise FormatError(f"unknown key {k!r} in [{cls.__name__}]", path)
        kw[k] = tuple(v) if isinstance(v, list) else v
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kw)
    except TypeError as exc:
        raise FormatError(f"bad value in [{cls.__name__}]: {exc}", path) from None


def run_config(args, sel_over=None, ref_over=None) -> RunConfig:
    data = _load_toml(args.config) if getattr(args, "config", None) else {}
    threads = args.threads if args.threads is not None else int(data.get("threads", 1))
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    sel_over = dict(sel_over or {}, threads=threads)
    ref_over = dict(ref_over or {}, threads=threads)
    cfg = RunConfig(
        mesh=_path(getattr(args, "mesh", None)),
        cameras=_path(getattr(args, "cameras", None)),
        images=_path(getattr(args, "images", None)),
        out=_path(getattr(args, "out", None)),
        selection=_build(SelectionConfig, data.get("selection"), sel_over, args.config),
        refine=_build(RefineConfig, data.get("refine"), ref_over, args.config),
        threads=threads, seed=seed)
    return cfg


def _path(p):
    return None if p is None else Path(p)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sub_seed(seed, stream):
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_make_scene(args):
    cfg = run_config(args)
    if cfg.out is None:
        raise InputError("--out is required")
    if args.noise < 0:
        raise InputError("--noise must be >= 0")
    out = io.ensure_dir(cfg.out)
    scene = make_scene(args.kind, args.n_cameras, args.size, texture_seed=cfg.seed)
    init = scene.noisy_mesh(args.noise, seed=_sub_seed(cfg.seed, 1))
    io.write_ply(out / "gt.ply", scene.gt_mesh)
    io.write_ply(out / "init.ply", init)
    io.write_cameras(out / "cameras.txt", scene.cameras)
    pts = _gt_points(scene, args.gt_points, _sub_seed(cfg.seed, 2))
    io.write_points(out / "gt_points.ply", pts)
    img_dir = io.ensure_dir(out / "images")
    for cam in scene.cameras:
        io.write_pgm(img_dir / f"{cam.name}.pgm", cam.image)
    manifest = {
        "kind": args.kind, "n_cameras": len(scene.cameras), "image_size": args.size,
        "seed": cfg.seed, "noise_sigma_frac": args.noise,
        "occlusion_fixture": scene.occlusion_fixture,
        "cameras": [c.name for c in scene.cameras],
        "files": {"gt_mesh": "gt.ply", "init_mesh": "init.ply", "gt_points": "gt_points.ply",
                  "cameras": "cameras.txt", "images": "images"},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {args.kind} scene with {len(scene.cameras)} cameras to {out}")
    return EXIT_OK


def _gt_points(scene, n, seed):
    from .evaluation import sample_surface
    pts = sample_surface(scene.gt_mesh, n, seed)
    if scene.sphere is not None:     # put samples on the analytic surface
        c, r = scene.sphere
        d = pts - c
        pts = c + r * d / np.linalg.norm(d, axis=1, keepdims=True)
    return pts


def _load_scene_inputs(cfg, need_images):
    mesh = io.read_mesh(cfg.mesh)
    cams = io.read_cameras(cfg.cameras)
    if need_images:
        cams = io.load_images(cams, cfg.images)
    return mesh, cams


def pair_report(ps: PairSet, cameras) -> str:
    lines = ["ref partner     e_total     e_p     e_o     e_s     e_r  parallax   overlap"]
    for (i, j), e in zip(ps.pairs, ps.energies):
        par = "-" if e.parallax_deg is None or not np.isfinite(e.parallax_deg) else f"{e.parallax_deg:.1f}"
        lines.append(f"{i:>3} {j:>7} {e.e_total:>11.4f} {e.e_parallax:>7.3f} {e.e_overlap:>7.3f} "
                     f"{e.e_symmetry:>7.3f} {e.e_resolution:>7.3f} {par:>9} {e.overlap:>9.3f}")
    lines.append(f"coverage before: mu={ps.init_mu:.4f} sigma={ps.init_sigma:.4f}")
    lines.append(f"coverage after:  mu={ps.coverage_mu:.4f} sigma={ps.coverage_sigma:.4f}")
    lines.append(f"swaps accepted: {sum(s.accepted for s in ps.swap_log)} of "
                 f"{len(ps.swap_log)} tried; energy budget used: {100 * ps.budget_used:.2f}%")
    if len(cameras) == 2:
        lines.append("note: two cameras, no alternatives")
    for i in ps.flagged:
        lines.append(f"warning: camera {i} overlaps no other camera")
    return "\n".join(lines)


def cmd_select_pairs(args):
    cfg = run_config(args, sel_over={"energy_budget": args.budget})
    cfg.validate(("mesh", "cameras"))
    if cfg.out is None:
        raise InputError("--out is required")
    mesh, cams = _load_scene_inputs(cfg, need_images=False)
    ps = select_pairs(mesh, cams, cfg.selection)
    out = io.ensure_dir(cfg.out)
    _write_json(out / "pairs.json", ps.to_dict())
    report = pair_report(ps, cams)
    (out / "pairs_report.txt").write_text(report + "\n", encoding="utf-8")
    print(report)
    return EXIT_OK


def cmd_refine(args):
    over = {"iterations": args.iterations, "step_scale": args.step_scale,
            "smooth_lambda": args.smooth_lambda, "patch_size": args.patch_size}
    if args.no_mask:
        over["masking_enabled"] = False
    cfg = run_config(args, ref_over=over)
    cfg.validate(("mesh", "cameras", "images"))
    if cfg.out is None:
        raise InputError("--out is required")
    if not args.auto_pairs and args.pairs is None:
        raise InputError("give --pairs FILE or --auto-pairs")
    mesh, cams = _load_scene_inputs(cfg, need_images=True)
    out = io.ensure_dir(cfg.out)

    if args.auto_pairs:
        ps = select_pairs(mesh, cams, cfg.selection)
        _write_json(out / "pairs.json", ps.to_dict())
        pairs = ps.pairs
    else:
        pairs = _read_pairs(args.pairs, len(cams))

    snap_dir = io.ensure_dir(out / "snapshots") if args.snapshots else None

    def on_step(k, m):
        if snap_dir is not None:
            io.write_ply(snap_dir / f"iter_{k:03d}.ply", m)

    refined, log = refine(mesh, cams, pairs, cfg.refine, callback=on_step)
    io.write_ply(out / "refined.ply", refined)
    with open(out / "energy.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "e_photo", "mean_step", "frozen_vertices"])
        for r in log:
            w.writerow([r.iteration, repr(r.e_photo), repr(r.mean_step), r.frozen_vertices])
    if args.debug_masks:
        _write_mask_heatmaps(refined, cams, cfg.refine, io.ensure_dir(out / "debug_masks"))
    print(f"e_photo {log[0].e_photo:.4f} -> {log[-1].e_photo:.4f} over {len(log) - 1} iterations")
    return EXIT_OK


def _write_mask_heatmaps(mesh, cams, rcfg, out_dir):
    """Per-camera count of valid neighbours per pixel, scaled to 8 bits."""
    mcfg = RefineConfig(**{**asdict(rcfg), "masking_enabled": True})
    views = render_views(mesh, cams, mcfg, range(len(cams)))
    full = mcfg.patch_size ** 2
    for k, cam in enumerate(cams):
        counts = valid_count_map(views[k].masks)
        io.write_pgm(out_dir / f"{cam.name}_valid.pgm", counts / full)


def _read_pairs(path, n_cams):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file or directory")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from None
    try:
        ps = PairSet.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"not a pair-set file ({exc})", path) from None
    for i, j in ps.pairs:
        if not (0 <= i < n_cams and 0 <= j < n_cams) or i == j:
            raise FormatError(f"pair ({i}, {j}) does not fit {n_cams} cameras", path)
    return ps.pairs


def cmd_evaluate(args):
    cfg = run_config(args)
    cfg.validate(("mesh",))
    if args.gt_points is None and args.gt_mesh is None:
        raise InputError("give --gt-points and/or --gt-mesh")
    model = io.read_mesh(cfg.mesh)
    report, tables = {}, []
    if args.gt_points is not None:
        pts = io.read_points(args.gt_points)
        dr = accuracy_completeness(model, pts, n_samples=args.samples, seed=cfg.seed)
        report["distance"] = dr.to_dict()
        tables.append(format_table({"model": {"acc_mean": dr.accuracy_mean, "acc_med": dr.accuracy_median,
                                              "comp_mean": dr.completeness_mean,
                                              "comp_med": dr.completeness_median}},
                                   rows=("acc_mean", "acc_med", "comp_mean", "comp_med"),
                                   title="distance to ground-truth cloud"))
    if args.gt_mesh is not None:
        if cfg.cameras is None:
            raise InputError("--gt-mesh needs --cameras for depth errors")
        gt = io.read_mesh(args.gt_mesh)
        cams = io.read_cameras(cfg.cameras)
        de = depth_mae_rmse(model, gt, cams)
        report["depth"] = de.to_dict()
        tables.append(format_table({"model": {"mae": de.mae, "rmse": de.rmse}},
                                   title="rendered-depth error"))
    text = "\n\n".join(tables)
    if cfg.out is not None:
        out = io.ensure_dir(cfg.out)
        _write_json(out / "metrics.json", report)
        (out / "metrics.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_render_depth(args):
    cfg = run_config(args)
    cfg.validate(("mesh", "cameras"))
    if cfg.out is None:
        raise InputError("--out is required")
    mesh = io.read_mesh(cfg.mesh)
    cams = io.read_cameras(cfg.cameras)
    out = io.ensure_dir(cfg.out)
    depths = [render_depth(mesh, c) for c in cams]
    for cam, dm in zip(cams, depths):
        if "pfm" in args.format:
            io.write_pfm(out / f"{cam.name}_depth.pfm", dm.depth)
        if "png" in args.format:
            io.write_depth_png16(out / f"{cam.name}_depth.png", dm.depth)
    if args.pairs is not None:
        for i, j in _read_pairs(args.pairs, len(cams)):
            fld = reproject(mesh, cams[i], cams[j], depths[i], depths[j])
            io.write_pgm(out / f"domain_{cams[i].name}_{cams[j].name}.pgm",
                         fld.domain_mask.astype(float))
    print(f"rendered {len(cams)} depth maps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _shared(p, mesh=True, cameras=True, images=False):
    if mesh:
        p.add_argument("--mesh", help="input mesh (.ply or .obj)")
    if cameras:
        p.add_argument("--cameras", help="camera file, one camera per line")
    if images:
        p.add_argument("--images", help="directory with <camera>.pgm/.png images")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed (default 0)")
    p.add_argument("--config", default=None, help="TOML settings file; flags win")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvsrefine", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="write a synthetic scene")
    _shared(p, mesh=False, cameras=False)
    p.add_argument("--kind", choices=KINDS, default="sphere")
    p.add_argument("--n-cameras", type=int, default=8)
    p.add_argument("--size", type=int, default=128, help="image width and height")
    p.add_argument("--noise", type=float, default=0.02,
                   help="vertex noise of init.ply, fraction of the bbox diagonal")
    p.add_argument("--gt-points", type=int, default=20000, help="size of the GT point cloud")
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("select-pairs", help="choose one partner camera per camera")
    _shared(p)
    p.add_argument("--budget", type=float, default=None, help="energy budget (default 0.10)")
    p.set_defaults(func=cmd_select_pairs)

    p = sub.add_parser("refine", help="photometric mesh refinement")
    _shared(p, images=True)
    p.add_argument("--pairs", default=None, help="pairs.json from select-pairs")
    p.add_argument("--auto-pairs", action="store_true", help="run pair selection first")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--step-scale", type=float, default=None)
    p.add_argument("--smooth-lambda", type=float, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--no-mask", action="store_true", help="disable occlusion masking")
    p.add_argument("--debug-masks", action="store_true", help="write valid-pixel heatmaps")
    p.add_argument("--snapshots", action="store_true", help="write the mesh after every iteration")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="compare a model with ground truth")
    _shared(p)
    p.add_argument("--gt-points", default=None, help="GT point cloud (.ply or .xyz)")
    p.add_argument("--gt-mesh", default=None, help="GT mesh for rendered-depth errors")
    p.add_argument("--samples", type=int, default=100_000, help="model samples for accuracy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render-depth", help="export depth maps")
    _shared(p)
    p.add_argument("--format", nargs="+", choices=("pfm", "png"), default=["pfm", "png"])
    p.add_argument("--pairs", default=None, help="also write domain masks for these pairs")
    p.set_defaults(func=cmd_render_depth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FormatError, InvalidParams, InvalidMesh, InvalidCamera,
            EmptyInput, NoMutualCoverage, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MVSRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
