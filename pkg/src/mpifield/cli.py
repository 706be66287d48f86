"""Command-line pipeline driver.

Subcommands map one-to-one onto the library's operations::

    synth-scene    generate a synthetic posed photo collection
    stage1         fit MPI base color + alpha planes
    stage2         fit appearance features/encoder/renderer
    render         render novel views (base color, or with a checkpoint)
    interp         interpolate appearance between two exemplars
    photo4d        joint camera/appearance frame sequences
    export-bundle  bake viewer assets
    eval           metrics over a scene's test split

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
Every run writes a resolved-config snapshot next to its outputs.  Loss
streams are line-delimited JSON.  MPIFIELD_THREADS caps render worker
threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import defaults
from .appearance import AppearanceModel, interpolate_appearance, render_4d
from .errors import DataError, MpiFieldError, NumericalError
from .geometry import CameraView, Intrinsics, nearest_rotation
from .io import (
    export_viewer_bundle,
    load_checkpoint,
    load_mpi,
    load_scene,
    save_image,
    save_mpi,
    save_scene,
)
from .metrics import metrics
from .mpi import PlaneRenderer, warp_mpi
from .stage1 import Stage1Reconstructor, evaluate_mpi
from .synthetic import SyntheticSceneSpec, generate_synthetic

log = logging.getLogger("mpifield")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def thread_count(requested=None):
    if requested:
        return max(1, int(requested))
    env = os.environ.get("MPIFIELD_THREADS")
    return max(1, int(env)) if env else 1


def _load_config(path):
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} not found")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise DataError(f"config file {p} must hold a key-value tree")
    return data


def _snapshot(out_dir, name, config):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.resolved.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=True))
    return path


def _camera_from_dict(d, ctx="camera"):
    for key in ("fx", "fy", "cx", "cy", "width", "height", "R", "t"):
        if key not in d:
            raise DataError(f"{ctx}: missing field '{key}'")
    R = np.asarray(d["R"], dtype=np.float64).reshape(3, 3)
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > 1e-4:
        raise DataError(f"{ctx}: rotation not orthonormal (deviation {err:.2e})")
    return CameraView(
        Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"])),
        nearest_rotation(R), np.asarray(d["t"], dtype=np.float64))


def _load_cameras_file(path):
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [_camera_from_dict(d, f"{path}[{i}]") for i, d in enumerate(data)]


# -- subcommand implementations ---------------------------------------------------

def cmd_synth_scene(args):
    spec_kw = _load_config(args.spec)
    ts = spec_kw.pop("ts", None)
    n_test = spec_kw.pop("n_test", None)
    test_scale = spec_kw.pop("test_baseline_scale", 1.0)
    known = {f.name for f in fields(SyntheticSceneSpec)}
    unknown = set(spec_kw) - known
    if unknown:
        raise DataError(f"unknown synthetic spec fields: {sorted(unknown)}")
    for key in ("layer_depths", "texture_px", "tint0", "tint1", "shadow_x_range"):
        if key in spec_kw:
            spec_kw[key] = tuple(spec_kw[key])
    if "seed" not in spec_kw:
        spec_kw["seed"] = args.seed
    spec = SyntheticSceneSpec(**spec_kw)
    dataset, _ = generate_synthetic(spec, args.views, ts=ts, n_test=n_test,
                                    test_baseline_scale=test_scale)
    save_scene(dataset, args.out)
    _snapshot(args.out, "synth-scene", {"spec": asdict(spec), "views": args.views,
                                        "seed": args.seed, "out": str(args.out)})
    log.info("wrote scene with %d photos to %s", len(dataset.photos), args.out)
    return EXIT_OK


def cmd_stage1(args):
    cfg = _load_config(args.config)
    dataset = load_scene(args.scene)
    kw = dict(planes=args.planes, seed=args.seed, two_phase=not args.ablate_two_phase,
              out_dir=str(Path(args.out).parent))
    for key in ("phase_a_iters", "phase_b_iters", "lr_alpha", "lr_joint",
                "grad_loss_weight", "n_scales", "crop", "near", "far",
                "checkpoint_every", "log_every"):
        if key in cfg:
            kw[key] = cfg[key]
    if args.iters is not None:
        kw["phase_a_iters"] = kw["phase_b_iters"] = args.iters // 2
    est = Stage1Reconstructor(**kw)
    _snapshot(Path(args.out).parent, "stage1", {**est.get_params(), "scene": str(args.scene)})
    est.fit(dataset)
    save_mpi(args.out, est.mpi_)
    result = est.evaluate(dataset, "test") if dataset.test_ids else None
    if result:
        log.info("stage1 held-out: l1 %.4f psnr %.2f dB", result["l1"], result["psnr"])
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_stage2(args):
    cfg = _load_config(args.config)
    dataset = load_scene(args.scene)
    mpi = load_mpi(args.mpi)
    kw = dict(seed=args.seed, out_dir=str(Path(args.out).parent))
    for key in ("iters", "lr", "style_weight", "gan_weight", "crop",
                "feature_dim", "z_dim", "grad_loss_weight", "n_scales", "log_every"):
        if key in cfg:
            kw[key] = cfg[key]
    if args.iters is not None:
        kw["iters"] = args.iters
    ablations = set(args.ablate or [])
    model = AppearanceModel(no_adain="adain" in ablations,
                            no_features="features" in ablations,
                            no_deepbuffer="deepbuffer" in ablations, **kw)
    _snapshot(Path(args.out).parent, "stage2", {**model.get_params(), "scene": str(args.scene),
                                                "mpi": str(args.mpi)})
    model.fit(dataset, mpi)
    from .io.assets import save_checkpoint
    save_checkpoint(args.out, model)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _model_from_files(mpi_path, ckpt_path):
    mpi = load_mpi(mpi_path)
    model = load_checkpoint(ckpt_path)
    if getattr(model, "iterations_done_", 0) <= 0:
        raise DataError(f"{ckpt_path}: checkpoint is untrained")
    model.mpi_ = mpi
    return model


def cmd_render(args):
    cams = _load_cameras_file(args.camera)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = thread_count(args.threads)
    t0 = time.monotonic()
    if args.ckpt:
        dataset = load_scene(args.scene) if args.scene else None
        model = _model_from_files(args.mpi, args.ckpt)
        if args.exemplar is None:
            raise DataError("--exemplar is required when rendering with a checkpoint")
        photo = dataset.photo(args.exemplar) if dataset else None
        if photo is None:
            raise DataError("--scene is required to pose the exemplar")
        z = model.encode(photo.image, photo.cam, photo.mask)
        frames = [model.render(cam, z) for cam in cams]
    else:
        renderer = PlaneRenderer(load_mpi(args.mpi))
        if threads > 1 and len(cams) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                frames = list(pool.map(renderer.render_base, cams))
        else:
            frames = [renderer.render_base(cam) for cam in cams]
    dt = time.monotonic() - t0
    for i, frame in enumerate(frames):
        save_image(out / f"frame_{i:04d}.png", frame)
    fps = len(frames) / dt if dt > 0 else float("inf")
    print(json.dumps({"frames": len(frames), "seconds": round(dt, 4),
                      "fps": round(fps, 2), "threads": threads}))
    return EXIT_OK


def cmd_interp(args):
    dataset = load_scene(args.scene)
    model = _model_from_files(args.mpi, args.ckpt)
    pa = dataset.photo(args.z_from)
    pb = dataset.photo(args.z_to)
    za = model.encode(pa.image, pa.cam, pa.mask)
    zb = model.encode(pb.image, pb.cam, pb.mask)
    cam = _load_cameras_file(args.camera)[0] if args.camera else dataset.ref_cam
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = args.steps
    if steps < 1:
        raise DataError("--steps must be >= 1")
    for i in range(steps):
        t = 0.0 if steps == 1 else i / (steps - 1)
        z = interpolate_appearance(za, zb, t)
        save_image(out / f"interp_{i:04d}.png", model.render(cam, z))
    _snapshot(args.out, "interp", {"z_from": args.z_from, "z_to": args.z_to,
                                   "steps": steps, "mpi": str(args.mpi),
                                   "ckpt": str(args.ckpt)})
    log.info("wrote %d frames to %s", steps, args.out)
    return EXIT_OK


def cmd_photo4d(args):
    dataset = load_scene(args.scene)
    model = _model_from_files(args.mpi, args.ckpt)
    cams = _load_cameras_file(args.path)
    keys = []
    for pid in args.keyframes.split(","):
        p = dataset.photo(pid.strip())
        keys.append(model.encode(p.image, p.cam, p.mask))
    frames = render_4d(model, cams, keys, args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_image(out / f"photo4d_{i:04d}.png", frame)
    _snapshot(args.out, "photo4d", {"frames": args.frames, "keyframes": args.keyframes,
                                    "path": str(args.path)})
    log.info("wrote %d frames to %s", len(frames), args.out)
    return EXIT_OK


def cmd_export_bundle(args):
    dataset = load_scene(args.scene)
    model = _model_from_files(args.mpi, args.ckpt)
    zs = []
    for pid in args.endpoints.split(","):
        p = dataset.photo(pid.strip())
        zs.append(model.encode(p.image, p.cam, p.mask))
    manifest = export_viewer_bundle(model, zs, args.out, slices=args.slices)
    _snapshot(args.out, "export-bundle", {"endpoints": args.endpoints,
                                          "slices": args.slices})
    log.info("wrote bundle manifest %s", manifest)
    return EXIT_OK


def cmd_eval(args):
    dataset = load_scene(args.scene)
    mpi = load_mpi(args.mpi)
    report = {"scene": str(args.scene), "mpi": str(args.mpi)}
    if args.ckpt:
        model = _model_from_files(args.mpi, args.ckpt)
        per = []
        for p in dataset.test_photos():
            z = model.encode(p.image, p.cam, p.mask)
            pred = model.render(p.cam, z)
            warped = warp_mpi(mpi, p.cam)
            valid = (warped.validity.min(axis=0) >= 1.0).astype(np.float32)
            m = metrics(pred, p.image, p.mask * valid)
            m["id"] = p.id
            per.append(m)
        if not per:
            raise DataError("scene has no test photos")
        report["appearance"] = {
            "per_photo": per,
            "l1": float(np.mean([m["l1"] for m in per])),
            "psnr": float(np.mean([m["psnr"] for m in per])),
        }
    report["base"] = evaluate_mpi(mpi, dataset, "test")
    print(json.dumps(report, indent=1))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mpifield",
                description="Multiplane-image light-field reconstruction and rendering")
    p.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-scene", help="generate a synthetic posed photo collection")
    sp.add_argument("--spec", help="YAML file of synthetic scene parameters")
    sp.add_argument("--views", type=int, required=True, help="number of photos")
    sp.add_argument("--out", required=True, help="output scene directory")
    sp.add_argument("--seed", type=int, default=0, help="generator seed")
    sp.set_defaults(func=cmd_synth_scene)

    sp = sub.add_parser("stage1", help="fit MPI base color and alpha planes")
    sp.add_argument("--scene", required=True, help="scene directory")
    sp.add_argument("--planes", type=int, default=defaults.PLANE_COUNT,
                    help="depth plane count")
    sp.add_argument("--out", required=True, help="output .mpi path")
    sp.add_argument("--ablate-two-phase", action="store_true",
                    help="train both plane sets from scratch (ablation)")
    sp.add_argument("--iters", type=int, help="total iterations (split across phases)")
    sp.add_argument("--config", help="YAML config overriding trainer defaults")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_stage1)

    sp = sub.add_parser("stage2", help="fit the appearance stage")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mpi", required=True, help="stage-1 .mpi file")
    sp.add_argument("--out", required=True, help="output checkpoint path")
    sp.add_argument("--ablate", action="append",
                    choices=["adain", "features", "deepbuffer"],
                    help="drop a component (repeatable)")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--config", help="YAML config overriding trainer defaults")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_stage2)

    sp = sub.add_parser("render", help="render novel views")
    sp.add_argument("--mpi", required=True)
    sp.add_argument("--ckpt", help="appearance checkpoint (else base-color render)")
    sp.add_argument("--camera", required=True,
                    help="JSON camera (single object or list) to render")
    sp.add_argument("--exemplar", help="scene photo id whose appearance to apply")
    sp.add_argument("--scene", help="scene directory (poses the exemplar)")
    sp.add_argument("--out", default="renders", help="output directory")
    sp.add_argument("--threads", type=int, help="render worker threads")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("interp", help="interpolate appearance between two exemplars")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mpi", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--z-from", required=True, help="photo id of start appearance")
    sp.add_argument("--z-to", required=True, help="photo id of end appearance")
    sp.add_argument("--steps", type=int, default=9)
    sp.add_argument("--camera", help="JSON camera file (default: reference view)")
    sp.add_argument("--out", default="interp", help="output directory")
    sp.set_defaults(func=cmd_interp)

    sp = sub.add_parser("photo4d", help="joint camera/appearance sequences")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mpi", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--path", required=True, help="JSON list of cameras along the path")
    sp.add_argument("--keyframes", required=True, help="comma-separated photo ids")
    sp.add_argument("--frames", type=int, default=30)
    sp.add_argument("--out", default="photo4d")
    sp.set_defaults(func=cmd_photo4d)

    sp = sub.add_parser("export-bundle", help="bake viewer assets")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mpi", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--endpoints", required=True, help="comma-separated photo ids")
    sp.add_argument("--slices", type=int, default=defaults.BUNDLE_SLICES)
    sp.add_argument("--out", required=True, help="bundle directory")
    sp.set_defaults(func=cmd_export_bundle)

    sp = sub.add_parser("eval", help="metrics over the test split")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mpi", required=True)
    sp.add_argument("--ckpt", help="appearance checkpoint (optional)")
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(func=cmd_eval)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except DataError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except NumericalError as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except MpiFieldError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
