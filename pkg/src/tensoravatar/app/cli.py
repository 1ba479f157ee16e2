"""Command line entry point: ``tensoravatar <command> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..config import Config, full_scale_model_config
from ..errors import AvatarError

CAMERA_HELP = "camera index into the dataset cameras, or into the default frontal arc"


def _load_config(args) -> Config:
    cfg = Config.from_text(Path(args.config).read_text()) if getattr(args, "config", None) else Config()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise AvatarError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return cfg.replace(**overrides).validate() if overrides else cfg.validate()


def _write_image(path: Path, img):
    from ..imageio import write_png, write_raw

    if path.suffix.lower() == ".png":
        write_png(path, img)
    else:
        write_raw(path, img)


def _cameras(args, cfg: Config):
    from ..synthrig.dataset import load_dataset, make_cameras

    if getattr(args, "data", None):
        return load_dataset(args.data).cameras
    d = cfg.data
    return make_cameras(d.n_cameras, d.image_size, d.camera_distance, d.camera_arc_deg, d.focal_factor)


def _expression(model, beta_text: str | None, jaw_deg: float):
    from ..blendmix import ExpressionInput

    beta = np.zeros(model.rig.n_b)
    if beta_text:
        vals = np.array([float(v) for v in beta_text.replace(",", " ").split()])
        beta[: len(vals)] = vals[: model.rig.n_b]
    return ExpressionInput(beta, model.rig.jaw_quat(np.radians(jaw_deg)))


def cmd_synth(args) -> int:
    from ..synthrig.dataset import generate_dataset, save_dataset
    from ..synthrig.rig import build_rig

    cfg = _load_config(args)
    d = cfg.data
    rig = build_rig(cfg.rig, d.rig_seed)
    ds = generate_dataset(rig, d.n_frames, d.n_cameras, d.image_size, d.seed, d.holdout_fraction, d.large_fraction,
                          d.camera_distance, d.camera_arc_deg, d.focal_factor, d.max_jaw_deg)
    save_dataset(ds, args.out, png=args.png)
    print(f"wrote {len(ds.frames)} images ({ds.n_expressions} expressions x {len(ds.cameras)} cameras) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from ..synthrig.dataset import load_dataset
    from ..training.trainer import train
    from .io import save

    cfg = _load_config(args)
    ds = load_dataset(args.data)

    def progress(i, row):
        if args.verbose and (i % args.verbose == 0 or not np.isnan(row[4])):
            print(f"iter {i}: L_image={row[1]:.5f} L_geom={row[2]:.5f} L_op={row[3]:.5f} psnr={row[4]:.3f}",
                  file=sys.stderr)

    model, log = train(ds, cfg, progress=progress)
    report = save(model, args.out, args.precision)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log")
    log_path.write_text(log.text())
    print(f"saved {args.out} ({report.total} bytes), log {log_path}")
    return 0


def cmd_render(args) -> int:
    from ..avatar import render_frame
    from .io import load

    model = load(args.model)
    cfg = _load_config(args)
    cams = _cameras(args, cfg)
    img = render_frame(model, _expression(model, args.beta, args.jaw_deg), cams[args.camera])
    _write_image(Path(args.out), img)
    print(f"wrote {args.out}")
    return 0


def cmd_animate(args) -> int:
    from ..avatar import render_frame
    from .io import load

    model = load(args.model)
    cfg = _load_config(args)
    cam = _cameras(args, cfg)[args.camera]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for line in Path(args.coeffs).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        jaw = 0.0
        if "jaw=" in line:
            line, _, jaw_txt = line.partition("jaw=")
            jaw = float(jaw_txt)
        img = render_frame(model, _expression(model, line, jaw), cam)
        _write_image(out / f"frame_{n:05d}.{args.format}", img)
        n += 1
    print(f"wrote {n} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    from ..synthrig.dataset import load_dataset
    from .io import load
    from .metrics import eval_metrics

    model = load(args.model)
    ds = load_dataset(args.data)
    large = {"any": None, "large": True, "small": False}[args.subset]
    report = eval_metrics(model, ds.split(args.split, large), ds.cameras)
    print(report.table())
    return 0


def cmd_inspect(args) -> int:
    from .io import encode, storage_report

    if args.full_scale:
        from ..model import init_model
        from ..synthrig.rig import RigConfig, build_rig

        mcfg = full_scale_model_config()
        rig = build_rig(RigConfig(n_b=mcfg.n_b), 0)
        _, report = encode(init_model(rig, mcfg))
    elif args.model:
        report = storage_report(args.model)
    else:
        raise AvatarError("inspect needs a model path or --full-scale")
    print(report.table())
    return 0


def cmd_bench(args) -> int:
    from ..model import init_model
    from ..synthrig.dataset import make_cameras
    from ..synthrig.rig import build_rig
    from .bench import bench_model, scaling, scaling_exponent
    from .io import load

    cfg = _load_config(args)
    cam = make_cameras(1, cfg.data.image_size)[0]
    if args.scaling:
        res = scaling(build_rig(cfg.rig, cfg.data.rig_seed), cfg.model, counts=(1, 2), n_frames=args.frames)
        for r in res:
            print(f"splats {r.n_splats:7d}  {r.seconds_per_frame * 1e3:8.2f} ms/frame  {r.fps:7.1f} frames/s")
        print(f"scaling exponent {scaling_exponent(res):.3f} (1 = linear)")
        return 0
    model = load(args.model) if args.model else init_model(build_rig(cfg.rig, cfg.data.rig_seed), cfg.model)
    r = bench_model(model, cam, args.frames, parallel=args.parallel)
    print(f"splats {r.n_splats}  {r.seconds_per_frame * 1e3:.2f} ms/frame  {r.fps:.1f} frames/s")
    return 0


def cmd_ablate(args) -> int:
    from ..synthrig.dataset import load_dataset
    from .ablation import ARMS, run_ablation, summary_table

    cfg = _load_config(args)
    ds = load_dataset(args.data)
    arms = args.arms or list(ARMS)
    unknown = [a for a in arms if a not in ARMS]
    if unknown:
        raise AvatarError(f"unknown arms {unknown}; choose from {list(ARMS)}")
    results = run_ablation(ds, cfg, arms, args.out_dir)
    print(summary_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensoravatar", description="Gaussian-splat head avatars with triplane and feature-line fields on a synthetic rig.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return sp

    s = with_config(sub.add_parser("synth", help="generate a rig and a multi-view dataset"))
    s.add_argument("--out", required=True)
    s.add_argument("--png", action="store_true", help="also write PNG previews")
    s.set_defaults(func=cmd_synth)

    s = with_config(sub.add_parser("train", help="train a model on a dataset directory"))
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--precision", choices=("fp32", "fp16"), default="fp32")
    s.add_argument("--verbose", type=int, default=0, metavar="N", help="print progress every N iterations")
    s.set_defaults(func=cmd_train)

    s = with_config(sub.add_parser("render", help="render one frame"))
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help=".png or raw image path")
    s.add_argument("--beta", help="expression coefficients, space or comma separated")
    s.add_argument("--jaw-deg", type=float, default=0.0)
    s.add_argument("--camera", type=int, default=0, help=CAMERA_HELP)
    s.add_argument("--data", help="take cameras from this dataset")
    s.set_defaults(func=cmd_render)

    s = with_config(sub.add_parser("animate", help="render a coefficient sequence"))
    s.add_argument("--model", required=True)
    s.add_argument("--coeffs", required=True, help="one frame per line: coefficients [jaw=DEG]")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--camera", type=int, default=0, help=CAMERA_HELP)
    s.add_argument("--data")
    s.add_argument("--format", choices=("png", "raw"), default="raw")
    s.set_defaults(func=cmd_animate)

    s = sub.add_parser("eval", help="PSNR/SSIM on a dataset split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("holdout", "train", "all"), default="holdout")
    s.add_argument("--subset", choices=("any", "large", "small"), default="any")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="storage report of a model file")
    s.add_argument("model", nargs="?")
    s.add_argument("--full-scale", action="store_true", help="report a freshly initialized full-scale model")
    s.set_defaults(func=cmd_inspect)

    s = with_config(sub.add_parser("bench", help="assemble + render throughput"))
    s.add_argument("--model")
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--scaling", action="store_true", help="time 1 and 2 splats per face")
    s.add_argument("--parallel", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = with_config(sub.add_parser("ablate", help="paired training runs, one metrics log per arm"))
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--arms", nargs="*")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (AvatarError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
