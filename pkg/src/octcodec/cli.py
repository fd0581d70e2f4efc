"""Command-line interface: ``octcodec <verb> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__


def _encode(args):
    from .codec import encode_array
    from .imageio import read_image
    from .model import load_model
    from .report import bit_allocation_report

    model = load_model(args.model)
    res = encode_array(model, read_image(args.input))
    Path(args.output).write_bytes(res.container.serialize())
    r = bit_allocation_report(res.container)
    print(f"bpp_H {r['bpp_H']:.4f}  bpp_L {r['bpp_L']:.4f}  total {r['bpp_total']:.4f}")


def _decode(args):
    from .codec import decode_container
    from .container import Container
    from .imageio import write_image
    from .model import load_model

    model = load_model(args.model)
    c = Container.parse(Path(args.input).read_bytes())
    img, _ = decode_container(model, c, parallel=not args.serial)
    write_image(args.output, img)
    print(f"decoded {c.width}x{c.height} -> {args.output}")


def _metrics(args):
    from .imageio import read_image
    from .metrics import ms_ssim, msssim_db, psnr

    a, b = read_image(args.a), read_image(args.b)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    m = ms_ssim(a, b)
    print(f"psnr {psnr(a, b):.4f} dB  msssim {m:.6f}  msssim_db {msssim_db(m):.4f} dB")


def _bdrate(args):
    from .metrics import bd_rate
    from .report import read_curve

    ar, aq = read_curve(args.anchor, args.quality)
    tr, tq = read_curve(args.test, args.quality)
    print(f"BD-rate {bd_rate(ar, aq, tr, tq):+.4f}%")


def _report(args):
    from .container import Container
    from .report import bit_allocation_report

    c = Container.parse(Path(args.input).read_bytes())
    r = bit_allocation_report(c)
    print(f"bpp_total {r['bpp_total']:.4f}  bpp_L {r['bpp_L']:.4f}  bpp_H {r['bpp_H']:.4f}  L:H {r['ratio']}")


def _rdcurve(args):
    from .report import rd_curve

    models = [m for m in args.models.split(",") if m]
    rows = rd_curve(args.dir, models, args.output, args.plot)
    for r in rows:
        print(f"{r.model}: bpp {r.bpp:.4f}  psnr {r.psnr:.3f}  msssim_db {r.msssim_db:.3f}")


def _train(args):
    from .model import OctaveCodecNet, load_model, save_model
    from .train import ingest_patches, read_config, train_stage

    model_cfg, train_cfg, data = read_config(args.config)
    stage = args.stage if args.stage is not None else train_cfg.stage
    for key in ("images", "checkpoint"):
        if key not in data:
            raise ValueError(f"config [data] section needs '{key}'")
    ckpt = Path(data["checkpoint"])
    if stage == 1:
        model = OctaveCodecNet(model_cfg)
    else:
        if not ckpt.exists():
            raise ValueError(f"stage {stage} needs the stage {stage - 1} checkpoint {ckpt}")
        model = load_model(ckpt)
    count = int(data.get("patches", 256))
    patches = ingest_patches(data["images"], train_cfg.patch_size, count, train_cfg.seed)
    log_path = Path(data["log_dir"]) / f"stage{stage}.csv" if "log_dir" in data else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
    use_if = data.get("fidelity", "true").lower() not in ("0", "false", "no", "off")
    hist = train_stage(model, stage, train_cfg, patches, log_path, use_if)
    save_model(ckpt, model)
    last = hist[-1]
    print(f"stage {stage} done: loss {last['loss']:.4f}  bpp_H {last['bpp_H']:.4f}  bpp_L {last['bpp_L']:.4f} -> {ckpt}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octcodec", description="Multi-resolution learned image codec.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("encode", help="compress a PNG/PPM image")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_encode)

    s = sub.add_parser("decode", help="reconstruct an image from a container")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--serial", action="store_true", help="use the sequential reference decoder")
    s.set_defaults(func=_decode)

    s = sub.add_parser("metrics", help="PSNR and MS-SSIM between two images")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=_metrics)

    s = sub.add_parser("bdrate", help="BD-rate of a test curve against an anchor")
    s.add_argument("anchor")
    s.add_argument("test")
    s.add_argument("--quality", default="psnr", choices=("psnr", "msssim_db"))
    s.set_defaults(func=_bdrate)

    s = sub.add_parser("report", help="bit allocation of a container")
    s.add_argument("input")
    s.set_defaults(func=_report)

    s = sub.add_parser("rdcurve", help="R-D points for several checkpoints")
    s.add_argument("dir")
    s.add_argument("--models", required=True, help="comma-separated checkpoint paths")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--plot", help="optional SVG path")
    s.set_defaults(func=_rdcurve)

    s = sub.add_parser("train", help="run one training stage")
    s.add_argument("--config", required=True)
    s.add_argument("--stage", type=int, choices=(1, 2, 3))
    s.set_defaults(func=_train)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one-line diagnostic, no traceback
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"octcodec {args.verb}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
