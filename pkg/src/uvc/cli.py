"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 environment error (missing codec),
4 data-integrity error, 1 anything else raised by the package.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import codec as codecs
from .clipio import read_clip, write_clip
from .container import DualBitstream
from .errors import ConfigurationError, InputError, UVCError


def _codec_id(name):
    if name in codecs.CLI_NAMES:
        return codecs.CLI_NAMES[name]
    if name in codecs.CODEC_IDS:
        return name
    raise InputError(f"unknown codec {name!r}; choose from {sorted(codecs.CLI_NAMES)}")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_model(path):
    from .training import load_model
    return load_model(path)[0]


def _resolve(args, config, key, default):
    """CLI flag > config file > default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    return config.get(key, default)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from .data import gen_toy_dataset
    out = gen_toy_dataset(args.out, args.seed, args.n, args.t, args.h, args.w)
    print(f"wrote {args.n} clips to {out}")


def cmd_codec_encode(args):
    cfg = codecs.CodecConfig(_codec_id(args.codec), args.crf, args.gop)
    decoded, stream, bpp = codecs.encode_decode(read_clip(args.inp), cfg)
    Path(args.out).write_bytes(stream)
    print(json.dumps({"codec": cfg.codec_id, "crf": cfg.crf_or_q, "bytes": len(stream), "bpp": bpp}))


def cmd_codec_decode(args):
    cfg = codecs.CodecConfig(_codec_id(args.codec), args.crf if args.crf is not None else 0)
    size = tuple(args.size) if args.size else None
    write_clip(args.out, codecs.decode(_read_bytes(args.inp), cfg, size))


def cmd_encode(args):
    from .pipeline import PipelineConfig, stream_bpp, uvc_encode
    conf = _read_json(args.config) if args.config else {}
    cfg = PipelineConfig(
        codecs.CodecConfig(_codec_id(_resolve(args, conf, "codec", "toy")), int(_resolve(args, conf, "crf", 47))),
        _resolve(args, conf, "mode", "uvc"),
        _resolve(args, conf, "model", None),
    )
    model = _load_model(cfg.model_path) if cfg.mode == "uvc" else None
    bs = uvc_encode(read_clip(args.inp), cfg.codec, model, cfg.mode)
    Path(args.out).write_bytes(bs.to_bytes())
    v, a, total = stream_bpp(bs)
    print(json.dumps({"mode": cfg.mode, "bpp_video": v, "bpp_analytic": a, "bpp_total": total}))


def cmd_decode(args):
    from .pipeline import uvc_decode
    bs = DualBitstream.from_bytes(_read_bytes(args.bitstream))
    mode = args.mode or bs.header.get("mode", "baseline")
    model = None
    if mode != "baseline":
        if not args.model:
            raise ConfigurationError(f"decoding a {mode!r} stream needs --model")
        model = _load_model(args.model)
    write_clip(args.out, uvc_decode(bs, model, mode))


def cmd_train(args):
    from .data import load_dataset
    from .training import TrainConfig, Trainer
    overrides = {
        "total_iters": args.steps, "seed": args.seed, "lr": args.lr, "batch": args.batch,
        "alpha": args.alpha, "variant": args.variant, "preset": args.preset,
    }
    if args.wo_edge:
        overrides["use_edge"] = False
    if args.sobel:
        overrides["edge_extractor"] = "sobel"
    if args.freeze_edge:
        overrides["freeze_edge"] = True
    clips, _ = load_dataset(args.data, as_uint8=True)
    out = Path(args.out)
    if args.resume:
        tr = Trainer.resume(args.resume, clips, out_dir=out)
    else:
        conf = _read_json(args.config) if args.config else {}
        cfg = TrainConfig.from_dict(conf, overrides)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
        tr = Trainer(cfg, clips, out_dir=out, init_from=args.init)

    def report(step, rec):
        if step % args.print_every == 0:
            print(f"step {step} total {rec.total:.4f} rate_bpp {rec.rate_bpp:.4f}", flush=True)

    tr.run(callback=report)
    print(f"final checkpoint: {out / 'final.npz'}")


def _load_oracle(path):
    from . import checkpoint as ckpt
    from .benchmark import ToyOracle
    arrays, meta = ckpt.load_checkpoint(path)
    if meta.get("kind") != "oracle":
        raise InputError(f"{path} is not an oracle checkpoint")
    net = ToyOracle(meta["t"], meta["n_classes"])
    ckpt.load_module(net, "oracle", arrays)
    net.eval()
    net.requires_grad_(False)
    return net


def cmd_bench_oracle(args):
    from . import checkpoint as ckpt
    from .benchmark import accuracy, toy_oracle_train
    from .data import N_CLASSES, load_dataset
    clips, labels = load_dataset(args.data)
    net = toy_oracle_train(clips, labels, epochs=args.epochs, seed=args.seed)
    ckpt.save_checkpoint(args.out, ckpt.state_arrays("oracle", net.state_dict()),
                         {"kind": "oracle", "t": int(clips.shape[1]), "n_classes": N_CLASSES})
    print(json.dumps({"train_accuracy": accuracy(net, clips, labels)}))


def cmd_bench_sweep(args):
    from .benchmark import analytic_share, rp_sweep, write_rp_csv
    from .data import load_dataset
    clips, labels = load_dataset(args.data)
    if args.limit:
        clips, labels = clips[:args.limit], labels[:args.limit]
    default = codecs.BASELINE_CRFS if args.pipeline == "baseline" else codecs.UVC_CRFS
    crfs = [int(c) for c in args.crfs.split(",")] if args.crfs else list(default)
    model = None
    if args.pipeline != "baseline":
        if not args.model:
            raise ConfigurationError(f"pipeline {args.pipeline!r} needs --model")
        model = _load_model(args.model)
    points = rp_sweep(args.pipeline, crfs, clips, labels, _load_oracle(args.oracle), model, _codec_id(args.codec))
    write_rp_csv(args.out, points)
    for row in analytic_share(points):
        print(json.dumps(row))


def cmd_bench_bd(args):
    from dataclasses import asdict
    from .benchmark import bd_metric, read_rp_csv
    res = asdict(bd_metric(read_rp_csv(args.anchor), read_rp_csv(args.test)))
    text = json.dumps(res, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_bench_plot(args):
    from .benchmark import plot_rp, read_rp_csv
    curves = {}
    for item in args.curve:
        name, sep, path = item.partition("=")
        if not sep:
            raise InputError(f"--curve expects NAME=CSV, got {item!r}")
        curves[name] = [p.rp() for p in read_rp_csv(path)]
    plot_rp(curves, args.out, title=args.title)


def cmd_export_edges(args):
    import torch
    from PIL import Image
    from .edge import sobel_edge
    clip = torch.from_numpy(read_clip(args.inp).astype(np.float32))
    if args.model:
        model = _load_model(args.model)
        with torch.no_grad():
            edges = model.edge_net(clip[None])[0]
    else:
        edges = sobel_edge(clip)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = np.clip(np.floor(edges[:, 0].numpy() * 255 + 0.5), 0, 255).astype(np.uint8)
    for i, frame in enumerate(maps):
        Image.fromarray(frame, mode="L").save(out / f"edge_{i:04d}.png")
    print(f"wrote {len(maps)} edge maps to {out}")


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="uvc", description="Understanding-oriented dual-stream video coding")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the procedural toy dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--t", type=int, default=4)
    g.add_argument("--h", type=int, default=64)
    g.add_argument("--w", type=int, default=64)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("codec", help="conventional video stream only")
    csub = c.add_subparsers(dest="codec_command", required=True)
    ce = csub.add_parser("encode")
    ce.add_argument("--codec", default="toy")
    ce.add_argument("--crf", type=int, required=True)
    ce.add_argument("--gop", type=int, default=16)
    ce.add_argument("--in", dest="inp", required=True)
    ce.add_argument("--out", required=True)
    ce.set_defaults(func=cmd_codec_encode)
    cd = csub.add_parser("decode")
    cd.add_argument("--codec", default="toy")
    cd.add_argument("--crf", type=int)
    cd.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    cd.add_argument("--in", dest="inp", required=True)
    cd.add_argument("--out", required=True)
    cd.set_defaults(func=cmd_codec_decode)

    e = sub.add_parser("encode", help="clip -> dual-stream container")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="JSON with codec, crf, mode, model")
    e.add_argument("--codec")
    e.add_argument("--crf", type=int)
    e.add_argument("--mode", choices=("uvc", "baseline", "0bit"))
    e.add_argument("--model")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="dual-stream container -> clip")
    d.add_argument("--bitstream", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--model")
    d.add_argument("--mode", choices=("uvc", "baseline", "0bit"))
    d.set_defaults(func=cmd_decode)

    t = sub.add_parser("train", help="train the networks on a dataset directory")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=("default", "desk"))
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--variant", choices=("uvc", "0bit"))
    t.add_argument("--wo-edge", action="store_true")
    t.add_argument("--sobel", action="store_true")
    t.add_argument("--freeze-edge", action="store_true")
    t.add_argument("--init", help="initialise weights from a checkpoint (0bit fine-tuning)")
    t.add_argument("--resume", help="continue a run from one of its checkpoints")
    t.add_argument("--print-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="rate-performance evaluation")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    bo = bsub.add_parser("oracle", help="train the toy classifier on clean clips")
    bo.add_argument("--data", required=True)
    bo.add_argument("--out", required=True)
    bo.add_argument("--epochs", type=int, default=10)
    bo.add_argument("--seed", type=int, default=0)
    bo.set_defaults(func=cmd_bench_oracle)
    bs = bsub.add_parser("sweep", help="CRF sweep -> CSV")
    bs.add_argument("--data", required=True)
    bs.add_argument("--oracle", required=True)
    bs.add_argument("--pipeline", choices=("baseline", "uvc", "0bit"), default="baseline")
    bs.add_argument("--model")
    bs.add_argument("--codec", default="toy")
    bs.add_argument("--crfs", help="comma-separated list")
    bs.add_argument("--limit", type=int)
    bs.add_argument("--out", required=True)
    bs.set_defaults(func=cmd_bench_sweep)
    bb = bsub.add_parser("bd", help="BD-metric and BDBR of two CSV curves")
    bb.add_argument("--anchor", required=True)
    bb.add_argument("--test", required=True)
    bb.add_argument("--out")
    bb.set_defaults(func=cmd_bench_bd)
    bp = bsub.add_parser("plot", help="RP curves -> SVG")
    bp.add_argument("--curve", action="append", required=True, help="NAME=CSV, repeatable")
    bp.add_argument("--out", required=True)
    bp.add_argument("--title", default="Rate-performance")
    bp.set_defaults(func=cmd_bench_plot)

    x = sub.add_parser("export-edges", help="edge maps as 8-bit grayscale PNGs")
    x.add_argument("--in", dest="inp", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--model", help="use the checkpoint's Edge-Net instead of Sobel")
    x.set_defaults(func=cmd_export_edges)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UVCError as exc:
        print(f"uvc: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
