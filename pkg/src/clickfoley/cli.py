"""Command-line entry points for the full lifecycle.

    clickfoley prepare-data --source toy --out corpus/ --classes 8 --per-class 20
    clickfoley train-ocav   --manifest corpus/ --out ckpts/ocav.npz
    clickfoley train-ldm    --manifest corpus/ --ocav-ckpt ckpts/ocav.npz --out ckpts/ldm.npz
    clickfoley generate     --video v.avi --clicks "0:112,112,+" --ckpt-dir ckpts --out out.wav
    clickfoley evaluate     --generated gen/ --reference ref/ --embedder toy --report r.json
    clickfoley serve        --ckpt-dir ckpts

Every command accepts --config FILE (JSON) and repeated --set key=value
overrides; --print-config shows the effective configuration. Clicks use
the mini-grammar ``frame:x,y,{+|-}`` joined by ``;``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ClickFoleyError, ConfigError


def parse_clicks(spec: str):
    """``frame:x,y,{+|-}`` items separated by ``;``."""
    from .segmentation import NEGATIVE, POSITIVE, Click

    clicks = []
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            frame_part, rest = item.split(":", 1)
            x_str, y_str, pol = rest.split(",")
            polarity = {"+": POSITIVE, "-": NEGATIVE}[pol.strip()]
            clicks.append(Click(int(frame_part), int(x_str), int(y_str), polarity))
        except (ValueError, KeyError) as exc:
            raise ClickFoleyError(
                f"bad click {item!r}: expected frame:x,y,+ or frame:x,y,-"
            ) from exc
    if not clicks:
        raise ClickFoleyError("no clicks given")
    return clicks


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the effective config")


def _load_config(args):
    from .config import Config

    cfg = Config.load(path=args.config, overrides=args.set)
    if args.print_config:
        print(cfg)
    return cfg


def cmd_prepare_data(args) -> int:
    from . import dataset

    cfg = _load_config(args)
    if args.source == "toy":
        manifest = dataset.generate_toy_corpus(
            n_classes=args.classes,
            per_class=args.per_class,
            seed=args.seed,
            out_dir=args.out,
            duration=args.duration,
        )
    else:
        raise ClickFoleyError(
            "external source needs a prebuilt sample store; score and select it "
            "with the library API (dataset.score_sample / select_top_k)"
        )
    print(f"wrote manifest with {len(manifest.entries)} entries to {manifest.root}")
    return 0


def _load_split(manifest_path, split):
    from . import dataset

    manifest = dataset.Manifest.load(manifest_path)
    ids = manifest.ids(split)
    if not ids:
        raise ClickFoleyError(f"manifest has no {split} samples")
    return manifest, [dataset.load_triplet(manifest, i) for i in ids]


def cmd_train_ocav(args) -> int:
    from .encoders import EncoderConfig
    from .ocav import OCAVConfig, train_ocav

    cfg = _load_config(args)
    _, triplets = _load_split(args.manifest, "train")
    enc_cfg = EncoderConfig(**{k: cfg[f"enc.{k}"] for k in (
        "d", "video_channels", "mask_channels", "audio_channels", "n_mels",
        "temporal_stride", "spatial_pool", "seed")})
    train_cfg = OCAVConfig(
        batch_size=cfg["ocav.batch_size"],
        temperature=cfg["ocav.temperature"],
        clip_seconds=cfg["ocav.clip_seconds"],
        lr=cfg["ocav.lr"],
        steps=args.steps if args.steps is not None else cfg["ocav.steps"],
        seed=cfg["ocav.seed"],
        mlm_prob=cfg["aug.mlm_prob"],
        hop=cfg["media.hop_ocav"],
    )
    log_path = Path(args.out).with_suffix(".log.jsonl")
    train_ocav(triplets, train_cfg, enc_cfg, out_path=args.out, log_path=log_path)
    print(f"wrote checkpoint {args.out} (log: {log_path})")
    return 0


def cmd_train_ldm(args) -> int:
    from .diffusion import LdmConfig
    from .pipeline import train_ldm

    cfg = _load_config(args)
    _, triplets = _load_split(args.manifest, "train")
    ldm_cfg = LdmConfig(
        t_steps=cfg["ldm.t_steps"],
        beta_start=cfg["ldm.beta_start"],
        beta_end=cfg["ldm.beta_end"],
        latent_channels=cfg["ldm.latent_channels"],
        ae_channels=cfg["ldm.ae_channels"],
        denoiser_channels=cfg["ldm.denoiser_channels"],
        time_dim=cfg["ldm.time_dim"],
        cond_dropout=cfg["ldm.cond_dropout"],
        lr=cfg["ldm.lr"],
        steps=args.steps if args.steps is not None else cfg["ldm.steps"],
        seed=cfg["ldm.seed"],
    )
    log_path = Path(args.out).with_suffix(".log.jsonl")
    train_ldm(triplets, args.ocav_ckpt, ldm_cfg, out_path=args.out, log_path=log_path)
    print(f"wrote checkpoint {args.out} (log: {log_path})")
    return 0


def cmd_generate(args) -> int:
    from . import media, pipeline, segmentation
    from .diffusion import SamplerConfig

    cfg = _load_config(args)
    clicks = parse_clicks(args.clicks)
    anchors = {c.frame_index for c in clicks}
    if len(anchors) != 1:
        raise ClickFoleyError("all clicks must target one anchor frame")
    video = media.load_video(args.video, target_fps=cfg["media.fps"], side=cfg["media.side"])
    anchor = anchors.pop()
    if not 0 <= anchor < video.t:
        raise ClickFoleyError(f"anchor frame {anchor} outside [0, {video.t})")
    seg_cfg = segmentation.SegmenterConfig(color_tolerance=cfg["seg.color_tolerance"],
                                           accept_iou=cfg["seg.accept_iou"])
    mask = segmentation.segment_from_clicks(video.frames[anchor], clicks, seg_cfg)
    track = segmentation.propagate_mask(video, anchor, mask, seg_cfg)
    assets = pipeline.load_assets(args.ckpt_dir)
    sampler = SamplerConfig(steps=args.steps, cfg_scale=args.cfg_scale, seed=args.seed,
                            mode=args.mode)
    wave, _ = pipeline.generate_audio(
        video, track, assets, sampler, griffin_lim_iters=cfg["media.griffin_lim_iters"]
    )
    media.write_wav(wave, args.out)
    print(f"wrote {wave.duration:.3f}s of audio to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from . import metrics

    _load_config(args)
    if args.embedder == "toy":
        embedder = metrics.TwoTowerEmbedder(seed=0)
    else:
        raise ClickFoleyError("external joint embedders must be wired in through the API")
    generated = metrics.load_eval_samples(args.generated)
    reference = metrics.load_eval_samples(args.reference)
    report = metrics.evaluate(generated, reference, embedder)
    report.save(args.report)
    print(f"cav_mean={report.cav_mean:.4f} fd={report.fd:.4f} -> {args.report}")
    return 0


def cmd_serve(args) -> int:
    from .config import Config
    from .service import serve

    cfg = Config.load(path=args.config, overrides=args.set)
    host = args.host or cfg["service.host"]
    port = args.port if args.port is not None else cfg["service.port"]
    ckpt_dir = args.ckpt_dir or cfg["service.ckpt_dir"] or None
    static = args.static_dir
    if static is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static = str(bundled) if bundled.is_dir() else None
    serve(host=host, port=int(port), ckpt_dir=ckpt_dir, config=cfg, static_dir=static)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickfoley", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build a corpus and its manifest")
    p.add_argument("--source", choices=["toy", "external"], default="toy")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=10.0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-ocav", help="contrastive alignment stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_ocav)

    p = sub.add_parser("train-ldm", help="latent diffusion stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ocav-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_ldm)

    p = sub.add_parser("generate", help="click-to-audio, end to end")
    p.add_argument("--video", required=True)
    p.add_argument("--clicks", required=True, help='e.g. "0:112,112,+;0:30,40,-"')
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg-scale", type=float, default=4.5)
    p.add_argument("--mode", choices=["ancestral", "deterministic"], default="ancestral")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="correspondence + distribution metrics")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--embedder", choices=["toy", "external"], default="toy")
    p.add_argument("--report", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the interactive HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ckpt-dir", default=None)
    p.add_argument("--static-dir", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ClickFoleyError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
