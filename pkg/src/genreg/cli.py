"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 missing artifacts.
"""

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import ingest, metrics, pipeline
from .projection import backproject, render_depth

EXIT_VALIDATION = 2
EXIT_MISSING = 3


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    for f in fields(ingest.RunConfig):
        kind = type(getattr(ingest.RunConfig(), f.name))
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            type=kind, default=None, help=f"override {f.name}")


def _build_config(args):
    cfg = ingest.RunConfig()
    if args.config:
        cfg = ingest.load_config(args.config, base=cfg)
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(ingest.RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return cfg.replace(**overrides)


def _workers(args):
    if getattr(args, "workers", None):
        return args.workers
    return int(os.environ.get("GENREG_WORKERS", "1"))


def cmd_synth(args):
    cfg = _build_config(args)
    if args.corpus:
        n = pipeline.run_make_corpus(cfg, args.out)
        print(f"wrote {n} corpus items to {args.out}")
    else:
        manifest = pipeline.run_synth(cfg, args.out, repetitive=not args.varied_boxes)
        print(f"wrote {len(manifest['pairs'])} pairs to {args.out}")
    return 0


def cmd_project(args):
    cfg = _build_config(args)
    intr = pipeline.default_intrinsics(cfg.image_size)
    if args.direction == "cloud-to-depth":
        cloud = ingest.load_ply(args.input)
        depth = render_depth(cloud, intr, splat_radius=cfg.splat_radius)
        ingest.save_depth(depth, args.out)
    else:
        depth = ingest.load_depth(args.input, intr)
        ingest.save_ply(backproject(depth), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args):
    cfg = _build_config(args)
    images, depths = pipeline.load_corpus(args.corpus_dir, cfg.image_size)
    log = pipeline.run_train(
        cfg, images, depths, args.out,
        mask_condition_only=args.condition_only,
        resume=args.resume,
        log_path=args.log,
    )
    final = [l for _, _, l in log[-10:]]
    print(f"trained {len(log)} steps; final losses {[round(x, 4) for x in final]}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_generate(args):
    cfg = _build_config(args)
    manifest = pipeline.load_manifest(args.manifest)
    written = pipeline.run_generate(manifest, cfg, args.checkpoint, args.out,
                                    coupled=not args.independent)
    print(f"generated {len(written)} image pairs in {args.out}")
    return 0


def cmd_extract(args):
    cfg = _build_config(args)
    from .descriptor import FpfhExtractor
    cloud = ingest.load_ply(args.input)
    radius = cfg.fpfh_radius if cfg.fpfh_radius > 0 else None
    desc = FpfhExtractor(radius=radius, normal_k=cfg.normal_k).transform(cloud)
    ingest.save_external_descriptors(desc, args.out)
    print(f"wrote {len(desc)}x{desc.dim} descriptors to {args.out}")
    return 0


def cmd_fuse(args):
    cfg = _build_config(args)
    cloud = ingest.load_ply(args.cloud)
    geo = ingest.load_external_descriptors(args.geo, cloud)
    rgb = ingest.load_external_descriptors(args.rgb, cloud)
    from .fusion import DescriptorFusion
    fuser = DescriptorFusion(weight=cfg.fusion_weight, color_dim=cfg.color_dim,
                             normalize=bool(cfg.normalize_fusion_inputs))
    fuser.fit(rgb)
    fused = fuser.transform(geo, rgb)
    ingest.save_external_descriptors(fused, args.out)
    print(f"wrote {len(fused)}x{fused.dim} fused descriptors to {args.out}")
    return 0


def cmd_register(args):
    cfg = _build_config(args)
    manifest = pipeline.load_manifest(args.manifest)
    report, _ = pipeline.run_register(
        manifest, args.mode, cfg,
        checkpoint_path=args.checkpoint,
        workers=_workers(args),
        out_dir=args.out,
        generated_dir=args.generated,
    )
    print(metrics.format_table(report), end="")
    return 0


def cmd_eval(args):
    cfg = _build_config(args)
    manifest = pipeline.load_manifest(args.manifest)
    report = pipeline.run_eval(args.poses, manifest, cfg)
    if args.out:
        metrics.write_csv(report, args.out)
    print(metrics.format_table(report), end="")
    return 0


def cmd_report(args):
    import csv
    with open(args.csv) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        print("empty report", file=sys.stderr)
        return EXIT_VALIDATION
    report = metrics.aggregate(
        [r["pair_id"] for r in rows],
        [float(r["rot_deg"]) for r in rows],
        [float(r["trans_cm"]) for r in rows],
        [float(r["chamfer_mm"]) for r in rows],
        inlier_ratio=[float(r["inlier_ratio"]) for r in rows if "inlier_ratio" in r],
    )
    print(metrics.format_table(report), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="genreg",
        description="generative point cloud registration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic view pairs or a training corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", action="store_true", help="emit training corpus items")
    p.add_argument("--varied-boxes", action="store_true",
                   help="vary box geometry instead of repetitive boxes")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("project", help="convert cloud to depth or depth to cloud")
    p.add_argument("direction", choices=["cloud-to-depth", "depth-to-cloud"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", help="train the coupled diffusion model")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--condition-only", action="store_true",
                   help="update only the condition branch (fine-tuning regime)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample image pairs for manifest pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--independent", action="store_true",
                   help="uncoupled per-half denoising")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="compute FPFH descriptors for a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fuse", help="fuse geometric and color descriptor files")
    p.add_argument("--cloud", required=True)
    p.add_argument("--geo", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("register", help="run registration over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=pipeline.MODES, default="geo-only")
    p.add_argument("--checkpoint", help="diffusion checkpoint for generative modes")
    p.add_argument("--generated", help="directory of pre-generated images")
    p.add_argument("--out", help="directory for poses and reports")
    p.add_argument("--workers", type=int, help="worker pool size")
    _add_config_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate saved poses against manifest GT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", help="CSV output path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a report table from a CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (pipeline.MissingArtifactError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, ingest.ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
