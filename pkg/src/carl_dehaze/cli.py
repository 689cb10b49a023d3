"""Command-line entry points: synth, dcp, train, dehaze, eval, ablate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .imagecore import load_image, save_image, psnr, ssim
from .hazesynth import DensityLadder, DEFAULT_LABELS
from .dcp import DcpConfig, dehaze_dcp
from .backbone import load_checkpoint
from .data import build_clean_corpus, ingest_reside_its, synthesize_dataset
from .trainer import (
    DatasetIndex,
    TrainConfig,
    baseline_report,
    dehaze_image,
    evaluate,
    run_ablation,
    train,
)


def _parse_floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v]


def _labels_for(betas):
    if len(betas) == len(DEFAULT_LABELS):
        return list(DEFAULT_LABELS)
    return [f"b{b:g}" for b in betas]


def cmd_make_scenes(args):
    stems = build_clean_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(stems)} clean scenes under {args.out}/clean")


def cmd_synth(args):
    betas = _parse_floats(args.betas)
    ladder = DensityLadder(betas=betas, labels=_labels_for(betas))
    airlight = (args.airlight, args.airlight, args.airlight)
    manifest = synthesize_dataset(
        args.out, ladder, airlight, seed=args.seed,
        clean_dir=args.clean_dir, with_dcp=not args.no_dcp,
    )
    print(f"synthesized {len(manifest['scenes'])} scenes x {len(betas)} densities "
          f"under {args.out}")


def cmd_dcp(args):
    cfg = DcpConfig(patch=args.patch, omega=args.omega)
    in_dir, out_dir = Path(args.input), Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for p in sorted(in_dir.glob("*.png")):
        img = load_image(p)
        dehazed, info = dehaze_dcp(img, cfg)
        save_image(dehazed, out_dir / p.name)
        (out_dir / (p.stem + ".json")).write_text(json.dumps(info, indent=2))
        count += 1
    print(f"dehazed {count} images into {out_dir}")


def cmd_train(args):
    config = TrainConfig.from_json(Path(args.config).read_text())
    result = train(config, args.data_root, args.out, variant=args.variant)
    print(json.dumps(result["report"], indent=2))


def cmd_dehaze(args):
    net, _ = load_checkpoint(Path(args.ckpt) / "checkpoint" / "student")
    in_dir, out_dir = Path(args.input), Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for p in sorted(in_dir.glob("*.png")):
        save_image(dehaze_image(net, load_image(p)), out_dir / p.name)
        count += 1
    print(f"dehazed {count} images into {out_dir}")


def cmd_eval(args):
    net, _ = load_checkpoint(Path(args.ckpt) / "checkpoint" / "student")
    index = DatasetIndex(args.data_root)
    report = {
        "model": evaluate(net, index),
        "baseline_hazy": baseline_report(index),
    }
    Path(args.report).write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


def cmd_ablate(args):
    config = TrainConfig.from_json(Path(args.config).read_text())
    variants = [v for v in args.variants.split(",") if v]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    sweep = _parse_floats(args.lambda2_sweep) if args.lambda2_sweep else None
    report = run_ablation(
        config, variants, seeds, args.data_root, args.eval_root,
        out_path=args.out, lambda2_values=sweep,
    )
    print(json.dumps({k: v for k, v in report.items() if k != "rows"}, indent=2))
    for row in report["rows"]:
        print(f"{row['variant']:>12}  psnr={row['psnr_median']:.2f}  "
              f"ssim={row['ssim_median']:.4f}  "
              f"gap={row['consistency_gap_median']:.5f}")


def cmd_ingest_reside(args):
    manifest = ingest_reside_its(args.hazy, args.clean, args.out)
    print(f"ingested {len(manifest['scenes'])} scenes under {args.out}")


def cmd_metrics(args):
    pred, gt = load_image(args.pred), load_image(args.gt)
    report = {"psnr_db": psnr(pred, gt), "ssim": ssim(pred, gt)}
    print(json.dumps(report, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carl-dehaze")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scenes", help="generate procedural clean scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_scenes)

    p = sub.add_parser("synth", help="synthesize a multi-density hazy dataset")
    p.add_argument("--clean-dir", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--betas", default="0.4,0.8,1.2")
    p.add_argument("--airlight", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-dcp", action="store_true",
                   help="skip precomputing DCP outputs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dcp", help="dark-channel-prior dehazing of a directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--patch", type=int, default=15)
    p.add_argument("--omega", type=float, default=0.95)
    p.set_defaults(func=cmd_dcp)

    p = sub.add_parser("train", help="train the dehazing network")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="full", choices=["full", "l1", "l1+carl"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dehaze", help="run a trained model on a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the objective-variant ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--eval-root", required=True)
    p.add_argument("--variants", default="l1,l1+carl,full")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default=None)
    p.add_argument("--lambda2-sweep", default=None,
                   help="comma-separated lambda2 values for the sweep")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ingest-reside-its",
                       help="map RESIDE-ITS style names onto the dataset layout")
    p.add_argument("--hazy", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_reside)

    p = sub.add_parser("metrics", help="PSNR/SSIM of one image pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
