"""Command line entry point: ``vehiclemae <subcommand>``.

Exit codes: 0 success, 1 invalid input or failed check, 2 runtime failure.
``VEHICLEMAE_OUT`` and ``VEHICLEMAE_SEED`` supply ``--out`` / ``--seed``
when the flags are omitted.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path


from .exceptions import ValidationError, VehicleMAEError

logger = logging.getLogger("vehiclemae")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _out_dir(args, default: str) -> Path:
    return Path(args.out or os.environ.get("VEHICLEMAE_OUT") or default)


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("VEHICLEMAE_SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"VEHICLEMAE_SEED must be an integer, got {env!r}") from None


def cmd_pretrain(args) -> int:
    from .config import load_config, preset
    from .data import PretrainData
    from .training import train

    if not args.manifest:
        raise ValidationError("pretrain needs --manifest")
    config = load_config(args.config, args.preset) if args.config else preset(args.preset or "tiny")
    overrides = {}
    if args.seed is not None or os.environ.get("VEHICLEMAE_SEED"):
        overrides["seed"] = _seed(args)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    config = dataclasses.replace(config, **overrides)
    data = PretrainData.from_manifest(args.manifest, corpus_path=args.corpus)
    out = _out_dir(args, "runs/pretrain")
    result = train(config, data, out_dir=out, resume=args.resume)
    last = result.metrics[-1] if result.metrics else None
    print(f"trained {result.state.step} steps; checkpoint {result.checkpoint}")
    if last:
        print("last step: " + ", ".join(f"{k}={last[k]:.6g}" for k in ("l_r", "l_mim", "l_cls", "l_cf", "l_cs", "l_vt", "total")))
    return EXIT_OK


def cmd_mask_plan(args) -> int:
    from .data import load_manifest, read_image
    from .geometry import Annotation, build_patch_grid
    from .masking import MaskConfig, MaskStrategy, box_guided_mask, random_mask, symmetry_guided_mask, validate_mask_plan
    from .render import render_plan_overlay

    records = load_manifest(args.manifest)
    if not 0 <= args.index < len(records):
        raise ValidationError(f"record index {args.index} out of range (manifest has {len(records)})")
    rec = records[args.index]
    image = read_image(Path(args.manifest).parent / rec.image_path)
    h, w = image.shape[:2]
    ann = rec.annotation
    ann.check_within(h, w)
    grid = build_patch_grid(h, w, args.patch_size)
    config = MaskConfig(args.ratio, args.fg_delta, _seed(args))

    plans = [random_mask(grid, config)]
    if ann.box is not None:
        plans.append(box_guided_mask(grid, ann.box, config))
    if ann.angle is not None:
        plans.append(symmetry_guided_mask(grid, ann, config))

    out = _out_dir(args, "runs/mask-plan")
    out.mkdir(parents=True, exist_ok=True)
    for plan in plans:
        name = plan.strategy.value.lower()
        render_plan_overlay(image, grid, plan, ann).save(out / f"record{args.index:05d}_{name}.png")
        with open(out / f"record{args.index:05d}_{name}.json", "w", encoding="utf-8") as fh:
            json.dump(plan.to_record(), fh)
        check_ann = ann if plan.strategy is MaskStrategy.SYMMETRY_GUIDED else (
            Annotation(ann.box) if plan.strategy is MaskStrategy.BOX_GUIDED else Annotation()
        )
        report = validate_mask_plan(plan, grid, check_ann, config)
        status = "ok" if report.passed else "FAIL: " + "; ".join(report.messages)
        print(f"{plan.strategy.value:16s} masked={plan.masked_count:4d} swaps={len(plan.swaps):3d} {status}")
    return EXIT_OK


def cmd_check_grads(args) -> int:
    from .gradcheck import TOLERANCE, check_all

    worst = check_all(seed=_seed(args, 7), instances=args.instances)
    print(f"{'loss':8s} {'max rel err':>12s}  status")
    ok = True
    for name, err in worst.items():
        passed = err <= TOLERANCE
        ok &= passed
        print(f"{name:8s} {err:12.3e}  {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_gen_prompts(args) -> int:
    from .data import add_prompts, load_manifest, write_manifest

    records = load_manifest(args.manifest, check_files=True)
    updated = add_prompts(records, Path(args.manifest).parent)
    target = args.output or args.manifest
    write_manifest(target, updated)
    print(f"wrote {sum(r.has_pair for r in updated)} prompts for {len(updated)} records to {target}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import write_synthetic_dataset

    out = _out_dir(args, "data/synthetic")
    manifest = write_synthetic_dataset(out, args.n, seed=_seed(args), image_size=args.image_size, corpus_size=args.corpus_size)
    print(f"wrote {args.n} samples; manifest {manifest}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .render import plot_metrics
    from .training import read_metrics

    rows = read_metrics(args.metrics)
    if not rows:
        raise ValidationError(f"{args.metrics} has no metric rows")
    out = _out_dir(args, "runs/plots")
    paths = plot_metrics(rows, out)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vehiclemae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--out", help="output directory (env VEHICLEMAE_OUT)")
        p.add_argument("--seed", type=int, help="random seed (env VEHICLEMAE_SEED)")
        if manifest:
            p.add_argument("--manifest", help="JSONL manifest path")

    p = sub.add_parser("pretrain", help="run pre-training")
    common(p, manifest=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=("tiny", "paper"))
    p.add_argument("--corpus", help="attribute corpus (defaults to corpus.txt beside the manifest)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("mask-plan", help="render mask plans for one manifest record")
    common(p, manifest=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--fg-delta", type=float, default=0.10)
    p.add_argument("--patch-size", type=int, default=16)
    p.set_defaults(func=cmd_mask_plan)

    p = sub.add_parser("check-grads", help="finite-difference check of every loss")
    common(p)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_check_grads)

    p = sub.add_parser("gen-prompts", help="write template prompts into a manifest")
    common(p, manifest=True)
    p.add_argument("--output", help="write here instead of updating the manifest in place")
    p.set_defaults(func=cmd_gen_prompts)

    p = sub.add_parser("synth", help="write a synthetic manifest and images")
    common(p)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--corpus-size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot", help="plot loss curves from a metrics file")
    common(p)
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "manifest", "") is None and args.command in ("mask-plan", "gen-prompts"):
        print(f"error: {args.command} needs --manifest", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (VehicleMAEError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
