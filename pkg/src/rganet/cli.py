"""Command-line entry point: synth, train, infer, eval, gradcheck, ablate, inspect."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, network
from .metrics import metrics as image_metrics
from .train import TrainConfig, evaluate, restore, train


def load_config(path):
    """JSON with optional "model", "train", "augment" and "schedule" sections.

    A file without a "model" key is read as a bare model config.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    model_d = raw.get("model", raw if "model" not in raw and not
                      {"train", "augment", "schedule"} & set(raw) else {})
    model = network.ModelConfig.from_dict(model_d)
    train_d = dict(raw.get("train", {}))
    sched = raw.get("schedule", {})
    for src, dst in (("eta_max", "lr"), ("eta_min", "eta_min"), ("total_steps", "steps"),
                     ("warmup_steps", "warmup_steps")):
        if src in sched:
            train_d[dst] = sched[src]
    if "augment" in raw:
        train_d["augment"] = raw["augment"]
    return model, TrainConfig.from_dict(train_d)


def _apply_overrides(hyper: TrainConfig, args) -> TrainConfig:
    if getattr(args, "steps", None) is not None:
        hyper.steps = args.steps
    if getattr(args, "batch", None) is not None:
        hyper.batch_size = args.batch
    return hyper


def cmd_synth(args) -> int:
    if args.data:
        pairs = data.smoke_clean_images(args.data, args.seed)
    else:
        pairs = data.make_synthetic_pairs(args.count, args.size, args.seed)
    data.save_dataset(args.out, pairs)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    model, hyper = load_config(args.config)
    hyper = _apply_overrides(hyper, args)
    dataset = data.load_dataset(args.data)
    out = Path(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.rgan"
    params = optimizer = None
    if args.resume:
        model, params, optimizer, _ = checkpoint.load_checkpoint(args.resume)
    res = train(model, dataset, hyper, seed=args.seed, params=params, optimizer=optimizer,
                log_path=out / "loss.tsv", checkpoint_path=ckpt)
    last = res.log[-1] if res.log else None
    print(f"trained to step {res.optimizer.step}" + (f", final loss {last.total:.6f}" if last else ""))
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_infer(args) -> int:
    cfg, params, _, _ = checkpoint.load_checkpoint(args.checkpoint)
    src = Path(args.data)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() == ".png")
    out = Path(args.out)
    for f in files:
        img = data.load_png(f)
        pred = restore(cfg, params, img[None])[0]
        data.save_png(out / f.name, pred)
    print(f"restored {len(files)} images into {out}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, target_dir = Path(args.pred), Path(args.data)
    if (target_dir / "target").is_dir():
        target_dir = target_dir / "target"
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    targets = {p.stem: p for p in sorted(target_dir.glob("*.png"))}
    missing = sorted(set(targets) - set(preds))
    if missing:
        raise data.PairingError(f"no prediction for {missing[0]!r}")
    per_image = {}
    for stem in sorted(targets):
        per_image[stem] = image_metrics(data.load_png(preds[stem]), data.load_png(targets[stem]))
    keys = ("psnr", "ssim", "ms_ssim", "mae", "ciede2000")
    report = {k: float(np.mean([m[k] for m in per_image.values()])) if per_image else float("nan")
              for k in keys}
    report["count"] = len(per_image)
    report["per_image"] = per_image
    text = json.dumps(report, indent=2, sort_keys=False)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    ok = True
    for r in run_suite(seed=args.seed, full_network=not args.quick):
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{status}  {r.name:32s} err={r.error:.3e} tol={r.tolerance:.0e} ({r.seconds:.1f}s)")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    model, hyper = load_config(args.config)
    hyper = _apply_overrides(hyper, args)
    model = network.make_ablation_variant(model, args.case)
    dataset = data.load_dataset(args.data)
    held = data.load_dataset(args.eval_data) if args.eval_data else None
    out = Path(args.out)
    res = train(model, dataset, hyper, seed=args.seed, log_path=out / "loss.tsv",
                checkpoint_path=out / f"{args.case}.rgan")
    report = {"case": args.case, "param_count": network.param_count(model), "steps": res.optimizer.step}
    if held:
        report["eval"] = evaluate(model, res.params, held, hyper.lam)
    print(json.dumps(report, indent=2))
    (out / f"{args.case}.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        model, params, opt, _ = checkpoint.load_checkpoint(args.checkpoint)
        print(json.dumps(model.to_dict(), indent=2))
        print(f"param_count: {params.count()}")
        if opt is not None:
            print(f"optimizer_step: {opt.step}")
        return 0
    model, _ = load_config(args.config)
    print(json.dumps(model.to_dict(), indent=2))
    print(f"param_count: {network.param_count(model)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rganet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build a paired dataset with synthetic smoke")
    p.add_argument("--data", help="directory of clean PNGs (omit for procedural scenes)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=200, help="procedural scenes to generate")
    p.add_argument("--size", type=int, default=64, help="procedural scene size")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a paired dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore a directory of PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics of restored vs. target PNGs")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", "--target", dest="data", required=True,
                   help="target PNGs, or a paired dataset root with a target/ directory")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="skip the full-network check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train (and evaluate) an ablation variant")
    p.add_argument("--config")
    p.add_argument("--case", required=True, choices=network.ABLATIONS)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="print a config and its parameter count")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config")
    g.add_argument("--checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
