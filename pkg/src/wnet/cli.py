"""Command-line entry point: ``python -m wnet <subcommand> ...``.

Exit status is 0 on success, 1 on invalid arguments or data, 2 on runtime
failures. Every source of randomness is derived from ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, render
from .data import FormatError, ValidationError, load_dataset, write_label_pgm
from .network import ModelConfig, ShapeError, forward, load_checkpoint
from .phantom import PhantomConfig, PhantomConfigError, generate_dataset
from .preprocess import prepare_sample
from .training import TrainConfig, dataset_size_ablation, multi_seed_report, prepare_data, train

log = logging.getLogger("wnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wnet", description="W-Net ultrasound RF + grey segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ph = sub.add_parser("phantom", help="generate a synthetic phantom dataset")
    ph.add_argument("--out", required=True)
    ph.add_argument("--count", type=int, required=True)
    ph.add_argument("--height", type=int)
    ph.add_argument("--width", type=int)
    ph.add_argument("--seed", type=int)
    ph.add_argument("--config", help="PhantomConfig JSON file")
    ph.add_argument("--split", help="train,val,test ratios, e.g. 0.6,0.2,0.2")

    tr = sub.add_parser("train", help="train a model (or a multi-seed / dataset-size study)")
    tr.add_argument("--data", required=True)
    tr.add_argument("--model", choices=("wnet", "unet-grey", "unet-grey-rf"))
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--seeds", type=_ints, help="comma-separated seeds for a multi-seed report")
    tr.add_argument("--subset-sizes", type=_ints, help="training subset sizes for an ablation")
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="TrainConfig JSON file")
    tr.add_argument("--channels", type=int, help="grey base channels C")
    tr.add_argument("--rf-channels", type=int, help="RF base channels R")
    tr.add_argument("--flip-tta", action="store_true", default=None)
    tr.add_argument("--augment", action="store_true", default=None)
    tr.add_argument("--no-gabor", action="store_true", default=None)

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--flip-tta", action="store_true")
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="predict one sample and write label map + overlays")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--sample", required=True)
    pr.add_argument("--data", help="dataset directory (default: the one the checkpoint was trained on)")
    pr.add_argument("--out", required=True)

    gb = sub.add_parser("gabor", help="dump the RF-branch Gabor banks")
    gb.add_argument("--out", required=True)
    gb.add_argument("--kernels", type=int, default=4)

    ac = sub.add_parser("activations", help="overlay block activations for one sample")
    ac.add_argument("--ckpt", required=True)
    ac.add_argument("--sample", required=True)
    ac.add_argument("--block", required=True)
    ac.add_argument("--data")
    ac.add_argument("--out", required=True)
    return p


def cmd_phantom(args) -> None:
    cfg = PhantomConfig.load(args.config) if args.config else PhantomConfig()
    over = {"rows": args.height, "cols": args.width, "seed": args.seed}
    if args.split:
        over["split"] = tuple(float(x) for x in args.split.split(","))
    cfg = replace(cfg, **{k: v for k, v in over.items() if v is not None})
    manifest = generate_dataset(cfg, args.count, args.out)
    print(f"wrote {len(manifest.entries)} samples to {args.out}")


def _ceil16(n: int) -> int:
    return -(-n // 16) * 16


def _train_config(args) -> TrainConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    samples, _ = load_dataset(args.data)
    if not samples:
        raise ValidationError(f"dataset {args.data} is empty")
    model_doc = dict(doc.pop("model", {}))
    model_doc.setdefault("rows", _ceil16(max(s.shape[0] for s in samples)))
    model_doc.setdefault("cols", samples[0].shape[1])
    for flag, key in (("model", "model"), ("channels", "base_channels"), ("rf_channels", "rf_base_channels")):
        if getattr(args, flag) is not None:
            model_doc[key] = getattr(args, flag)
    if args.channels is not None and args.rf_channels is None and "rf_base_channels" not in model_doc:
        model_doc["rf_base_channels"] = max(1, args.channels // 4)
    flags = {
        "epochs": args.epochs, "batch_size": args.batch, "learning_rate": args.lr, "seed": args.seed,
        "eval_flip_tta": args.flip_tta, "augment": args.augment,
        "gabor_init": None if args.no_gabor is None else not args.no_gabor,
    }
    doc.update({k: v for k, v in flags.items() if v is not None})
    doc.update(data=args.data, out=args.out, model=ModelConfig.from_json(model_doc))
    return TrainConfig(**doc)


def cmd_train(args) -> None:
    cfg = _train_config(args)
    if args.seeds and len(args.seeds) == 1:
        cfg = replace(cfg, seed=args.seeds[0])
    if args.seeds and len(args.seeds) > 1:
        result = multi_seed_report(cfg, args.seeds, args.out)
        print(result["table"])
    elif args.subset_sizes:
        result = dataset_size_ablation(cfg, args.subset_sizes, args.out)
        print(result["table"])
    else:
        rec = train(cfg, progress=args.verbose)
        last = rec.rows[-1]
        print(f"trained {cfg.model.model} for {cfg.epochs} epochs ({rec.steps} steps); "
              f"final loss {last['train_loss']:.4f}; checkpoint {rec.last_checkpoint}")


def _prepared(data_dir, ckpt_meta, model) -> dict:
    data_dir = data_dir or ckpt_meta.get("train_config", {}).get("data")
    if not data_dir:
        raise ValidationError("no --data given and the checkpoint does not record its dataset")
    samples, _ = load_dataset(data_dir)
    return {s.id: s for s in samples}, model.config.rows


def cmd_eval(args) -> None:
    model, meta = load_checkpoint(args.ckpt)
    cfg = TrainConfig(data=args.data, model=model.config)
    data = prepare_data(cfg)
    report = metrics.evaluate_dataset(model, getattr(data, args.split), args.flip_tta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.dump_report(report, out / "report.json")
    table = metrics.format_report(report, model.config.model)
    (out / "report.txt").write_text(table + "\n")
    print(table)


def cmd_predict(args) -> None:
    model, meta = load_checkpoint(args.ckpt)
    by_id, rows = _prepared(args.data, meta, model)
    if args.sample not in by_id:
        raise ValidationError(f"sample {args.sample!r} not in dataset")
    s = prepare_sample(by_id[args.sample], rows)
    _, logits = forward(model, s.grey, s.rf)
    pred = metrics.predict_labels(logits)[0]
    pred[s.label == 0] = 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_label_pgm(pred, out / f"{s.id}_pred.pgm")
    render.write_ppm(render.render_overlay(s.grey, pred), out / f"{s.id}_pred.ppm")
    render.write_ppm(render.render_overlay(s.grey, s.label), out / f"{s.id}_label.ppm")
    render.write_ppm(render.rf_false_color(s.rf), out / f"{s.id}_rf.ppm")
    print(f"wrote prediction for {s.id} to {out}")


def cmd_gabor(args) -> None:
    paths = render.dump_gabor_banks(args.out, args.kernels)
    print(f"wrote {len(paths)} bank sheets to {args.out}")


def cmd_activations(args) -> None:
    model, meta = load_checkpoint(args.ckpt)
    by_id, rows = _prepared(args.data, meta, model)
    if args.sample not in by_id:
        raise ValidationError(f"sample {args.sample!r} not in dataset")
    s = prepare_sample(by_id[args.sample], rows)
    paths = render.dump_activations(model, s, args.block, args.out)
    print(f"wrote {len(paths)} activation overlays to {args.out}")


COMMANDS = {
    "phantom": cmd_phantom, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "gabor": cmd_gabor, "activations": cmd_activations,
}

VALIDATION_ERRORS = (UsageError, ValidationError, FormatError, PhantomConfigError, ShapeError, KeyError, ValueError,
                     FileNotFoundError)


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())
