"""Masked cross-entropy training, multi-seed trials and dataset-size ablation."""
from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from . import metrics
from .data import load_dataset
from .network import ModelConfig, Network, create_model, save_checkpoint
from .preprocess import expand_dataset, prepare_sample

log = logging.getLogger(__name__)

CSV_COLUMNS = ["epoch", "train_loss", "val_pixel_acc", "val_miou"] + [f"val_iou_class{i}" for i in range(1, 6)]


class UndefinedLossError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


def masked_cross_entropy(logits: torch.Tensor, label) -> torch.Tensor:
    """Mean of -log softmax(logits)[label - 1] over pixels with label >= 1."""
    label = torch.as_tensor(np.asarray(label) if not torch.is_tensor(label) else label)
    if logits.ndim == 3:
        logits = logits[None]
    if label.ndim == 2:
        label = label[None]
    if logits.shape[0] != label.shape[0] or logits.shape[2:] != label.shape[1:]:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(label.shape)} disagree")
    label = label.long()
    valid = label > 0
    if not bool(valid.any()):
        raise UndefinedLossError("no pixel has a tissue label; loss undefined")
    logp = F.log_softmax(logits, dim=1)
    picked = logp.gather(1, (label - 1).clamp(min=0)[:, None])[:, 0]
    return -picked[valid].mean()


@dataclass
class TrainConfig:
    data: str
    model: ModelConfig = field(default_factory=ModelConfig)
    out: str | None = None
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    eval_flip_tta: bool = False
    augment: bool = False
    gabor_init: bool = True
    n_kernels: int = 4
    subset_size: int | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_json(self.model)

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        d["betas"] = list(self.betas)
        d["out"] = None if self.out is None else str(self.out)
        return d


@dataclass
class RunRecord:
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    last_checkpoint: str | None = None
    best_checkpoint: str | None = None
    best_epoch: int | None = None
    wall_clock_s: float = 0.0
    steps: int = 0
    train_pixel_acc: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "run.csv").write_text(self.to_csv())
        meta = {k: v for k, v in asdict(self).items() if k != "rows"}
        (out / "run.json").write_text(json.dumps(meta, indent=1) + "\n")


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class PreparedData:
    train: list
    val: list
    test: list


def prepare_data(config: TrainConfig) -> PreparedData:
    """Load, normalise and pad every split; optionally augment and subset train."""
    _, splits = load_dataset(config.data)
    rows, cols = config.model.rows, config.model.cols

    def prep(samples):
        out = []
        for s in samples:
            if s.shape[1] != cols:
                raise ValueError(f"sample {s.id}: width {s.shape[1]} != model width {cols}")
            out.append(prepare_sample(s, rows))
        return out

    train = prep(splits["train"])
    # split by source image first, then augment the training part only
    if config.augment:
        train = expand_dataset(train)
    if config.subset_size is not None:
        order = np.random.default_rng(config.seed).permutation(len(train))
        if config.subset_size > len(train):
            raise ValueError(f"subset of {config.subset_size} requested from {len(train)} training samples")
        train = [train[i] for i in sorted(order[: config.subset_size])]
    return PreparedData(train, prep(splits["val"]), prep(splits["test"]))


def _stack(samples, dtype=torch.float32):
    grey = torch.as_tensor(np.stack([s.grey for s in samples]), dtype=dtype)[:, None]
    rf = torch.as_tensor(np.stack([s.rf for s in samples]), dtype=dtype)[:, None]
    label = torch.as_tensor(np.stack([s.label for s in samples]).astype(np.int64))
    return grey, rf, label


def set_deterministic(on: bool = True) -> None:
    if on:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


@contextlib.contextmanager
def _native_conv(on: bool):
    prev = torch.backends.mkldnn.enabled
    torch.backends.mkldnn.enabled = prev and not on
    try:
        yield
    finally:
        torch.backends.mkldnn.enabled = prev


def train_step(model: Network, optimizer, grey, rf, label, logits_hook=None) -> float:
    """One Adam update on a minibatch; returns the loss."""
    model.train()
    with _native_conv(model.oversized_kernels):
        logits, _ = model(grey, rf)
        if logits_hook is not None:
            logits = logits_hook(logits)
        loss = masked_cross_entropy(logits, label)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: Network, config: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=tuple(config.betas), eps=config.eps)


def train(config: TrainConfig, data: PreparedData | None = None, progress: bool = False) -> RunRecord:
    """Train one model; writes run.csv, run.json and checkpoints under ``config.out``."""
    set_deterministic(config.deterministic)
    t0 = time.perf_counter()
    data = data or prepare_data(config)
    if not data.train:
        raise ValueError("training split is empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = create_model(config.model, config.seed, config.gabor_init, config.n_kernels)
    model.check_finite = False  # the loss is checked instead
    optimizer = make_optimizer(model, config)
    grey, rf, label = _stack(data.train)
    out = Path(config.out) if config.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(config=config.to_json())
    meta = {"train_config": config.to_json(), "preprocess": "normalize->pad", "padding": "same"}
    best = -1.0
    n = len(data.train)
    for epoch in range(1, config.epochs + 1):
        order = torch.as_tensor(rng.permutation(n))
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                losses.append(train_step(model, optimizer, grey[idx], rf[idx], label[idx]))
            except TrainingDiverged:
                if out:
                    record.write(out)
                raise
            record.steps += 1
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if data.val:
            rep = metrics.evaluate_dataset(model, data.val, config.eval_flip_tta)
            row.update(val_pixel_acc=rep["pixel_acc"], val_miou=rep["miou"])
            row.update({f"val_iou_class{i + 1}": v for i, v in enumerate(rep["iou"])})
            if rep["miou"] > best and out:
                best = rep["miou"]
                record.best_epoch = epoch
                record.best_checkpoint = str(save_checkpoint(model, out / "best.pt", {**meta, "epoch": epoch}))
        record.rows.append(row)
        if progress:
            log.info("epoch %d loss %.4f val mIoU %s", epoch, row["train_loss"], row.get("val_miou"))
        if out:
            record.last_checkpoint = str(save_checkpoint(model, out / "last.pt", {**meta, "epoch": epoch}))
    record.wall_clock_s = time.perf_counter() - t0
    record.model = model  # in-memory handle for callers; not serialised
    if out:
        record.write(out)
    return record


def _aggregate(reports: list[dict]) -> dict:
    def stat(values):
        v = np.array([np.nan if x is None else x for x in values], dtype=float)
        mean = float(np.nanmean(v)) if np.isfinite(v).any() else float("nan")
        sd = float(np.nanstd(v, ddof=1)) if np.isfinite(v).sum() > 1 else 0.0
        return mean, sd

    out = {"pixel_acc": stat([r["pixel_acc"] for r in reports]), "miou": stat([r["miou"] for r in reports])}
    out["iou"] = [stat([r["iou"][c] for r in reports]) for c in range(len(reports[0]["iou"]))]
    return out


def _stat_row(agg: dict) -> list[str]:
    cells = [metrics._fmt(*agg["pixel_acc"]), metrics._fmt(*agg["miou"])]
    return cells + [metrics._fmt(*agg["iou"][i]) for i in metrics.TABLE_ORDER]


def _eval_model(record: RunRecord):
    if record.best_checkpoint:
        from .network import load_checkpoint

        return load_checkpoint(record.best_checkpoint)[0]
    return record.model


def multi_seed_report(config: TrainConfig, seeds, out_dir=None, split: str = "test") -> dict:
    """Train one model per seed, score each on ``split``, report mean and sample std."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("a multi-seed report needs at least two seeds")
    data = prepare_data(config)
    per_seed = []
    for s in seeds:
        cfg = replace(config, seed=s, out=str(Path(out_dir) / f"seed_{s}") if out_dir else None)
        try:
            rec = train(cfg, data)
            rep = metrics.evaluate_dataset(_eval_model(rec), getattr(data, split), config.eval_flip_tta)
            per_seed.append({"seed": s, "status": "ok", "report": rep})
        except Exception as exc:  # one failed seed must not sink the report
            log.exception("seed %s failed", s)
            per_seed.append({"seed": s, "status": f"failed: {exc}", "report": None})
    done = [p["report"] for p in per_seed if p["report"]]
    result = {"model": config.model.model, "split": split, "seeds": per_seed}
    result["aggregate"] = _aggregate(done) if done else None
    rows = [(f"seed {p['seed']}", metrics.report_row(p["report"]) if p["report"] else ["failed"] + ["-"] * 6) for p in per_seed]
    if done:
        rows.append((f"{config.model.model} (n={len(done)})", _stat_row(result["aggregate"])))
    result["table"] = metrics.format_table(rows, "CNN")
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "report.txt").write_text(result["table"] + "\n")
        (Path(out_dir) / "report.json").write_text(json.dumps(result, indent=1, default=float) + "\n")
    return result


def dataset_size_ablation(config: TrainConfig, sizes, out_dir=None) -> dict:
    """Train on nested seeded subsets of the training split; score on the validation split."""
    results = []
    for size in sizes:
        cfg = replace(config, subset_size=int(size), out=str(Path(out_dir) / f"size_{size}") if out_dir else None)
        data = prepare_data(cfg)
        rec = train(cfg, data)
        rep = metrics.evaluate_dataset(rec.model, data.val, config.eval_flip_tta)
        results.append({"size": int(size), "report": rep})
    rows = [(str(r["size"]), metrics.report_row(r["report"])) for r in results]
    table = metrics.format_table(rows, "Train size")
    out = {"model": config.model.model, "sizes": results, "table": table}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.txt").write_text(table + "\n")
        (Path(out_dir) / "ablation.json").write_text(json.dumps(out, indent=1) + "\n")
    return out
