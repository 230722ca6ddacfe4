"""Confusion-matrix segmentation metrics over classes 1..5 (label 0 ignored).

Dataset metrics come from a single confusion matrix accumulated over every
test image, which gives the same IoU as concatenating all label and
prediction maps side by side and scoring the result as one image.
"""
from __future__ import annotations

import json

import numpy as np
import torch

from .data import CLASS_NAMES, N_CLASSES


class MetricError(ValueError):
    pass


def new_confusion(n_classes: int = N_CLASSES) -> np.ndarray:
    """Zero counts: rows are truth 1..n, columns prediction 0..n.

    Column 0 holds valid pixels predicted as unlabelled, which only happens
    with externally supplied prediction maps; it counts against recall.
    """
    return np.zeros((n_classes, n_classes + 1), dtype=np.int64)


def accumulate_confusion(cm: np.ndarray, pred, truth) -> np.ndarray:
    """Add counts for pixels with truth >= 1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    n = cm.shape[0]
    valid = truth >= 1
    p = pred[valid].astype(np.int64)
    t = truth[valid].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() > n):
        raise MetricError(f"predictions must lie in 0..{n}")
    if t.size and t.max() > n:
        raise MetricError(f"truth labels must lie in 0..{n}")
    counts = np.bincount((t - 1) * (n + 1) + p, minlength=n * (n + 1)).reshape(n, n + 1)
    return cm + counts


def class_iou(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (nan where the union is empty) and their mean over non-empty classes."""
    cm = np.asarray(cm, dtype=np.float64)
    inter = np.diag(cm[:, 1:])
    union = cm[:, 1:].sum(axis=0) + cm.sum(axis=1) - inter
    present = union > 0
    if not present.any():
        raise MetricError("IoU undefined: no class has a non-empty union")
    iou = np.full(cm.shape[0], np.nan)
    iou[present] = inter[present] / union[present]
    return iou, float(iou[present].mean())


def pixel_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise MetricError("pixel accuracy undefined: no valid pixels")
    return float(np.trace(cm[:, 1:]) / total)


def predict_labels(logits) -> np.ndarray:
    """Argmax over the class axis as labels 1..K; ties go to the lowest class."""
    a = logits.detach().cpu().numpy() if torch.is_tensor(logits) else np.asarray(logits)
    return np.argmax(a, axis=-3).astype(np.uint8) + 1


def report_from_confusion(cm: np.ndarray) -> dict:
    iou, miou = class_iou(cm)
    return {
        "pixel_acc": pixel_accuracy(cm),
        "miou": miou,
        "iou": [None if np.isnan(v) else float(v) for v in iou],
        "confusion": cm.tolist(),
    }


def evaluate_dataset(model, samples, flip_tta: bool = False, batch_size: int = 4) -> dict:
    """Aggregate one confusion matrix over ``samples`` (already normalised and padded)."""
    from .network import forward

    cm = new_confusion(model.config.n_classes)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        grey = np.stack([s.grey for s in chunk])
        rf = np.stack([s.rf for s in chunk])
        truth = np.stack([s.label for s in chunk])
        views = [(grey, rf, truth)]
        if flip_tta:
            views.append((grey[..., ::-1].copy(), rf[..., ::-1].copy(), truth[..., ::-1].copy()))
        for g, r, t in views:
            _, logits = forward(model, g, r, mode="eval")
            cm = accumulate_confusion(cm, predict_labels(logits), t)
    return report_from_confusion(cm)


# Column order of the summary tables.
TABLE_ORDER = (0, 2, 1, 4, 3)  # skin, fat fascia, fat, muscle fascia, muscle
TABLE_HEADER = ("Pixel-wise Acc", "mean") + tuple(CLASS_NAMES[i].capitalize() for i in TABLE_ORDER)


def _fmt(v, sd=None) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "-"
    return f"{v:.3f}" if sd is None else f"{v:.3f}±{sd:.3f}"


def report_row(report: dict) -> list[str]:
    iou = report["iou"]
    return [_fmt(report["pixel_acc"]), _fmt(report["miou"])] + [_fmt(iou[i]) for i in TABLE_ORDER]


def format_table(rows: list[tuple[str, list[str]]], first_col: str = "Run") -> str:
    header = [first_col, *TABLE_HEADER]
    body = [[name, *cells] for name, cells in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_report(report: dict, name: str = "model") -> str:
    return format_table([(name, report_row(report))])


def dump_report(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=1)
        f.write("\n")
