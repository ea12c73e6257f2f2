"""Per-class Dice scoring, confusion matrices, and comparison tables."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .phantom import CLASS_NAMES, NUM_CLASSES


@dataclass(frozen=True)
class DiceReport:
    per_class: tuple   # length K, Dice in [0,1] per class index
    mean_dice: float   # mean over classes present in the truth labels
    n_samples: int
    model_tag: str


def _check_label_pair(pred: np.ndarray, truth: np.ndarray, num_classes: int):
    if pred.shape != truth.shape:
        raise ShapeError(f"pred shape {pred.shape} != truth shape {truth.shape}")
    if pred.ndim not in (2, 3):
        raise ShapeError(f"label maps must be 2D or a 3D batch, got ndim={pred.ndim}")
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if not np.issubdtype(arr.dtype, np.integer):
            raise ShapeError(f"{name} must be integer labels, got dtype {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ShapeError(f"{name} labels outside [0, {num_classes})")
    return 1 if pred.ndim == 2 else pred.shape[0]


def dice_per_class(pred: np.ndarray, truth: np.ndarray, num_classes: int = NUM_CLASSES,
                   model_tag: str = "model") -> DiceReport:
    """Pooled Dice per class: 2|pred_c ∩ truth_c| / (|pred_c| + |truth_c|).

    Counts are pooled over the whole batch before dividing. A class absent
    from both pred and truth scores 1.0; absent from exactly one scores 0.0.
    mean_dice averages only classes present in the truth.
    """
    n_samples = _check_label_pair(pred, truth, num_classes)
    scores = []
    present = []
    for c in range(num_classes):
        in_pred = pred == c
        in_truth = truth == c
        pred_count = np.count_nonzero(in_pred)
        truth_count = np.count_nonzero(in_truth)
        if pred_count + truth_count == 0:
            scores.append(1.0)
        else:
            inter = np.count_nonzero(in_pred & in_truth)
            scores.append(2.0 * inter / (pred_count + truth_count))
        present.append(truth_count > 0)
    if not any(present):
        raise ShapeError("truth labels are empty")
    mean = float(np.mean([s for s, p in zip(scores, present) if p]))
    return DiceReport(tuple(scores), mean, n_samples, model_tag)


def confusion_matrix(pred: np.ndarray, truth: np.ndarray,
                     num_classes: int = NUM_CLASSES) -> np.ndarray:
    """(K,K) counts, entry (i,j) = pixels with truth class i, predicted j."""
    _check_label_pair(pred, truth, num_classes)
    flat = truth.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


def _column_names(num_classes: int) -> list:
    if num_classes == NUM_CLASSES:
        return list(CLASS_NAMES)
    return [f"class{c}" for c in range(num_classes)]


def render_comparison_table(reports: list) -> tuple:
    """(text_table, csv_text): 2-decimal aligned text, full-precision CSV."""
    if not reports:
        raise ConfigError("need at least one report to render")
    num_classes = len(reports[0].per_class)
    if any(len(r.per_class) != num_classes for r in reports):
        raise ShapeError("all reports must score the same number of classes")
    names = _column_names(num_classes)

    csv_lines = ["model," + ",".join(names) + ",mean"]
    for r in reports:
        cells = [repr(float(s)) for s in r.per_class] + [repr(float(r.mean_dice))]
        csv_lines.append(r.model_tag + "," + ",".join(cells))

    widths = [max(len("model"), max(len(r.model_tag) for r in reports))]
    widths += [max(len(n), 4) for n in names + ["mean"]]
    header = ["model"] + names + ["mean"]
    text_lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in reports:
        cells = [r.model_tag] + [f"{float(s):.2f}" for s in r.per_class]
        cells.append(f"{float(r.mean_dice):.2f}")
        text_lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n"


def parse_comparison_csv(csv_text: str) -> list:
    """Inverse of the CSV emitted by render_comparison_table."""
    lines = [ln for ln in csv_text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("empty comparison CSV")
    header = lines[0].split(",")
    if header[0] != "model" or header[-1] != "mean":
        raise ConfigError(f"unexpected comparison CSV header: {lines[0]!r}")
    num_classes = len(header) - 2
    reports = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise ConfigError(f"malformed comparison CSV row: {line!r}")
        scores = tuple(float(c) for c in cells[1:-1])
        reports.append(DiceReport(scores, float(cells[-1]), 0, cells[0]))
    return reports
