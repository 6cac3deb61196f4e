"""Segmentation metrics: Dice overlap and 95th-percentile surface distance.

Conventions, pinned here because published definitions vary:

- dsc: 2|P&G| / (|P|+|G|); both masks empty -> 1.0.
- hd95: boundary pixels are foreground pixels with any non-foreground
  8-neighbor or touching the image border. All directed nearest-boundary
  distances are pooled from both directions and the 95th percentile is
  taken with linear interpolation between order statistics. Both masks
  empty -> 0.0; exactly one empty -> sqrt(h^2 + w^2) (image diagonal,
  an unreachable sentinel).
- evaluation reports foreground classes only; a class absent from both
  prediction and ground truth in a case is excluded from that case.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .errors import DataError, ShapeError


def dsc(pred_mask, gt_mask, class_id):
    """Dice similarity of one class between two integer masks."""
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    p = pred_mask == class_id
    g = gt_mask == class_id
    np_, ng = int(p.sum()), int(g.sum())
    if np_ + ng == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (np_ + ng)


def boundary_pixels(fg):
    """Coordinates (row, col) of boundary pixels of a boolean mask.

    A foreground pixel is boundary if any of its 8 neighbors is not
    foreground; pixels on the image border count their out-of-image
    neighbors as background.
    """
    fg = np.asarray(fg, dtype=bool)
    padded = np.pad(fg, 1)
    neighbor_min = np.ones_like(fg)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbor_min &= padded[1 + di : 1 + di + fg.shape[0],
                                   1 + dj : 1 + dj + fg.shape[1]]
    boundary = fg & ~neighbor_min
    rows, cols = np.nonzero(boundary)
    return np.stack([rows, cols], axis=1)


def percentile_linear(values, q):
    """q-th percentile with linear interpolation between order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("percentile of empty set")
    pos = (v.size - 1) * (q / 100.0)
    lo = int(np.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    return float(v[lo] + frac * (v[hi] - v[lo]))


def _directed_min_distances(a, b):
    # For each point in a, Euclidean distance to the nearest point in b.
    # Exact: integer squared distances, sqrt applied to the minimum.
    diffs0 = a[:, 0][:, None] - b[:, 0][None, :]
    diffs1 = a[:, 1][:, None] - b[:, 1][None, :]
    sq = diffs0 * diffs0 + diffs1 * diffs1
    return np.sqrt(sq.min(axis=1).astype(np.float64))


def hd95(pred_mask, gt_mask, class_id):
    """95th-percentile symmetric boundary distance in pixel units."""
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    p = boundary_pixels(pred_mask == class_id)
    g = boundary_pixels(gt_mask == class_id)
    if p.size == 0 and g.size == 0:
        return 0.0
    if p.size == 0 or g.size == 0:
        h, w = pred_mask.shape
        return float(np.sqrt(h * h + w * w))
    pooled = np.concatenate(
        [_directed_min_distances(p, g), _directed_min_distances(g, p)]
    )
    return percentile_linear(pooled, 95.0)


@dataclass
class EvalReport:
    per_class_dsc: dict
    per_class_hd95: dict
    mean_dsc: float
    mean_hd95: float
    n_cases: int

    def to_dict(self):
        return {
            "mean_dsc": self.mean_dsc,
            "mean_hd95": self.mean_hd95,
            "per_class": [
                {
                    "class": c,
                    "dsc": self.per_class_dsc[c],
                    "hd95": self.per_class_hd95[c],
                }
                for c in sorted(self.per_class_dsc)
            ],
            "n_cases": self.n_cases,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def evaluate_masks(pred_masks, cases, n_classes):
    """Aggregate per-class DSC/HD95 of predicted masks over loaded cases.

    Foreground classes absent from both the prediction and the ground
    truth of a case are excluded from that case's statistics; per-class
    means run over the cases where the class was included and the
    headline means average the per-class values.
    """
    sums_d = {c: 0.0 for c in range(1, n_classes)}
    sums_h = {c: 0.0 for c in range(1, n_classes)}
    counts = {c: 0 for c in range(1, n_classes)}
    for pred, case in zip(pred_masks, cases):
        pred = np.asarray(pred)
        if pred.shape != case.mask.shape:
            raise ShapeError(
                f"prediction shape {pred.shape} != mask shape {case.mask.shape}"
            )
        for c in range(1, n_classes):
            if not ((pred == c).any() or (case.mask == c).any()):
                continue
            sums_d[c] += dsc(pred, case.mask, c)
            sums_h[c] += hd95(pred, case.mask, c)
            counts[c] += 1
    per_d = {c: sums_d[c] / counts[c] for c in counts if counts[c] > 0}
    per_h = {c: sums_h[c] / counts[c] for c in counts if counts[c] > 0}
    if per_d:
        mean_d = float(np.mean(list(per_d.values())))
        mean_h = float(np.mean(list(per_h.values())))
    else:
        mean_d, mean_h = 1.0, 0.0
    return EvalReport(per_d, per_h, mean_d, mean_h, len(cases))


def evaluate_cases(predict_fn, cases, n_classes):
    """As evaluate_masks, with predict_fn mapping one (h, w) image to a mask."""
    return evaluate_masks([predict_fn(case.image) for case in cases], cases, n_classes)


def predict_split(model, cases, batch_size=16):
    """Masks for a list of cases, batching same-sized images through the net."""
    masks = []
    for i in range(0, len(cases), batch_size):
        chunk = cases[i : i + batch_size]
        x = np.stack([c.image for c in chunk])[:, None].astype(model.dtype)
        masks.extend(model.predict(x))
    return masks


def evaluate(model, data_dir, split="val"):
    """Evaluate a SegNet (instance or checkpoint path) on a dataset split."""
    from .net import SegNet

    if isinstance(model, str):
        model = SegNet.load(model)
    manifest, cases = data_mod.load_split(data_dir, split)
    if not cases:
        raise DataError(f"split {split!r} of {data_dir} is empty")

    if callable(model) and not isinstance(model, SegNet):
        return evaluate_cases(model, cases, manifest.n_classes)
    return evaluate_masks(predict_split(model, cases), cases, manifest.n_classes)
