"""Losses, AdamW optimizer, augmentation, and the training loop.

Training is bitwise reproducible for a fixed seed: weight init,
augmentation, and batch order each draw from their own SplitMix64 stream,
and the augmentation/shuffle streams restart every epoch so a run with
lr=0 produces a constant loss trace. Loss is a weighted sum of pixel
cross-entropy and soft Dice over all classes.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import metrics
from .autodiff import Param, Tape
from .errors import ConfigError, DataError, TrainingDiverged
from .net import SegNet
from .rng import Stream


@dataclass
class TrainConfig:
    """Everything a training run depends on.

    lr and weight_decay default to 1e-4 and the loss mixes cross-entropy
    and Dice at 0.5/0.5. Model architecture fields (widths, ksize) are
    carried here too so a run directory fully describes its model; the
    default widths are sized for a small-CPU budget and are narrower than
    the SegNet class default.
    """

    data_dir: str = ""
    out_dir: str = ""
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 42
    ce_weight: float = 0.5
    dice_weight: float = 0.5
    iterations: tuple = (2, 2, 2)
    widths: tuple = (8, 16, 24, 32)
    ksize: int = 3
    stride: int = 1
    dtype: str = "f32"

    def validate(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ce_weight + self.dice_weight <= 0:
            raise ConfigError("ce_weight + dice_weight must be positive")
        if self.stride != 1:
            raise ConfigError(
                "--stride: decoder stages require stride 1 (block output must "
                f"match the skip resolution), got {self.stride}"
            )
        return self


# -- losses -------------------------------------------------------------------


def _check_labels(target, n_classes):
    t = np.asarray(target)
    lo, hi = int(t.min()), int(t.max())
    if lo < 0 or hi >= n_classes:
        raise DataError(f"labels must lie in [0, {n_classes}), found [{lo}, {hi}]")


def cross_entropy_loss(logits, target, tape=None):
    """Mean over pixels of -log softmax at the target class."""
    n_classes = ad._value(logits).shape[1]
    _check_labels(target, n_classes)
    logp = ad.log_softmax(logits)
    picked = ad.take_channel(logp, np.asarray(target))
    return ad.mul(ad.tmean(picked), -1.0)


def dice_loss(logits, target, n_classes=None, eps=1e-5, tape=None):
    """1 - mean soft Dice over classes: (2*sum(p*g)+eps)/(sum p + sum g + eps)."""
    v = ad._value(logits)
    if n_classes is None:
        n_classes = v.shape[1]
    _check_labels(target, n_classes)
    target = np.asarray(target)
    probs = ad.softmax(logits)
    onehot = np.zeros(v.shape, dtype=v.dtype)
    np.put_along_axis(onehot, target[:, None], 1, axis=1)
    inter = ad.tsum(ad.mul(probs, onehot), axis=(0, 2, 3))
    denom = ad.add(ad.tsum(probs, axis=(0, 2, 3)), onehot.sum(axis=(0, 2, 3)))
    dice = ad.div(ad.add(ad.mul(inter, 2.0), eps), ad.add(denom, eps))
    return ad.sub(1.0, ad.tmean(dice))


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamWState:
    """First/second moments per parameter plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(params, state: AdamWState, lr, weight_decay=0.0):
    """One AdamW update: bias-corrected adaptive step + decoupled decay.

    Updates Param.value in place (shared references, e.g. batch-norm
    gamma inside a BNState, stay live).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.value)
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if weight_decay:
            update = update + weight_decay * p.value
        p.value -= (lr * update).astype(p.value.dtype, copy=False)


# -- augmentation ---------------------------------------------------------------


def apply_flip_rot(image, mask, flip, quarter_turns):
    """Apply a horizontal flip and k*90-degree rotation to both arrays."""
    if flip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    k = quarter_turns % 4
    if k:
        image = np.rot90(image, k)
        mask = np.rot90(mask, k)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def augment(image, mask, stream: Stream):
    """Random flip (p=0.5) and rotation by k*90 degrees, k uniform in 0..3."""
    flip = stream.uniform() < 0.5
    k = stream.randint(4)
    return apply_flip_rot(image, mask, flip, k)


# -- training loop ----------------------------------------------------------------


CSV_COLUMNS = ["epoch", "train_loss", "train_ce", "train_dice", "val_dsc", "val_hd95"]


@dataclass
class TrainResult:
    checkpoint_path: str
    csv_path: str
    best_val_dsc: float
    epochs_run: int


def _batches(order, batch_size):
    for i in range(0, len(order), batch_size):
        yield order[i : i + batch_size]


def train(cfg: TrainConfig):
    """Run the full loop; writes loss CSV and the best-val checkpoint."""
    cfg.validate()
    if not os.path.isdir(cfg.data_dir):
        raise DataError(f"dataset directory {cfg.data_dir!r} does not exist")
    manifest, train_cases = data_mod.load_split(cfg.data_dir, "train")
    _, val_cases = data_mod.load_split(cfg.data_dir, "val")
    if not train_cases or not val_cases:
        raise DataError("dataset must provide non-empty train and val splits")

    os.makedirs(cfg.out_dir, exist_ok=True)
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    net = SegNet(
        in_channels=1,
        n_classes=manifest.n_classes,
        widths=cfg.widths,
        iterations=cfg.iterations,
        ksize=cfg.ksize,
        seed=cfg.seed,
        dtype=dtype,
    )
    params = net.params()
    opt = AdamWState()

    ckpt_path = os.path.join(cfg.out_dir, "model_best.csct")
    csv_path = os.path.join(cfg.out_dir, "loss.csv")
    best_dsc = -1.0

    # The augmentation stream is keyed by (seed, case), so transforms are
    # identical every epoch (an lr=0 run therefore has a constant loss
    # trace); compute them once.
    augmented = []
    for case in train_cases:
        aug_stream = Stream(cfg.seed, "augment", case.case_id)
        img, msk = augment(case.image, case.mask, aug_stream)
        augmented.append((img.astype(dtype), msk))

    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for epoch in range(1, cfg.epochs + 1):
            # The shuffle stream also restarts per epoch: fixed batch order.
            shuffle_stream = Stream(cfg.seed, "shuffle")
            order = shuffle_stream.permutation(len(train_cases))
            ep_loss = ep_ce = ep_dice = 0.0
            n_batches = 0
            for batch_idx in _batches(order, cfg.batch_size):
                x = np.stack([augmented[i][0] for i in batch_idx])[:, None]
                y = np.stack([augmented[i][1] for i in batch_idx])
                tape = Tape()
                logits = net.forward(tape.leaf(x), train=True, tape=tape)
                ce = cross_entropy_loss(logits, y)
                dl = dice_loss(logits, y, manifest.n_classes)
                loss = ad.add(ad.mul(ce, cfg.ce_weight), ad.mul(dl, cfg.dice_weight))
                loss_val = float(np.asarray(loss.value))
                if not np.isfinite(loss_val):
                    raise TrainingDiverged("training loss is not finite", epoch)
                for p in params:
                    p.zero_grad()
                tape.backward(loss)
                adamw_step(params, opt, cfg.lr, cfg.weight_decay)
                ep_loss += loss_val
                ep_ce += float(np.asarray(ce.value))
                ep_dice += float(np.asarray(dl.value))
                n_batches += 1

            report = metrics.evaluate_masks(
                metrics.predict_split(net, val_cases), val_cases, manifest.n_classes
            )
            writer.writerow([
                epoch,
                repr(ep_loss / n_batches),
                repr(ep_ce / n_batches),
                repr(ep_dice / n_batches),
                repr(report.mean_dsc),
                repr(report.mean_hd95),
            ])
            f.flush()
            if report.mean_dsc > best_dsc:
                best_dsc = report.mean_dsc
                net.save(ckpt_path)

    return TrainResult(ckpt_path, csv_path, best_dsc, cfg.epochs)
