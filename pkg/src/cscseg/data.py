"""Synthetic multi-class segmentation dataset and on-disk I/O.

A dataset directory holds binary PGM (P5) images and masks plus a JSON
manifest:

    images/<id>.pgm   grayscale image, maxval 255
    masks/<id>.pgm    raw label bytes (0 = background)
    manifest.json     version, n_classes, image_size, splits, generator params

Each generated case contains one ellipse per present foreground class,
non-overlapping, each class drawn in its own intensity band so the task
is learnable at desk scale, with additive Gaussian noise on top.
Generation is a pure function of the seed.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .rng import Stream

MANIFEST_NAME = "manifest.json"


@dataclass
class Case:
    """One image/mask pair; image in [0,1], mask holds integer labels."""

    case_id: str
    image: np.ndarray
    mask: np.ndarray


@dataclass
class DatasetManifest:
    version: int
    n_classes: int
    image_size: int
    splits: dict
    generator: dict

    @classmethod
    def from_dict(cls, d):
        return cls(
            version=d["version"],
            n_classes=d["n_classes"],
            image_size=d["image_size"],
            splits=d["splits"],
            generator=d.get("generator", {}),
        )

    def to_dict(self):
        return {
            "version": self.version,
            "n_classes": self.n_classes,
            "image_size": self.image_size,
            "splits": self.splits,
            "generator": self.generator,
        }


# -- PGM ------------------------------------------------------------------


def write_pgm(path, arr):
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"PGM writer needs a 2-D uint8 array, got {arr.dtype} {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path):
    """Read a binary PGM into a 2-D uint8 array, validating the header."""
    with open(path, "rb") as f:
        data = f.read()

    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break

    def token(what):
        nonlocal pos
        skip_ws()
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"missing {what} in PGM header", offset=start)
        return data[start:pos]

    if data[:2] != b"P5":
        raise FormatError(f"not a binary PGM (magic {data[:2]!r})", offset=0)
    pos = 2
    try:
        w = int(token("width"))
        h = int(token("height"))
        maxval = int(token("maxval"))
    except ValueError:
        raise FormatError("non-numeric PGM header field", offset=pos)
    if w <= 0 or h <= 0:
        raise FormatError(f"bad PGM dimensions {w}x{h}", offset=pos)
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}", offset=pos)
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + w * h]
    if len(payload) != w * h:
        raise FormatError(
            f"truncated PGM payload: expected {w * h} bytes, got {len(payload)}",
            offset=pos + len(payload),
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# -- cases ------------------------------------------------------------------


def save_case(case: Case, root):
    img = np.clip(np.rint(case.image * 255.0), 0, 255).astype(np.uint8)
    write_pgm(os.path.join(root, "images", f"{case.case_id}.pgm"), img)
    write_pgm(os.path.join(root, "masks", f"{case.case_id}.pgm"), case.mask.astype(np.uint8))


def load_case(root, case_id, n_classes=None):
    try:
        img = read_pgm(os.path.join(root, "images", f"{case_id}.pgm"))
        mask = read_pgm(os.path.join(root, "masks", f"{case_id}.pgm"))
    except FileNotFoundError as exc:
        raise DataError(f"case {case_id}: missing file {exc.filename}") from exc
    if img.shape != mask.shape:
        raise DataError(
            f"case {case_id}: image {img.shape} and mask {mask.shape} differ"
        )
    if n_classes is not None and mask.max(initial=0) >= n_classes:
        raise DataError(
            f"case {case_id}: mask label {int(mask.max())} >= n_classes {n_classes}"
        )
    return Case(case_id, img.astype(np.float64) / 255.0, mask.astype(np.int64))


# -- generation ---------------------------------------------------------------


def _ellipse_mask(size, cx, cy, a, b, theta):
    yy, xx = np.mgrid[0:size, 0:size]
    ct, st = math.cos(theta), math.sin(theta)
    u = (xx - cx) * ct + (yy - cy) * st
    v = -(xx - cx) * st + (yy - cy) * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _class_intensity(class_id, n_classes):
    # Levels evenly spaced over the full range (background darkest at 0),
    # maximizing the intensity margin between adjacent classes relative to
    # the additive noise.
    return class_id / (n_classes - 1)


def generate(out_dir, seed=42, n_cases=200, size=96, n_classes=4,
             noise_sigma=0.08, train_frac=0.8):
    """Generate a dataset directory; fully determined by the arguments."""
    if size % 8:
        raise ConfigError(f"size must be divisible by 8, got {size}")
    if n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
    if n_cases < 2:
        raise ConfigError(f"n_cases must be >= 2, got {n_cases}")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

    ids = []
    for i in range(n_cases):
        case_id = f"case_{i:04d}"
        ids.append(case_id)
        stream = Stream(seed, "case", i)
        # One ellipse per foreground class, every class in every case:
        # each batch then supervises all classes, and per-case per-class
        # scores never degenerate to the absent-class 0/1 conventions.
        present = set(range(1, n_classes))

        mask = np.zeros((size, size), dtype=np.uint8)
        occupied = np.zeros((size, size), dtype=bool)
        image = np.zeros((size, size))
        for c in sorted(present):
            placed = False
            a = b = cx = cy = theta = 0.0
            for attempt in range(200):
                shrink = 0.85 ** (attempt // 20)
                a = stream.uniform(low=0.20, high=0.33) * size * shrink
                b = stream.uniform(low=0.20, high=0.33) * size * shrink
                cx = stream.uniform(low=0.18, high=0.82) * size
                cy = stream.uniform(low=0.18, high=0.82) * size
                theta = stream.uniform(low=0.0, high=math.pi)
                ell = _ellipse_mask(size, cx, cy, a, b, theta)
                if ell.any() and not (ell & occupied).any():
                    placed = True
                    break
            if not placed:
                continue
            ell = _ellipse_mask(size, cx, cy, a, b, theta)
            occupied |= ell
            mask[ell] = c
            image[ell] = _class_intensity(c, n_classes)

        if noise_sigma > 0:
            image = image + noise_sigma * stream.normal(image.shape)
        image = np.clip(image, 0.0, 1.0)
        save_case(Case(case_id, image, mask), out_dir)

    n_train = int(round(train_frac * n_cases))
    n_train = min(max(n_train, 1), n_cases - 1)
    manifest = DatasetManifest(
        version=1,
        n_classes=n_classes,
        image_size=size,
        splits={"train": ids[:n_train], "val": ids[n_train:]},
        generator={
            "seed": seed,
            "n_cases": n_cases,
            "size": size,
            "n_classes": n_classes,
            "noise_sigma": noise_sigma,
            "train_frac": train_frac,
        },
    )
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# -- loading ------------------------------------------------------------------


def load_manifest(root):
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    with open(path) as f:
        manifest = DatasetManifest.from_dict(json.load(f))
    train = set(manifest.splits.get("train", []))
    val = set(manifest.splits.get("val", []))
    if train & val:
        raise DataError(f"train/val splits overlap: {sorted(train & val)[:4]}")
    return manifest


def load_split(root, split):
    """Load all cases of a split, validating labels against the manifest."""
    manifest = load_manifest(root)
    if split not in manifest.splits:
        raise DataError(f"unknown split {split!r}; have {sorted(manifest.splits)}")
    cases = []
    for case_id in manifest.splits[split]:
        cases.append(load_case(root, case_id, n_classes=manifest.n_classes))
    return manifest, cases
