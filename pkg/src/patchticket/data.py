"""Deterministic desk-scale datasets: a builtin synthetic shapes set and image folders."""

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import IngestError

BUILTIN_CLASSES = (
    "square", "hollow-square", "plus", "x-cross", "disk",
    "ring", "triangle", "hbar", "vbar", "checker",
)
BUILTIN_MEAN = 0.35
BUILTIN_STD = 0.30


def _draw_shape(rng, image_size, num_classes):
    """One (image, label) pair: a colored shape on a noisy background."""
    label = int(rng.integers(num_classes))
    img = 0.15 + 0.06 * rng.standard_normal((3, image_size, image_size))
    size = int(rng.integers(12, 19))
    half = size // 2
    cx = int(rng.integers(half, image_size - half))
    cy = int(rng.integers(half, image_size - half))
    color = 0.55 + 0.45 * rng.random(3)
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    dy, dx = yy - cy, xx - cx
    ady, adx = np.abs(dy), np.abs(dx)

    name = BUILTIN_CLASSES[label]
    if name == "square":
        m = (ady <= half) & (adx <= half)
    elif name == "hollow-square":
        m = (ady <= half) & (adx <= half) & ((ady > half - 3) | (adx > half - 3))
    elif name == "plus":
        m = ((ady <= 2) & (adx <= half)) | ((adx <= 2) & (ady <= half))
    elif name == "x-cross":
        m = (np.abs(ady - adx) <= 2) & (ady <= half) & (adx <= half)
    elif name == "disk":
        m = dy * dy + dx * dx <= half * half
    elif name == "ring":
        r2 = dy * dy + dx * dx
        m = (r2 <= half * half) & (r2 >= (half - 3) ** 2)
    elif name == "triangle":
        m = (dy >= -half) & (dy <= half) & (adx <= (dy + half) / 2)
    elif name == "hbar":
        m = (ady <= 2) & (adx <= half)
    elif name == "vbar":
        m = (adx <= 2) & (ady <= half)
    else:  # checker
        m = (ady <= half) & (adx <= half) & (((yy // 3) + (xx // 3)) % 2 == 0)

    jitter = 0.04 * rng.standard_normal((3, image_size, image_size))
    img = np.where(m[None], color[:, None, None] + jitter, img)
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


@dataclass
class DatasetHandle:
    kind: str  # "builtin-small" | "folder"
    split: str
    ids: tuple
    labels: dict  # id -> class index
    class_names: tuple
    image_size: int
    digest: str
    mean: float = BUILTIN_MEAN
    std: float = BUILTIN_STD
    _raw: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def raw_image(self, image_id) -> torch.Tensor:
        """(C, H, W) float32 in [0, 1], unnormalized."""
        return torch.from_numpy(self._raw[image_id])

    def image(self, image_id) -> torch.Tensor:
        """Normalized image, the tensor models actually consume."""
        return (self.raw_image(image_id) - self.mean) / self.std

    def normalize(self, raw: torch.Tensor) -> torch.Tensor:
        return (raw - self.mean) / self.std

    def label(self, image_id) -> int:
        return self.labels[image_id]


def open_builtin(split="train", n_images=2000, image_size=32, num_classes=10, seed=0):
    """Procedurally generated shapes dataset; fully determined by its arguments."""
    if not 2 <= num_classes <= len(BUILTIN_CLASSES):
        raise IngestError(f"num_classes must be in [2, {len(BUILTIN_CLASSES)}]")
    split_offset = {"train": 0, "test": 1, "val": 2}.get(split)
    if split_offset is None:
        raise IngestError(f"unknown split {split!r}")
    raw, labels, ids = {}, {}, []
    digest = hashlib.sha256()
    for i in range(n_images):
        rng = np.random.default_rng([seed, split_offset, i])
        img, label = _draw_shape(rng, image_size, num_classes)
        image_id = f"{i:06d}"
        ids.append(image_id)
        raw[image_id] = img
        labels[image_id] = label
        digest.update(img.tobytes())
        digest.update(bytes([label]))
    return DatasetHandle(
        kind="builtin-small", split=split, ids=tuple(ids), labels=labels,
        class_names=BUILTIN_CLASSES[:num_classes], image_size=image_size,
        digest=digest.hexdigest(), _raw=raw,
    )


def open_folder(root, split="train", image_size=32):
    """Labeled image folder: root/<class>/<image>; ids are dataset-relative paths."""
    from PIL import Image, UnidentifiedImageError

    root = os.fspath(root)
    if not os.path.isdir(root):
        raise IngestError(f"dataset root {root} does not exist")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_names:
        raise IngestError(f"no class subdirectories under {root}")
    raw, labels, ids = {}, {}, []
    digest = hashlib.sha256()
    for ci, cname in enumerate(class_names):
        cdir = os.path.join(root, cname)
        for fname in sorted(os.listdir(cdir)):
            path = os.path.join(cdir, fname)
            rel = f"{cname}/{fname}"
            try:
                with Image.open(path) as im:
                    im = im.convert("RGB").resize((image_size, image_size))
                    arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
            except (UnidentifiedImageError, OSError) as exc:
                raise IngestError(f"cannot read image {rel}: {exc}") from exc
            ids.append(rel)
            raw[rel] = arr
            labels[rel] = ci
            digest.update(rel.encode())
            digest.update(arr.tobytes())
            digest.update(bytes([ci]))
    return DatasetHandle(
        kind="folder", split=split, ids=tuple(ids), labels=labels,
        class_names=tuple(class_names), image_size=image_size,
        digest=digest.hexdigest(), _raw=raw,
    )


def open_dataset(spec, split="train", image_size=32, n_images=2000, seed=0):
    """`builtin` or `builtin:<n>` for the synthetic set, otherwise a folder path."""
    if isinstance(spec, str) and spec.startswith("builtin"):
        if ":" in spec:
            n_images = int(spec.split(":", 1)[1])
        return open_builtin(split=split, n_images=n_images,
                            image_size=image_size, seed=seed)
    return open_folder(spec, split=split, image_size=image_size)


@dataclass
class Batch:
    ids: list
    images: torch.Tensor  # normalized (B, C, H, W)
    labels: torch.Tensor  # (B,)
    flips: list  # per-image horizontal-flip flags (augmentation bookkeeping)


def batches(handle: DatasetHandle, batch_size, seed, epoch, augment=False):
    """Seeded, epoch-keyed batch stream; identical across LT/RC/FULL for one seed."""
    rng = np.random.default_rng([int(seed), int(epoch)])
    order = rng.permutation(len(handle.ids))
    flips = rng.random(len(handle.ids)) < 0.5 if augment else np.zeros(len(handle.ids), bool)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        ids = [handle.ids[i] for i in chunk]
        imgs = []
        for i, image_id in zip(chunk, ids):
            img = handle.image(image_id)
            if flips[i]:
                img = torch.flip(img, dims=[-1])
            imgs.append(img)
        yield Batch(
            ids=ids,
            images=torch.stack(imgs),
            labels=torch.tensor([handle.labels[i] for i in ids], dtype=torch.long),
            flips=[bool(flips[i]) for i in chunk],
        )
