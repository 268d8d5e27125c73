"""Stage-by-stage winning-ticket visualizations."""

import os

import numpy as np
from PIL import Image

from .errors import InvariantViolationError


def _to_uint8(image):
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255).round().astype(np.uint8)
    return arr


def render_stage_image(image, kept, patch_size, fill=0.5):
    """Copy of the image with non-kept patches painted a flat fill value."""
    arr = _to_uint8(image).copy()
    H, W = arr.shape[:2]
    side = H // patch_size
    gray = np.uint8(round(fill * 255))
    kept = set(kept)
    for idx in range(side * side):
        if idx in kept:
            continue
        r, c = divmod(idx, side)
        arr[r * patch_size:(r + 1) * patch_size,
            c * patch_size:(c + 1) * patch_size] = gray
    return arr


def render_stages(image, stage_kept_sets, patch_size, out_dir, prefix="stage",
                  fill=0.5):
    """One PNG per selection stage; dropped patches rendered neutral gray.

    Stage sets must be nested (each stage keeps a subset of the previous one);
    the final image is the winning ticket itself.
    """
    sets = [set(s) for s in stage_kept_sets]
    for earlier, later in zip(sets, sets[1:]):
        if not later.issubset(earlier):
            raise InvariantViolationError("stage kept sets are not nested")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, kept in enumerate(sets):
        arr = render_stage_image(image, kept, patch_size, fill=fill)
        path = os.path.join(out_dir, f"{prefix}-{i + 1}.png")
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths


def stage_kept_sets_for_image(selector, image, config):
    """Nested per-stage kept sets for one image, derived from the final mask's
    importance order and the keep-count chain."""
    from .selector import select_tickets, stage_keep_counts

    mask = select_tickets(selector, image, config)
    counts = stage_keep_counts(selector.config.num_patches, config)
    return mask, [set(mask.kept_order[:k]) for k in counts]
