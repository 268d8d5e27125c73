"""Mask application: token removal, pixel occlusion, and token-label masking."""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import AlignmentError, DegenerateInputError, ShapeError


@dataclass
class PackedPatches:
    """Kept patch tiles in original-index order plus the position -> grid index map."""

    patches: torch.Tensor  # (k, C, p, p)
    index_map: tuple  # strictly increasing original grid indices


def _tile(image, patch_size):
    if image.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {tuple(image.shape)}")
    C, H, W = image.shape
    if H % patch_size or W % patch_size:
        raise ShapeError(f"image {H}x{W} not divisible by patch_size {patch_size}")
    side = H // patch_size
    tiles = image.reshape(C, side, patch_size, side, patch_size)
    return tiles.permute(1, 3, 0, 2, 4).reshape(side * side, C, patch_size, patch_size), side


def remove_patches(image, mask, patch_size=None) -> PackedPatches:
    """Drop masked-out patches entirely, keeping original indices for the pos-embed gather."""
    if patch_size is None:
        patch_size = image.shape[-1] // mask.grid_side
    tiles, side = _tile(image, patch_size)
    if side != mask.grid_side:
        raise ShapeError(f"mask grid {mask.grid_side} != image tiling {side}")
    kept = mask.kept_indices()
    if not kept:
        raise DegenerateInputError("mask keeps zero patches")
    return PackedPatches(tiles[kept], tuple(kept))


def occlude_patches(image, mask, patch_size):
    """Zero the dropped patch regions in raw pixel space; kept pixels untouched."""
    C, H, W = image.shape if image.ndim == 3 else (None, None, None)
    if C is None:
        raise ShapeError(f"expected (C, H, W), got {tuple(image.shape)}")
    if H % patch_size or W % patch_size:
        raise ShapeError(f"image {H}x{W} not divisible by patch_size {patch_size}")
    side = H // patch_size
    if side != mask.grid_side:
        raise ShapeError(f"mask grid {mask.grid_side} != image tiling {side}")
    grid = torch.as_tensor(np.asarray(mask.bits), dtype=image.dtype).reshape(side, side)
    pixel_mask = grid.repeat_interleave(patch_size, 0).repeat_interleave(patch_size, 1)
    return image * pixel_mask


def mask_token_labels(labels, mask):
    """Keep the per-patch labels of surviving patches, aligned with PackedPatches order."""
    n = mask.grid_side ** 2
    if len(labels) != n:
        raise AlignmentError(f"{len(labels)} labels for a {n}-patch grid")
    kept = mask.kept_indices()
    if isinstance(labels, torch.Tensor):
        return labels[torch.as_tensor(kept, dtype=torch.long)]
    if isinstance(labels, np.ndarray):
        return labels[kept]
    return [labels[i] for i in kept]
