"""LT / RC / FULL training paths with cosine sparsity warmup and epoch checkpoints."""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import batches
from .errors import (
    ConfigurationError,
    CorruptionError,
    NumericalError,
    ProvenanceError,
)
from .masking import occlude_patches
from .models import forward_subset_batch, save_checkpoint, load_checkpoint, state_digest
from .selector import (
    PatchMask,
    SelectorConfig,
    random_mask,
    round_half_up,
    stage_keep_counts,
    target_sparsity,
)
from .store import TicketStore

PATHS = ("lt", "rc", "full")


def warmup_sparsity(t, warmup_epochs, s_target):
    """Cosine ramp from 0 at t=0 to s_target at t=warmup_epochs, clamped after."""
    if warmup_epochs < 1:
        raise ConfigurationError("warmup_epochs must be >= 1")
    if not 0 <= s_target < 1:
        raise ConfigurationError("s_target must be in [0, 1)")
    frac = min(t, warmup_epochs) / warmup_epochs
    return s_target * (1.0 - math.cos(math.pi * frac)) / 2.0


def effective_keep_rate(s, stages):
    """Per-stage keep rate whose compounded sparsity equals s."""
    if not 0 <= s < 1:
        raise ConfigurationError("sparsity must be in [0, 1)")
    return (1.0 - s) ** (1.0 / stages)


@dataclass
class RunConfig:
    path: str  # "lt" | "rc" | "full"
    epochs: int
    selector_config: SelectorConfig = None
    finetune_epochs: int = 0  # reserved, not consumed by any procedure
    warmup_epochs: int = 0  # 0 = warmup off
    store_path: str = None  # lt only
    selector_fingerprint: str = None
    rc_seed: int = None  # rc only
    rc_resample: bool = False  # resample RC masks each epoch instead of fixing them
    input_mode: str = "remove"  # "remove" | "occlude"
    lr: float = 1e-3
    weight_decay: float = 0.05
    batch_size: int = 64
    data_seed: int = 0
    augment: bool = False
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.path not in PATHS:
            raise ConfigurationError(f"path must be one of {PATHS}")
        if self.warmup_epochs > self.epochs:
            raise ConfigurationError("warmup_epochs must not exceed epochs")
        if self.path == "lt" and not self.store_path:
            raise ConfigurationError("lt path requires a ticket store")
        if self.path == "rc" and self.rc_seed is None:
            raise ConfigurationError("rc path requires rc_seed")
        if self.path != "full" and self.selector_config is None:
            raise ConfigurationError("sparse paths require a selector_config")
        if self.input_mode not in ("remove", "occlude"):
            raise ConfigurationError(f"unknown input_mode {self.input_mode!r}")


def _rc_mask_seed(rc_seed, image_id, epoch=None):
    key = f"{rc_seed}:{image_id}" if epoch is None else f"{rc_seed}:{image_id}:{epoch}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def _truncated_indices(mask: PatchMask, k: int):
    """Top-k patches of the mask's importance order, ascending original index."""
    if mask.kept_order is None:
        return sorted(mask.kept_indices())
    return sorted(mask.kept_order[:min(k, len(mask.kept_order))])


def step_mask_indices(mask: PatchMask, n_patches, s_t, flip=False):
    """Per-step kept indices honoring the warmup sparsity s_t."""
    if flip:
        mask = mask.flipped_horizontal()
    k = max(mask.kept_count, round_half_up((1.0 - s_t) * n_patches))
    return _truncated_indices(mask, k)


def _cosine_lr(base_lr, epoch, total):
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(total, 1)))


def train(model, handle, config: RunConfig, workdir):
    """Run one training path; returns (model, history).

    LT reads masks from the store (never mutating it), RC pairs each image with
    a seeded random mask of the same kept count, FULL consumes complete images.
    """
    os.makedirs(os.path.join(workdir, "ckpt"), exist_ok=True)
    n_patches = model.config.num_patches

    store = None
    k_final = None
    if config.path == "lt":
        store = TicketStore.load(config.store_path)
        if (config.selector_fingerprint is not None
                and store.manifest.selector_fingerprint != config.selector_fingerprint):
            raise ProvenanceError("store was not produced by the declared selector")
    if config.path in ("lt", "rc"):
        k_final = stage_keep_counts(n_patches, config.selector_config)[-1]
        s_target = target_sparsity(config.selector_config)
    else:
        s_target = 0.0

    opt = torch.optim.AdamW(model.parameters(), lr=config.lr,
                            weight_decay=config.weight_decay)
    history = []
    digest = save_checkpoint(model, os.path.join(workdir, "ckpt", "epoch-0.pt"))

    for epoch in range(config.epochs):
        s_t = s_target
        if config.warmup_epochs > 0 and config.path != "full":
            s_t = warmup_sparsity(epoch, config.warmup_epochs, s_target)
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(config.lr, epoch, config.epochs)

        total_loss, total_hit, total_n = 0.0, 0, 0
        for batch in batches(handle, config.batch_size, config.data_seed, epoch,
                             augment=config.augment):
            logits = _path_forward(model, batch, handle, config, store, k_final,
                                   s_t, epoch, n_patches)
            loss = F.cross_entropy(logits, batch.labels)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"NaN/Inf loss at epoch {epoch}; last good checkpoint {digest}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(batch.ids)
            total_hit += (logits.argmax(1) == batch.labels).sum().item()
            total_n += len(batch.ids)

        model.epoch = epoch + 1
        record = {
            "epoch": epoch + 1,
            "loss": total_loss / total_n,
            "train_acc": 100.0 * total_hit / total_n,
            "sparsity": s_t,
        }
        if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
            digest = save_checkpoint(
                model, os.path.join(workdir, "ckpt", f"epoch-{epoch + 1}.pt"))
            record["checkpoint_digest"] = digest
        history.append(record)

    with open(os.path.join(workdir, "history.json"), "w") as fh:
        json.dump(history, fh, indent=2)
    return model, history


def _path_forward(model, batch, handle, config, store, k_final, s_t, epoch, n_patches):
    if config.path == "full":
        if model.config.arch_kind != "vit":
            return model(batch.images)
        idx = torch.arange(n_patches).expand(len(batch.ids), n_patches)
        return forward_subset_batch(model, batch.images, idx)

    masks = []
    for image_id in batch.ids:
        if config.path == "lt":
            masks.append(store.get(image_id))
        else:
            seed = _rc_mask_seed(config.rc_seed, image_id,
                                 epoch if config.rc_resample else None)
            masks.append(random_mask(n_patches, k_final, seed))

    if config.input_mode == "occlude":
        imgs = []
        patch = handle.image_size // masks[0].grid_side
        for image_id, mask, flip in zip(batch.ids, masks, batch.flips):
            raw = occlude_patches(handle.raw_image(image_id), mask, patch)
            if flip:
                raw = torch.flip(raw, dims=[-1])
            imgs.append(handle.normalize(raw))
        return model(torch.stack(imgs))

    rows = [step_mask_indices(m, n_patches, s_t, flip=f)
            for m, f in zip(masks, batch.flips)]
    idx = torch.tensor(rows, dtype=torch.long)
    return forward_subset_batch(model, batch.images, idx)


def checkpoint_restore(workdir, digest):
    """Load the checkpoint under workdir/ckpt whose content digest matches."""
    ckpt_dir = os.path.join(workdir, "ckpt")
    for name in sorted(os.listdir(ckpt_dir)):
        path = os.path.join(ckpt_dir, name)
        model = load_checkpoint(path)
        if state_digest(model) == digest:
            return model
    raise CorruptionError(f"no checkpoint with digest {digest} under {ckpt_dir}")
