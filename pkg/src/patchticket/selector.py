"""CLS-attention ticket selection: per-image winning-ticket masks and random twins."""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import (
    ArgumentError,
    ConfigurationError,
    DegenerateSparsityError,
    SelectorError,
)


@dataclass(frozen=True)
class SelectorConfig:
    stage_depths: tuple = (4, 7, 10)  # 1-based, selection applied before each layer
    keep_rate: float = 0.8
    head_agg: str = "mean"
    tie_rule: str = "lowest-original-index-first"
    rounding: str = "half-up"

    def __post_init__(self):
        depths = tuple(self.stage_depths)
        object.__setattr__(self, "stage_depths", depths)
        if any(b <= a for a, b in zip(depths, depths[1:])) or not depths:
            raise ConfigurationError("stage_depths must be non-empty, strictly increasing")
        if depths[0] < 1:
            raise ConfigurationError("stage_depths are 1-based")
        if not 0 < self.keep_rate <= 1:
            raise ConfigurationError("keep_rate must be in (0, 1]")
        if self.head_agg != "mean":
            raise ConfigurationError(f"unsupported head_agg {self.head_agg!r}")
        if self.tie_rule != "lowest-original-index-first":
            raise ConfigurationError(f"unsupported tie_rule {self.tie_rule!r}")
        if self.rounding != "half-up":
            raise ConfigurationError(f"unsupported rounding {self.rounding!r}")

    @property
    def stages(self) -> int:
        return len(self.stage_depths)

    def to_dict(self):
        return {
            "stage_depths": list(self.stage_depths),
            "keep_rate": self.keep_rate,
            "head_agg": self.head_agg,
            "tie_rule": self.tie_rule,
            "rounding": self.rounding,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            stage_depths=tuple(d["stage_depths"]),
            keep_rate=float(d["keep_rate"]),
            head_agg=d.get("head_agg", "mean"),
            tie_rule=d.get("tie_rule", "lowest-original-index-first"),
            rounding=d.get("rounding", "half-up"),
        )


@dataclass
class PatchMask:
    """Per-image keep/drop decision over the patch grid.

    kept_order ranks ALL patches most-important-first: survivors by final-stage
    score, then earlier casualties by the score they held when dropped.  The
    warmup schedule truncates this list.
    """

    grid_side: int
    bits: np.ndarray  # bool, length grid_side**2
    provenance: str  # "ticket" | "random"
    target_sparsity: float
    seed: int = None
    kept_order: tuple = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.grid_side ** 2,):
            raise ConfigurationError("bits length must equal grid_side**2")
        if self.kept_count < 1:
            raise ConfigurationError("mask must keep at least one patch")

    @property
    def kept_count(self) -> int:
        return int(self.bits.sum())

    def kept_indices(self):
        return [int(i) for i in np.flatnonzero(self.bits)]

    def flipped_horizontal(self):
        """Mask for the horizontally mirrored image (grid columns reversed)."""
        grid = self.bits.reshape(self.grid_side, self.grid_side)[:, ::-1]
        order = None
        if self.kept_order is not None:
            side = self.grid_side
            order = tuple((i // side) * side + (side - 1 - i % side) for i in self.kept_order)
        return PatchMask(self.grid_side, grid.reshape(-1).copy(), self.provenance,
                         self.target_sparsity, self.seed, order)


@dataclass
class ImportanceScores:
    """CLS-attention importance of alive tokens, keyed by original patch index."""

    stage: int
    indices: tuple  # original patch indices, ascending
    values: tuple  # matching scores

    def as_dict(self):
        return dict(zip(self.indices, self.values))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def score_tokens(trace_layer, alive, stage=0) -> ImportanceScores:
    """Mean-over-heads CLS-row attention for the alive tokens.

    trace_layer: (H, N, N) post-softmax attention for one image, where row 0
    is the CLS query and columns 1.. are the alive patch tokens in the order
    given by `alive` (original patch indices).
    """
    t = torch.as_tensor(trace_layer)
    if t.ndim != 3 or t.shape[1] != t.shape[2]:
        raise SelectorError(f"expected (H, N, N) attention, got {tuple(t.shape)}")
    if t.shape[1] != len(alive) + 1:
        raise SelectorError(
            f"attention over {t.shape[1]} tokens but {len(alive)} alive patches + CLS"
        )
    cls_row = t.detach()[:, 0, 1:]  # (H, n_alive)
    scores = cls_row.mean(dim=0)
    return ImportanceScores(stage=stage, indices=tuple(int(i) for i in alive),
                            values=tuple(float(v) for v in scores))


def topk_select(scores: ImportanceScores, k: int):
    """Indices of the k highest-scoring tokens; ties keep the lowest original index."""
    n = len(scores.indices)
    if not 1 <= k <= n:
        raise ArgumentError(f"k={k} out of range for {n} scores")
    order = sorted(range(n), key=lambda i: (-scores.values[i], scores.indices[i]))
    return [scores.indices[i] for i in order[:k]]


def stage_keep_counts(n_patches: int, config: SelectorConfig):
    """Per-stage kept counts: k_i = round_half_up(rho * k_{i-1})."""
    if n_patches < 1:
        raise ArgumentError("n_patches must be >= 1")
    counts = []
    k = n_patches
    for _ in range(config.stages):
        k = round_half_up(config.keep_rate * k)
        if k < 1:
            raise DegenerateSparsityError(
                f"keep_rate {config.keep_rate} leaves zero tokens on {n_patches} patches"
            )
        counts.append(k)
    return counts


def target_sparsity(config: SelectorConfig) -> float:
    return 1.0 - config.keep_rate ** config.stages


@torch.no_grad()
def select_tickets(selector, image, config: SelectorConfig) -> PatchMask:
    """Winning-ticket mask for one image.

    Runs the frozen selector; before each stage depth, scores the currently
    alive tokens by CLS attention computed inside that layer, keeps the top
    k_i, and re-runs the layer with the reduced sequence.  The final mask is
    resolved to original patch indices via the positional-embedding index.
    """
    model_cfg = selector.config
    if model_cfg.arch_kind != "vit":
        raise ConfigurationError("ticket selector must be a ViT")
    if config.stage_depths[-1] > model_cfg.depth:
        raise ConfigurationError(
            f"stage depth {config.stage_depths[-1]} exceeds model depth {model_cfg.depth}"
        )
    batch = image.unsqueeze(0) if image.ndim == 3 else image
    if batch.shape[0] != 1:
        raise ConfigurationError("select_tickets operates on a single image")
    batch = batch.to(next(selector.parameters()).dtype)

    n = model_cfg.num_patches
    counts = stage_keep_counts(n, config)
    alive = list(range(n))
    seq = selector.tokens_for_indices(batch, alive)
    drop_history = []  # (dropped original index, score at drop), latest stage first

    stage = 0
    final_scores = None
    for layer_idx, block in enumerate(selector.blocks, start=1):
        if stage < config.stages and layer_idx == config.stage_depths[stage]:
            attn = block.attention_probs(seq)[0]  # (H, N, N)
            scores = score_tokens(attn, alive, stage=stage)
            kept = set(topk_select(scores, counts[stage]))
            lookup = scores.as_dict()
            dropped = [(i, lookup[i]) for i in alive if i not in kept]
            dropped.sort(key=lambda t: (-t[1], t[0]))
            drop_history.insert(0, dropped)
            keep_pos = [0] + [p + 1 for p, i in enumerate(alive) if i in kept]
            seq = seq[:, keep_pos]
            alive = [i for i in alive if i in kept]
            final_scores = {i: lookup[i] for i in alive}
            stage += 1
        seq, _ = block(seq)

    bits = np.zeros(n, dtype=bool)
    bits[alive] = True
    survivors = sorted(alive, key=lambda i: (-final_scores[i], i))
    order = survivors + [i for stage_drops in drop_history for i, _ in stage_drops]
    return PatchMask(model_cfg.grid_side, bits, "ticket",
                     target_sparsity(config), kept_order=tuple(order))


def random_mask(n_patches: int, kept_count: int, seed: int) -> PatchMask:
    """Uniform random kept set of exactly kept_count patches, deterministic in seed."""
    if not 1 <= kept_count <= n_patches:
        raise ArgumentError(f"kept_count={kept_count} out of range for {n_patches}")
    side = math.isqrt(n_patches)
    if side * side != n_patches:
        raise ArgumentError("n_patches must be a perfect square grid")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_patches)
    bits = np.zeros(n_patches, dtype=bool)
    bits[order[:kept_count]] = True
    return PatchMask(side, bits, "random", 1.0 - kept_count / n_patches,
                     seed=seed, kept_order=tuple(int(i) for i in order))
