"""Compact attention-instrumented ViT and a small residual CNN, trainable on one desk CPU."""

import hashlib
import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, CorruptionError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    arch_kind: str  # "vit" | "cnn"
    depth: int
    embed_dim: int
    num_heads: int
    patch_size: int
    image_size: int
    num_classes: int
    mlp_ratio: int = 4
    in_chans: int = 3

    def __post_init__(self):
        if self.arch_kind not in ("vit", "cnn"):
            raise ConfigurationError(f"unknown arch_kind {self.arch_kind!r}")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.arch_kind == "vit" and self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side ** 2


PRESETS = {
    # desk-scale: trainable from scratch in minutes-to-hours on one core
    "tiny-desk": ModelConfig("vit", depth=8, embed_dim=192, num_heads=3,
                             patch_size=4, image_size=32, num_classes=10),
    "micro-desk": ModelConfig("vit", depth=4, embed_dim=96, num_heads=3,
                              patch_size=4, image_size=32, num_classes=10),
    "cnn-desk": ModelConfig("cnn", depth=20, embed_dim=16, num_heads=1,
                            patch_size=1, image_size=32, num_classes=10),
    # MACs-only presets mirroring published model dimensions
    "deit-tiny-like": ModelConfig("vit", depth=12, embed_dim=192, num_heads=3,
                                  patch_size=16, image_size=224, num_classes=1000),
    "deit-small-like": ModelConfig("vit", depth=12, embed_dim=384, num_heads=6,
                                   patch_size=16, image_size=224, num_classes=1000),
    "deit-medium-like": ModelConfig("vit", depth=12, embed_dim=576, num_heads=9,
                                    patch_size=16, image_size=224, num_classes=1000),
}


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def probs(self, x):
        """Post-softmax attention (B, H, N, N) for the given (already normed) tokens."""
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.num_heads, self.head_dim)
        q, k, _ = qkv.permute(2, 0, 3, 1, 4)
        return (q @ k.transpose(-2, -1) * self.scale).softmax(dim=-1)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(out), attn


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def attention_probs(self, x):
        return self.attn.probs(self.norm1(x))

    def forward(self, x):
        y, attn = self.attn(self.norm1(x))
        x = x + y
        x = x + self.mlp(self.norm2(x))
        return x, attn


class PatchViT(nn.Module):
    """Pre-norm ViT with a CLS token and exposed per-layer attention maps."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.epoch = 0
        self.seed = None
        d = config.embed_dim
        self.patch_embed = nn.Conv2d(config.in_chans, d,
                                     config.patch_size, config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, d))
        self.blocks = nn.ModuleList(
            Block(d, config.num_heads, config.mlp_ratio) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.num_classes)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def _check_spatial(self, x):
        if x.ndim != 4 or x.shape[-1] != self.config.image_size or x.shape[-2] != self.config.image_size:
            raise ShapeError(
                f"expected (B,{self.config.in_chans},{self.config.image_size},"
                f"{self.config.image_size}), got {tuple(x.shape)}"
            )

    def embed_patches(self, x):
        """Per-patch embeddings (B, grid^2, d), row-major grid order, no pos embed."""
        self._check_spatial(x)
        return self.patch_embed(x).flatten(2).transpose(1, 2)

    def tokens_for_indices(self, x, kept_indices):
        """CLS + kept patch tokens, each with the pos embedding of its ORIGINAL index."""
        patches = self.embed_patches(x)
        B = patches.shape[0]
        idx = torch.as_tensor(kept_indices, dtype=torch.long, device=x.device)
        patches = patches.index_select(1, idx)
        cls = self.cls_token.expand(B, -1, -1)
        seq = torch.cat([cls, patches], dim=1)
        pos_idx = torch.cat([torch.zeros(1, dtype=torch.long, device=x.device), idx + 1])
        return seq + self.pos_embed.index_select(1, pos_idx)

    def encode(self, seq, collect_attention=False):
        trace = []
        for block in self.blocks:
            seq, attn = block(seq)
            if collect_attention:
                trace.append(attn)
        seq = self.norm(seq)
        logits = self.head(seq[:, 0])
        return (logits, trace) if collect_attention else logits

    def forward(self, x):
        seq = self.tokens_for_indices(x, range(self.config.num_patches))
        return self.encode(seq)


class BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.short = None
        if stride != 1 or c_in != c_out:
            self.short = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out)
            )

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        s = x if self.short is None else self.short(x)
        return F.relu(y + s)


class SmallResNet(nn.Module):
    """ResNet-20-style classifier for 32x32 inputs (occlusion / weight-LTH baselines)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.epoch = 0
        self.seed = None
        n = max((config.depth - 2) // 6, 1)  # blocks per stage, depth=20 -> 3
        w = config.embed_dim
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_chans, w, 3, 1, 1, bias=False),
            nn.BatchNorm2d(w), nn.ReLU(),
        )
        stages = []
        c_in = w
        for i, c_out in enumerate((w, 2 * w, 4 * w)):
            for j in range(n):
                stages.append(BasicBlock(c_in, c_out, 2 if (i > 0 and j == 0) else 1))
                c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(c_in, config.num_classes)

    def forward(self, x):
        y = self.stages(self.stem(x))
        y = y.mean(dim=(2, 3))
        return self.head(y)


def build_model(config: ModelConfig, seed: int):
    """Deterministically initialized model for (config, seed)."""
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = PatchViT(config) if config.arch_kind == "vit" else SmallResNet(config)
    finally:
        torch.random.set_rng_state(gen_state)
    model.seed = seed
    return model


def forward_with_attention(model, batch):
    """Full forward returning (logits, per-layer post-softmax attention list)."""
    if not isinstance(model, PatchViT):
        raise ShapeError("attention trace requires a ViT")
    seq = model.tokens_for_indices(batch, range(model.config.num_patches))
    return model.encode(seq, collect_attention=True)


def forward_subset(model, batch, mask):
    """Forward on CLS + kept patches only; pos embeddings gathered by original index."""
    from .errors import DegenerateInputError

    if mask.grid_side != model.config.grid_side:
        raise ShapeError(
            f"mask grid {mask.grid_side} != model grid {model.config.grid_side}"
        )
    kept = mask.kept_indices()
    if len(kept) == 0:
        raise DegenerateInputError("mask keeps zero patches")
    seq = model.tokens_for_indices(batch, kept)
    return model.encode(seq)


def forward_subset_batch(model, batch, idx):
    """Subset forward with per-image kept indices idx (B, k), original-grid order."""
    patches = model.embed_patches(batch)
    B, N, d = patches.shape
    gather = idx.unsqueeze(-1).expand(B, idx.shape[1], d)
    kept = patches.gather(1, gather) + model.pos_embed.expand(B, -1, -1)[:, 1:].gather(1, gather)
    cls = model.cls_token.expand(B, 1, d) + model.pos_embed[:, :1].expand(B, 1, d)
    return model.encode(torch.cat([cls, kept], dim=1))


def state_digest(model) -> str:
    """SHA-256 over the sorted named parameter/buffer tensors."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(str(tuple(tensor.shape)).encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model, path):
    payload = {
        "config": asdict(model.config),
        "seed": model.seed,
        "epoch": model.epoch,
        "state": {k: v.cpu() for k, v in model.state_dict().items()},
        "digest": state_digest(model),
    }
    torch.save(payload, path)
    return payload["digest"]


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig(**payload["config"])
    model = build_model(config, payload["seed"] if payload["seed"] is not None else 0)
    for t in payload["state"].values():
        if t.is_floating_point():
            model.to(t.dtype)
            break
    model.load_state_dict(payload["state"])
    model.seed = payload["seed"]
    model.epoch = payload["epoch"]
    if state_digest(model) != payload["digest"]:
        raise CorruptionError(f"digest mismatch in checkpoint {path}")
    return model
