"""Analytic multiply-accumulate model for the ViT presets."""

from .errors import ConfigurationError
from .models import ModelConfig


def transformer_macs(n_tokens, *, depth, embed_dim, patch_size, num_classes,
                     mlp_ratio=4, in_chans=3):
    """Closed-form MAC count for a ViT forward with n_tokens tokens (CLS included).

    Per layer: qkv+proj projections 4*n*d^2, attention matmuls 2*n^2*d,
    MLP 2*mlp_ratio*n*d^2. Patch embedding covers the n_tokens-1 embedded
    patches; the classifier head reads one token.
    """
    if n_tokens < 1:
        raise ConfigurationError("n_tokens must be >= 1")
    d = embed_dim
    n = n_tokens
    per_layer = 4 * n * d * d + 2 * n * n * d + 2 * mlp_ratio * n * d * d
    patch_embed = (n - 1) * (patch_size * patch_size * in_chans) * d
    head = d * num_classes
    return depth * per_layer + patch_embed + head


def count_macs(config: ModelConfig, n_tokens: int) -> int:
    if config.arch_kind != "vit":
        raise ConfigurationError("count_macs models the ViT presets only")
    return transformer_macs(
        n_tokens,
        depth=config.depth,
        embed_dim=config.embed_dim,
        patch_size=config.patch_size,
        num_classes=config.num_classes,
        mlp_ratio=config.mlp_ratio,
        in_chans=config.in_chans,
    )
