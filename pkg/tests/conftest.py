import numpy as np
import pytest
import torch

from patchticket import ModelConfig, SelectorConfig, build_model, open_builtin

TINY_VIT = ModelConfig("vit", depth=4, embed_dim=24, num_heads=2,
                       patch_size=8, image_size=32, num_classes=4)
GRAD_VIT = ModelConfig("vit", depth=2, embed_dim=16, num_heads=2,
                       patch_size=8, image_size=16, num_classes=3)


@pytest.fixture
def tiny_model():
    return build_model(TINY_VIT, 0)


@pytest.fixture
def tiny_double():
    return build_model(TINY_VIT, 0).double()


@pytest.fixture
def tiny_selector_config():
    return SelectorConfig(stage_depths=(1, 2, 3), keep_rate=0.5)


@pytest.fixture(scope="session")
def mini_dataset():
    return open_builtin(split="train", n_images=12, num_classes=4)


@pytest.fixture(scope="session")
def mini_test_dataset():
    return open_builtin(split="test", n_images=8, num_classes=4)


def rand_image(seed=0, size=32, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(3, size, size, generator=g, dtype=dtype)


def full_mask(grid_side):
    from patchticket import PatchMask

    return PatchMask(grid_side, np.ones(grid_side ** 2, bool), "ticket", 0.0)
