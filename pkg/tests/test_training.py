import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from patchticket import (
    RunConfig,
    SelectorConfig,
    build_model,
    checkpoint_restore,
    effective_keep_rate,
    materialize,
    state_digest,
    target_sparsity,
    train,
    warmup_sparsity,
)
from patchticket.errors import ConfigurationError, ProvenanceError
from patchticket.training import step_mask_indices

from conftest import TINY_VIT


class TestWarmupSparsity:
    def test_endpoints(self):
        assert warmup_sparsity(0, 10, 0.488) == 0.0
        assert warmup_sparsity(10, 10, 0.488) == pytest.approx(0.488)
        assert warmup_sparsity(25, 10, 0.488) == pytest.approx(0.488)

    def test_midpoint(self):
        assert warmup_sparsity(5, 10, 0.488) == pytest.approx(0.488 / 2, abs=1e-12)

    @given(tw=st.integers(1, 40), target=st.floats(0.0, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_continuous(self, tw, target):
        grid = [warmup_sparsity(t, tw, target) for t in range(0, 2 * tw + 1)]
        assert all(b >= a - 1e-12 for a, b in zip(grid, grid[1:]))
        assert grid[tw] == pytest.approx(target, abs=1e-12)


class TestEffectiveKeepRate:
    def test_zero_sparsity(self):
        assert effective_keep_rate(0.0, 3) == 1.0

    def test_cube_root(self):
        assert effective_keep_rate(0.488, 3) == pytest.approx(0.8, abs=1e-4)

    @given(s=st.floats(0.0, 0.99))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, s):
        cfg = SelectorConfig(keep_rate=effective_keep_rate(s, 3))
        assert target_sparsity(cfg) == pytest.approx(s, abs=1e-12)


@pytest.fixture(scope="module")
def pretrained_selector(mini_dataset, tmp_path_factory):
    model = build_model(TINY_VIT, 9)
    cfg = RunConfig(path="full", epochs=1, batch_size=6, lr=1e-3)
    train(model, mini_dataset, cfg, str(tmp_path_factory.mktemp("pre")))
    return model


@pytest.fixture(scope="module")
def toy_store(pretrained_selector, mini_dataset, tmp_path_factory):
    cfg = SelectorConfig(stage_depths=(1, 2, 3), keep_rate=0.5)
    path = tmp_path_factory.mktemp("store") / "toy.tickets"
    store = materialize(path, pretrained_selector, mini_dataset, cfg,
                        state_digest(pretrained_selector))
    return str(path), store, cfg


class TestRunConfig:
    def test_lt_requires_store(self):
        with pytest.raises(ConfigurationError):
            RunConfig(path="lt", epochs=1,
                      selector_config=SelectorConfig(keep_rate=0.8))

    def test_rc_requires_seed(self):
        with pytest.raises(ConfigurationError):
            RunConfig(path="rc", epochs=1,
                      selector_config=SelectorConfig(keep_rate=0.8))

    def test_warmup_bounded_by_epochs(self):
        with pytest.raises(ConfigurationError):
            RunConfig(path="full", epochs=2, warmup_epochs=3)


class TestTrain:
    def test_zero_epochs_identity(self, mini_dataset, tmp_path):
        model = build_model(TINY_VIT, 0)
        before = state_digest(model)
        out, history = train(model, mini_dataset,
                             RunConfig(path="full", epochs=0), str(tmp_path))
        assert state_digest(out) == before
        assert history == []

    def test_lt_with_identity_store_equals_full(self, mini_dataset, tmp_path,
                                                pretrained_selector):
        # rho=1 store: every mask keeps all patches
        sel = SelectorConfig(stage_depths=(1, 2, 3), keep_rate=1.0)
        path = tmp_path / "ones.tickets"
        materialize(path, pretrained_selector, mini_dataset, sel,
                    state_digest(pretrained_selector))

        full_model = build_model(TINY_VIT, 5)
        train(full_model, mini_dataset,
              RunConfig(path="full", epochs=2, batch_size=6, data_seed=3),
              str(tmp_path / "full"))

        lt_model = build_model(TINY_VIT, 5)
        train(lt_model, mini_dataset,
              RunConfig(path="lt", epochs=2, batch_size=6, data_seed=3,
                        selector_config=sel, store_path=str(path)),
              str(tmp_path / "lt"))
        assert state_digest(full_model) == state_digest(lt_model)

    def test_fingerprint_mismatch_rejected(self, mini_dataset, tmp_path, toy_store):
        path, _, sel = toy_store
        model = build_model(TINY_VIT, 1)
        cfg = RunConfig(path="lt", epochs=1, selector_config=sel,
                        store_path=path, selector_fingerprint="wrong")
        with pytest.raises(ProvenanceError):
            train(model, mini_dataset, cfg, str(tmp_path))

    def test_lt_rc_token_count_parity(self, mini_dataset, toy_store):
        # the RC path must consume exactly the LT per-image kept counts
        path, store, sel = toy_store
        from patchticket.selector import stage_keep_counts
        from patchticket.training import _rc_mask_seed
        from patchticket import random_mask

        k_final = stage_keep_counts(16, sel)[-1]
        for image_id in mini_dataset.ids:
            lt_kept = store.get(image_id).kept_count
            rc_kept = random_mask(16, k_final, _rc_mask_seed(7, image_id)).kept_count
            assert lt_kept == rc_kept

    def test_store_not_mutated_by_training(self, mini_dataset, tmp_path, toy_store):
        path, _, sel = toy_store
        before = open(path, "rb").read()
        model = build_model(TINY_VIT, 2)
        train(model, mini_dataset,
              RunConfig(path="lt", epochs=1, batch_size=6,
                        selector_config=sel, store_path=path),
              str(tmp_path))
        assert open(path, "rb").read() == before

    def test_warmup_sparsity_recorded(self, mini_dataset, tmp_path, toy_store):
        path, _, sel = toy_store
        model = build_model(TINY_VIT, 3)
        _, history = train(model, mini_dataset,
                           RunConfig(path="lt", epochs=3, warmup_epochs=2,
                                     batch_size=6, selector_config=sel,
                                     store_path=path),
                           str(tmp_path))
        sparsities = [h["sparsity"] for h in history]
        assert sparsities[0] == 0.0
        assert sparsities[-1] == pytest.approx(target_sparsity(sel))
        assert all(b >= a for a, b in zip(sparsities, sparsities[1:]))


class TestStepMaskIndices:
    def test_truncation_respects_order(self, toy_store):
        _, store, sel = toy_store
        mask = next(iter(store.records.values()))
        full = step_mask_indices(mask, 16, s_t=0.0)
        assert full == list(range(16))
        at_target = step_mask_indices(mask, 16, target_sparsity(sel))
        assert at_target == sorted(mask.kept_indices())
        mid = step_mask_indices(mask, 16, target_sparsity(sel) / 2)
        assert set(at_target) <= set(mid) <= set(full)

    def test_flip_remaps_columns(self, toy_store):
        _, store, _ = toy_store
        mask = next(iter(store.records.values()))
        flipped = mask.flipped_horizontal()
        for idx in mask.kept_indices():
            r, c = divmod(idx, 4)
            assert flipped.bits[r * 4 + (3 - c)]


class TestCheckpointRestore:
    def test_restore_by_digest(self, mini_dataset, tmp_path):
        model = build_model(TINY_VIT, 4)
        init_digest = state_digest(model)
        _, history = train(model, mini_dataset,
                           RunConfig(path="full", epochs=2, batch_size=6),
                           str(tmp_path))
        restored = checkpoint_restore(str(tmp_path), init_digest)
        assert restored.epoch == 0
        assert state_digest(restored) == init_digest

        final = checkpoint_restore(str(tmp_path), history[-1]["checkpoint_digest"])
        assert state_digest(final) == state_digest(model)

    def test_deterministic_replay(self, mini_dataset, tmp_path):
        model = build_model(TINY_VIT, 6)
        init = state_digest(model)
        train(model, mini_dataset, RunConfig(path="full", epochs=2, batch_size=6),
              str(tmp_path / "a"))
        replay = checkpoint_restore(str(tmp_path / "a"), init)
        train(replay, mini_dataset, RunConfig(path="full", epochs=2, batch_size=6),
              str(tmp_path / "b"))
        assert state_digest(replay) == state_digest(model)
