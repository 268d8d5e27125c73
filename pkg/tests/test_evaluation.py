import numpy as np
import pytest
import torch
from torch import nn

from patchticket import (
    EvalMatrix,
    SelectorConfig,
    StoreManifest,
    TicketStore,
    build_matrix,
    build_model,
    evaluate,
    macs_report,
    random_mask,
    verdict,
)
from patchticket.errors import ComparisonError, StoreCoverageError, VerdictError
from patchticket.models import PRESETS

from conftest import TINY_VIT


def store_for(handle, kept=8, seed=0):
    manifest = StoreManifest(
        selector_fingerprint="fp",
        selector_config=SelectorConfig(stage_depths=(1, 2, 3), keep_rate=0.5),
        dataset_id=handle.digest,
        grid_side=4,
    )
    store = TicketStore(manifest)
    for i, image_id in enumerate(handle.ids):
        store.put(image_id, random_mask(16, kept, seed + i))
    return store


class _Oracle(nn.Module):
    """Predicts each image's true label regardless of input shape."""

    def __init__(self, handle, constant=None):
        super().__init__()
        self.config = TINY_VIT
        self.handle = handle
        self.constant = constant
        self._cursor = 0

    def forward(self, x):
        n = x.shape[0]
        ids = self.handle.ids[self._cursor:self._cursor + n]
        self._cursor = (self._cursor + n) % len(self.handle.ids)
        out = torch.zeros(n, self.config.num_classes)
        for j, image_id in enumerate(ids):
            label = self.constant if self.constant is not None \
                else self.handle.labels[image_id]
            out[j, label] = 1.0
        return out


class TestEvaluate:
    def test_perfect_classifier(self, mini_dataset):
        model = _Oracle(mini_dataset)
        assert evaluate(model, mini_dataset, "dense") == 100.0

    def test_constant_classifier(self, mini_dataset):
        model = _Oracle(mini_dataset, constant=0)
        acc = evaluate(model, mini_dataset, "dense")
        share = sum(1 for v in mini_dataset.labels.values() if v == 0)
        assert acc == pytest.approx(100.0 * share / len(mini_dataset.ids))

    def test_deterministic(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        store = store_for(mini_dataset)
        for mode in ("dense", "sparse"):
            a = evaluate(model, mini_dataset, mode, store)
            b = evaluate(model, mini_dataset, mode, store)
            assert a == b

    def test_batch_size_invariant(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        store = store_for(mini_dataset)
        a = evaluate(model, mini_dataset, "sparse", store, batch_size=3)
        b = evaluate(model, mini_dataset, "sparse", store, batch_size=128)
        assert a == pytest.approx(b)

    def test_sparse_needs_store(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        with pytest.raises(StoreCoverageError):
            evaluate(model, mini_dataset, "sparse")

    def test_missing_image_named(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        store = store_for(mini_dataset)
        victim = mini_dataset.ids[3]
        del store.records[victim]
        with pytest.raises(StoreCoverageError, match=victim):
            evaluate(model, mini_dataset, "sparse", store)

    def test_full_store_sparse_equals_dense(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        store = store_for(mini_dataset, kept=16)
        dense = evaluate(model, mini_dataset, "dense")
        sparse = evaluate(model, mini_dataset, "sparse", store)
        assert dense == sparse

    def test_restores_train_mode(self, mini_dataset):
        model = build_model(TINY_VIT, 0)
        model.train()
        evaluate(model, mini_dataset, "dense")
        assert model.training


class TestBuildMatrix:
    def models(self, seeds=(0, 1, 2)):
        return {"pretrain": build_model(TINY_VIT, seeds[0]),
                "lt": build_model(TINY_VIT, seeds[1]),
                "rc": build_model(TINY_VIT, seeds[2])}

    def test_all_cells_filled(self, mini_dataset):
        matrix = build_matrix(self.models(), mini_dataset, store_for(mini_dataset))
        assert matrix.pretrain_dense is not None
        assert matrix.lt_dense is not None and matrix.lt_sparse is not None
        assert matrix.rc_dense is not None and matrix.rc_sparse is not None
        assert matrix.pretrain_sparse is None
        assert matrix.store_fingerprint == "fp"

    def test_occlusion_sparse_cells_absent(self, mini_dataset):
        matrix = build_matrix(self.models(), mini_dataset, store_for(mini_dataset),
                              occlusion=True)
        assert matrix.occlusion
        assert matrix.lt_sparse is None and matrix.rc_sparse is None
        assert matrix.lt_dense is not None and matrix.rc_dense is not None

    def test_mismatched_configs_rejected(self, mini_dataset):
        models = self.models()
        models["rc"] = build_model(PRESETS["micro-desk"], 0)
        with pytest.raises(ComparisonError):
            build_matrix(models, mini_dataset, store_for(mini_dataset))

    def test_rows_layout(self):
        matrix = EvalMatrix(pretrain_dense=79.8, lt_dense=79.2, lt_sparse=78.1,
                            rc_dense=78.9, rc_sparse=76.5)
        rows = matrix.rows()
        assert [r["model"] for r in rows] == ["Pretrain", "LT", "RC"]
        assert rows[1]["sparse_acc"] == 78.1


class TestVerdict:
    def matrix(self, pre, lt, rc):
        return EvalMatrix(pretrain_dense=pre, lt_sparse=lt, rc_sparse=rc)

    def test_published_style_numbers(self):
        v = verdict(self.matrix(83.3, 82.4, 81.9),
                    match_tolerance=1.0, advantage_margin=0.5)
        assert v.match_pretrain and v.clear_advantage and v.is_winning

    def test_default_thresholds(self):
        v = verdict(self.matrix(80.0, 79.5, 78.5))
        assert v.is_winning
        assert not verdict(self.matrix(80.0, 79.4, 78.5)).match_pretrain
        assert not verdict(self.matrix(80.0, 79.5, 78.6)).clear_advantage

    def test_lt_above_pretrain_still_matches(self):
        assert verdict(self.matrix(80.0, 81.0, 79.0)).match_pretrain

    def test_occluded_matrix_uses_dense_cells(self):
        matrix = EvalMatrix(pretrain_dense=80.0, lt_dense=79.8, rc_dense=78.0,
                            occlusion=True)
        assert verdict(matrix).is_winning

    def test_incomplete_matrix(self):
        with pytest.raises(VerdictError):
            verdict(EvalMatrix(pretrain_dense=80.0, lt_sparse=79.0))
        with pytest.raises(VerdictError):
            verdict(EvalMatrix(lt_sparse=79.0, rc_sparse=78.0))


class TestMacsReport:
    def test_full_store_ratio_one(self, mini_dataset):
        dense, sparse, ratio = macs_report(TINY_VIT, store_for(mini_dataset, kept=16))
        assert dense == sparse and ratio == 1.0

    def test_ratio_decreases_with_sparsity(self, mini_dataset):
        _, _, r8 = macs_report(TINY_VIT, store_for(mini_dataset, kept=8))
        _, _, r4 = macs_report(TINY_VIT, store_for(mini_dataset, kept=4))
        assert r4 < r8 < 1.0

    def test_mean_over_mixed_counts(self, mini_dataset):
        from patchticket import count_macs

        store = store_for(mini_dataset, kept=16)
        half = mini_dataset.ids[: len(mini_dataset.ids) // 2]
        for image_id in half:
            store.records[image_id] = random_mask(16, 8, 0)
        _, sparse, _ = macs_report(TINY_VIT, store)
        expected = (count_macs(TINY_VIT, 9) + count_macs(TINY_VIT, 17)) / 2
        assert sparse == pytest.approx(expected)
