import numpy as np
import pytest
import torch
from torch import nn

from patchticket import (
    LthRun,
    WeightMask,
    apply_weight_mask,
    build_model,
    format_report,
    lth_report,
    magnitude_prune,
    random_reinit,
    random_weight_mask,
    state_digest,
    train_masked,
)
from patchticket.errors import AlignmentError, InfeasibleSparsityError, ReportError
from patchticket.models import PRESETS

from conftest import TINY_VIT


class _Leaf(nn.Module):
    def __init__(self, vals):
        super().__init__()
        self.weight = nn.Parameter(vals.to(torch.float32))


class ToyNet(nn.Module):
    """Four attention weights and one (never-prunable) bias."""

    def __init__(self, vals):
        super().__init__()
        self.block = nn.ModuleDict({"attn": _Leaf(torch.tensor(vals).reshape(2, 2))})
        self.bias = nn.Parameter(torch.zeros(1))


class TestMagnitudePrune:
    def test_hand_example(self):
        net = ToyNet([0.1, -0.5, 0.3, -0.2])
        # 5 params total (4 weights + 1 bias); 40% of 5 = 2 pruned
        mask = magnitude_prune(net, "MSA", 0.4)
        m = mask.masks["block.attn.weight"].reshape(-1)
        assert m.tolist() == [False, True, True, False]
        assert mask.pruned_count() == 2
        assert mask.achieved_sparsity == pytest.approx(0.4)

    def test_zero_target_all_ones(self):
        mask = magnitude_prune(ToyNet([0.1, -0.5, 0.3, -0.2]), "MSA", 0.0)
        assert mask.pruned_count() == 0
        assert bool(mask.masks["block.attn.weight"].all())

    def test_threshold_property(self):
        model = build_model(TINY_VIT, 0)
        mask = magnitude_prune(model, "MSA", 0.2)
        pruned, kept = [], []
        for name, m in mask.masks.items():
            w = dict(model.named_parameters())[name].detach().abs()
            pruned.append(w[~m])
            kept.append(w[m])
        assert torch.cat(pruned).max() <= torch.cat(kept).min()

    def test_count_matches_rounding(self):
        model = build_model(TINY_VIT, 0)
        total = sum(p.numel() for p in model.parameters())
        mask = magnitude_prune(model, "MSA_MLP", 0.33)
        assert mask.pruned_count() == round(0.33 * total)

    def test_scope_restriction(self):
        model = build_model(TINY_VIT, 0)
        mask = magnitude_prune(model, "MSA", 0.1)
        assert mask.masks and all(".attn." in n for n in mask.masks)
        for m in mask.masks.values():
            assert m.ndim >= 2

    def test_infeasible_target(self):
        model = build_model(TINY_VIT, 0)
        with pytest.raises(InfeasibleSparsityError):
            magnitude_prune(model, "MSA", 0.9)
        with pytest.raises(InfeasibleSparsityError):
            magnitude_prune(model, "MSA", 1.0)

    def test_cnn_scope(self):
        model = build_model(PRESETS["cnn-desk"], 0)
        mask = magnitude_prune(model, "CONV_ALL", 0.5)
        for name in mask.masks:
            p = dict(model.named_parameters())[name]
            assert p.ndim == 4


class TestRandomWeightMask:
    def test_reproducible(self):
        model = build_model(TINY_VIT, 0)
        a = random_weight_mask(model, "MSA", 0.2, seed=5)
        b = random_weight_mask(model, "MSA", 0.2, seed=5)
        for name in a.masks:
            assert torch.equal(a.masks[name], b.masks[name])

    def test_seeds_differ(self):
        model = build_model(TINY_VIT, 0)
        a = random_weight_mask(model, "MSA", 0.2, seed=5)
        b = random_weight_mask(model, "MSA", 0.2, seed=6)
        assert any(not torch.equal(a.masks[n], b.masks[n]) for n in a.masks)

    def test_count_matches_magnitude_counterpart(self):
        model = build_model(TINY_VIT, 0)
        mag = magnitude_prune(model, "MSA_MLP", 0.3)
        rand = random_weight_mask(model, "MSA_MLP", 0.3, seed=0)
        assert mag.pruned_count() == rand.pruned_count()
        assert mag.achieved_sparsity == rand.achieved_sparsity


class TestApplyAndTrain:
    def test_apply_zeros_exactly_masked(self):
        net = ToyNet([0.1, -0.5, 0.3, -0.2])
        mask = magnitude_prune(net, "MSA", 0.4)
        apply_weight_mask(net, mask)
        got = net.block["attn"].weight.detach().reshape(-1)
        assert got.tolist() == pytest.approx([0.0, -0.5, 0.3, 0.0])
        assert got[0] == 0.0 and got[3] == 0.0

    def test_unknown_parameter_name(self):
        net = ToyNet([0.1, -0.5, 0.3, -0.2])
        bogus = WeightMask("MSA", {"nope.attn.weight": torch.ones(2, 2, dtype=bool)},
                           0.0)
        with pytest.raises(AlignmentError):
            apply_weight_mask(net, bogus)

    def test_zeros_persist_through_training(self, mini_dataset):
        model = build_model(TINY_VIT, 1)
        mask = magnitude_prune(model, "MSA_MLP", 0.3)
        train_masked(model, mask, mini_dataset, epochs=1, batch_size=6)
        params = dict(model.named_parameters())
        for name, m in mask.masks.items():
            assert torch.all(params[name].detach()[~m] == 0)
        # unmasked in-scope weights did move
        moved = any((params[n].detach()[m] != 0).any() for n, m in mask.masks.items())
        assert moved


class TestRandomReinit:
    def test_differs_from_original(self):
        a = build_model(TINY_VIT, 0)
        b = random_reinit(TINY_VIT, 1)
        assert state_digest(a) != state_digest(b)

    def test_same_seed_identical(self):
        assert state_digest(random_reinit(TINY_VIT, 7)) == \
            state_digest(random_reinit(TINY_VIT, 7))


class TestReport:
    def runs(self):
        return [
            LthRun("MSA_MLP", 0.71, "lth", 74.9),
            LthRun("MSA_MLP", 0.71, "rr", 72.5),
            LthRun("CONV_ALL", 0.832, "lth", 90.1),
            LthRun("CONV_ALL", 0.832, "rr", 87.9),
            LthRun("MSA", 0.44, "lth", 80.0),
            LthRun("MSA", 0.44, "rr", 80.0),
        ]

    def test_diffs(self):
        rows = {(r["scope"], r["sparsity"]): r["diff"] for r in lth_report(self.runs())}
        assert rows[("MSA_MLP", 0.71)] == pytest.approx(2.4)
        assert rows[("CONV_ALL", 0.832)] == pytest.approx(2.2)
        assert rows[("MSA", 0.44)] == pytest.approx(0.0)

    def test_unpaired_rejected(self):
        with pytest.raises(ReportError):
            lth_report([LthRun("MSA", 0.44, "lth", 80.0)])

    def test_rewound_pairs_separately(self):
        runs = [
            LthRun("MSA", 0.44, "lth", 81.0, rewound=True),
            LthRun("MSA", 0.44, "rr", 79.5, rewound=True),
        ]
        (row,) = lth_report(runs)
        assert row["rewound"] and row["diff"] == pytest.approx(1.5)

    def test_format_alignment(self):
        text = format_report(lth_report(self.runs()))
        lines = text.splitlines()
        assert "Weights Pruned" in lines[0]
        assert len(lines) == 2 + 3
        assert all(len(line) == len(lines[0]) for line in lines[2:])
