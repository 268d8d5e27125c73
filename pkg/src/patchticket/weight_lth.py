"""Conventional weight-level LTH: one-shot magnitude pruning, masked retraining, reports."""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import batches
from .errors import AlignmentError, InfeasibleSparsityError, NumericalError, ReportError
from .models import build_model

SCOPES = ("MSA", "MSA_MLP", "CONV_ALL")


def _in_scope(name, param, scope):
    if param.ndim < 2:  # biases, norms, scalars are never pruned
        return False
    if scope == "MSA":
        return ".attn." in name
    if scope == "MSA_MLP":
        return ".attn." in name or ".mlp." in name
    if scope == "CONV_ALL":
        return ".conv" in name or ".short.0." in name or name.startswith("stem.0")
    raise AlignmentError(f"unknown scope {scope!r}")


@dataclass
class WeightMask:
    scope: str
    masks: dict  # parameter name -> bool tensor; absent names are implicitly all-ones
    achieved_sparsity: float  # fraction of ALL model parameters zeroed

    def pruned_count(self):
        return sum(int((~m).sum()) for m in self.masks.values())


@dataclass
class RewindSpec:
    epoch: int  # 0 = classic initialization
    checkpoint_digest: str = None


def _scope_params(model, scope):
    return [(n, p) for n, p in sorted(model.named_parameters())
            if _in_scope(n, p, scope)]


def magnitude_prune(pretrained, scope, target_sparsity) -> WeightMask:
    """Zero the globally smallest-magnitude in-scope weights until the overall
    model sparsity (over all parameters) reaches the target within one weight."""
    if not 0 <= target_sparsity < 1:
        raise InfeasibleSparsityError("target_sparsity must be in [0, 1)")
    total = sum(p.numel() for _, p in model_params(pretrained))
    n_prune = round(target_sparsity * total)
    scoped = _scope_params(pretrained, scope)
    in_scope_total = sum(p.numel() for _, p in scoped)
    if n_prune > in_scope_total:
        raise InfeasibleSparsityError(
            f"need {n_prune} prunable weights but scope {scope} holds {in_scope_total}"
        )
    mags = np.concatenate([p.detach().abs().reshape(-1).numpy() for _, p in scoped]) \
        if scoped else np.empty(0)
    # stable sort: ties fall to the earlier (name-sorted) position
    order = np.argsort(mags, kind="stable")[:n_prune]
    flat_mask = np.ones(in_scope_total, dtype=bool)
    flat_mask[order] = False
    masks, offset = {}, 0
    for name, p in scoped:
        n = p.numel()
        masks[name] = torch.from_numpy(
            flat_mask[offset:offset + n].copy()).reshape(p.shape)
        offset += n
    return WeightMask(scope, masks, n_prune / total)


def model_params(model):
    return sorted(model.named_parameters())


def random_weight_mask(model, scope, sparsity, seed) -> WeightMask:
    """Uniform random in-scope mask at the given overall sparsity."""
    total = sum(p.numel() for _, p in model_params(model))
    n_prune = round(sparsity * total)
    scoped = _scope_params(model, scope)
    in_scope_total = sum(p.numel() for _, p in scoped)
    if n_prune > in_scope_total:
        raise InfeasibleSparsityError(
            f"need {n_prune} prunable weights but scope {scope} holds {in_scope_total}"
        )
    rng = np.random.default_rng(seed)
    flat_mask = np.ones(in_scope_total, dtype=bool)
    flat_mask[rng.choice(in_scope_total, size=n_prune, replace=False)] = False
    masks, offset = {}, 0
    for name, p in scoped:
        n = p.numel()
        masks[name] = torch.from_numpy(
            flat_mask[offset:offset + n].copy()).reshape(p.shape)
        offset += n
    return WeightMask(scope, masks, n_prune / total)


def random_reinit(config, seed):
    """Fresh initialization independent of the pretraining run (the RR arm)."""
    return build_model(config, seed)


def apply_weight_mask(model, mask: WeightMask):
    params = dict(model.named_parameters())
    for name, m in mask.masks.items():
        if name not in params:
            raise AlignmentError(f"mask names parameter {name!r} absent from model")
        with torch.no_grad():
            params[name].mul_(m)


def train_masked(model, mask: WeightMask, handle, epochs, lr=1e-3,
                 weight_decay=5e-4, batch_size=64, data_seed=0):
    """Train with masked entries pinned to exactly zero at every step."""
    apply_weight_mask(model, mask)
    params = dict(model.named_parameters())
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    for epoch in range(epochs):
        for group in opt.param_groups:
            group["lr"] = lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))
        for batch in batches(handle, batch_size, data_seed, epoch):
            loss = F.cross_entropy(model(batch.images), batch.labels)
            if not torch.isfinite(loss):
                raise NumericalError(f"NaN/Inf loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            apply_weight_mask(model, mask)
        model.epoch = epoch + 1
    return model


@dataclass
class LthRun:
    scope: str
    sparsity: float
    arm: str  # "lth" | "rr" | "rm"
    accuracy: float
    rewound: bool = False


def lth_report(runs):
    """Pair LTH/RR runs by (scope, sparsity, rewound) and tabulate accuracy diffs."""
    keyed = {}
    for run in runs:
        keyed.setdefault((run.scope, run.sparsity, run.rewound), {})[run.arm] = run
    rows = []
    for (scope, sparsity, rewound), arms in sorted(keyed.items()):
        if "lth" not in arms or "rr" not in arms:
            raise ReportError(
                f"unpaired runs for scope={scope} sparsity={sparsity} rewound={rewound}"
            )
        lth_acc, rr_acc = arms["lth"].accuracy, arms["rr"].accuracy
        rows.append({
            "scope": scope,
            "sparsity": sparsity,
            "lth_acc": round(lth_acc, 1),
            "rr_acc": round(rr_acc, 1),
            "diff": round(lth_acc - rr_acc, 1),
            "rewound": rewound,
        })
    return rows


def format_report(rows):
    header = f"{'Weights Pruned':<14} {'Sparsity':>8} {'LTH Acc.':>9} {'RR Acc.':>8} {'Diff.':>6} {'Rewound':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['scope']:<14} {100 * r['sparsity']:>7.1f}% {r['lth_acc']:>9.1f} "
            f"{r['rr_acc']:>8.1f} {r['diff']:>6.1f} {str(r['rewound']):>8}"
        )
    return "\n".join(lines)
