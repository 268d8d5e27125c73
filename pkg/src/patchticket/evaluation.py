"""The identification protocol: {LT, RC, pretrain} x {sparse, dense} matrix and verdict."""

from dataclasses import dataclass

import torch

from .errors import ComparisonError, StoreCoverageError, VerdictError
from .macs import count_macs
from .masking import occlude_patches
from .models import forward_subset_batch


@dataclass
class EvalMatrix:
    sparsity: float = None
    store_fingerprint: str = None
    pretrain_dense: float = None
    pretrain_sparse: float = None
    lt_dense: float = None
    lt_sparse: float = None
    rc_dense: float = None
    rc_sparse: float = None
    occlusion: bool = False  # dense cells carry occluded-dense inputs; sparse cells absent

    def rows(self):
        cells = [
            ("Pretrain", self.pretrain_dense, self.pretrain_sparse),
            ("LT", self.lt_dense, self.lt_sparse),
            ("RC", self.rc_dense, self.rc_sparse),
        ]
        out = []
        for name, dense, sparse in cells:
            out.append({"model": name,
                        "dense_acc": dense,
                        "sparse_acc": sparse})
        return out


@dataclass
class WinningTicketVerdict:
    match_pretrain: bool
    clear_advantage: bool
    is_winning: bool
    match_tolerance: float = 0.5
    advantage_margin: float = 1.0


@torch.no_grad()
def evaluate(model, handle, mode="dense", store=None, occlusion=False,
             batch_size=128):
    """Deterministic top-1 accuracy (%) over the full set.

    mode="sparse" feeds the store's ticket masks; occlusion=True applies them
    as pixel occlusion on dense-shaped inputs instead of token removal.
    """
    model.eval()
    hits = 0
    ids = handle.ids
    n_patches = model.config.num_patches if model.config.arch_kind == "vit" else None
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        labels = torch.tensor([handle.labels[i] for i in chunk])
        if mode == "dense":
            logits = model(torch.stack([handle.image(i) for i in chunk]))
        else:
            if store is None:
                raise StoreCoverageError("sparse evaluation requires a ticket store")
            masks = []
            for image_id in chunk:
                if image_id not in store:
                    raise StoreCoverageError(f"no mask for test image {image_id!r}")
                masks.append(store.get(image_id))
            if occlusion:
                patch = handle.image_size // masks[0].grid_side
                imgs = [handle.normalize(occlude_patches(handle.raw_image(i), m, patch))
                        for i, m in zip(chunk, masks)]
                logits = model(torch.stack(imgs))
            else:
                idx = torch.tensor([sorted(m.kept_indices()) for m in masks])
                logits = forward_subset_batch(
                    model, torch.stack([handle.image(i) for i in chunk]), idx)
        hits += (logits.argmax(1) == labels).sum().item()
    model.train()
    return 100.0 * hits / len(ids)


def build_matrix(models, handle, store, occlusion=False, batch_size=128) -> EvalMatrix:
    """models: dict with keys among {"lt", "rc", "pretrain"}.

    RC is always tested with the SAME ticket-selector masks as LT; under
    occlusion the sparse cells stay absent and dense cells carry occluded
    inputs for LT/RC.
    """
    configs = {k: m.config for k, m in models.items()}
    if len({(c.arch_kind, c.depth, c.embed_dim, c.num_heads, c.patch_size,
             c.image_size, c.num_classes) for c in configs.values()}) != 1:
        raise ComparisonError("matrix models must share one ModelConfig")
    some_mask = next(iter(store.records.values()))
    matrix = EvalMatrix(
        sparsity=some_mask.target_sparsity,
        store_fingerprint=store.manifest.selector_fingerprint,
        occlusion=occlusion,
    )
    if "pretrain" in models:
        matrix.pretrain_dense = evaluate(models["pretrain"], handle, "dense",
                                         batch_size=batch_size)
    for arm in ("lt", "rc"):
        if arm not in models:
            continue
        if occlusion:
            # occluded-dense: shape stays dense, inattentive patches are black
            acc = evaluate(models[arm], handle, "sparse", store,
                           occlusion=True, batch_size=batch_size)
            setattr(matrix, f"{arm}_dense", acc)
        else:
            setattr(matrix, f"{arm}_sparse",
                    evaluate(models[arm], handle, "sparse", store,
                             batch_size=batch_size))
            setattr(matrix, f"{arm}_dense",
                    evaluate(models[arm], handle, "dense", batch_size=batch_size))
    return matrix


def verdict(matrix: EvalMatrix, match_tolerance=0.5,
            advantage_margin=1.0) -> WinningTicketVerdict:
    """Winning-ticket decision from accuracy differences only."""
    if matrix.lt_sparse is not None and matrix.rc_sparse is not None:
        lt, rc = matrix.lt_sparse, matrix.rc_sparse
    elif matrix.lt_dense is not None and matrix.rc_dense is not None:
        lt, rc = matrix.lt_dense, matrix.rc_dense
    else:
        raise VerdictError("matrix lacks a common LT/RC mode")
    if matrix.pretrain_dense is None:
        raise VerdictError("matrix lacks a pretrain entry")
    match = (matrix.pretrain_dense - lt) <= match_tolerance
    advantage = (lt - rc) >= advantage_margin
    return WinningTicketVerdict(
        match_pretrain=match,
        clear_advantage=advantage,
        is_winning=match and advantage,
        match_tolerance=match_tolerance,
        advantage_margin=advantage_margin,
    )


def macs_report(config, store):
    """(dense MACs, mean sparse MACs over stored kept counts, sparse/dense ratio)."""
    n_dense = config.num_patches + 1
    dense = count_macs(config, n_dense)
    if store.records:
        sparse = sum(count_macs(config, m.kept_count + 1)
                     for m in store.records.values()) / len(store.records)
    else:
        sparse = float(dense)
    return dense, sparse, sparse / dense
