"""Data-level lottery tickets for vision transformers, at desk scale."""

from .models import (
    ModelConfig,
    PRESETS,
    build_model,
    forward_with_attention,
    forward_subset,
    forward_subset_batch,
    save_checkpoint,
    load_checkpoint,
    state_digest,
)
from .macs import count_macs, transformer_macs
from .selector import (
    ImportanceScores,
    PatchMask,
    SelectorConfig,
    random_mask,
    score_tokens,
    select_tickets,
    stage_keep_counts,
    target_sparsity,
    topk_select,
)
from .store import StoreManifest, TicketStore, materialize, verify_fixed_topology
from .masking import PackedPatches, mask_token_labels, occlude_patches, remove_patches
from .training import (
    RunConfig,
    checkpoint_restore,
    effective_keep_rate,
    train,
    warmup_sparsity,
)
from .weight_lth import (
    LthRun,
    RewindSpec,
    WeightMask,
    apply_weight_mask,
    format_report,
    lth_report,
    magnitude_prune,
    random_reinit,
    random_weight_mask,
    train_masked,
)
from .evaluation import (
    EvalMatrix,
    WinningTicketVerdict,
    build_matrix,
    evaluate,
    macs_report,
    verdict,
)
from .viz import render_stage_image, render_stages, stage_kept_sets_for_image
from .reports import (
    format_matrix,
    plot_history,
    plot_macs,
    plot_matrix,
    write_rows,
)
from .gradcheck import finite_diff_check
from .data import DatasetHandle, batches, open_builtin, open_dataset, open_folder

__version__ = "0.1.0"
