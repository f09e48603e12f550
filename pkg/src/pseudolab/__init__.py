"""Desk-scale semi-supervised learning lab: weak/strong consistency
training with confidence-, energy-, and flexible pseudo-label gating."""

from .analytics import (
    ClassGroups,
    RunRecord,
    export_records,
    import_records,
    ood_inclusion,
    pseudo_pr,
    threshold_sweep,
)
from .datagen import (
    AugmentSpec,
    Dataset,
    ImbalanceSpec,
    OodSpec,
    inject_ood,
    load_dataset,
    longtail_counts,
    make_mixture,
    save_dataset,
    split_labeled,
    strong_view,
    weak_view,
)
from .gating import (
    GateStrategy,
    PseudoLabelDecision,
    apply_gate,
    confidence_score,
    energy_score,
    update_flexible_progress,
)
from .numerics import (
    EmaParams,
    MlpParams,
    OptState,
    Tensor,
    backward,
    cosine_lr,
    cross_entropy,
    ema_update,
    init_ema,
    init_mlp,
    init_opt_state,
    mlp_forward,
    sgd_step,
)
from .trainer import (
    TrainConfig,
    evaluate,
    run_training,
    sample_batches,
    supervised_loss,
    train_step,
    unsupervised_loss,
)

__version__ = "0.1.0"
