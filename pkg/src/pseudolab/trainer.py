"""The weak/strong consistency training loop.

Each iteration draws a labeled batch and a 7x (by default) unlabeled batch,
computes the supervised cross-entropy on weak views of the labeled samples,
gates the unlabeled weak-view predictions into pseudo-labels, and trains
the strong views against those targets. The unsupervised term averages over
the full unlabeled batch size, so non-gated samples contribute exactly
zero; pseudo-label targets are detached and gradients flow only through the
strong-view forward pass.

One run owns its parameters, optimizer, EMA, and RNG streams; sweeps run
many isolated runs concurrently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .analytics import ClassGroups, RunRecord, ood_inclusion, pseudo_pr
from .datagen import (
    OOD,
    AugmentSpec,
    Dataset,
    load_dataset,
    strong_view,
    weak_view,
)
from .gating import FLEXIBLE, KINDS, GateStrategy, apply_gate, update_flexible_progress
from .numerics import (
    EmaParams,
    MlpParams,
    OptState,
    Tensor,
    add,
    backward,
    cross_entropy,
    current_lr,
    ema_update,
    forward_logits,
    init_ema,
    init_mlp,
    init_opt_state,
    mlp_forward,
    mul,
    one_hot,
    sgd_step,
    zero_grad,
)
from .rand import substream

# Network width is fixed rather than configured: the run-config schema is a
# closed key set, and the gating comparisons are architecture-agnostic.
HIDDEN_DIMS = (32, 32)


@dataclass
class TrainConfig:
    dataset: str
    total_iters: int
    strategy: GateStrategy
    augment: AugmentSpec
    eval_every: int = 100
    labeled_batch: int = 64
    unlabeled_ratio: int = 7
    lambda_u: float = 1.0
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_momentum: float = 0.999
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.total_iters <= 0:
            raise ValueError("total_iters must be positive")
        if self.eval_every <= 0:
            raise ValueError("eval_every must be positive")
        if self.labeled_batch <= 0 or self.unlabeled_ratio <= 0:
            raise ValueError("batch sizes must be positive")
        if self.lambda_u < 0:
            raise ValueError("lambda_u must be nonnegative")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not (0.0 <= self.ema_momentum <= 1.0):
            raise ValueError("ema_momentum must be in [0, 1]")

    @property
    def unlabeled_batch(self) -> int:
        return self.labeled_batch * self.unlabeled_ratio


# ---------------------------------------------------------------------------
# Run-config files: flat "key = value" lines, '#' comments. Unknown keys are
# a hard error; overrides are "key=value" strings with last-wins semantics.
# ---------------------------------------------------------------------------

_STR_KEYS = {"strategy", "schedule", "dataset"}
_INT_KEYS = {"labeled_batch", "unlabeled_ratio", "total_iters", "eval_every", "seed"}
_FLOAT_KEYS = {"tau_c", "tau_e", "temperature", "lambda_u", "lr0", "momentum",
               "weight_decay", "ema_momentum", "weak_sigma", "strong_sigma",
               "strong_dropout"}
CONFIG_KEYS = _STR_KEYS | _INT_KEYS | _FLOAT_KEYS
_REQUIRED_KEYS = ("dataset", "total_iters", "strategy")


def parse_config_file(path) -> dict:
    mapping = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            mapping[key] = value
    return mapping


def apply_overrides(mapping: dict, overrides) -> dict:
    out = dict(mapping)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(mapping: dict) -> TrainConfig:
    unknown = sorted(set(mapping) - CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in mapping]
    if missing:
        raise ValueError(f"missing required config keys: {', '.join(missing)}")

    parsed = {}
    for key, value in mapping.items():
        try:
            if key in _INT_KEYS:
                parsed[key] = int(value)
            elif key in _FLOAT_KEYS:
                parsed[key] = float(value)
            else:
                parsed[key] = value
        except ValueError:
            raise ValueError(f"config key {key!r}: cannot parse {value!r}") from None

    if parsed["strategy"] not in KINDS:
        raise ValueError(f"unknown strategy {parsed['strategy']!r}")
    strategy = GateStrategy(
        kind=parsed.pop("strategy"),
        **{k: parsed.pop(k) for k in ("tau_c", "tau_e", "temperature") if k in parsed},
    )
    augment = AugmentSpec(
        weak_sigma=parsed.pop("weak_sigma", 0.1),
        strong_sigma=parsed.pop("strong_sigma", 0.5),
        strong_dropout=parsed.pop("strong_dropout", 0.2),
    )
    return TrainConfig(strategy=strategy, augment=augment, **parsed)


def load_config(path, overrides=()) -> TrainConfig:
    return config_from_mapping(apply_overrides(parse_config_file(path), overrides))


def config_to_mapping(config: TrainConfig) -> dict:
    """Flat echo of a config, suitable for the run summary."""
    return {
        "dataset": config.dataset,
        "total_iters": config.total_iters,
        "eval_every": config.eval_every,
        "strategy": config.strategy.kind,
        "tau_c": config.strategy.tau_c,
        "tau_e": config.strategy.tau_e,
        "temperature": config.strategy.temperature,
        "lambda_u": config.lambda_u,
        "lr0": config.lr0,
        "momentum": config.momentum,
        "weight_decay": config.weight_decay,
        "labeled_batch": config.labeled_batch,
        "unlabeled_ratio": config.unlabeled_ratio,
        "ema_momentum": config.ema_momentum,
        "schedule": config.schedule,
        "seed": config.seed,
        "weak_sigma": config.augment.weak_sigma,
        "strong_sigma": config.augment.strong_sigma,
        "strong_dropout": config.augment.strong_dropout,
    }


# ---------------------------------------------------------------------------
# Batch sampling and the two loss terms
# ---------------------------------------------------------------------------


def sample_batches(ds: Dataset, config: TrainConfig, it: int):
    """Uniform-with-replacement index draws: labeled batch from the labeled
    pool, unlabeled batch (labeled_batch * unlabeled_ratio) from the
    unlabeled+ood pool. Deterministic under (seed, it)."""
    labeled_pool = ds.indices("L")
    if labeled_pool.size == 0:
        raise ValueError("labeled pool is empty")
    unlabeled_pool = ds.indices("U", "O")
    rng = substream(config.seed, "batch", it)
    lab = labeled_pool[rng.integers(0, labeled_pool.size, size=config.labeled_batch)]
    if unlabeled_pool.size:
        unl = unlabeled_pool[rng.integers(0, unlabeled_pool.size, size=config.unlabeled_batch)]
    else:
        unl = np.empty(0, dtype=np.int64)
    return lab, unl


def supervised_loss(params: MlpParams, x_weak, labels) -> Tensor:
    """Mean cross-entropy of weak-view logits against the true labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty labeled batch")
    logits = mlp_forward(params, x_weak)
    return cross_entropy(logits, one_hot(labels, params.num_classes))


def unsupervised_loss(params: MlpParams, x_weak, x_strong, strategy: GateStrategy,
                      sample_indices=None, true_classes=None):
    """Gated consistency loss plus the per-sample decisions.

    The gate and the pseudo-label come from an inference-only forward pass
    of the weak view, so the targets carry no gradient. The sum of gated
    cross-entropies is averaged over the FULL batch size; with nothing
    gated the loss is exactly 0.
    """
    weak_logits = forward_logits(params, np.asarray(x_weak, dtype=np.float64))
    decisions = apply_gate(weak_logits, strategy, sample_indices, true_classes)
    batch = len(decisions)
    gated_rows = [i for i, d in enumerate(decisions) if d.gated]
    if not gated_rows:
        return Tensor(np.array(0.0)), decisions
    targets = one_hot(
        np.array([decisions[i].predicted_class for i in gated_rows]),
        params.num_classes,
    )
    strong_logits = mlp_forward(params, np.asarray(x_strong, dtype=np.float64)[gated_rows])
    ce = cross_entropy(strong_logits, targets)
    return mul(ce, len(gated_rows) / batch), decisions


class TrainAbort(RuntimeError):
    """Raised when a run hits a non-finite loss; carries a diagnostic dump."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass
class StepStats:
    iteration: int
    loss_s: float
    loss_u: float
    loss_total: float
    mask_rate: float
    decisions: list


def train_step(params: MlpParams, opt: OptState, ema: EmaParams, ds: Dataset,
               config: TrainConfig, it: int, strategy: GateStrategy | None = None) -> StepStats:
    """One full iteration: sample, build views, combine the losses,
    backprop, SGD step, EMA update."""
    strategy = config.strategy if strategy is None else strategy
    lab_idx, unl_idx = sample_batches(ds, config, it)
    aug = config.augment

    xw_lab = weak_view(ds.features[lab_idx], aug, substream(config.seed, "augment", "labeled", it))
    loss_s = supervised_loss(params, xw_lab, ds.labels[lab_idx])

    xw_unl = weak_view(ds.features[unl_idx], aug, substream(config.seed, "augment", "weak", it))
    xs_unl = strong_view(ds.features[unl_idx], aug, substream(config.seed, "augment", "strong", it))
    # hidden ground truth rides along for analytics only; the gate never sees it
    loss_u, decisions = unsupervised_loss(params, xw_unl, xs_unl, strategy,
                                          unl_idx, ds.labels[unl_idx])

    total = add(loss_s, mul(loss_u, config.lambda_u))
    if not np.isfinite(total.data):
        raise TrainAbort(
            f"non-finite loss at iteration {it}",
            diagnostic={
                "iteration": it,
                "loss_s": float(loss_s.data),
                "loss_u": float(loss_u.data),
                "lr": current_lr(opt),
                "params_finite": bool(all(np.all(np.isfinite(t.data)) for t in params.tensors())),
            },
        )

    zero_grad(params)
    backward(total)
    sgd_step(params, opt)
    ema_update(ema, params)
    if strategy.kind == FLEXIBLE:
        update_flexible_progress(decisions, strategy)

    gated = sum(1 for d in decisions if d.gated)
    return StepStats(
        iteration=it,
        loss_s=float(loss_s.data),
        loss_u=float(loss_u.data),
        loss_total=float(total.data),
        mask_rate=gated / len(decisions) if decisions else 0.0,
        decisions=decisions,
    )


def evaluate(params, features, labels) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty test set")
    logits = forward_logits(params, np.asarray(features, dtype=np.float64))
    return float((logits.argmax(axis=1) == labels).mean())


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    params: MlpParams
    ema: EmaParams
    config: TrainConfig


def default_group_sizes(num_classes: int):
    """3/3 head/tail for 10-class-style runs, shrinking for small K."""
    if num_classes >= 7:
        return 3, 3
    if num_classes >= 3:
        return 1, 1
    return 0, 0


def test_set_path(dataset_path: str) -> str:
    return dataset_path + ".test"


def run_training(config: TrainConfig, dataset: Dataset | None = None,
                 test: Dataset | None = None, decision_writer=None) -> RunResult:
    """Train to completion, emitting a RunRecord at every eval point
    (every eval_every iterations plus the final one)."""
    ds = load_dataset(config.dataset) if dataset is None else dataset
    if test is None:
        path = test_set_path(config.dataset)
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"held-out test file {path} not found (gen-data writes it beside the dataset)"
            )
        test = load_dataset(path)
    keep = test.origin != OOD  # never evaluate on ood-tagged samples
    test_x, test_y = test.features[keep], test.labels[keep]

    k = ds.num_classes
    params = init_mlp([ds.dim, *HIDDEN_DIMS, k], substream(config.seed, "init"))
    opt = init_opt_state(params, config.lr0, config.momentum, config.weight_decay,
                         config.total_iters, config.schedule)
    ema = init_ema(params, config.ema_momentum)
    strategy = config.strategy
    if strategy.kind == FLEXIBLE:
        # fresh per-run tally so concurrent sweep runs cannot share state
        strategy = replace(strategy, class_progress=np.zeros(k, dtype=np.int64))
    groups = ClassGroups.from_counts(ds.class_counts, *default_group_sizes(k))

    records: list[RunRecord] = []
    window: list = []
    for it in range(config.total_iters):
        stats = train_step(params, opt, ema, ds, config, it, strategy)
        window.extend(stats.decisions)
        if decision_writer is not None:
            decision_writer.write(it + 1, stats.decisions)
        if (it + 1) % config.eval_every == 0 or it == config.total_iters - 1:
            pr = pseudo_pr(window, groups)
            cells = {}
            for group in ("overall", "head", "body", "tail"):
                p, r = pr.get(group, (None, None))
                cells[f"precision_{group}"] = p
                cells[f"recall_{group}"] = r
            records.append(RunRecord(
                iteration=it + 1,
                loss_s=stats.loss_s,
                loss_u=stats.loss_u,
                loss_total=stats.loss_total,
                mask_rate=stats.mask_rate,
                ood_included=ood_inclusion(window),
                acc_raw=evaluate(params, test_x, test_y),
                acc_ema=evaluate(ema, test_x, test_y),
                **cells,
            ))
            window = []
    return RunResult(records=records, params=params, ema=ema, config=config)
