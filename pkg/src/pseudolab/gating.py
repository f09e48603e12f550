"""Pseudo-label gating: per-sample scores and the gate rules.

Three rules are supported. Confidence gating keeps a sample when its max
softmax probability reaches tau_c (>=). Energy gating keeps a sample when
-T*log(sum_i exp(logit_i / T)) falls strictly below tau_e: low energy means
the sample sits close to the current training distribution, regardless of
how peaked the softmax is. The flexible rule is a per-class baseline that
scales tau_c down for classes that have gated few samples so far; it is a
simplified stand-in for curriculum thresholding, not a faithful port of any
published method.

Scoring is pure; only the flexible progress counter mutates, and that stays
confined to a single training thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import SENTINEL_LABEL

CONFIDENCE = "confidence"
ENERGY = "energy"
FLEXIBLE = "flexible"
KINDS = (CONFIDENCE, ENERGY, FLEXIBLE)

# Shipped defaults for 10-class runs. Energy scale grows like log K, so
# rescale tau_e accordingly for other class counts.
DEFAULT_TAU_C = 0.95
DEFAULT_TAU_E = -8.0
DEFAULT_TAU_E_LONGTAIL = -9.5
DEFAULT_TEMPERATURE = 1.0

_FMT = "%.17g"


@dataclass
class GateStrategy:
    """Tagged choice of gate rule; only the active kind's fields are read."""

    kind: str
    tau_c: float = DEFAULT_TAU_C
    tau_e: float = DEFAULT_TAU_E
    temperature: float = DEFAULT_TEMPERATURE
    class_progress: np.ndarray | None = None  # flexible only, length K

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class PseudoLabelDecision:
    """One unlabeled sample's gate verdict for one iteration."""

    sample_index: int
    score: float
    gated: bool
    predicted_class: int
    true_class: int = SENTINEL_LABEL  # analytics only


def energy_score(logits, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """-T * log(sum_i exp(logit_i / T)) per row, max-shifted for stability.

    Lower scores mean the sample looks in-distribution. Dividing the logits
    by T makes T=1 the plain negative logsumexp.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / temperature
    m = z.max(axis=1)
    return -temperature * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))


def confidence_score(logits) -> np.ndarray:
    """Max softmax probability per row, max-shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    return (ez / ez.sum(axis=1, keepdims=True)).max(axis=1)


def apply_gate(logits, strategy: GateStrategy, sample_indices=None,
               true_classes=None) -> list[PseudoLabelDecision]:
    """Gate a batch of weak-view logits into per-sample decisions.

    predicted_class is always the argmax (lowest index on ties), independent
    of the strategy. Comparison directions: confidence and flexible gate on
    score >= threshold, energy gates on score < tau_e.
    """
    z = np.asarray(logits, dtype=np.float64)
    batch = z.shape[0]
    if sample_indices is None:
        sample_indices = np.arange(batch)
    if true_classes is None:
        true_classes = np.full(batch, SENTINEL_LABEL)
    predicted = z.argmax(axis=1)

    if strategy.kind == ENERGY:
        scores = energy_score(z, strategy.temperature)
        gated = scores < strategy.tau_e
    elif strategy.kind == CONFIDENCE:
        scores = confidence_score(z)
        gated = scores >= strategy.tau_c
    else:
        progress = strategy.class_progress
        if progress is None:
            raise ValueError("flexible gating requires an initialized class_progress")
        progress = np.asarray(progress, dtype=np.float64)
        scores = confidence_score(z)
        thresholds = strategy.tau_c * (progress[predicted] + 1.0) / (progress.max() + 1.0)
        gated = scores >= thresholds

    return [
        PseudoLabelDecision(
            sample_index=int(sample_indices[i]),
            score=float(scores[i]),
            gated=bool(gated[i]),
            predicted_class=int(predicted[i]),
            true_class=int(true_classes[i]),
        )
        for i in range(batch)
    ]


def update_flexible_progress(decisions, strategy: GateStrategy) -> np.ndarray:
    """Add this batch's gated counts to the per-class progress tally."""
    if strategy.kind != FLEXIBLE:
        raise ValueError("progress updates only apply to the flexible strategy")
    if strategy.class_progress is None:
        raise ValueError("flexible gating requires an initialized class_progress")
    for d in decisions:
        if d.gated:
            strategy.class_progress[d.predicted_class] += 1
    return strategy.class_progress


# ---------------------------------------------------------------------------
# Decision dump: append-only delimited text consumed by the analytics side.
# ---------------------------------------------------------------------------

DUMP_HEADER = "iteration sample_index score gated predicted_class true_class"


class DecisionDumpWriter:
    """Appends one line per decision; header written once at open."""

    def __init__(self, path):
        self._fh = open(path, "w")
        self._fh.write(DUMP_HEADER + "\n")

    def write(self, iteration: int, decisions) -> None:
        for d in decisions:
            self._fh.write(
                f"{iteration} {d.sample_index} {_FMT % d.score} "
                f"{int(d.gated)} {d.predicted_class} {d.true_class}\n"
            )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_decision_dump(path) -> list[tuple[int, PseudoLabelDecision]]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != DUMP_HEADER:
            raise ValueError(f"{path}: not a decision dump")
        for line in fh:
            it, idx, score, gated, pred, true = line.split()
            out.append((int(it), PseudoLabelDecision(
                sample_index=int(idx),
                score=float(score),
                gated=bool(int(gated)),
                predicted_class=int(pred),
                true_class=int(true),
            )))
    return out
