"""Diagnostics over pseudo-label decisions: precision/recall by class-
frequency group, out-of-distribution inclusion counts, run-record
serialization, and the threshold sweep driver.

Precision for a group counts gated decisions whose predicted class lands in
the group; a gated true-ood sample therefore hurts precision but never
recall (sentinel truth is excluded from recall denominators). Cells with an
empty denominator serialize as the literal token `undef`, never 0 or NaN,
so sweep averages cannot be poisoned.
"""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .datagen import SENTINEL_LABEL

UNDEF = "undef"

_FMT = "%.17g"


@dataclass(frozen=True)
class ClassGroups:
    """Partition of the classes by frequency: the n_head most frequent, the
    n_tail least frequent, and everything between."""

    head: tuple
    body: tuple
    tail: tuple

    @classmethod
    def from_counts(cls, class_counts, n_head: int = 3, n_tail: int = 3) -> "ClassGroups":
        counts = np.asarray(class_counts)
        k = len(counts)
        if n_head < 0 or n_tail < 0 or n_head + n_tail > k:
            raise ValueError("group sizes must be nonnegative and fit inside K")
        if n_head == 0 and n_tail == 0:
            return cls(head=(), body=(), tail=())
        # most frequent first, ties broken by lower class index
        order = sorted(range(k), key=lambda c: (-counts[c], c))
        head = tuple(order[:n_head])
        tail = tuple(order[k - n_tail:]) if n_tail else ()
        body = tuple(order[n_head:k - n_tail])
        return cls(head=head, body=body, tail=tail)

    def named(self):
        for name, members in (("head", self.head), ("body", self.body), ("tail", self.tail)):
            if members:
                yield name, frozenset(members)


def _pr(decisions, members) -> tuple[float | None, float | None]:
    """members=None means overall (every real class)."""
    prec_num = prec_den = rec_num = rec_den = 0
    for d in decisions:
        if d.gated and (members is None or d.predicted_class in members):
            prec_den += 1
            if d.predicted_class == d.true_class:
                prec_num += 1
        if d.true_class != SENTINEL_LABEL and (members is None or d.true_class in members):
            rec_den += 1
            if d.gated and d.predicted_class == d.true_class:
                rec_num += 1
    precision = prec_num / prec_den if prec_den else None
    recall = rec_num / rec_den if rec_den else None
    return precision, recall


def pseudo_pr(decisions, groups: ClassGroups) -> dict:
    """Precision/recall overall and per nonempty group.

    Returns {"overall": (p, r), "head": ..., ...}; undefined cells are None.
    """
    out = {"overall": _pr(decisions, None)}
    for name, members in groups.named():
        out[name] = _pr(decisions, members)
    return out


def ood_inclusion(decisions) -> int:
    """Gated decisions whose ground truth is the ood sentinel."""
    return sum(1 for d in decisions if d.gated and d.true_class == SENTINEL_LABEL)


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Metrics snapshot emitted at each evaluation point. The precision and
    recall columns cover the decision window since the previous record;
    losses and mask_rate are the emitting iteration's own."""

    iteration: int
    loss_s: float
    loss_u: float
    loss_total: float
    mask_rate: float
    precision_overall: float | None
    precision_head: float | None
    precision_body: float | None
    precision_tail: float | None
    recall_overall: float | None
    recall_head: float | None
    recall_body: float | None
    recall_tail: float | None
    ood_included: int
    acc_raw: float
    acc_ema: float


RECORD_FIELDS = [f.name for f in fields(RunRecord)]
_INT_FIELDS = {"iteration", "ood_included"}


def _cell(name: str, value) -> str:
    if value is None:
        return UNDEF
    if name in _INT_FIELDS:
        return str(int(value))
    return _FMT % value


def _parse_cell(name: str, text: str):
    if text == UNDEF:
        return None
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def export_records(records, path) -> None:
    if not records:
        raise ValueError("no records to export")
    with open(path, "w") as fh:
        fh.write(",".join(RECORD_FIELDS) + "\n")
        for r in records:
            fh.write(",".join(_cell(n, getattr(r, n)) for n in RECORD_FIELDS) + "\n")


def import_records(path) -> list[RunRecord]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header")
        out = []
        for line in fh:
            cells = line.strip().split(",")
            if len(cells) != len(RECORD_FIELDS):
                raise ValueError(f"{path}: bad record line")
            out.append(RunRecord(**{
                n: _parse_cell(n, c) for n, c in zip(RECORD_FIELDS, cells)
            }))
    return out


def write_summary(path, summary: dict) -> None:
    """Single-object structured companion file (final metrics, config echo, seed)."""
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

SWEEPABLE = ("tau_e", "tau_c", "temperature", "lambda_u", "lr0", "momentum",
             "weight_decay", "weak_sigma", "strong_sigma", "strong_dropout")

# Shipped per-parameter defaults; sweep rows matching one are flagged.
_DEFAULT_VALUES = {
    "tau_e": (-8.0, -9.5),
    "tau_c": (0.95,),
    "temperature": (1.0,),
}


@dataclass(frozen=True)
class SweepRow:
    value: float
    seed: int
    acc_ema: float | None
    status: str  # "ok" or "failed"
    is_default: bool


def _with_param(config, param: str, value: float):
    if param in ("tau_e", "tau_c", "temperature"):
        return replace(config, strategy=replace(config.strategy, **{param: value}))
    if param in ("weak_sigma", "strong_sigma", "strong_dropout"):
        return replace(config, augment=replace(config.augment, **{param: value}))
    return replace(config, **{param: value})


def threshold_sweep(base_config, param: str, values, seeds, jobs=None) -> list[SweepRow]:
    """One full training run per (value, seed); failures become marked rows
    instead of aborting the sweep. Runs are isolated, so they fan out across
    worker threads."""
    from .trainer import run_training

    if param not in SWEEPABLE:
        raise ValueError(f"{param!r} is not a sweepable parameter (choose from {SWEEPABLE})")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    seeds = [int(s) for s in seeds]
    defaults = _DEFAULT_VALUES.get(param, ())

    def one(value, seed):
        cfg = replace(_with_param(base_config, param, value), seed=seed)
        try:
            result = run_training(cfg)
        except Exception:
            return SweepRow(value, seed, None, "failed", value in defaults)
        return SweepRow(value, seed, result.records[-1].acc_ema, "ok", value in defaults)

    tasks = [(v, s) for v in values for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(lambda t: one(*t), tasks))
    return rows


def sweep_summary(rows) -> list[tuple[float, int, float | None, float | None]]:
    """Per-value (value, n_ok, mean, population std) over the ok rows."""
    out = []
    for value in sorted({r.value for r in rows}):
        accs = [r.acc_ema for r in rows if r.value == value and r.status == "ok"]
        if accs:
            mean = sum(accs) / len(accs)
            std = statistics.pstdev(accs)
        else:
            mean = std = None
        out.append((value, len(accs), mean, std))
    return out


def format_sweep_rows(rows) -> str:
    lines = ["value,seed,acc_ema,status,is_default"]
    for r in rows:
        acc = UNDEF if r.acc_ema is None else _FMT % r.acc_ema
        lines.append(f"{_FMT % r.value},{r.seed},{acc},{r.status},{int(r.is_default)}")
    return "\n".join(lines) + "\n"


def format_sweep_summary(rows) -> str:
    lines = ["value,n_ok,mean_acc_ema,std_acc_ema"]
    for value, n_ok, mean, std in sweep_summary(rows):
        mean_s = UNDEF if mean is None else _FMT % mean
        std_s = UNDEF if std is None else _FMT % std
        lines.append(f"{_FMT % value},{n_ok},{mean_s},{std_s}")
    return "\n".join(lines) + "\n"
