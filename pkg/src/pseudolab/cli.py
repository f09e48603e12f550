"""Command-line entry point: gen-data, train, sweep, analyze.

Every command is a pure function of its flags, configuration, and input
files; all randomness flows from a single seed through named sub-streams.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analytics, datagen, gating, numerics, trainer


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="synthesize a dataset: mixture, long-tail, split, ood")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--gamma", type=float, default=1.0, help="imbalance ratio (1 = balanced)")
    p.add_argument("--n1", type=int, default=500, help="count of the most frequent class")
    p.add_argument("--labeled-frac", type=float, default=0.1)
    p.add_argument("--ood", type=int, default=0, help="true out-of-distribution samples to inject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--separation", type=float, default=4.0, help="class mean scale")
    p.add_argument("--scale", type=float, default=1.0, help="per-class Gaussian scale")
    p.add_argument("--test-per-class", type=int, default=200,
                   help="size of the held-out balanced test file written at OUT.test")
    p.set_defaults(func=cmd_gen_data)


def cmd_gen_data(args) -> int:
    k, d = args.classes, args.dim
    means = datagen.class_means(k, d, args.separation, args.seed)
    scales = np.full(k, args.scale)
    counts = datagen.longtail_counts(datagen.ImbalanceSpec(
        gamma=args.gamma, n1=args.n1, K=k, labeled_fraction=args.labeled_frac))
    ds = datagen.make_mixture(k, d, means, scales, counts, args.seed)
    ds = datagen.split_labeled(ds, args.labeled_frac, args.seed)
    if args.ood > 0:
        ds = datagen.inject_ood(ds, args.ood, datagen.default_ood_spec(means, scales), args.seed)
    datagen.save_dataset(ds, args.out)

    test = datagen.make_mixture(k, d, means, scales, np.full(k, args.test_per_class),
                                seed=f"{args.seed}-test")
    datagen.save_dataset(test, trainer.test_set_path(args.out))

    print(f"wrote {args.out} (N={ds.n}, D={ds.dim}, K={ds.num_classes}, "
          f"ood={int(np.sum(ds.origin == datagen.OOD))})")
    print(f"wrote {trainer.test_set_path(args.out)} (N={test.n})")
    print("class labeled unlabeled")
    for c in range(k):
        lab = int(np.sum((ds.labels == c) & (ds.origin == datagen.LABELED)))
        unl = int(np.sum((ds.labels == c) & (ds.origin == datagen.UNLABELED)))
        print(f"{c} {lab} {unl}")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="run one training from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default="run_out", help="output directory")
    p.add_argument("--decisions", default=None,
                   help="optional per-iteration decision dump path")
    p.set_defaults(func=cmd_train)


def cmd_train(args) -> int:
    config = trainer.load_config(args.config, args.override)
    os.makedirs(args.out, exist_ok=True)
    writer = gating.DecisionDumpWriter(args.decisions) if args.decisions else None
    try:
        result = trainer.run_training(config, decision_writer=writer)
    except trainer.TrainAbort as exc:
        analytics.write_summary(os.path.join(args.out, "abort.json"), exc.diagnostic)
        print(f"error: {exc} (diagnostic written to {args.out}/abort.json)", file=sys.stderr)
        return 2
    finally:
        if writer is not None:
            writer.close()

    analytics.export_records(result.records, os.path.join(args.out, "metrics.csv"))
    final = result.records[-1]
    analytics.write_summary(os.path.join(args.out, "summary.json"), {
        "config": trainer.config_to_mapping(config),
        "seed": config.seed,
        "final": {name: getattr(final, name) for name in analytics.RECORD_FIELDS},
    })
    numerics.save_params(result.params, os.path.join(args.out, "params.txt"))
    print(f"final acc_ema={final.acc_ema:.4f} acc_raw={final.acc_raw:.4f} "
          f"mask_rate={final.mask_rate:.4f}")
    print(f"outputs in {args.out}")
    return 0


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="grid of runs over one parameter x seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE")
    p.add_argument("--param", required=True, help=f"one of {', '.join(analytics.SWEEPABLE)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", type=int, default=1, help="seeds per value (base seed + offsets)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: cpu count)")
    p.add_argument("--out", default=None, help="optional directory for the sweep tables")
    p.set_defaults(func=cmd_sweep)


def cmd_sweep(args) -> int:
    config = trainer.load_config(args.config, args.override)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if args.seeds < 1:
        raise ValueError("--seeds must be at least 1")
    seeds = [config.seed + i for i in range(args.seeds)]
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    rows = analytics.threshold_sweep(config, args.param, values, seeds, jobs=jobs)

    rows_text = analytics.format_sweep_rows(rows)
    summary_text = analytics.format_sweep_summary(rows)
    print(rows_text, end="")
    print(summary_text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "sweep_rows.csv"), "w") as fh:
            fh.write(rows_text)
        with open(os.path.join(args.out, "sweep_summary.csv"), "w") as fh:
            fh.write(summary_text)
        print(f"outputs in {args.out}")
    return 1 if any(r.status == "failed" for r in rows) else 0


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="recompute PR tables from a decision dump")
    p.add_argument("--decisions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--groups", default="3,3", help="head,tail sizes (0,0 for overall only)")
    p.add_argument("--out", default=None, help="optional path for the written table")
    p.set_defaults(func=cmd_analyze)


def _pr_cell(value) -> str:
    return analytics.UNDEF if value is None else f"{value:.6f}"


def cmd_analyze(args) -> int:
    ds = datagen.load_dataset(args.dataset)
    dump = gating.read_decision_dump(args.decisions)
    for it, d in dump:
        if not (0 <= d.sample_index < ds.n):
            raise ValueError(
                f"data-integrity error: decision at iteration {it} references "
                f"sample {d.sample_index}, dataset has N={ds.n}")
        if d.true_class != int(ds.labels[d.sample_index]):
            raise ValueError(
                f"data-integrity error: decision at iteration {it} says sample "
                f"{d.sample_index} has class {d.true_class}, dataset says "
                f"{int(ds.labels[d.sample_index])}")

    try:
        n_head, n_tail = (int(v) for v in args.groups.split(","))
    except ValueError:
        raise ValueError(f"--groups must look like '3,3', got {args.groups!r}") from None
    groups = analytics.ClassGroups.from_counts(ds.class_counts, n_head, n_tail)

    decisions = [d for _, d in dump]
    pr = analytics.pseudo_pr(decisions, groups)
    lines = ["group,precision,recall"]
    for name in ("overall", "head", "body", "tail"):
        if name in pr:
            p, r = pr[name]
            lines.append(f"{name},{_pr_cell(p)},{_pr_cell(r)}")
    lines.append("")
    lines.append("iteration,ood_included")
    by_iter: dict[int, list] = {}
    for it, d in dump:
        by_iter.setdefault(it, []).append(d)
    for it in sorted(by_iter):
        lines.append(f"{it},{analytics.ood_inclusion(by_iter[it])}")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudolab",
        description="semi-supervised pseudo-label gating lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_sweep(sub)
    _add_analyze(sub)
    return parser


def _fold_values_flag(argv):
    """Join '--values -7.5,-8.5' into '--values=-7.5,-8.5' so comma lists of
    negative numbers survive argparse's option detection."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--values" and i + 1 < len(argv):
            out.append(f"--values={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(_fold_values_flag(list(argv)))
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
