"""Command-line entry point: ``craft <subcommand> ...``.

Relative output paths resolve against ``$CRAFT_OUTPUT_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .data import PRESETS, dataset_from_csv, dataset_load, dataset_save, load_spec, reduce_dataset, synth_generate
from .errors import CraftError, ValidationError
from .evaluate import evaluate, score_map, write_report, write_score_map
from .model import LR_SCHEDULES, TrainConfig, load_checkpoint, save_checkpoint, train
from .retrieval import index_build, index_load, index_save, recommend

log = logging.getLogger("craft")

OUTPUT_DIR_ENV = "CRAFT_OUTPUT_DIR"


def _out(path):
    path = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _echo(config):
    print(json.dumps({"config": config}, indent=2, sort_keys=True))


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _query_vector(args, dataset=None):
    if args.query_file:
        text = Path(args.query_file).read_text().replace(",", " ").split()
        try:
            return np.array([float(v) for v in text])
        except ValueError as exc:
            raise ValidationError(f"query file {args.query_file}: {exc}") from None
    if dataset is None:
        raise ValidationError("--query-row needs --dataset")
    if not 0 <= args.query_row < len(dataset):
        raise ValidationError(f"--query-row must lie in [0, {len(dataset) - 1}]")
    return dataset.sources[args.query_row]


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    spec = load_spec(args.spec)
    if args.n < 1:
        raise ValidationError("--n must be at least 1")
    ds = synth_generate(spec, args.n, np.random.default_rng(args.seed), seed=args.seed)
    ds.meta["generator"] = {"spec": args.spec, "n": args.n, "seed": args.seed}
    out = _out(args.out)
    dataset_save(ds, out)
    print(f"wrote {out}: N={len(ds)} d_s={ds.d_s} d_t={ds.d_t} seed={args.seed}")


def cmd_import_csv(args):
    ds = dataset_from_csv(args.csv, d_s=args.d_s)
    out = _out(args.out)
    dataset_save(ds, out)
    print(f"wrote {out}: N={len(ds)} d_s={ds.d_s} d_t={ds.d_t}")


def cmd_reduce(args):
    ds = dataset_load(args.dataset)
    reduced, _, _ = reduce_dataset(ds, args.k_source, args.k_target, whiten=args.whiten)
    out = _out(args.out)
    dataset_save(reduced, out)
    print(f"wrote {out}: N={len(reduced)} d_s={reduced.d_s} d_t={reduced.d_t}")


def _train_config(args):
    return TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, d_z=args.d_z,
        leaky_alpha=args.alpha, real_label=args.real_label, rng_seed=args.seed,
        d_steps_per_t_step=args.d_steps, hidden=tuple(args.hidden),
        non_saturating=not args.minimax, lr_schedule=args.lr_schedule,
    )


def cmd_train(args):
    ds = dataset_load(args.dataset)
    config = _train_config(args)
    _echo({**config.to_dict(), "dataset": str(args.dataset)})

    def progress(epoch, result):
        log.info("epoch %d/%d  d_loss %.4f  t_loss %.4f", epoch + 1, config.epochs,
                 result.d_losses[-1], result.t_losses[-1])

    result = train(ds, config, progress=progress)
    out = _out(args.out)
    save_checkpoint(result.model, out, extra={"dataset": str(args.dataset), "dataset_name": ds.name})
    curve = out.with_name(out.name + ".losses.csv")
    with open(curve, "w") as fh:
        fh.write("step,d_loss,t_loss\n")
        for step, d, t in result.history_rows():
            fh.write(f"{step},{d!r},{t!r}\n")
    print(f"wrote {out} and {curve} ({len(result.d_losses)} steps)")
    if not args.no_plots:
        from .plotting import plot_losses

        fig = plot_losses(result.d_losses, result.t_losses, out.with_name(out.name + ".losses.png"))
        print(f"wrote {fig}")


def cmd_build_index(args):
    ds = dataset_load(args.dataset)
    index = index_build(ds.targets, ds.item_ids)
    out = _out(args.out)
    index_save(index, out)
    print(f"wrote {out}: M={index.size} d={index.dim}")


def cmd_recommend(args):
    model = load_checkpoint(args.checkpoint)
    dataset = dataset_load(args.dataset) if args.dataset else None
    if args.index:
        index = index_load(args.index)
    elif dataset is not None:
        index = index_build(dataset.targets, dataset.item_ids)
    else:
        raise ValidationError("recommend needs --index or --dataset")
    q = _query_vector(args, dataset)
    recs = recommend(model.transformer, index, q, args.n_samples, args.k, np.random.default_rng(args.seed))
    for ident, dist in recs:
        print(f"{ident},{dist!r}")
    if args.csv:
        out = _out(args.csv)
        with open(out, "w") as fh:
            fh.write("id,distance\n")
            for ident, dist in recs:
                fh.write(f"{ident},{dist!r}\n")
        cfg = {"checkpoint": str(args.checkpoint), "n_samples": args.n_samples, "k": args.k, "seed": args.seed,
               "query": q.tolist()}
        out.with_name(out.name + ".config.json").write_text(json.dumps({"config": cfg}, indent=2, sort_keys=True) + "\n")


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    ds = dataset_load(args.dataset)
    spec = load_spec(args.spec) if args.spec else None
    if spec is None:
        print("warning: no --spec given; oracle metrics skipped", file=sys.stderr)
    report = evaluate(
        model, ds, spec, n_queries=args.n_queries, n_recommend=args.n_recommend, K=args.K,
        seed=args.seed, balanced=not args.unbalanced,
        config={"checkpoint": str(args.checkpoint), "dataset": str(args.dataset), "train": model.config.to_dict()},
    )
    out = _out(args.out)
    for p in write_report(report, out, args.format):
        print(f"wrote {p}")
    metric = "oracle_error" if spec is not None else "mean_score"
    for c in report.cells:
        print(f"{c['algorithm']:>12s} {c['bin']:>6s}  n={c['n_queries']:<4d} {metric}={c[metric]:.4f}")
    if not args.no_plots:
        from .plotting import plot_report

        print(f"wrote {plot_report(report, out.with_suffix('.png'))}")


def cmd_score_map(args):
    model = load_checkpoint(args.checkpoint)
    ds = dataset_load(args.dataset)
    q = _query_vector(args, ds)
    records = score_map(model.discriminator, q, ds.targets, ds.item_ids)
    out = _out(args.out)
    cfg = {"checkpoint": str(args.checkpoint), "dataset": str(args.dataset), "query": q.tolist(),
           "query_row": args.query_row if not args.query_file else None, "projection": "pca-2d"}
    for p in write_score_map(records, out, args.format, cfg):
        print(f"wrote {p}")
    if not args.no_plots:
        from .plotting import plot_score_map

        print(f"wrote {plot_score_map(records, out.with_suffix('.png'))}")


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="craft", description="Complementary feature generation with an adversarial transformer.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a synthetic pair dataset")
    g.add_argument("--spec", default="two-cluster-2d", help=f"preset ({', '.join(PRESETS)}) or JSON spec file")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("import-csv", help="convert an 'id,s...,t...' CSV into a dataset file")
    g.add_argument("csv")
    g.add_argument("--d-s", type=_positive, help="source width when the CSV has no header")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_import_csv)

    g = sub.add_parser("reduce", help="PCA-reduce sources and targets separately")
    g.add_argument("--dataset", required=True)
    g.add_argument("--k-source", type=_positive, default=128)
    g.add_argument("--k-target", type=_positive, default=128)
    g.add_argument("--whiten", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_reduce)

    d = TrainConfig()
    g = sub.add_parser("train", help="train transformer and discriminator")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out", required=True, help="checkpoint path")
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--lr-schedule", choices=LR_SCHEDULES, default=d.lr_schedule)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--d-z", type=_positive, default=d.d_z)
    g.add_argument("--alpha", type=float, default=d.leaky_alpha)
    g.add_argument("--real-label", type=float, default=d.real_label)
    g.add_argument("--d-steps", type=_positive, default=d.d_steps_per_t_step)
    g.add_argument("--hidden", type=_positive, nargs=2, default=list(d.hidden))
    g.add_argument("--minimax", action="store_true", help="descend log(1 - D) literally instead of ascending log D")
    g.add_argument("--seed", type=int, default=d.rng_seed)
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("build-index", help="index a dataset's target features")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_build_index)

    def add_query(g):
        q = g.add_mutually_exclusive_group(required=True)
        q.add_argument("--query-row", type=int, help="use this dataset row's source as the query")
        q.add_argument("--query-file", help="text file holding the query source vector")

    g = sub.add_parser("recommend", help="recommend catalog items for a query source")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--index")
    g.add_argument("--dataset")
    add_query(g)
    g.add_argument("--n-samples", type=_positive, default=17)
    g.add_argument("--k", type=_positive, default=1, help="neighbors per synthesized sample")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--csv", help="also write 'id,distance' rows here")
    g.set_defaults(func=cmd_recommend)

    g = sub.add_parser("evaluate", help="compare CRAFT with the baselines per density bin")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--dataset", required=True)
    g.add_argument("--spec", help="oracle spec (preset or file) the dataset was drawn from")
    g.add_argument("--n-queries", type=_positive, default=300)
    g.add_argument("--n-recommend", type=_positive, default=17)
    g.add_argument("--K", type=_positive, default=25)
    g.add_argument("--unbalanced", action="store_true", help="draw queries by component weight instead of uniformly")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("csv", "json"), default="json")
    g.add_argument("--out", required=True)
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("score-map", help="export discriminator scores of the catalog for one query")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--dataset", required=True)
    add_query(g)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--out", required=True)
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_score_map)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=1):
            args.func(args)
    except (CraftError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
