"""Command-line surface: train, train-dist, eval.

Flag names follow the classic word-vector tool conventions (-train, -size,
-negative, ...) so existing invocations port over directly; knobs specific to
this engine (-kernel, -batch-size, the sync flags) are additions.  Setting
SGNS_FLOAT64=1 switches training to the 64-bit deterministic build: float64
arithmetic, exact sigmoid, and ordered matrix products.
"""

from __future__ import annotations

import argparse
import os
import socket as socketlib
import sys
import threading

from . import distributed as dist
from .corpus import build_vocab, encode_corpus, read_tokens
from .model import load_model, save_model
from .trainer import TrainingConfig, TrainingStats, train
from .evaluate import eval_analogy, eval_similarity


def write_report(path: str, items: dict) -> None:
    """Stable key:value lines; one fact per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key}: {value}\n")


def _stats_items(stats: TrainingStats) -> dict:
    items = {
        "words_processed": stats.words_processed,
        "words_read": stats.words_read,
        "wall_seconds": f"{stats.wall_seconds:.3f}",
        "throughput_words_per_sec": f"{stats.throughput_words_per_sec:.1f}",
        "final_alpha": f"{stats.final_alpha:.8f}",
    }
    for i, loss in enumerate(stats.loss_by_epoch, start=1):
        items[f"loss_epoch_{i}"] = f"{loss:.6f}"
    return items


def _env_items() -> dict:
    return {"host": socketlib.gethostname(), "cpu_count": os.cpu_count()}


def _config_from_args(args: argparse.Namespace) -> TrainingConfig:
    return TrainingConfig(
        dim=args.size,
        window=args.window,
        negatives=args.negative,
        subsample=args.sample,
        min_count=args.min_count,
        alpha0=args.alpha,
        epochs=args.iter,
        threads=args.threads,
        batch_cap=args.batch_size,
        kernel=args.kernel,
        seed=args.seed,
        float64=os.environ.get("SGNS_FLOAT64") == "1",
    )


def _config_items(config: TrainingConfig, corpus: str) -> dict:
    return {
        "corpus": corpus,
        "dim": config.dim,
        "window": config.window,
        "negatives": config.negatives,
        "sample": config.subsample,
        "min_count": config.min_count,
        "alpha0": config.alpha0,
        "epochs": config.epochs,
        "threads": config.threads,
        "batch_size": config.batch_cap,
        "kernel": config.kernel,
        "seed": config.seed,
        "float64": int(config.float64),
    }


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-train", dest="train", required=True, metavar="FILE",
                   help="training corpus (UTF-8 text, whitespace tokens)")
    p.add_argument("-output", dest="output", required=True, metavar="FILE",
                   help="where to write the vectors")
    p.add_argument("-size", type=int, default=300, help="embedding dimension")
    p.add_argument("-window", type=int, default=5, help="max context half-width")
    p.add_argument("-negative", type=int, default=5, help="negative samples per step")
    p.add_argument("-sample", type=float, default=1e-4,
                   help="frequent-word subsampling threshold (0 disables)")
    p.add_argument("-min-count", dest="min_count", type=int, default=5,
                   help="discard words seen fewer times than this")
    p.add_argument("-alpha", type=float, default=0.025, help="starting learning rate")
    p.add_argument("-iter", type=int, default=5, help="training epochs")
    p.add_argument("-threads", type=int, default=1, help="worker threads")
    p.add_argument("-batch-size", dest="batch_size", type=int, default=16,
                   help="input words per minibatch (batched kernel)")
    p.add_argument("-kernel", choices=("scalar", "batched"), default="batched")
    p.add_argument("-binary", type=int, choices=(0, 1), default=0,
                   help="write binary vectors instead of text")
    p.add_argument("-seed", type=int, default=1)
    p.add_argument("-report", metavar="FILE", help="write a key:value run report")
    p.add_argument("-save-vocab", dest="save_vocab", metavar="FILE",
                   help="also write the vocabulary as token<TAB>count lines")


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    model, vocab, stats = train(args.train, config, progress=True)
    save_model(model, vocab, args.output, binary=bool(args.binary))
    if args.save_vocab:
        vocab.save(args.save_vocab)
    if args.report:
        items = {"command": "train", **_config_items(config, args.train),
                 "vocab_size": vocab.size, "total_tokens": vocab.total_tokens,
                 **_stats_items(stats), **_env_items()}
        write_report(args.report, items)
    print(f"saved {vocab.size} x {config.dim} vectors to {args.output}")
    return 0


def cmd_train_dist(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    policy = dist.SyncPolicy(
        period_words=args.sync_period,
        hot_rows=args.hot_rows,
        rotation_chunk=args.rotation,
    )
    if args.inprocess is not None:
        nodes = args.inprocess
        vocab = build_vocab(read_tokens(args.train), config.min_count)
        encoded = encode_corpus(args.train, vocab)
        group = dist.InProcessGroup(nodes)
        results: list[tuple] = [None] * nodes
        errors: list[Exception] = []

        def run_worker(rank: int, transport: dist.Transport) -> None:
            try:
                results[rank] = dist.distributed_train(
                    None, config, policy, transport, prebuilt=(vocab, encoded)
                )
            except Exception as exc:  # surface the first failure, abort peers
                errors.append(exc)
                group.abort()

        endpoints = group.endpoints()
        workers = [
            threading.Thread(target=run_worker, args=(rank, ep))
            for rank, ep in enumerate(endpoints)
        ]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        if errors:
            print(f"distributed run failed: {errors[0]}", file=sys.stderr)
            if args.report and isinstance(errors[0], dist.DistributedRunError):
                write_report(args.report, {
                    "command": "train-dist", "status": "aborted",
                    **_stats_items(errors[0].partial_stats),
                })
            return 1
        model, _ = results[0]
        save_model(model, vocab, args.output, binary=bool(args.binary))
        if args.save_vocab:
            vocab.save(args.save_vocab)
        if args.report:
            all_stats = [stats for _, stats in results]
            wall = max(s.wall_seconds for s in all_stats)
            words = sum(s.words_processed for s in all_stats)
            items = {"command": "train-dist", "nodes": nodes, "transport": "inprocess",
                     **_config_items(config, args.train),
                     "sync_period": policy.period_words,
                     "vocab_size": vocab.size, "total_tokens": vocab.total_tokens,
                     "words_processed": words,
                     "wall_seconds": f"{wall:.3f}",
                     "throughput_words_per_sec": f"{words / max(wall, 1e-9):.1f}",
                     "final_alpha": f"{all_stats[0].final_alpha:.8f}",
                     **_env_items()}
            write_report(args.report, items)
        print(f"saved {vocab.size} x {config.dim} vectors to {args.output}")
        return 0

    # socket transport: one process per rank
    if args.nodes is None or args.rank is None or args.hosts is None:
        print("train-dist needs either -inprocess N or -nodes/-rank/-hosts",
              file=sys.stderr)
        return 2
    with open(args.hosts, encoding="utf-8") as fh:
        first = fh.readline().split()
    host, _, port = first[0].partition(":")
    vocab = build_vocab(read_tokens(args.train), config.min_count)
    encoded = encode_corpus(args.train, vocab)
    digest = dist.config_digest(config, policy.resolve(vocab.size))
    try:
        transport = dist.SocketTransport(
            args.rank, args.nodes, host, int(port), vocab.size, config.dim, digest
        )
    except dist.TransportError as exc:
        print(f"transport setup failed: {exc}", file=sys.stderr)
        return 1
    try:
        model, stats = dist.distributed_train(
            None, config, policy, transport, prebuilt=(vocab, encoded)
        )
    except dist.DistributedRunError as exc:
        print(f"distributed run failed: {exc}", file=sys.stderr)
        if args.report:
            write_report(args.report, {
                "command": "train-dist", "status": "aborted", "rank": args.rank,
                **_stats_items(exc.partial_stats),
            })
        return 1
    finally:
        transport.close()
    if transport.rank == 0:
        save_model(model, vocab, args.output, binary=bool(args.binary))
        if args.report:
            items = {"command": "train-dist", "nodes": args.nodes,
                     "transport": "socket", "rank": args.rank,
                     **_config_items(config, args.train),
                     "sync_period": policy.period_words,
                     "vocab_size": vocab.size, "total_tokens": vocab.total_tokens,
                     **_stats_items(stats), **_env_items()}
            write_report(args.report, items)
        print(f"saved {vocab.size} x {config.dim} vectors to {args.output}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    binary = None if args.binary == "auto" else bool(int(args.binary))
    model, vocab = load_model(args.model, binary=binary)
    if args.similarity:
        score, used, skipped = eval_similarity(model, vocab, args.similarity)
        print(f"similarity: {score:.2f}")
        print(f"pairs_used: {used}")
        print(f"pairs_skipped: {skipped}")
    if args.analogy:
        score, sections, skipped = eval_analogy(
            model, vocab, args.analogy, max_vocab=args.max_vocab
        )
        print(f"analogy: {score:.2f}")
        used = sum(n for _, n in sections.values())
        print(f"questions_used: {used}")
        print(f"questions_skipped: {skipped}")
        for name in sorted(sections):
            correct, asked = sections[name]
            pct = 100.0 * correct / asked if asked else 0.0
            print(f"section {name}: {pct:.2f} ({correct}/{asked})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgns", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", allow_abbrev=False,
                             help="train word vectors on one machine")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_dist = sub.add_parser("train-dist", allow_abbrev=False,
                            help="data-parallel training across workers")
    _add_train_flags(p_dist)
    p_dist.add_argument("-inprocess", type=int, metavar="N",
                        help="run N workers inside this process")
    p_dist.add_argument("-nodes", type=int, help="total rank count (socket mode)")
    p_dist.add_argument("-rank", type=int, help="this process's rank (socket mode)")
    p_dist.add_argument("-hosts", metavar="FILE",
                        help="file of host:port lines; line 1 is the reducer")
    p_dist.add_argument("-sync-period", dest="sync_period", type=int,
                        default=1_000_000,
                        help="local words between row synchronizations")
    p_dist.add_argument("-hot-rows", dest="hot_rows", type=int, default=None,
                        help="always-synced top-frequency rows")
    p_dist.add_argument("-rotation", type=int, default=None,
                        help="round-robin rows per sync period")
    p_dist.set_defaults(func=cmd_train_dist)

    p_eval = sub.add_parser("eval", allow_abbrev=False,
                            help="score a trained model on test sets")
    p_eval.add_argument("-model", required=True, metavar="FILE")
    p_eval.add_argument("-similarity", metavar="FILE",
                        help="word-pair file with human scores")
    p_eval.add_argument("-analogy", metavar="FILE", help="analogy question file")
    p_eval.add_argument("-max-vocab", dest="max_vocab", type=int, default=None,
                        help="restrict analogy candidates to the most frequent M words")
    p_eval.add_argument("-binary", choices=("0", "1", "auto"), default="auto")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
