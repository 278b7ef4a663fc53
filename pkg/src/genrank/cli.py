"""Command-line entry point: ``genrank <subcommand> [flags]``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error. Every flag is
parsed and cross-checked before any input file is opened.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from genrank.bm25 import PRESETS, bm25_search, build_bm25, load_negatives, mine_negatives_scored, write_negatives
from genrank.corpus_io import (
    FormatError,
    RunFile,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_queries,
    load_run,
    save_embeddings,
    write_run,
)
from genrank.dense_index import flat_search, tree_search
from genrank.encoder import (
    DEFAULT_DIM,
    DEFAULT_FEATURE_DIM,
    EncoderParams,
    encode_documents,
    encode_text,
    init_params,
    load_params,
    save_params,
)
from genrank.evaluation import METRICS
from genrank.gen_decoder import BeamConfig, PruneBy, RankBy, decode_atomic, decode_beam
from genrank.semantic_tree import SemanticTree, build_tree
from genrank.trainer import MissingIdentifierError, Mode, TrainConfig, train
from genrank.verify import CHECKS, run_all

SEED_ENV = "GENRANK_SEED"
DEFAULT_SEED = 42
SEARCH_MODES = ("flat", "tree", "atomic", "beam", "bm25")

logger = logging.getLogger("genrank")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text) if text.lstrip("-").isdigit() else None
    if v is None or v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text!r}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a finite number > 0, got {text!r}")
    return v


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text!r}")
    return v


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", type=Path, help="trained encoder parameters (default: seeded random init)")
    p.add_argument("--feature-dim", type=_positive_int, default=DEFAULT_FEATURE_DIM)
    p.add_argument("--dim", type=_positive_int, default=DEFAULT_DIM)
    p.add_argument("--normalize", action="store_true", help="unit-normalize encoder outputs")


def build_parser(default_seed: int) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genrank", description="Tied generative / dense retrieval toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = dict(type=int, default=default_seed, help=f"RNG seed (default {default_seed}; env {SEED_ENV})")

    p = sub.add_parser("encode", help="corpus -> embeddings")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_encoder_flags(p)
    p.add_argument("--seed", **seed)

    p = sub.add_parser("build-tree", help="embeddings -> semantic tree JSON")
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--c", type=_positive_int, default=10, help="branching factor (>= 2)")
    p.add_argument("--seed", **seed)

    p = sub.add_parser("search", help="queries -> run file")
    p.add_argument("--mode", choices=SEARCH_MODES, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--k", type=_positive_int, default=10)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--tree", type=Path)
    p.add_argument("--corpus", type=Path, help="bm25 mode only")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default", help="bm25 parameters")
    p.add_argument("--nprobe", type=_positive_int, default=1)
    p.add_argument("--beam-width", type=_positive_int, default=1)
    p.add_argument("--prune-by", choices=[e.value for e in PruneBy], default=PruneBy.CUMULATIVE_LOGPROB.value)
    p.add_argument("--rank-by", choices=[e.value for e in RankBy], default=RankBy.CUMULATIVE_LOGPROB.value)
    p.add_argument("--tag")
    _add_encoder_flags(p)
    p.add_argument("--seed", **seed)

    p = sub.add_parser("train", help="corpus + pairs + negatives -> encoder params")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--qrels", type=Path, required=True, help="training pairs: judged grade > 0")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--negatives", type=Path)
    p.add_argument("--teacher", type=Path, help="TSV qid, doc_id, teacher margin (tied-marginmse)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.TIED_CONTRASTIVE.value)
    p.add_argument("--learning-rate", type=_positive_float, default=0.1)
    p.add_argument("--steps", type=_nonneg_int, default=2000)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--negatives-per-query", type=_nonneg_int, default=0)
    p.add_argument("--temperature", type=_positive_float, default=1.0)
    p.add_argument("--multitask-ratio", type=_fraction, default=0.5)
    p.add_argument("--feature-dim", type=_positive_int, default=DEFAULT_FEATURE_DIM)
    p.add_argument("--dim", type=_positive_int, default=DEFAULT_DIM)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--loss-log", type=Path)
    p.add_argument("--table-out", type=Path, help="free-dsi: write the identifier table as embeddings")
    p.add_argument("--seed", **seed)

    p = sub.add_parser("mine-negatives", help="BM25 hard negatives")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--top-k", type=_positive_int, default=100)
    p.add_argument("--per-query", type=_nonneg_int, default=10)
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")

    p = sub.add_parser("eval", help="run + qrels -> metric line")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--metric", choices=sorted(METRICS), required=True)
    p.add_argument("--k", type=_positive_int, default=10)

    p = sub.add_parser("verify", help="run the cross-module invariant suite")
    p.add_argument("--scale", type=_fraction, default=1.0, help="fraction of the full instance counts")
    p.add_argument("--only", action="append", choices=sorted(CHECKS))
    return parser


def _check_combinations(args) -> None:
    if args.command == "build-tree" and args.c < 2:
        raise UsageError("--c must be >= 2")
    if args.command == "search":
        need = {"flat": ["embeddings"], "atomic": ["embeddings"], "tree": ["embeddings", "tree"],
                "beam": ["embeddings", "tree"], "bm25": ["corpus"]}[args.mode]
        missing = [f"--{n}" for n in need if getattr(args, n) is None]
        if missing:
            raise UsageError(f"--mode {args.mode} requires {', '.join(missing)}")
        tag = args.tag or f"genrank-{args.mode}"
        if any(c.isspace() for c in tag):
            raise UsageError("--tag must not contain whitespace")
        args.tag = tag
    if args.command == "train":
        if args.mode == Mode.TIED_MARGINMSE.value and args.teacher is None:
            raise UsageError("--mode tied-marginmse requires --teacher")
        if args.table_out is not None and args.mode != Mode.FREE_DSI.value:
            raise UsageError("--table-out only applies to --mode free-dsi")
        if args.negatives_per_query > 0 and args.negatives is None and args.mode != Mode.FREE_DSI.value:
            raise UsageError("--negatives-per-query > 0 requires --negatives")
    if args.command == "mine-negatives" and args.per_query > args.top_k:
        raise UsageError("--per-query must not exceed --top-k")
    if args.command == "verify" and args.scale <= 0:
        raise UsageError("--scale must be > 0")


def _encoder(args) -> EncoderParams:
    if args.params is not None:
        return load_params(args.params)
    return init_params(args.feature_dim, args.dim, args.seed, normalize=args.normalize)


def _load_teacher(path: Path) -> Dict[str, Dict[str, float]]:
    out: Dict[str, Dict[str, float]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'qid<TAB>doc_id<TAB>margin'")
        try:
            out.setdefault(parts[0], {})[parts[1]] = float(parts[2])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad margin {parts[2]!r}") from None
    return out


def cmd_encode(args) -> int:
    params = _encoder(args)
    corpus = load_corpus(args.corpus)
    W = encode_documents(params, [d.doc_id for d in corpus], [d.full_text for d in corpus])
    save_embeddings(W, args.out)
    logger.info("encoded %d documents into %d dims", len(W), W.dim)
    return 0


def cmd_build_tree(args) -> int:
    W = load_embeddings(args.embeddings)
    tree = build_tree(W, args.c, args.seed)
    tree.save(args.out)
    logger.info("tree over %d docs, depth %d", len(W), tree.depth())
    return 0


def cmd_search(args) -> int:
    queries = load_queries(args.queries)
    ranked = []
    if args.mode == "bm25":
        index = build_bm25(load_corpus(args.corpus), PRESETS[args.preset])
        for q in queries:
            r = bm25_search(index, q.text, args.k)
            ranked.append((q.query_id, r.doc_ids, r.scores))
        write_run(RunFile.from_ranked(ranked, args.tag), args.out)
        return 0

    W = load_embeddings(args.embeddings)
    params = _encoder(args)
    if params.dim != W.dim:
        raise ValueError(f"encoder dim {params.dim} does not match embedding dim {W.dim}")
    tree = SemanticTree.load(args.tree) if args.tree is not None else None
    beam = BeamConfig(args.beam_width, args.prune_by, args.rank_by)
    for q in queries:
        h = encode_text(params, q.text)
        if args.mode == "flat":
            r = flat_search(h, W, args.k)
            ranked.append((q.query_id, r.doc_ids, r.scores))
        elif args.mode == "atomic":
            # logits rather than probabilities: the file then matches flat search
            r = decode_atomic(h, W, args.k)
            ranked.append((q.query_id, r.doc_ids, r.logits))
        elif args.mode == "tree":
            r, _ = tree_search(h, tree, W, args.nprobe, args.k)
            ranked.append((q.query_id, r.doc_ids, r.scores))
        else:
            paths, _ = decode_beam(h, tree, W, beam, args.k)
            by_dot = beam.rank_by is RankBy.LEAF_DOT
            scores = [p.leaf_dot if by_dot else p.cumulative_logprob for p in paths]
            ranked.append((q.query_id, [p.doc_id for p in paths], scores))
    write_run(RunFile.from_ranked(ranked, args.tag), args.out)
    return 0


def cmd_train(args) -> int:
    config = TrainConfig(
        mode=args.mode,
        learning_rate=args.learning_rate,
        steps=args.steps,
        batch_size=args.batch_size,
        negatives_per_query=args.negatives_per_query,
        temperature=args.temperature,
        multitask_ratio=args.multitask_ratio,
        seed=args.seed,
        feature_dim=args.feature_dim,
        dim=args.dim,
        normalize=args.normalize,
    )
    corpus = load_corpus(args.corpus)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    pairs = [(qid, d) for qid in sorted(qrels) for d in sorted(qrels[qid]) if qrels[qid][d] > 0]
    negatives = load_negatives(args.negatives) if args.negatives is not None else None
    teacher = _load_teacher(args.teacher) if args.teacher is not None else None
    result = train(corpus, queries, pairs, config, negatives, teacher)
    save_params(result.params, args.out)
    if args.loss_log is not None:
        result.write_loss_log(args.loss_log)
    if args.table_out is not None:
        save_embeddings(result.table.as_matrix(), args.table_out)
    if result.losses:
        logger.info("final loss %.4f after %d steps", result.losses[-1], len(result.losses))
    return 0


def cmd_mine_negatives(args) -> int:
    index = build_bm25(load_corpus(args.corpus), PRESETS[args.preset])
    negs = mine_negatives_scored(index, load_queries(args.queries), load_qrels(args.qrels), args.top_k, args.per_query)
    write_negatives(negs, args.out)
    return 0


def cmd_eval(args) -> int:
    report = METRICS[args.metric](load_run(args.run), load_qrels(args.qrels), args.k)
    print(report.line())
    return 0


def cmd_verify(args) -> int:
    failed = 0
    for result in run_all(args.scale, args.only):
        print(result.line(), flush=True)
        failed += not result.passed
    return 1 if failed else 0


COMMANDS = {
    "encode": cmd_encode,
    "build-tree": cmd_build_tree,
    "search": cmd_search,
    "train": cmd_train,
    "mine-negatives": cmd_mine_negatives,
    "eval": cmd_eval,
    "verify": cmd_verify,
}

DATA_ERRORS = (FormatError, ValueError, KeyError, OSError, FloatingPointError, MissingIdentifierError)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser(_default_seed())
    except UsageError as e:
        print(f"genrank: error: {e}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _check_combinations(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"genrank: error: {e}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as e:
        print(f"genrank: error: {e}", file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    return run_cli(argv)
