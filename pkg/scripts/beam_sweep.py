"""Recall of tree-constrained decoding against exact flat search.

Trains a tied encoder on the synthetic task, builds a semantic tree over the
document embeddings, then reports, for each beam width and pruning rule, how
often the flat top-1 survives and the held-out MRR@10.

    python scripts/beam_sweep.py --c 8 --widths 1 2 4 8 16
"""

import argparse
import dataclasses
import logging

from genrank.bm25 import build_bm25, mine_negatives
from genrank.corpus_io import RunFile
from genrank.dense_index import flat_search
from genrank.encoder import encode_documents, encode_text
from genrank.evaluation import mrr_at_k
from genrank.experiment import DESK_TRAIN
from genrank.gen_decoder import BeamConfig, decode_beam
from genrank.semantic_tree import build_tree
from genrank.synthetic import SyntheticConfig, make_task
from genrank.trainer import train


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--c", type=int, default=8)
    p.add_argument("--widths", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    p.add_argument("--steps", type=int, default=DESK_TRAIN.steps)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    task = make_task(SyntheticConfig())
    negs = mine_negatives(build_bm25(task.corpus), task.train_queries, task.train_qrels, 20, 20)
    cfg = dataclasses.replace(DESK_TRAIN, steps=args.steps, seed=args.seed)
    params = train(task.corpus, task.train_queries, task.train_pairs, cfg, negatives=negs).params
    W = encode_documents(params, [d.doc_id for d in task.corpus], [d.full_text for d in task.corpus])
    tree = build_tree(W, args.c, args.seed)
    queries = [(q.query_id, encode_text(params, q.text)) for q in task.heldout_queries]
    flat_top = {qid: flat_search(h, W, 1).doc_ids[0] for qid, h in queries}

    print(f"tree depth {tree.depth()}, level widths {tree.level_widths()}")
    print("prune_by\twidth\tflat_top1_kept\tmrr@10")
    for prune in ("cumulative_logprob", "step_logit"):
        for width in args.widths:
            beam = BeamConfig(width, prune_by=prune, rank_by="leaf_dot")
            ranked, kept = [], 0
            for qid, h in queries:
                paths, _ = decode_beam(h, tree, W, beam, 10)
                ranked.append((qid, [x.doc_id for x in paths], [x.leaf_dot for x in paths]))
                kept += any(x.doc_id == flat_top[qid] for x in paths)
            mrr = mrr_at_k(RunFile.from_ranked(ranked, "sweep"), task.heldout_qrels, 10).mean
            print(f"{prune}\t{width}\t{kept / len(queries):.3f}\t{mrr:.4f}")


if __name__ == "__main__":
    main()
