"""Command-line driver for the continual indexing/retrieval engine.

Subcommands:
    gen-synthetic   write a synthetic corpus (EMB1 docs/queries, qrels TSV)
    run             execute the full multi-session protocol, emit a report
    build-base      run only session 0 and save the engine state
    ingest          index one more session of documents into a saved state
    evaluate        score queries against a saved state, emit a run TSV

Documents and queries are identified by their row index in the EMB1 files
(query ids are offset into a separate namespace by the qrels file contents).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import io_formats, synthetic
from .harness import (
    Engine,
    ExperimentConfig,
    ExperimentInputs,
    VARIANTS,
    canonical_report_bytes,
    load_state,
    run_experiment,
    save_state,
)
from .metrics import hits_at, mrr_at
from .rng import RandomSource


def _load_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh))
    else:
        cfg = ExperimentConfig()
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _load_inputs(args, cfg) -> ExperimentInputs:
    docs = io_formats.read_embeddings(args.docs)
    queries = io_formats.read_embeddings(args.queries)
    qrels = io_formats.read_qrels(args.qrels)
    doc_ids = list(range(docs.shape[0]))
    query_ids = list(range(queries.shape[0]))
    test_qrels = {q: qrels[q].doc_id for q in query_ids if q in qrels}
    train_query_ids, train_embs, train_qrels = [], None, {}
    if args.train_queries:
        train = io_formats.read_embeddings(args.train_queries)
        train_qrels_all = io_formats.read_qrels(args.train_qrels)
        train_query_ids = list(range(train.shape[0]))
        train_embs = train
        train_qrels = {q: train_qrels_all[q].doc_id for q in train_query_ids if q in train_qrels_all}
    token_docs = io_formats.read_token_docs(args.tokens) if getattr(args, "tokens", None) else None
    return ExperimentInputs(
        doc_ids=doc_ids,
        doc_embs=docs,
        test_query_ids=query_ids,
        test_query_embs=queries,
        test_qrels=test_qrels,
        train_query_ids=train_query_ids,
        train_query_embs=train_embs,
        train_qrels=train_qrels,
        token_docs=token_docs,
    )


def cmd_gen_synthetic(args) -> int:
    rng = RandomSource(args.seed).derive("synthetic")
    data = synthetic.generate(
        args.n_docs, args.dim, args.clusters, rng, with_tokens=args.tokens_out is not None
    )
    io_formats.write_embeddings(args.docs_out, data.doc_embs)
    io_formats.write_embeddings(args.queries_out, data.test_query_embs)
    io_formats.write_embeddings(args.train_queries_out, data.train_query_embs)
    from .metrics import QrelEntry

    io_formats.write_qrels(
        args.qrels_out, {q: QrelEntry(d, 0) for q, d in data.test_qrels.items()}
    )
    io_formats.write_qrels(
        args.train_qrels_out,
        {q - 1_000_000: QrelEntry(d, 0) for q, d in data.train_qrels.items()},
    )
    if args.tokens_out:
        io_formats.write_token_docs(args.tokens_out, data.token_docs)
    print(f"wrote {args.n_docs} docs (dim {args.dim}) and matching query files")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    inputs = _load_inputs(args, cfg)
    report, state = run_experiment(cfg, inputs, include_timing=args.timing)
    if args.state_out:
        save_state(state, args.state_out)
    payload = (
        json.dumps(report, indent=2, sort_keys=True).encode()
        if args.timing
        else canonical_report_bytes(report)
    )
    with open(args.out, "wb") as fh:
        fh.write(payload)
    print(f"report written to {args.out}")
    return 0


def cmd_build_base(args) -> int:
    cfg = _load_config(args)
    inputs = _load_inputs(args, cfg)
    _, state = run_experiment(cfg, inputs, stop_after_session=0)
    save_state(state, args.state_out)
    print(f"base state (session 0) written to {args.state_out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    state = load_state(args.state)
    docs = io_formats.read_embeddings(args.docs)
    first_id = max((i for i in state.codes if isinstance(i, int)), default=-1) + 1
    ids = list(range(first_id, first_id + docs.shape[0]))
    engine = Engine(cfg, state)
    info, log = engine.ingest(state.session + 1, ids, docs)
    save_state(engine.state, args.state_out or args.state)
    if args.decision_log:
        from .ipq import decision_log_lines

        with open(args.decision_log, "w") as fh:
            fh.write("\n".join(decision_log_lines(engine.state.session, log)) + "\n")
    print(json.dumps(info, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    state = load_state(args.state)
    queries = io_formats.read_embeddings(args.queries)
    query_ids = list(range(queries.shape[0]))
    engine = Engine(cfg, state)
    scored = engine.evaluate(query_ids, queries)
    io_formats.write_run(args.out, scored)
    if args.qrels:
        qrels = io_formats.read_qrels(args.qrels)
        run = {q: [d for d, _ in ranking] for q, ranking in scored.items()}
        print(
            json.dumps(
                {
                    "mrr@10": mrr_at(run, qrels, 10),
                    "hits@10": hits_at(run, qrels, 10),
                },
                sort_keys=True,
            )
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipqgr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    g.add_argument("--n-docs", type=int, default=500)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--clusters", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--docs-out", default="docs.emb")
    g.add_argument("--queries-out", default="queries.emb")
    g.add_argument("--train-queries-out", default="train_queries.emb")
    g.add_argument("--qrels-out", default="qrels.tsv")
    g.add_argument("--train-qrels-out", default="train_qrels.tsv")
    g.add_argument("--tokens-out", default=None)
    g.set_defaults(func=cmd_gen_synthetic)

    def add_common(sp, train=True):
        sp.add_argument("--config", default=None, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--variant", choices=sorted(VARIANTS), default=None)
        sp.add_argument("--docs", required=True)
        sp.add_argument("--queries", required=True)
        sp.add_argument("--qrels", required=True)
        if train:
            sp.add_argument("--train-queries", default=None)
            sp.add_argument("--train-qrels", default=None)
        sp.add_argument("--tokens", default=None)

    r = sub.add_parser("run", help="run the full continual protocol")
    add_common(r)
    r.add_argument("--out", required=True)
    r.add_argument("--state-out", default=None)
    r.add_argument("--timing", action="store_true", help="include wall-clock timing in the report")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("build-base", help="run session 0 only and save state")
    add_common(b)
    b.add_argument("--state-out", required=True)
    b.set_defaults(func=cmd_build_base)

    i = sub.add_parser("ingest", help="index one session of new documents")
    i.add_argument("--config", default=None)
    i.add_argument("--seed", type=int, default=None)
    i.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    i.add_argument("--state", required=True)
    i.add_argument("--state-out", default=None)
    i.add_argument("--docs", required=True)
    i.add_argument("--decision-log", default=None)
    i.set_defaults(func=cmd_ingest)

    e = sub.add_parser("evaluate", help="score queries against a saved state")
    e.add_argument("--config", default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--state", required=True)
    e.add_argument("--queries", required=True)
    e.add_argument("--qrels", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
