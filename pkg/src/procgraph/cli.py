"""Command-line entry point: synth, train, predict, eval, and trace.

Paths that do not exist as given are also tried under $PROCGRAPH_DATA_DIR.
All failures go to stderr with the stable "error:" prefix and a nonzero exit.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .corpus import CorpusError, parse_corpus, synth_corpus, write_corpus, EmbeddingTable, corpus_vocab
from .evaluation import count_violations, score_task1, score_task2
from .events import read_predictions_tsv, write_predictions_tsv
from .pipeline import (
    TrainConfig,
    load_model,
    parse_config_file,
    predict_process,
    train,
)

DATA_DIR_ENV = "PROCGRAPH_DATA_DIR"


def _resolve_input(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = Path(base) / path
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no such file: {path}")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="random seed override")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None, dest="learning_rate")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--hidden", type=int, default=None)
    parser.add_argument("--embed-dim", type=int, default=None)
    parser.add_argument("--graph-layers", type=int, default=None)
    parser.add_argument("--dropout-recurrent", type=float, default=None)
    parser.add_argument("--dropout-other", type=float, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--no-coref-across", action="store_true", default=None,
                        help="ablation: drop the across-step coref update")
    parser.add_argument("--no-coref-within", action="store_true", default=None,
                        help="ablation: drop the within-step coref pooling")
    parser.add_argument("--lstm-graph-unit", action="store_true", default=None,
                        help="ablation: plain per-entity LSTM instead of the graph module")
    parser.add_argument("--mrc-only-prefix", action="store_true", default=None,
                        help="ablation: reader alone over paragraph prefixes")
    parser.add_argument("--mrc-only-paragraph", action="store_true", default=None,
                        help="ablation: reader alone over the whole paragraph")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="procgraph")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a deterministic synthetic corpus")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n", type=int, required=True, help="number of processes")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--max-entities", type=int, default=3)
    p_synth.add_argument("--max-sentences", type=int, default=5)

    p_train = sub.add_parser("train", help="train a model on a JSONL corpus")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--dev", default=None)
    p_train.add_argument("--config", default=None, help="key=value config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--embeddings", default=None, help="word embedding text file")
    p_train.add_argument("--stop-micro", type=float, default=None,
                         help="stop once the dev micro-average reaches this value")
    _add_train_flags(p_train)

    p_pred = sub.add_parser("predict", help="dump grid predictions as TSV")
    p_pred.add_argument("--ckpt", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score predictions against gold")
    p_eval.add_argument("--task", choices=["1", "2", "violations"], required=True)
    p_eval.add_argument("--pred", required=True, help="prediction TSV")
    p_eval.add_argument("--gold", required=True, help="gold JSONL corpus")
    p_eval.add_argument("--out", default=None, help="also write the report as JSON")

    p_trace = sub.add_parser("trace", help="per-step prediction trace for one process")
    p_trace.add_argument("--ckpt", required=True)
    p_trace.add_argument("--data", required=True)
    p_trace.add_argument("--id", required=True, dest="process_id")
    p_trace.add_argument("--out", default=None, help="write the trace JSON here")
    return parser


def cmd_synth(args) -> int:
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    instances = synth_corpus(args.seed, args.n, max_entities=args.max_entities,
                             max_sentences=args.max_sentences)
    write_corpus(instances, args.out)
    print(f"wrote {len(instances)} processes to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = parse_corpus(_resolve_input(args.data))
    dev = parse_corpus(_resolve_input(args.dev)) if args.dev else None
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(_resolve_input(args.config)))
    for name in (f.name for f in dataclasses.fields(TrainConfig)):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    config = TrainConfig(**overrides)
    embeddings = None
    if args.embeddings:
        embeddings = EmbeddingTable.from_file(_resolve_input(args.embeddings),
                                              corpus_vocab(data))
    result = train(data, config, dev_corpus=dev, out_dir=args.out,
                   embeddings=embeddings, stop_micro=args.stop_micro)
    print(f"best dev micro {result.best_micro:.2f} at epoch {result.best_epoch}; "
          f"checkpoint at {result.checkpoint_path}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(_resolve_input(args.ckpt))
    data = parse_corpus(_resolve_input(args.data))
    grids = [predict_process(inst, model)[0] for inst in data]
    write_predictions_tsv(args.out, grids)
    print(f"wrote predictions for {len(grids)} processes to {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = read_predictions_tsv(_resolve_input(args.pred))
    gold = parse_corpus(_resolve_input(args.gold))
    if args.task == "1":
        report = score_task1(preds, gold)
    elif args.task == "2":
        report = score_task2(preds, gold)
    else:
        report = count_violations(preds, gold)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return 0


def cmd_trace(args) -> int:
    model = load_model(_resolve_input(args.ckpt))
    data = parse_corpus(_resolve_input(args.data))
    matches = [inst for inst in data if inst.id == args.process_id]
    if not matches:
        raise ValueError(f"process id {args.process_id!r} not found in {args.data}")
    instance = matches[0]
    grid, trace = predict_process(instance, model, collect_trace=True)
    payload = {"process_id": instance.id, "entities": instance.entities,
               "initial": trace[0], "steps": trace[1:]}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(_render_trace_table(instance, grid))
    return 0


def _render_trace_table(instance, grid) -> str:
    """Location of every entity after each sentence, one sentence per row."""
    header = ["sentence"] + list(grid.entities)
    by_step = list(zip(*grid.cells))  # step -> per-entity cells
    rows = [["(before first sentence)"] + [_cell_text(c) for c in by_step[0]]]
    for t in range(1, len(by_step)):
        sentence = " ".join(instance.sentences[t - 1])
        rows.append([sentence] + [_cell_text(c) for c in by_step[t]])
    widths = [max(len(r[col]) for r in rows + [header]) for col in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(val.ljust(w) for val, w in zip(r, widths)))
    return "\n".join(lines)


def _cell_text(cell) -> str:
    return cell.span_text if cell.class_name == "span" else cell.class_name


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "predict": cmd_predict,
        "eval": cmd_eval,
        "trace": cmd_trace,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, CorpusError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
