"""End-to-end orchestration: parameter construction, teacher-forced training
with the joint span/classifier loss, checkpointing with a JSON sidecar, and
full-process inference with optional trace capture.

The pre-process column (step 0) is predicted from a minimal prefix consisting
of the first sentence with a step-zero marker feature; the graph is
initialized from the same pass. During training the graph is always updated
with the gold cell's location vector, never the predicted one.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import (
    AdamState,
    CheckpointError,
    ParamSet,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    CHECKPOINT_VERSION,
)
from .corpus import (
    EmbeddingTable,
    LocationState,
    ProcessInstance,
    corpus_vocab,
    tokenize,
    NOWHERE,
    SOMEWHERE,
    SPAN,
)
from .encoder import (
    DOC_LAYERS,
    EVAL,
    Mode,
    N_TOKEN_FLAGS,
    encode_prefix_all,
    entity_init,
    span_projection,
)
from .events import CellPrediction, PredictionGrid, derive_events  # noqa: F401 (derive_events re-exported)
from .evaluation import score_task1
from .graph import (
    graph_step,
    graph_step_lstm_unit,
    init_graph,
    init_graph_lstm_unit,
)
from .reader import (
    CLASS_INDEX,
    attentive_pool,
    classify_state,
    condition_on_entity,
    encode_question,
    make_question,
    prediction_from_scores,
    score_and_decode,
    span_vec_for,
)

logger = logging.getLogger(__name__)

ABLATION_FLAGS = (
    "no_coref_across", "no_coref_within", "lstm_graph_unit",
    "mrc_only_prefix", "mrc_only_paragraph",
)


@dataclass
class TrainConfig:
    """Training hyperparameters and ablation switches."""

    learning_rate: float = 0.002
    batch_size: int = 8
    dropout_recurrent: float = 0.4
    dropout_other: float = 0.3
    graph_layers: int = 2
    hidden: int = 64
    embed_dim: int = 50
    epochs: int = 50
    seed: int = 0
    patience: int = 10
    max_span_len: int = 15
    no_coref_across: bool = False
    no_coref_within: bool = False
    lstm_graph_unit: bool = False
    mrc_only_prefix: bool = False
    mrc_only_paragraph: bool = False

    def __post_init__(self):
        for name in ("dropout_recurrent", "dropout_other"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")
        for name in ("batch_size", "graph_layers", "embed_dim", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.hidden < 2 or self.hidden % 2:
            raise ValueError(f"hidden must be a positive even number, got {self.hidden}")
        if self.max_span_len < 0:
            raise ValueError("max_span_len must be >= 0")
        if self.mrc_only_prefix and self.mrc_only_paragraph:
            raise ValueError("mrc_only_prefix and mrc_only_paragraph are mutually exclusive")
        graph_flags = [f for f in ("no_coref_across", "no_coref_within", "lstm_graph_unit")
                       if getattr(self, f)]
        if self.mrc_only and graph_flags:
            raise ValueError(f"mrc_only variants take no graph flags, got {graph_flags}")
        if self.lstm_graph_unit and (self.no_coref_across or self.no_coref_within):
            raise ValueError("lstm_graph_unit replaces the coref machinery; drop the coref flags")

    @property
    def mrc_only(self) -> bool:
        return self.mrc_only_prefix or self.mrc_only_paragraph

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, mapping: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**mapping)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Flat key=value file; blank lines and # comments are ignored."""
        return cls.from_dict(parse_config_file(path))


def parse_config_file(path) -> dict:
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce_config_value(key, raw)
    return out


def _coerce_config_value(key: str, raw: str):
    default = getattr(TrainConfig(), key)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def _f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


def build_params(config: TrainConfig, embeddings: EmbeddingTable) -> ParamSet:
    """All model parameters for the configured variant, uniformly initialized
    in +-1/sqrt(fan_in); biases start at zero except LSTM forget gates."""
    rng = np.random.default_rng([config.seed, 0])
    params = ParamSet()
    k = embeddings.dim
    d = config.hidden
    two_h = 2 * d
    feat = k + N_TOKEN_FLAGS

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return _f32(rng.uniform(-bound, bound, size=shape))

    def add_lstm(prefix, in_width, hidden):
        params.add(f"{prefix}/W", uniform((in_width + hidden, 4 * hidden), in_width + hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        params.add(f"{prefix}/b", bias)

    for layer in range(DOC_LAYERS):
        in_width = feat if layer == 0 else two_h
        add_lstm(f"doc_lstm/l{layer}/fwd", in_width, d)
        add_lstm(f"doc_lstm/l{layer}/bwd", in_width, d)

    q_hidden = d // 2
    add_lstm("q_lstm/fwd", k, q_hidden)
    add_lstm("q_lstm/bwd", k, q_hidden)
    params.add("q_pool/w", uniform((2 * q_hidden,), 2 * q_hidden))

    params.add("start/W", uniform((two_h, d), d))
    params.add("end/W", uniform((two_h, d), d))
    params.add("summary_pool/w", uniform((two_h,), two_h))
    cls_in = d + two_h
    params.add("cls/W1", uniform((d, cls_in), cls_in))
    params.add("cls/b1", np.zeros(d))
    params.add("cls/W2", uniform((3, d), d))
    params.add("cls/b2", np.zeros(3))

    if not config.mrc_only:
        params.add("span_proj/W", uniform((d, 2 * two_h), 2 * two_h))
        params.add("span_proj/b", np.zeros(d))
        params.add("fallback/W", uniform((d, k), k))
        params.add("fallback/b", np.zeros(d))
        params.add("cond_mlp/W1", uniform((d, 2 * d), 2 * d))
        params.add("cond_mlp/b1", np.zeros(d))
        params.add("cond_mlp/W2", uniform((d, d), d))
        params.add("cond_mlp/b2", np.zeros(d))
        params.add("loc/nowhere", uniform((d,), d))
        params.add("loc/somewhere", uniform((d,), d))
        if config.lstm_graph_unit:
            add_lstm("graph_unit", d, d)
        else:
            if not config.no_coref_across:
                params.add("gate/W", uniform((1, 2 * d), 2 * d))
                params.add("gate/b", np.zeros(1))
            for layer in range(config.graph_layers):
                add_lstm(f"graph/l{layer}", 2 * d, d)

    params.add_frozen("frozen/embeddings", embeddings.matrix)
    return params


class Model:
    """Parameters plus the frozen embedding table and the configuration."""

    def __init__(self, config: TrainConfig, embeddings: EmbeddingTable,
                 params: ParamSet | None = None):
        self.config = config
        self.embeddings = embeddings
        self.params = params if params is not None else build_params(config, embeddings)


def save_model(model: Model, path) -> None:
    """Checkpoint container plus a JSON sidecar holding the config and the
    vocabulary (with its hash) next to it."""
    save_checkpoint(path, model.params)
    sidecar = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.embeddings.words,
        "vocab_hash": model.embeddings.vocab_hash(),
    }
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_model(path) -> Model:
    values = load_checkpoint(path)
    sidecar_path = Path(f"{path}.json")
    if not sidecar_path.exists():
        raise CheckpointError(f"missing checkpoint sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    if sidecar.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{sidecar_path}: sidecar format version {sidecar.get('format_version')} "
            f"unsupported (expected {CHECKPOINT_VERSION})"
        )
    config = TrainConfig.from_dict(sidecar["config"])
    if "frozen/embeddings" not in values:
        raise CheckpointError(f"{path}: checkpoint is missing the embedding table")
    table = EmbeddingTable(words=list(sidecar["vocab"]), matrix=values["frozen/embeddings"])
    if table.vocab_hash() != sidecar.get("vocab_hash"):
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    model = Model(config, table)
    model.params.load_values(values)
    return model


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _cell_losses(class_scores, span_scores, gold_state: LocationState, prefix_len: int):
    """Classifier NLL for every cell; span start/end NLL only when the gold
    state is a span that lies inside the encoded prefix."""
    out = [ad.neg(ad.pick(class_scores.log_probs, CLASS_INDEX[gold_state.kind]))]
    if gold_state.kind == SPAN and gold_state.end < prefix_len:
        out.append(ad.neg(ad.pick(span_scores.start_log_probs, gold_state.start)))
        out.append(ad.neg(ad.pick(span_scores.end_log_probs, gold_state.end)))
    return out


def _forced_span_vec(gold_state: LocationState, enc, params):
    """Teacher-forcing location vector: the gold span's projection, or the
    special embeddings; gold spans beyond the prefix fall back to somewhere."""
    if gold_state.kind == SPAN and gold_state.end < enc.prefix_len:
        return span_projection(enc, gold_state.start, gold_state.end, params)
    if gold_state.kind == NOWHERE:
        return params["loc/nowhere"]
    return params["loc/somewhere"]


def _forward_instance(model: Model, instance: ProcessInstance, mode: Mode,
                      teacher: bool, collect_trace: bool = False):
    """Shared read/update loop. Returns (cells, loss_terms, trace_records)
    where cells is entities x (T+1) StatePredictions."""
    cfg, params, emb = model.config, model.params, model.embeddings
    names = instance.entities
    n = len(names)
    total_sents = instance.n_sentences
    mrc_only = cfg.mrc_only
    full_paragraph = cfg.mrc_only_paragraph

    questions = [make_question(name) for name in names]
    q_encs = [encode_question(q, params, emb, mode) for q in questions]

    losses = []
    cells = [[None] * (total_sents + 1) for _ in range(n)]
    trace: list[dict] = []

    # step 0: minimal prefix with the step-zero marker
    prefix0 = total_sents if full_paragraph else 1
    encs0 = encode_prefix_all(instance, 1, params, emb, questions, mode,
                              step0=True, prefix_t=prefix0)
    init_vecs = None
    if not mrc_only:
        init_vecs = [
            entity_init(encs0[i], instance.mentions[i], params,
                        name_embedding=emb.mean_vector(tokenize(names[i])),
                        entity_label=names[i], instance_id=instance.id)
            for i in range(n)
        ]
    for i in range(n):
        anchor = q_encs[i].pooled if mrc_only else init_vecs[i]
        q_cond = anchor if mrc_only else condition_on_entity(q_encs[i].pooled, init_vecs[i],
                                                             params, mode)
        span_scores, span = score_and_decode(encs0[i], q_cond, params, cfg.max_span_len)
        summary, _ = attentive_pool(encs0[i].matrix, params["summary_pool/w"])
        cls = classify_state(anchor, summary, params, mode)
        cells[i][0] = prediction_from_scores(cls, span, span_scores)
        if teacher:
            losses.extend(_cell_losses(cls, span_scores, instance.grid.rows[i][0],
                                       encs0[i].prefix_len))
    if collect_trace:
        trace.append(_trace_record(instance, 0, cells, None))

    if mrc_only:
        graph = None
    elif cfg.lstm_graph_unit:
        graph = init_graph_lstm_unit(init_vecs, cfg.hidden)
    else:
        graph = init_graph(init_vecs, params, cfg.graph_layers)

    for t in range(1, total_sents + 1):
        prefix_t = total_sents if full_paragraph else t
        encs = encode_prefix_all(instance, t, params, emb, questions, mode, prefix_t=prefix_t)
        graph_inputs = []
        for i in range(n):
            if mrc_only:
                anchor = q_encs[i].pooled
                q_cond = anchor
            else:
                anchor = graph.entity_nodes[i]
                q_cond = condition_on_entity(q_encs[i].pooled, anchor, params, mode)
            span_scores, span = score_and_decode(encs[i], q_cond, params, cfg.max_span_len)
            summary, _ = attentive_pool(encs[i].matrix, params["summary_pool/w"])
            cls = classify_state(anchor, summary, params, mode)
            pred = prediction_from_scores(cls, span, span_scores)
            cells[i][t] = pred
            if teacher:
                losses.extend(_cell_losses(cls, span_scores, instance.grid.rows[i][t],
                                           encs[i].prefix_len))
            if not mrc_only:
                if teacher:
                    graph_inputs.append(_forced_span_vec(instance.grid.rows[i][t],
                                                         encs[i], params))
                else:
                    graph_inputs.append(span_vec_for(pred, encs[i], params))
        step_trace = None
        if not mrc_only:
            if cfg.lstm_graph_unit:
                graph, step_trace = graph_step_lstm_unit(graph, graph_inputs, params)
            else:
                graph, step_trace = graph_step(graph, graph_inputs, params, cfg.graph_layers,
                                               no_coref_across=cfg.no_coref_across,
                                               no_coref_within=cfg.no_coref_within)
        if collect_trace:
            trace.append(_trace_record(instance, t, cells, step_trace))
    return cells, losses, trace


def _trace_record(instance: ProcessInstance, t: int, cells, step_trace) -> dict:
    entities = []
    for i, name in enumerate(instance.entities):
        pred = cells[i][t]
        span = pred.reported_span
        entry = {
            "entity": name,
            "class": pred.class_name,
            "class_probs": [float(p) for p in pred.class_probs],
            "span": list(span) if span else None,
            "span_text": instance.span_text(*span) if span else None,
        }
        if step_trace is not None:
            entry["attention"] = (step_trace.attention[i].tolist()
                                  if step_trace.attention is not None else None)
            entry["gate"] = (float(step_trace.gates[i])
                             if step_trace.gates is not None else None)
        entities.append(entry)
    record = {
        "step": t,
        "sentence": " ".join(instance.sentences[t - 1]) if t >= 1 else None,
        "entities": entities,
    }
    if step_trace is not None:
        record["coref"] = (step_trace.coref.tolist()
                           if step_trace.coref is not None else None)
    return record


def predict_process(instance: ProcessInstance, model: Model, collect_trace: bool = False):
    """Grid prediction for one process in eval mode (no dropout, no teacher
    forcing); repeated calls give identical output."""
    cells, _, trace = _forward_instance(model, instance, EVAL, teacher=False,
                                        collect_trace=collect_trace)
    rows = []
    for i in range(instance.n_entities):
        row = []
        for t in range(instance.n_sentences + 1):
            pred = cells[i][t]
            if pred.class_name == SPAN:
                start, end = pred.decoded_span
                row.append(CellPrediction(SPAN, span_text=instance.span_text(start, end),
                                          span=(start, end), class_probs=pred.class_probs))
            else:
                row.append(CellPrediction(pred.class_name, class_probs=pred.class_probs))
        rows.append(row)
    grid = PredictionGrid(process_id=instance.id, entities=list(instance.entities), cells=rows)
    return grid, trace


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def training_mode(config: TrainConfig, rng: np.random.Generator | None = None) -> Mode:
    if rng is None:
        rng = np.random.default_rng([config.seed, 2])
    return Mode(training=True, rng=rng, dropout_recurrent=config.dropout_recurrent,
                dropout_other=config.dropout_other)


def teacher_forced_step(batch, model: Model, optimizer: AdamState,
                        mode: Mode | None = None):
    """One optimizer step on a batch: summed span and classifier NLL over all
    cells, with the graph updated from gold cells regardless of predictions.
    Returns (loss_value, n_cells)."""
    if mode is None:
        mode = training_mode(model.config)
    loss_terms = []
    n_cells = 0
    for instance in batch:
        cells, terms, _ = _forward_instance(model, instance, mode, teacher=True)
        loss_terms.extend(terms)
        n_cells += sum(len(row) for row in cells)
    total = ad.add_n(loss_terms)
    ad.backward(total, model.params)
    adam_step(model.params, optimizer)
    return float(total.values), n_cells


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    best_micro: float = 0.0
    best_epoch: int = 0
    checkpoint_path: Path | None = None


def train(train_corpus, config: TrainConfig, dev_corpus=None, out_dir=None,
          embeddings: EmbeddingTable | None = None,
          stop_micro: float | None = None) -> TrainResult:
    """Epochs of seeded shuffled batches; the dev micro-average is computed
    each epoch, the best checkpoint is retained, and training stops early
    after `patience` epochs without improvement. Deterministic per seed in
    single-threaded mode."""
    train_corpus = list(train_corpus)
    if not train_corpus:
        raise ValueError("empty training corpus")
    dev = list(dev_corpus) if dev_corpus is not None else train_corpus
    if embeddings is None:
        embeddings = EmbeddingTable.random(corpus_vocab(train_corpus), config.embed_dim,
                                           config.seed)
    model = Model(config, embeddings)
    optimizer = AdamState(lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    mode = training_mode(config)

    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "model.ckpt"

    history: list[dict] = []
    best_micro, best_epoch = -1.0, 0
    best_values = None
    order = np.arange(len(train_corpus))
    for epoch in range(1, config.epochs + 1):
        shuffle_rng.shuffle(order)
        epoch_loss, epoch_cells = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_corpus[int(k)] for k in order[start:start + config.batch_size]]
            loss_value, n_cells = teacher_forced_step(batch, model, optimizer, mode)
            epoch_loss += loss_value
            epoch_cells += n_cells
        dev_grids = [predict_process(inst, model)[0] for inst in dev]
        report = score_task1(dev_grids, dev)
        row = {
            "epoch": epoch, "loss": epoch_loss / max(epoch_cells, 1),
            "cat1": report.cat1, "cat2": report.cat2, "cat3": report.cat3,
            "macro": report.macro, "micro": report.micro,
        }
        history.append(row)
        logger.info("epoch %d: loss/cell=%.4f dev micro=%.2f", epoch, row["loss"], row["micro"])
        if report.micro > best_micro:
            best_micro, best_epoch = report.micro, epoch
            best_values = model.params.copy_values()
            if ckpt_path is not None:
                save_model(model, ckpt_path)
        if stop_micro is not None and report.micro >= stop_micro:
            break
        if epoch - best_epoch >= config.patience:
            logger.info("no improvement for %d epochs, stopping", config.patience)
            break
    if best_values is not None:
        model.params.load_values(best_values)
    if out is not None:
        _write_metrics(out / "metrics.csv", history)
    return TrainResult(model=model, history=history, best_micro=best_micro,
                       best_epoch=best_epoch, checkpoint_path=ckpt_path)


def _write_metrics(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "cat1", "cat2", "cat3", "macro", "micro"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.6f}", f"{row['cat1']:.4f}",
                             f"{row['cat2']:.4f}", f"{row['cat3']:.4f}",
                             f"{row['macro']:.4f}", f"{row['micro']:.4f}"])
