"""Entity-conditioned span-extraction reader.

Poses "where is <entity> located ?" against the current prefix, conditions the
question vector on the entity's graph node, scores every token as a span start
or end, and runs a separate three-way classifier deciding between nowhere,
somewhere, and a stated location span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EmbeddingTable, ProcessInstance, tokenize, NOWHERE, SOMEWHERE, SPAN
from .encoder import EVAL, ContextEncoding, Mode, encode_prefix, span_projection

CLASSES = (NOWHERE, SOMEWHERE, SPAN)
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}
MAX_SPAN_LEN = 15


def make_question(entity_name: str) -> list[str]:
    """Deterministic question template, entity tokens inlined."""
    name_tokens = tokenize(entity_name)
    if not name_tokens:
        raise ValueError("empty entity name")
    return ["where", "is", *name_tokens, "located", "?"]


def attentive_pool(matrix: Tensor, weight_vec: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum of matrix rows; returns (pooled, weights)."""
    scores = ad.matmul(matrix, weight_vec)
    weights = ad.softmax_rows(scores)
    pooled = ad.matmul(ad.transpose(matrix), weights)
    return pooled, weights


@dataclass
class QuestionEncoding:
    pooled: Tensor
    weights: Tensor
    states: Tensor


def encode_question(tokens, params, embeddings: EmbeddingTable,
                    mode: Mode = EVAL) -> QuestionEncoding:
    """Bidirectional recurrent encoding pooled by learned self-attention."""
    tokens = list(tokens)
    if not tokens:
        raise ValueError("empty question")
    inputs = [mode.drop_recurrent(ad.constant(embeddings.lookup(tok))) for tok in tokens]
    fwd = ad.lstm_chain(inputs, params["q_lstm/fwd/W"], params["q_lstm/fwd/b"])
    bwd = ad.lstm_chain(inputs, params["q_lstm/bwd/W"], params["q_lstm/bwd/b"], reverse=True)
    states = ad.stack_rows([ad.concat([f, b]) for f, b in zip(fwd, bwd)])
    pooled, weights = attentive_pool(states, params["q_pool/w"])
    return QuestionEncoding(pooled=pooled, weights=weights, states=states)


def condition_on_entity(question_vec: Tensor, entity_node: Tensor, params,
                        mode: Mode = EVAL) -> Tensor:
    """Entity-dependent question vector: 2-layer MLP over the concatenation."""
    joined = ad.concat([question_vec, entity_node])
    hidden = ad.relu(ad.add(ad.matmul(params["cond_mlp/W1"], joined), params["cond_mlp/b1"]))
    hidden = mode.drop_other(hidden)
    return ad.add(ad.matmul(params["cond_mlp/W2"], hidden), params["cond_mlp/b2"])


@dataclass
class SpanScores:
    """Start/end logits over prefix tokens with their normalized distributions."""

    start_logits: Tensor
    end_logits: Tensor
    start_probs: Tensor
    end_probs: Tensor
    start_log_probs: Tensor
    end_log_probs: Tensor


def score_spans(enc: ContextEncoding, question_vec: Tensor, params) -> SpanScores:
    start_key = ad.matmul(params["start/W"], question_vec)
    end_key = ad.matmul(params["end/W"], question_vec)
    start_logits = ad.matmul(enc.matrix, start_key)
    end_logits = ad.matmul(enc.matrix, end_key)
    return SpanScores(
        start_logits=start_logits,
        end_logits=end_logits,
        start_probs=ad.softmax_rows(start_logits),
        end_probs=ad.softmax_rows(end_logits),
        start_log_probs=ad.log_softmax_rows(start_logits),
        end_log_probs=ad.log_softmax_rows(end_logits),
    )


def decode_span(start_logits: np.ndarray, end_logits: np.ndarray,
                max_span_len: int = MAX_SPAN_LEN) -> tuple[int, int]:
    """Best (start, end) with start <= end <= start + max_span_len, maximizing
    start_logit + end_logit; ties broken by smaller start, then smaller end."""
    n = len(start_logits)
    if n == 0:
        raise ValueError("decode_span on an empty prefix")
    scores = np.full((max_span_len + 1, n), -np.inf)
    for offset in range(max_span_len + 1):
        if offset >= n:
            break
        scores[offset, :n - offset] = start_logits[:n - offset] + end_logits[offset:]
    best = scores.max()
    offs, starts = np.nonzero(scores == best)
    order = np.lexsort((offs + starts, starts))
    k = order[0]
    return int(starts[k]), int(starts[k] + offs[k])


def score_and_decode(enc: ContextEncoding, question_vec: Tensor, params,
                     max_span_len: int = MAX_SPAN_LEN) -> tuple[SpanScores, tuple[int, int]]:
    scores = score_spans(enc, question_vec, params)
    span = decode_span(scores.start_logits.values, scores.end_logits.values, max_span_len)
    return scores, span


@dataclass
class ClassScores:
    logits: Tensor
    probs: Tensor
    log_probs: Tensor


def classify_state(entity_node: Tensor, summary: Tensor, params,
                   mode: Mode = EVAL) -> ClassScores:
    """Three-way nowhere / somewhere / span decision from the entity node and
    a pooled prefix summary."""
    joined = ad.concat([entity_node, summary])
    hidden = ad.relu(ad.add(ad.matmul(params["cls/W1"], joined), params["cls/b1"]))
    hidden = mode.drop_other(hidden)
    logits = ad.add(ad.matmul(params["cls/W2"], hidden), params["cls/b2"])
    return ClassScores(logits=logits, probs=ad.softmax_rows(logits),
                       log_probs=ad.log_softmax_rows(logits))


@dataclass
class StatePrediction:
    """Per-cell reader output. The decoded span is always produced; it is the
    reported location only when the classifier picks the span class."""

    class_name: str
    class_probs: np.ndarray
    decoded_span: tuple[int, int]
    span_scores: SpanScores

    @property
    def reported_span(self) -> tuple[int, int] | None:
        return self.decoded_span if self.class_name == SPAN else None


@dataclass
class ReadResult:
    prediction: StatePrediction
    span_vec: Tensor
    encoding: ContextEncoding
    class_scores: ClassScores


def prediction_from_scores(class_scores: ClassScores, span: tuple[int, int],
                           span_scores: SpanScores) -> StatePrediction:
    probs = class_scores.probs.values.copy()
    return StatePrediction(
        class_name=CLASSES[int(np.argmax(probs))],
        class_probs=probs,
        decoded_span=span,
        span_scores=span_scores,
    )


def span_vec_for(prediction: StatePrediction, enc: ContextEncoding, params) -> Tensor:
    """Location vector fed to the graph: the decoded span's projection, or the
    learned special embedding for the nowhere / somewhere classes."""
    if prediction.class_name == SPAN:
        return span_projection(enc, *prediction.decoded_span, params)
    if prediction.class_name == NOWHERE:
        return params["loc/nowhere"]
    return params["loc/somewhere"]


def read(instance: ProcessInstance, t: int, entity_index: int, graph_state, params,
         embeddings: EmbeddingTable, mode: Mode = EVAL,
         max_span_len: int = MAX_SPAN_LEN) -> ReadResult:
    """Full single-entity read at step t against the graph from step t-1."""
    question = make_question(instance.entities[entity_index])
    q_enc = encode_question(question, params, embeddings, mode)
    entity_node = graph_state.entity_nodes[entity_index]
    conditioned = condition_on_entity(q_enc.pooled, entity_node, params, mode)
    enc = encode_prefix(instance, t, params, embeddings, question, mode=mode)
    span_scores, span = score_and_decode(enc, conditioned, params, max_span_len)
    summary, _ = attentive_pool(enc.matrix, params["summary_pool/w"])
    class_scores = classify_state(entity_node, summary, params, mode)
    prediction = prediction_from_scores(class_scores, span, span_scores)
    return ReadResult(
        prediction=prediction,
        span_vec=span_vec_for(prediction, enc, params),
        encoding=enc,
        class_scores=class_scores,
    )
