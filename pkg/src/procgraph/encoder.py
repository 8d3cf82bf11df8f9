"""Contextual encoding of paragraph prefixes and span-pair projections.

The prefix at step t covers the tokens of sentences 1..t; predictions at t
never see later sentences. Token inputs are the frozen word embedding plus
three indicator features: the token appears in the current question, the
token lies in the current sentence, and this is the pre-process (step zero)
pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EmbeddingTable, ProcessInstance

logger = logging.getLogger(__name__)

N_TOKEN_FLAGS = 3
DOC_LAYERS = 2


@dataclass
class Mode:
    """Forward-pass context: dropout rates apply only while training."""

    training: bool = False
    rng: np.random.Generator | None = None
    dropout_recurrent: float = 0.0
    dropout_other: float = 0.0

    def drop_recurrent(self, t: Tensor) -> Tensor:
        return ad.dropout(t, self.dropout_recurrent, self.training, self.rng)

    def drop_other(self, t: Tensor) -> Tensor:
        return ad.dropout(t, self.dropout_other, self.training, self.rng)


EVAL = Mode()


@dataclass
class ContextEncoding:
    """Context vectors for the tokens of sentences 1..t, one row per token."""

    matrix: Tensor
    t: int
    prefix_len: int

    @property
    def width(self) -> int:
        return self.matrix.shape[1]


def doc_layer_params(params) -> list:
    return [
        ((params[f"doc_lstm/l{l}/fwd/W"], params[f"doc_lstm/l{l}/fwd/b"]),
         (params[f"doc_lstm/l{l}/bwd/W"], params[f"doc_lstm/l{l}/bwd/b"]))
        for l in range(DOC_LAYERS)
    ]


def _token_feature_rows(instance: ProcessInstance, prefix_t: int, current_t: int | None,
                        questions: list[list[str]], embeddings: EmbeddingTable,
                        step0: bool) -> list[np.ndarray]:
    """Per-token feature matrices of shape (n_questions, embed_dim + 3)."""
    prefix_end = instance.sentence_bounds[prefix_t - 1][1]
    if current_t is None:
        cur_lo, cur_hi = -1, -1
    else:
        cur_lo, cur_hi = instance.sentence_bounds[current_t - 1]
    q_sets = [set(q) for q in questions]
    n = len(questions)
    rows = []
    for j in range(prefix_end):
        tok = instance.tokens[j]
        emb = embeddings.lookup(tok)
        feats = np.empty((n, embeddings.dim + N_TOKEN_FLAGS))
        feats[:, :embeddings.dim] = emb
        for q in range(n):
            feats[q, embeddings.dim] = 1.0 if tok in q_sets[q] else 0.0
        feats[:, embeddings.dim + 1] = 1.0 if cur_lo <= j < cur_hi else 0.0
        feats[:, embeddings.dim + 2] = 1.0 if step0 else 0.0
        rows.append(feats)
    return rows


def encode_prefix_all(instance: ProcessInstance, t: int, params, embeddings: EmbeddingTable,
                      questions: list[list[str]], mode: Mode = EVAL, step0: bool = False,
                      prefix_t: int | None = None) -> list[ContextEncoding]:
    """Encode the prefix once for a batch of questions (one per entity).

    `prefix_t` widens the encoded text beyond the current sentence `t`; the
    full-paragraph reader variant passes prefix_t = T while the current
    sentence flag still marks sentence t.
    """
    if not 1 <= t <= instance.n_sentences:
        raise ValueError(f"sentence index {t} out of range 1..{instance.n_sentences}")
    if prefix_t is None:
        prefix_t = t
    if not questions:
        raise ValueError("encode_prefix_all needs at least one question")
    rows = _token_feature_rows(instance, prefix_t, None if step0 else t,
                               questions, embeddings, step0)
    seq: list[Tensor] = [ad.constant(r) for r in rows]
    for layer in doc_layer_params(params):
        (w_f, b_f), (w_b, b_b) = layer
        seq = [mode.drop_recurrent(x) for x in seq]
        fwd = ad.lstm_chain(seq, w_f, b_f)
        bwd = ad.lstm_chain(seq, w_b, b_b, reverse=True)
        seq = [ad.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    prefix_len = len(seq)
    return [
        ContextEncoding(matrix=ad.gather_rows(seq, i), t=t, prefix_len=prefix_len)
        for i in range(len(questions))
    ]


def encode_prefix(instance: ProcessInstance, t: int, params, embeddings: EmbeddingTable,
                  question_tokens=(), mode: Mode = EVAL, step0: bool = False,
                  prefix_t: int | None = None) -> ContextEncoding:
    """Single-question prefix encoding; see encode_prefix_all."""
    return encode_prefix_all(instance, t, params, embeddings, [list(question_tokens)],
                             mode=mode, step0=step0, prefix_t=prefix_t)[0]


def span_projection(enc: ContextEncoding, start: int, end: int, params) -> Tensor:
    """Project the concatenated start/end context vectors of a span to width d."""
    if not (0 <= start <= end < enc.prefix_len):
        raise ValueError(f"span ({start}, {end}) outside prefix of length {enc.prefix_len}")
    pair = ad.concat([ad.take_row(enc.matrix, start), ad.take_row(enc.matrix, end)])
    return ad.add(ad.matmul(params["span_proj/W"], pair), params["span_proj/b"])


_warned_fallback: set[tuple[str, str]] = set()


def entity_init(enc: ContextEncoding, mentions, params, name_embedding: np.ndarray | None = None,
                entity_label: str = "", instance_id: str = "") -> Tensor:
    """Initial entity vector: the sum of span projections over every mention
    inside the current prefix. With no mention in the prefix, falls back to a
    learned projection of the entity name's frozen embedding."""
    inside = [(s, e) for s, e in mentions if e < enc.prefix_len]
    if inside:
        projections = [span_projection(enc, s, e, params) for s, e in inside]
        return projections[0] if len(projections) == 1 else ad.add_n(projections)
    if name_embedding is None:
        raise ValueError(f"entity {entity_label!r} has no mention in the prefix and no fallback")
    key = (instance_id, entity_label)
    if key not in _warned_fallback:
        _warned_fallback.add(key)
        logger.warning("entity %r has no mention in the prefix of %s; using the learned fallback",
                       entity_label, instance_id or "<instance>")
    return ad.add(ad.matmul(params["fallback/W"], ad.constant(name_embedding)),
                  params["fallback/b"])
