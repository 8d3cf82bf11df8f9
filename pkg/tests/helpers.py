"""Shared test utilities: the finite-difference gradient oracle and small
builders for models, instances, and prediction grids."""

from __future__ import annotations

import numpy as np

import procgraph.autodiff as ad
from procgraph.corpus import (
    EmbeddingTable,
    LocationGrid,
    LocationState,
    ProcessInstance,
    corpus_vocab,
    synth_corpus,
    tokenize,
)
from procgraph.events import CellPrediction, PredictionGrid
from procgraph.pipeline import Model, TrainConfig


def finite_diff_check(build_loss, tensors, h=1e-5, tol=1e-4, max_coords=48, seed=0):
    """Compare backward() gradients against central finite differences.

    `build_loss` must rebuild the forward graph from the same leaf tensors on
    every call. Checks up to `max_coords` coordinates per tensor. Returns the
    worst relative error seen (and asserts it is under `tol`).
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    ad.backward(loss)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.values) for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, grad in zip(tensors, grads):
        n = t.values.size
        if max_coords is None or n <= max_coords:
            coords = range(n)
        else:
            coords = sorted(rng.choice(n, size=max_coords, replace=False))
        flat_grad = grad.reshape(-1)
        for k in coords:
            orig = t.values.flat[k]
            t.values.flat[k] = orig + h
            up = float(build_loss().values.reshape(()))
            t.values.flat[k] = orig - h
            down = float(build_loss().values.reshape(()))
            t.values.flat[k] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(fd - flat_grad[k]) / max(1.0, abs(fd), abs(flat_grad[k]))
            worst = max(worst, err)
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e} >= {tol}"
    return worst


def tiny_model(hidden=8, embed_dim=8, seed=0, corpus=None, **config_kwargs):
    """A small full model plus a 3-process corpus for fast integration tests."""
    if corpus is None:
        corpus = synth_corpus(seed=3, n_processes=3)
    config_kwargs.setdefault("dropout_recurrent", 0.0)
    config_kwargs.setdefault("dropout_other", 0.0)
    config = TrainConfig(hidden=hidden, embed_dim=embed_dim, seed=seed, **config_kwargs)
    table = EmbeddingTable.random(corpus_vocab(corpus), embed_dim, seed)
    return corpus, Model(config, table)


# Four fixed sentences reused by the crafted scorer cases. Token offsets:
#   the(0) water(1) moves(2) to(3) the(4) lake(5) .(6)
#   the(7) water(8) goes(9) to(10) the(11) sea(12) .(13)
#   the(14) steam(15) forms(16) in(17) the(18) sky(19) .(20)
#   the(21) water(22) is(23) destroyed(24) .(25)
CRAFT_SENTENCES = [
    "the water moves to the lake .",
    "the water goes to the sea .",
    "the steam forms in the sky .",
    "the water is destroyed .",
]


def _find_span(tokens, text):
    needle = tokenize(text)
    for j in range(len(tokens) - len(needle) + 1):
        if tokens[j:j + len(needle)] == needle:
            return j, j + len(needle) - 1
    raise AssertionError(f"{text!r} not found in crafted paragraph")


def make_instance(pid, entities, rows, sentences=None) -> ProcessInstance:
    """Gold instance from compact state strings: '-', '?', or location text
    that must occur in the paragraph."""
    sentences = [tokenize(s) for s in (sentences or CRAFT_SENTENCES)]
    tokens = [tok for sent in sentences for tok in sent]
    grid_rows = []
    for row in rows:
        cells = []
        for state in row:
            if state == "-":
                cells.append(LocationState.nowhere())
            elif state == "?":
                cells.append(LocationState.somewhere())
            else:
                cells.append(LocationState.span(*_find_span(tokens, state)))
        grid_rows.append(cells)
    return ProcessInstance(id=pid, sentences=sentences, entities=list(entities),
                           grid=LocationGrid(grid_rows))


def make_pred(pid, entities, rows) -> PredictionGrid:
    """Prediction grid from compact state strings (location text kept as-is)."""
    cell_rows = []
    for row in rows:
        cells = []
        for state in row:
            if state == "-":
                cells.append(CellPrediction("nowhere"))
            elif state == "?":
                cells.append(CellPrediction("somewhere"))
            else:
                cells.append(CellPrediction("span", span_text=state))
        cell_rows.append(cells)
    return PredictionGrid(process_id=pid, entities=list(entities), cells=cell_rows)
