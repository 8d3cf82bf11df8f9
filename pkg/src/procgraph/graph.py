"""Dynamic bipartite graph over entities and their locations.

Each step first disambiguates the incoming location vectors against the
previous step's location nodes (attention plus a scalar gated update), then
against each other (self-attention, producing a row-stochastic coreference
matrix), and finally refines all nodes through stacked recurrent update
layers with residual connections and coreference pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GraphState:
    """Graph after step t: per-entity node vectors, the coreference matrix for
    the step, and per-(layer, entity) LSTM carries that persist across steps."""

    t: int
    entity_nodes: list[Tensor]
    location_nodes: list[Tensor]
    coref: Tensor
    carries: list[list[tuple[Tensor, Tensor]]]

    @property
    def n_entities(self) -> int:
        return len(self.entity_nodes)


@dataclass
class StepTrace:
    """Numeric observables of one graph step, for trace dumps."""

    attention: np.ndarray | None
    gates: np.ndarray | None
    coref: np.ndarray | None


def init_graph(init_entity_vecs: list[Tensor], params, n_layers: int) -> GraphState:
    """G_0: entity nodes start from the text-derived entity vectors, every
    location node starts at the learned somewhere embedding, the coreference
    matrix is the identity, and all LSTM carries are zero."""
    n = len(init_entity_vecs)
    if n < 1:
        raise ValueError("init_graph needs at least one entity")
    width = init_entity_vecs[0].shape[0]
    somewhere = params["loc/somewhere"]
    carries = [
        [(ad.constant(np.zeros(width)), ad.constant(np.zeros(width))) for _ in range(n)]
        for _ in range(n_layers)
    ]
    return GraphState(
        t=0,
        entity_nodes=list(init_entity_vecs),
        location_nodes=[somewhere for _ in range(n)],
        coref=ad.constant(np.eye(n)),
        carries=carries,
    )


def coref_across(span_vec: Tensor, prev_locations: Tensor, params):
    """Merge an incoming location vector with the previous step's location
    nodes: attend over the rows of `prev_locations`, then mix the attended
    summary with the new vector through a scalar sigmoid gate.

    Returns (merged, attention, gate).
    """
    if prev_locations.ndim != 2 or prev_locations.shape[1] != span_vec.shape[0]:
        raise ad.ShapeError(
            f"coref_across: locations {prev_locations.shape} vs span vector {span_vec.shape}"
        )
    attention = ad.softmax_rows(ad.matmul(prev_locations, span_vec))
    pooled = ad.matmul(ad.transpose(prev_locations), attention)
    gate = ad.sigmoid(ad.add(ad.matmul(params["gate/W"], ad.concat([pooled, span_vec])),
                             params["gate/b"]))
    merged = ad.add(ad.mul(gate, span_vec), ad.mul(ad.one_minus(gate), pooled))
    return merged, attention, gate


def coref_within(location_vecs: list[Tensor]):
    """Self-attention among the step's location vectors. Returns the pooled
    vectors and the row-stochastic coreference matrix, which is reused by the
    update layers."""
    stacked = ad.stack_rows(location_vecs)
    coref = ad.softmax_rows(ad.matmul(stacked, ad.transpose(stacked)))
    pooled = ad.matmul(coref, stacked)
    rows = [ad.take_row(pooled, i) for i in range(len(location_vecs))]
    return rows, coref


def update_layer(entity_nodes: list[Tensor], location_nodes: list[Tensor],
                 carries: list[tuple[Tensor, Tensor]], coref: Tensor, weights: Tensor,
                 bias: Tensor):
    """One graph refinement layer: compose each entity with its location and
    per-layer history through an LSTM, apply the two residual updates, and tie
    co-referent locations together by pooling with the coreference matrix.

    Returns (new_entities, new_locations, new_carries).
    """
    new_entities, pre_pool, new_carries = [], [], []
    for e, loc, (h_prev, c_prev) in zip(entity_nodes, location_nodes, carries):
        x = ad.concat([e, loc])
        h, c = ad.lstm_cell(x, h_prev, c_prev, weights, bias)
        new_entities.append(ad.add(e, h))
        pre_pool.append(ad.add(loc, h))
        new_carries.append((h, c))
    stacked = ad.stack_rows(pre_pool)
    pooled = ad.matmul(coref, stacked)
    new_locations = [ad.take_row(pooled, i) for i in range(len(location_nodes))]
    return new_entities, new_locations, new_carries


def graph_step(state: GraphState, span_vecs: list[Tensor], params, n_layers: int,
               no_coref_across: bool = False, no_coref_within: bool = False):
    """Advance the graph one time step from the per-entity location vectors.

    Returns (new_state, StepTrace).
    """
    n = state.n_entities
    if len(span_vecs) != n:
        raise ValueError(f"graph_step: {len(span_vecs)} span vectors for {n} entities")

    if no_coref_across:
        merged = list(span_vecs)
        attention_rows, gate_vals = None, None
    else:
        prev_locations = ad.stack_rows(state.location_nodes)
        merged, attention_rows, gate_vals = [], [], []
        for vec in span_vecs:
            m, att, gate = coref_across(vec, prev_locations, params)
            merged.append(m)
            attention_rows.append(att.values.copy())
            gate_vals.append(float(gate.values[0]))

    if no_coref_within:
        locations = merged
        coref = ad.constant(np.eye(n))
    else:
        locations, coref = coref_within(merged)

    entities = state.entity_nodes
    new_carries = []
    for layer in range(n_layers):
        entities, locations, carries_l = update_layer(
            entities, locations, state.carries[layer], coref,
            params[f"graph/l{layer}/W"], params[f"graph/l{layer}/b"],
        )
        new_carries.append(carries_l)

    trace = StepTrace(
        attention=np.stack(attention_rows) if attention_rows is not None else None,
        gates=np.asarray(gate_vals) if gate_vals is not None else None,
        coref=coref.values.copy(),
    )
    new_state = GraphState(
        t=state.t + 1,
        entity_nodes=entities,
        location_nodes=locations,
        coref=coref,
        carries=new_carries,
    )
    return new_state, trace


def init_graph_lstm_unit(init_entity_vecs: list[Tensor], width: int) -> GraphState:
    """State for the plain-LSTM ablation: the cell hidden state doubles as the
    entity node, seeded from the text-derived entity vectors."""
    n = len(init_entity_vecs)
    carries = [[(vec, ad.constant(np.zeros(width))) for vec in init_entity_vecs]]
    return GraphState(
        t=0,
        entity_nodes=list(init_entity_vecs),
        location_nodes=list(init_entity_vecs),
        coref=ad.constant(np.eye(n)),
        carries=carries,
    )


def graph_step_lstm_unit(state: GraphState, span_vecs: list[Tensor], params):
    """Ablation step: a single per-entity LSTM over the location vectors, no
    coreference and no cross-node propagation."""
    n = state.n_entities
    if len(span_vecs) != n:
        raise ValueError(f"graph_step: {len(span_vecs)} span vectors for {n} entities")
    new_entities, new_carries = [], []
    for vec, (h_prev, c_prev) in zip(span_vecs, state.carries[0]):
        h, c = ad.lstm_cell(vec, h_prev, c_prev, params["graph_unit/W"], params["graph_unit/b"])
        new_entities.append(h)
        new_carries.append((h, c))
    new_state = GraphState(
        t=state.t + 1,
        entity_nodes=new_entities,
        location_nodes=list(span_vecs),
        coref=ad.constant(np.eye(n)),
        carries=[new_carries],
    )
    return new_state, StepTrace(attention=None, gates=None, coref=None)
