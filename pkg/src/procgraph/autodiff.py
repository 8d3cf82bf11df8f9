"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable computation in the model runs through the ops in this
module. Each op records its parent tensors and a backward closure; backward()
replays the recorded graph in reverse topological order and accumulates
gradients. Values are held in double precision; the on-disk checkpoint
container stores little-endian 32-bit floats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or has an unsupported version."""


class Tensor:
    """A dense array node in the differentiation graph."""

    __slots__ = ("values", "requires_grad", "grad", "parents", "backward_fn")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], None] | None = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _node(values, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(values)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.reshape(t.values.shape).astype(np.float64, copy=True)
    else:
        t.grad += g.reshape(t.values.shape)


def _accumulate_row(t: Tensor, i: int, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad[i] += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.values + b.values
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.values - b.values
    except ValueError:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from None

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from None

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _node(out, (a, b), bw)


def neg(t: Tensor) -> Tensor:
    def bw(g):
        _accumulate(t, -g)

    return _node(-t.values, (t,), bw)


def scale(t: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accumulate(t, g * s)

    return _node(t.values * s, (t,), bw)


def add_scalar(t: Tensor, s: float) -> Tensor:
    def bw(g):
        _accumulate(t, g)

    return _node(t.values + float(s), (t,), bw)


def one_minus(t: Tensor) -> Tensor:
    return add_scalar(neg(t), 1.0)


def add_n(ts: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors as a single graph node."""
    ts = list(ts)
    if not ts:
        raise ShapeError("add_n of no tensors")
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n shape mismatch: {shape} vs {t.shape}")
    out = ts[0].values.copy()
    for t in ts[1:]:
        out += t.values

    def bw(g):
        for t in ts:
            _accumulate(t, g)

    return _node(out, tuple(ts), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul needs 1-D or 2-D operands, got {av.shape} x {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = av @ bv

    def bw(g):
        if av.ndim == 2 and bv.ndim == 2:
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)
        elif av.ndim == 2 and bv.ndim == 1:
            _accumulate(a, np.outer(g, bv))
            _accumulate(b, av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            _accumulate(a, bv @ g)
            _accumulate(b, np.outer(av, g))
        else:
            _accumulate(a, g * bv)
            _accumulate(b, g * av)

    return _node(out, (a, b), bw)


def transpose(m: Tensor) -> Tensor:
    if m.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {m.shape}")

    def bw(g):
        _accumulate(m, g.T)

    return _node(m.values.T.copy(), (m,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of no tensors")
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat mismatch on axis {axis}: {[p.shape for p in parts]}"
        ) from None
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        start = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accumulate(p, g[tuple(sl)])
            start += n

    return _node(out, tuple(parts), bw)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    rows = list(rows)
    if not rows:
        raise ShapeError("stack_rows of no tensors")
    for r in rows:
        if r.ndim != 1 or r.shape != rows[0].shape:
            raise ShapeError(f"stack_rows needs equal-length vectors, got {[r.shape for r in rows]}")
    out = np.stack([r.values for r in rows])

    def bw(g):
        for k, r in enumerate(rows):
            _accumulate(r, g[k])

    return _node(out, tuple(rows), bw)


def take_row(m: Tensor, i: int) -> Tensor:
    if m.ndim != 2:
        raise ShapeError(f"take_row needs a matrix, got shape {m.shape}")
    if not 0 <= i < m.shape[0]:
        raise ShapeError(f"row {i} out of range for shape {m.shape}")

    def bw(g):
        _accumulate_row(m, i, g)

    return _node(m.values[i].copy(), (m,), bw)


def gather_rows(mats: Sequence[Tensor], i: int) -> Tensor:
    """Stack row `i` of each matrix in `mats` into one matrix."""
    mats = list(mats)
    if not mats:
        raise ShapeError("gather_rows of no tensors")
    for m in mats:
        if m.ndim != 2 or not 0 <= i < m.shape[0]:
            raise ShapeError(f"gather_rows: row {i} invalid for shape {m.shape}")
    out = np.stack([m.values[i] for m in mats])

    def bw(g):
        for k, m in enumerate(mats):
            _accumulate_row(m, i, g[k])

    return _node(out, tuple(mats), bw)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    if not 0 <= axis < t.ndim:
        raise ShapeError(f"narrow axis {axis} invalid for shape {t.shape}")
    if start < 0 or length < 1 or start + length > t.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range on axis {axis} of {t.shape}")
    sl = [slice(None)] * t.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        if not t.requires_grad:
            return
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.grad[sl] += g

    return _node(t.values[sl].copy(), (t,), bw)


def sum_all(t: Tensor) -> Tensor:
    def bw(g):
        _accumulate(t, np.broadcast_to(g, t.shape))

    return _node(t.values.sum(), (t,), bw)


def pick(t: Tensor, index: int) -> Tensor:
    """Scalar entry of a vector."""
    if t.ndim != 1:
        raise ShapeError(f"pick needs a vector, got shape {t.shape}")
    if not 0 <= index < t.shape[0]:
        raise ShapeError(f"index {index} out of range for shape {t.shape}")

    def bw(g):
        if not t.requires_grad:
            return
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.grad[index] += g.reshape(())

    return _node(t.values[index], (t,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------------


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # clipping at +-709 keeps exp finite; beyond that sigmoid saturates anyway
    x = np.minimum(np.maximum(x, -709.0), 709.0)
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid(t: Tensor) -> Tensor:
    out = _sigmoid_values(t.values)

    def bw(g):
        _accumulate(t, g * out * (1.0 - out))

    return _node(out, (t,), bw)


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.values)

    def bw(g):
        _accumulate(t, g * (1.0 - out * out))

    return _node(out, (t,), bw)


def relu(t: Tensor) -> Tensor:
    out = np.maximum(t.values, 0.0)

    def bw(g):
        _accumulate(t, g * (t.values > 0.0))

    return _node(out, (t,), bw)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax (last axis), stabilized by max subtraction."""
    if m.values.size == 0:
        raise ShapeError("softmax of empty tensor")
    shifted = m.values - m.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(m, out * (g - inner))

    return _node(out, (m,), bw)


def log_softmax_rows(m: Tensor) -> Tensor:
    if m.values.size == 0:
        raise ShapeError("log_softmax of empty tensor")
    shifted = m.values - m.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def bw(g):
        soft = np.exp(out)
        _accumulate(m, g - soft * g.sum(axis=-1, keepdims=True))

    return _node(out, (m,), bw)


def dropout(t: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, survivors scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return t
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(t.shape) >= p) / (1.0 - p)
    out = t.values * keep

    def bw(g):
        _accumulate(t, g * keep)

    return _node(out, (t,), bw)


# ---------------------------------------------------------------------------
# recurrent units
# ---------------------------------------------------------------------------


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weights: Tensor, bias: Tensor):
    """One LSTM step as a single fused graph node. Gate blocks in `weights`
    are ordered input, forget, candidate, output; `weights` has shape
    (input+hidden, 4*hidden).

    `x`, `h`, `c` are either vectors or matrices with a leading batch axis.
    Returns (new_hidden, new_cell).
    """
    if h.shape != c.shape:
        raise ShapeError(f"lstm_cell state mismatch: h {h.shape} vs c {c.shape}")
    if x.ndim != h.ndim or (x.ndim == 2 and x.shape[0] != h.shape[0]):
        raise ShapeError(f"lstm_cell input {x.shape} incompatible with state {h.shape}")
    hidden = h.shape[-1]
    if weights.ndim != 2 or weights.shape[1] != 4 * hidden:
        raise ShapeError(f"lstm_cell weights {weights.shape} incompatible with hidden size {hidden}")
    if bias.shape != (4 * hidden,):
        raise ShapeError(f"lstm_cell bias {bias.shape}, expected ({4 * hidden},)")
    in_width = x.shape[-1]
    if in_width + hidden != weights.shape[0]:
        raise ShapeError(
            f"lstm_cell input width {in_width}+{hidden} vs weights {weights.shape}"
        )
    xh = np.concatenate([x.values, h.values], axis=-1)
    gates = xh @ weights.values + bias.values
    gate_in = _sigmoid_values(gates[..., :hidden])
    gate_forget = _sigmoid_values(gates[..., hidden:2 * hidden])
    candidate = np.tanh(gates[..., 2 * hidden:3 * hidden])
    gate_out = _sigmoid_values(gates[..., 3 * hidden:])
    new_c = gate_forget * c.values + gate_in * candidate
    tanh_c = np.tanh(new_c)
    out = np.concatenate([gate_out * tanh_c, new_c], axis=-1)

    def bw(g):
        dh = g[..., :hidden]
        dc = g[..., hidden:] + dh * gate_out * (1.0 - tanh_c * tanh_c)
        d_out = dh * tanh_c
        d_forget = dc * c.values
        d_in = dc * candidate
        d_cand = dc * gate_in
        d_gates = np.concatenate([
            d_in * gate_in * (1.0 - gate_in),
            d_forget * gate_forget * (1.0 - gate_forget),
            d_cand * (1.0 - candidate * candidate),
            d_out * gate_out * (1.0 - gate_out),
        ], axis=-1)
        if d_gates.ndim == 1:
            _accumulate(weights, np.outer(xh, d_gates))
            _accumulate(bias, d_gates)
        else:
            _accumulate(weights, xh.T @ d_gates)
            _accumulate(bias, d_gates.sum(axis=0))
        d_xh = d_gates @ weights.values.T
        _accumulate(x, d_xh[..., :in_width])
        _accumulate(h, d_xh[..., in_width:])
        _accumulate(c, dc * gate_forget)

    node = _node(out, (x, h, c, weights, bias), bw)
    ax = node.ndim - 1
    return narrow(node, ax, 0, hidden), narrow(node, ax, hidden, hidden)


def lstm_chain(inputs: Sequence[Tensor], weights: Tensor, bias: Tensor,
               reverse: bool = False, h0: Tensor | None = None, c0: Tensor | None = None):
    """Run an LSTM over a sequence; outputs align with the input order."""
    seq = list(inputs)
    if not seq:
        raise ShapeError("lstm_chain needs a nonempty sequence")
    hidden = weights.shape[1] // 4
    if seq[0].ndim == 2:
        state_shape = (seq[0].shape[0], hidden)
    else:
        state_shape = (hidden,)
    h = h0 if h0 is not None else constant(np.zeros(state_shape))
    c = c0 if c0 is not None else constant(np.zeros(state_shape))
    outs = []
    for x in (reversed(seq) if reverse else seq):
        h, c = lstm_cell(x, h, c, weights, bias)
        outs.append(h)
    if reverse:
        outs.reverse()
    return outs


def bilstm_encode(inputs: Sequence[Tensor], layers) -> list[Tensor]:
    """Stacked bidirectional LSTM encoder.

    `layers` is a sequence of ((W_fwd, b_fwd), (W_bwd, b_bwd)) per layer.
    Each output is the concatenation of the forward and backward states at
    that position, so outputs are twice the hidden size wide.
    """
    seq = list(inputs)
    if not seq:
        raise ShapeError("bilstm_encode needs a nonempty sequence")
    for (w_f, b_f), (w_b, b_b) in layers:
        fwd = lstm_chain(seq, w_f, b_f)
        bwd = lstm_chain(seq, w_b, b_b, reverse=True)
        ax = fwd[0].ndim - 1
        seq = [concat([f, b], axis=ax) for f, b in zip(fwd, bwd)]
    return seq


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor, params: "ParamSet | None" = None) -> None:
    """Populate .grad with d(loss)/d(tensor) for every tensor reachable from
    `loss`. The recorded graph is freed afterwards; one backward per forward.

    When `params` is given, parameters the loss never touched end up with
    zero gradients instead of None.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        fn = node.backward_fn
        if fn is not None:
            fn(node.grad)
        node.parents = ()
        node.backward_fn = None
    if params is not None:
        for t in params.trainable():
            if t.grad is None:
                t.grad = np.zeros_like(t.values)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------


class ParamSet:
    """Uniquely named tensors: trainable parameters plus frozen tables."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = parameter(values)
        self._tensors[name] = t
        return t

    def add_frozen(self, name: str, values) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = constant(values)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        return sorted(self._tensors.items())

    def trainable_items(self):
        return [(n, t) for n, t in sorted(self._tensors.items()) if t.requires_grad]

    def trainable(self):
        return [t for _, t in self.trainable_items()]

    def clear_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self._tensors.items()}

    def load_values(self, mapping: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._tensors) - set(mapping))
        unexpected = sorted(set(mapping) - set(self._tensors))
        if missing or unexpected:
            raise CheckpointError(
                f"parameter names do not match: missing={missing} unexpected={unexpected}"
            )
        for name, vals in mapping.items():
            t = self._tensors[name]
            arr = np.asarray(vals, dtype=np.float64)
            if arr.shape != t.values.shape:
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {t.values.shape}")
            t.values[...] = arr


@dataclass
class AdamState:
    """Adam optimizer state; moment arrays are keyed by parameter name."""

    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One bias-corrected Adam update. Gradients are consumed and cleared;
    parameters never reached by the loss simply do not move."""
    named = params.trainable_items()
    if named and all(t.grad is None for _, t in named):
        raise RuntimeError("adam_step: no gradients present; run backward() first")
    state.step += 1
    corr1 = 1.0 - state.beta1 ** state.step
    corr2 = 1.0 - state.beta2 ** state.step
    for name, p in named:
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        m = state.first.setdefault(name, np.zeros_like(p.values))
        v = state.second.setdefault(name, np.zeros_like(p.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.grad = None


CHECKPOINT_MAGIC = b"PGRDCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParamSet) -> None:
    """Write all tensors (trainable and frozen) to the versioned container:
    magic, format version, then per tensor its name, rank, extents, and
    row-major little-endian float32 values. Entries are sorted by name."""
    entries = params.items()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, t in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            arr = t.values
            fh.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<I", ext))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint container back into a name -> float64 array map."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def read_u32():
        nonlocal pos
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        val = struct.unpack_from("<I", blob, pos)[0]
        pos += 4
        return val

    version = read_u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    count = read_u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = read_u32()
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        rank = read_u32()
        extents = tuple(read_u32() for _ in range(rank))
        n_vals = int(np.prod(extents)) if extents else 1
        end = pos + 4 * n_vals
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = np.frombuffer(blob[pos:end], dtype="<f4").astype(np.float64).reshape(extents)
        pos = end
        out[name] = vals
    return out
