"""Procedural-text corpus handling.

Covers the canonical JSONL interchange format (one annotated process per
line), entity mention search by token matching, a deterministic synthetic
corpus generator for desk-scale training, and frozen word-embedding tables.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

NOWHERE = "nowhere"
SOMEWHERE = "somewhere"
SPAN = "span"

UNK_TOKEN = "<unk>"
_UNK_SEED = 0x5EED


class CorpusError(ValueError):
    """A corpus record is malformed or violates grid/sentence invariants."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split off punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class LocationState:
    """One grid cell: a text span (inclusive token offsets), nowhere, or somewhere."""

    kind: str
    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        if self.kind not in (NOWHERE, SOMEWHERE, SPAN):
            raise CorpusError(f"unknown location state kind: {self.kind!r}")
        has_span = self.start is not None and self.end is not None
        if (self.kind == SPAN) != has_span:
            raise CorpusError(f"span offsets present iff kind is span, got {self}")
        if has_span and not 0 <= self.start <= self.end:
            raise CorpusError(f"bad span offsets ({self.start}, {self.end})")

    @classmethod
    def nowhere(cls) -> "LocationState":
        return cls(NOWHERE)

    @classmethod
    def somewhere(cls) -> "LocationState":
        return cls(SOMEWHERE)

    @classmethod
    def span(cls, start: int, end: int) -> "LocationState":
        return cls(SPAN, start, end)


@dataclass
class LocationGrid:
    """N entity rows by (T+1) step columns; column 0 is the pre-process state."""

    rows: list[list[LocationState]]

    @property
    def n_entities(self) -> int:
        return len(self.rows)

    @property
    def n_columns(self) -> int:
        return len(self.rows[0]) if self.rows else 0


@dataclass
class ProcessInstance:
    """One annotated process: tokenized sentences, tracked entities with their
    mention offsets, and the gold location grid."""

    id: str
    sentences: list[list[str]]
    entities: list[str]
    grid: LocationGrid
    tokens: list[str] = field(init=False)
    sentence_bounds: list[tuple[int, int]] = field(init=False)
    mentions: list[list[tuple[int, int]]] = field(init=False)

    def __post_init__(self):
        self.tokens = [tok for sent in self.sentences for tok in sent]
        bounds, pos = [], 0
        for sent in self.sentences:
            bounds.append((pos, pos + len(sent)))
            pos += len(sent)
        self.sentence_bounds = bounds
        self.mentions = [find_entity_mentions(self.tokens, name) for name in self.entities]

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def span_text(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end + 1])


def validate_instance(inst: ProcessInstance) -> None:
    """Raise CorpusError unless the instance satisfies every invariant."""
    rid = inst.id
    if inst.n_entities < 1:
        raise CorpusError(f"{rid}: record has zero entities")
    if inst.n_sentences < 1:
        raise CorpusError(f"{rid}: record has zero sentences")
    if any(len(sent) == 0 for sent in inst.sentences):
        raise CorpusError(f"{rid}: empty sentence")
    n_tokens = len(inst.tokens)
    if inst.grid.n_entities != inst.n_entities:
        raise CorpusError(
            f"{rid}: grid has {inst.grid.n_entities} rows for {inst.n_entities} entities"
        )
    expected_cols = inst.n_sentences + 1
    for row in inst.grid.rows:
        if len(row) != expected_cols:
            raise CorpusError(f"{rid}: grid row has {len(row)} columns, expected {expected_cols}")
        for state in row:
            if state.kind == SPAN and state.end >= n_tokens:
                raise CorpusError(f"{rid}: span ({state.start}, {state.end}) outside {n_tokens} tokens")
    for name in inst.entities:
        if not tokenize(name):
            raise CorpusError(f"{rid}: empty entity name")


def find_entity_mentions(tokens: list[str], entity_name: str) -> list[tuple[int, int]]:
    """All non-overlapping left-to-right case-insensitive token-sequence
    matches of (possibly multi-word) `entity_name`; offsets are inclusive."""
    needle = tokenize(entity_name)
    if not needle:
        raise ValueError("empty entity name")
    hay = [t.lower() for t in tokens]
    out, j = [], 0
    while j + len(needle) <= len(hay):
        if hay[j:j + len(needle)] == needle:
            out.append((j, j + len(needle) - 1))
            j += len(needle)
        else:
            j += 1
    return out


# ---------------------------------------------------------------------------
# JSONL interchange
# ---------------------------------------------------------------------------


def _parse_state(raw: str, rid: str) -> LocationState:
    if raw == "-":
        return LocationState.nowhere()
    if raw == "?":
        return LocationState.somewhere()
    if "@" not in raw:
        raise CorpusError(f"{rid}: bad state {raw!r} (expected '-', '?', or 'text@start:end')")
    _, _, offsets = raw.rpartition("@")
    try:
        start_s, end_s = offsets.split(":")
        start, end = int(start_s), int(end_s)
    except ValueError:
        raise CorpusError(f"{rid}: bad span offsets in state {raw!r}") from None
    if start < 0 or end < start:
        raise CorpusError(f"{rid}: bad span offsets in state {raw!r}")
    return LocationState.span(start, end)


def _format_state(state: LocationState, tokens: list[str]) -> str:
    if state.kind == NOWHERE:
        return "-"
    if state.kind == SOMEWHERE:
        return "?"
    text = " ".join(tokens[state.start:state.end + 1])
    return f"{text}@{state.start}:{state.end}"


def instance_from_record(record: dict, rid: str) -> ProcessInstance:
    try:
        sentences = [[str(tok).lower() for tok in sent] for sent in record["sentences"]]
        entities = [str(e) for e in record["entities"]]
        grid_raw = record["grid"]
        rid = str(record["id"])
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{rid}: missing or malformed field ({exc})") from None
    rows = [[_parse_state(str(cell), rid) for cell in row] for row in grid_raw]
    inst = ProcessInstance(id=rid, sentences=sentences, entities=entities, grid=LocationGrid(rows))
    validate_instance(inst)
    return inst


def instance_to_record(inst: ProcessInstance) -> dict:
    return {
        "id": inst.id,
        "sentences": inst.sentences,
        "entities": inst.entities,
        "grid": [[_format_state(s, inst.tokens) for s in row] for row in inst.grid.rows],
    }


def parse_corpus(path) -> list[ProcessInstance]:
    """Read a JSONL corpus; returns instances sorted by id."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: not valid JSON ({exc})") from None
            out.append(instance_from_record(record, rid=f"{path}:{lineno}"))
    out.sort(key=lambda inst: inst.id)
    return out


def write_corpus(instances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst)) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

ENTITY_POOL = [
    "water", "light", "heat", "gas", "blood", "seed", "magma", "oxygen",
    "pollen", "lava", "snow", "carbon dioxide",
]
LOCATION_POOL = [
    "leaf", "soil", "ocean", "cloud", "oven", "heart", "lungs", "volcano",
    "ground", "pot", "rain cloud", "river bed",
]
_CREATE_TEMPLATES = ["the {e} forms in the {l} .", "the {e} appears in the {l} ."]
_MOVE_TEMPLATES = [
    "the {e} moves to the {l} .",
    "the {e} travels to the {l} .",
    "the {e} goes to the {l} .",
]
_STATE_TEMPLATES = ["the {e} is in the {l} ."]
_DESTROY_TEMPLATES = ["the {e} is destroyed .", "the {e} disappears ."]
_FILLER_SENTENCES = ["time passes .", "the process continues ."]


def _find_sub(haystack: list[str], needle: list[str]) -> int:
    for j in range(len(haystack) - len(needle), -1, -1):
        if haystack[j:j + len(needle)] == needle:
            return j
    raise RuntimeError(f"{needle} not found in {haystack}")


def _gen_process(rng: np.random.Generator, pid: str, max_entities: int, max_sentences: int):
    n = int(rng.integers(2, max_entities + 1))
    entity_idx = rng.choice(len(ENTITY_POOL), size=n, replace=False)
    entities = [ENTITY_POOL[int(i)] for i in entity_idx]
    n_sent = int(rng.integers(3, max_sentences + 1))

    created_later = [bool(rng.random() < 0.45) for _ in range(n)]
    if all(created_later):
        created_later[0] = False
    # cap planned creations so every one fits in the sentence budget
    while sum(created_later) > n_sent - 1:
        created_later[created_later.index(True)] = False

    col0 = [LocationState.nowhere() if created_later[i] else LocationState.somewhere()
            for i in range(n)]
    alive = [not created_later[i] for i in range(n)]
    destroyed = [False] * n

    sentences: list[list[str]] = []
    columns: list[list[LocationState]] = [col0]
    token_base = 0

    def emit(template: str, ent: str | None, loc: str | None):
        text = template.format(e=ent, l=loc) if ent else template
        toks = tokenize(text)
        sentences.append(toks)
        span = None
        if loc is not None:
            loc_toks = tokenize(loc)
            j = _find_sub(toks, loc_toks)
            span = (token_base + j, token_base + j + len(loc_toks) - 1)
        return toks, span

    for t in range(1, n_sent + 1):
        pending = [i for i in range(n) if created_later[i] and not alive[i]]
        remaining = n_sent - t + 1
        live = [i for i in range(n) if alive[i] and not destroyed[i]]
        new_col = list(columns[-1])

        if pending and len(pending) >= remaining:
            action, who = "create", int(pending[int(rng.integers(len(pending)))])
        else:
            choices, weights = [], []
            for i in pending:
                choices.append(("create", i))
                weights.append(2.0)
            for i in live:
                choices.append(("move", i))
                weights.append(1.5)
                if columns[-1][i].kind == SOMEWHERE:
                    choices.append(("state", i))
                    weights.append(1.5)
                if t > 1 and len(live) > 1:
                    choices.append(("destroy", i))
                    weights.append(0.6)
            choices.append(("filler", -1))
            weights.append(0.5 if choices[:-1] else 5.0)
            w = np.asarray(weights) / np.sum(weights)
            action, who = choices[int(rng.choice(len(choices), p=w))]

        if action == "create":
            loc = LOCATION_POOL[int(rng.integers(len(LOCATION_POOL)))]
            tmpl = _CREATE_TEMPLATES[int(rng.integers(len(_CREATE_TEMPLATES)))]
            toks, span = emit(tmpl, entities[who], loc)
            new_col[who] = LocationState.span(*span)
            alive[who] = True
        elif action in ("move", "state"):
            loc = LOCATION_POOL[int(rng.integers(len(LOCATION_POOL)))]
            pool = _MOVE_TEMPLATES if action == "move" else _STATE_TEMPLATES
            tmpl = pool[int(rng.integers(len(pool)))]
            toks, span = emit(tmpl, entities[who], loc)
            new_col[who] = LocationState.span(*span)
        elif action == "destroy":
            tmpl = _DESTROY_TEMPLATES[int(rng.integers(len(_DESTROY_TEMPLATES)))]
            toks, _ = emit(tmpl, entities[who], None)
            new_col[who] = LocationState.nowhere()
            destroyed[who] = True
        else:
            toks, _ = emit(_FILLER_SENTENCES[int(rng.integers(len(_FILLER_SENTENCES)))], None, None)

        token_base += len(toks)
        columns.append(new_col)

    rows = [[columns[c][i] for c in range(n_sent + 1)] for i in range(n)]
    return ProcessInstance(id=pid, sentences=sentences, entities=entities, grid=LocationGrid(rows))


def synth_corpus(seed: int, n_processes: int, max_entities: int = 3,
                 max_sentences: int = 5) -> list[ProcessInstance]:
    """Deterministic templated processes with internally consistent gold grids:
    entities are nowhere before creation and after destruction, and no state
    changes before the entity is mentioned."""
    if n_processes < 0:
        raise ValueError(f"n_processes must be >= 0, got {n_processes}")
    rng = np.random.default_rng(seed)
    out: list[ProcessInstance] = []
    seen_openers: set[tuple[str, ...]] = set()
    for k in range(n_processes):
        pid = f"synth-{seed}-{k:04d}"
        inst = _gen_process(rng, pid, max_entities, max_sentences)
        for _ in range(50):
            opener = tuple(inst.sentences[0])
            if opener not in seen_openers:
                break
            inst = _gen_process(rng, pid, max_entities, max_sentences)
        seen_openers.add(tuple(inst.sentences[0]))
        validate_instance(inst)
        out.append(inst)
    return out


# ---------------------------------------------------------------------------
# word embeddings
# ---------------------------------------------------------------------------


def _word_stream_seed(word: str) -> int:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _f32(arr: np.ndarray) -> np.ndarray:
    # keep values exactly float32-representable so checkpoints round-trip
    return arr.astype(np.float32).astype(np.float64)


@dataclass
class EmbeddingTable:
    """Frozen word -> vector table; unknown words share one fixed vector."""

    words: list[str]
    matrix: np.ndarray
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if UNK_TOKEN not in self.index:
            raise ValueError("embedding table is missing the unknown-word vector")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, word: str) -> np.ndarray:
        return self.matrix[self.index.get(word.lower(), self.index[UNK_TOKEN])]

    def mean_vector(self, words) -> np.ndarray:
        rows = [self.lookup(w) for w in words]
        if not rows:
            return self.matrix[self.index[UNK_TOKEN]].copy()
        return np.mean(rows, axis=0)

    def oov_rate(self, words) -> float:
        words = list(words)
        if not words:
            return 0.0
        known = sum(1 for w in words if w.lower() in self.index)
        return 1.0 - known / len(words)

    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()

    @classmethod
    def random(cls, vocab, dim: int, seed: int) -> "EmbeddingTable":
        """Per-word vectors drawn from a stream keyed by (seed, word), so the
        table is reproducible from the vocabulary alone."""
        words = sorted({w.lower() for w in vocab})
        scale = 1.0 / np.sqrt(dim)
        rows = []
        for w in words:
            rng = np.random.default_rng([seed, _word_stream_seed(w)])
            rows.append(rng.uniform(-scale, scale, size=dim))
        unk_rng = np.random.default_rng([seed, _UNK_SEED])
        rows.append(unk_rng.uniform(-scale, scale, size=dim))
        words.append(UNK_TOKEN)
        return cls(words=words, matrix=_f32(np.asarray(rows)))

    @classmethod
    def from_file(cls, path, vocab=None) -> "EmbeddingTable":
        """Load a plain-text table, one "word v1 ... vk" row per line. When a
        vocabulary is given only those words are kept."""
        keep = {w.lower() for w in vocab} if vocab is not None else None
        words, rows = [], []
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                word, vals = parts[0].lower(), parts[1:]
                if dim is None:
                    dim = len(vals)
                    if dim == 0:
                        raise ValueError(f"{path}:{lineno}: row has no vector values")
                elif len(vals) != dim:
                    raise ValueError(
                        f"{path}:{lineno}: inconsistent vector width {len(vals)} (expected {dim})"
                    )
                if keep is not None and word not in keep:
                    continue
                if word in (UNK_TOKEN,) or word in set(words):
                    continue
                words.append(word)
                rows.append([float(v) for v in vals])
        if dim is None:
            raise ValueError(f"{path}: empty embedding file")
        unk_rng = np.random.default_rng(_UNK_SEED)
        unk = unk_rng.uniform(-1.0 / np.sqrt(dim), 1.0 / np.sqrt(dim), size=dim)
        matrix = np.asarray(rows + [unk]) if rows else unk.reshape(1, -1)
        words.append(UNK_TOKEN)
        return cls(words=words, matrix=_f32(matrix))


def corpus_vocab(instances) -> list[str]:
    """Sorted vocabulary over paragraph tokens, entity names, and the
    question template words."""
    vocab = {"where", "is", "located", "?"}
    for inst in instances:
        vocab.update(inst.tokens)
        for name in inst.entities:
            vocab.update(tokenize(name))
    return sorted(vocab)
