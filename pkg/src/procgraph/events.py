"""State views, state-change events, and the prediction dump format.

A state view is the comparable form of a grid cell: ("nowhere",),
("somewhere",), or ("span", normalized location text). Location text is
normalized case-insensitively with leading articles stripped, so "the leaf"
and "leaf" denote the same place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import LocationGrid, ProcessInstance, NOWHERE, SOMEWHERE, SPAN, tokenize

ARTICLES = ("the", "a", "an")

NOWHERE_VIEW = (NOWHERE,)
SOMEWHERE_VIEW = (SOMEWHERE,)

StateView = tuple


def normalize_location(text: str) -> str:
    toks = tokenize(text)
    while toks and toks[0] in ARTICLES:
        toks = toks[1:]
    return " ".join(toks)


def span_view(text: str) -> StateView:
    return (SPAN, normalize_location(text))


def gold_views(instance: ProcessInstance) -> list[list[StateView]]:
    """Rows of state views for an instance's gold grid."""
    rows = []
    for grid_row in instance.grid.rows:
        row = []
        for state in grid_row:
            if state.kind == NOWHERE:
                row.append(NOWHERE_VIEW)
            elif state.kind == SOMEWHERE:
                row.append(SOMEWHERE_VIEW)
            else:
                row.append(span_view(instance.span_text(state.start, state.end)))
        rows.append(row)
    return rows


@dataclass
class CellPrediction:
    """A predicted grid cell; probabilities and offsets are optional so cells
    read back from a dump file compare identically to in-memory ones."""

    class_name: str
    span_text: str = ""
    span: tuple[int, int] | None = None
    class_probs: np.ndarray | None = None

    def view(self) -> StateView:
        if self.class_name == NOWHERE:
            return NOWHERE_VIEW
        if self.class_name == SOMEWHERE:
            return SOMEWHERE_VIEW
        return (SPAN, normalize_location(self.span_text))


@dataclass
class PredictionGrid:
    """Model output for one process: N rows of T+1 predicted cells."""

    process_id: str
    entities: list[str]
    cells: list[list[CellPrediction]]

    @property
    def n_columns(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    def views(self) -> list[list[StateView]]:
        return [[cell.view() for cell in row] for row in self.cells]


@dataclass
class EntityEvents:
    """Create/destroy/move events for one entity, ordered by step."""

    entity: str
    creations: list[int] = field(default_factory=list)
    destructions: list[int] = field(default_factory=list)
    moves: list[tuple[int, StateView, StateView]] = field(default_factory=list)
    created_at: list[StateView] = field(default_factory=list)
    destroyed_from: list[StateView] = field(default_factory=list)
    start_state: StateView = NOWHERE_VIEW
    end_state: StateView = NOWHERE_VIEW

    @property
    def is_created(self) -> bool:
        return bool(self.creations)

    @property
    def is_destroyed(self) -> bool:
        return bool(self.destructions)

    @property
    def is_moved(self) -> bool:
        return bool(self.moves)

    def all_events(self):
        """(kind, step) for every state-change event."""
        out = [("create", s) for s in self.creations]
        out += [("destroy", s) for s in self.destructions]
        out += [("move", s) for s, _, _ in self.moves]
        return sorted(out, key=lambda kv: kv[1])


@dataclass
class EventSet:
    process_id: str
    per_entity: dict[str, EntityEvents]


def events_from_views(rows: list[list[StateView]], entities: list[str],
                      process_id: str = "") -> EventSet:
    """Scan each row left to right: a creation enters from nowhere, a
    destruction returns to nowhere, and a move is a change between two
    existing states (somewhere or distinct spans)."""
    per_entity = {}
    for name, row in zip(entities, rows):
        ev = EntityEvents(entity=name, start_state=row[0], end_state=row[-1])
        for step in range(1, len(row)):
            prev, cur = row[step - 1], row[step]
            if prev == NOWHERE_VIEW and cur != NOWHERE_VIEW:
                ev.creations.append(step)
                ev.created_at.append(cur)
            elif prev != NOWHERE_VIEW and cur == NOWHERE_VIEW:
                ev.destructions.append(step)
                ev.destroyed_from.append(prev)
            elif prev != NOWHERE_VIEW and cur != NOWHERE_VIEW and prev != cur:
                ev.moves.append((step, prev, cur))
        per_entity[name] = ev
    return EventSet(process_id=process_id, per_entity=per_entity)


def derive_events(grid, instance: ProcessInstance | None = None) -> EventSet:
    """Events from a PredictionGrid, or from a LocationGrid given its instance."""
    if isinstance(grid, PredictionGrid):
        return events_from_views(grid.views(), grid.entities, grid.process_id)
    if isinstance(grid, LocationGrid):
        if instance is None:
            raise ValueError("derive_events on a LocationGrid needs its ProcessInstance")
        return events_from_views(gold_views(instance), instance.entities, instance.id)
    raise TypeError(f"cannot derive events from {type(grid).__name__}")


# ---------------------------------------------------------------------------
# prediction dump (TSV)
# ---------------------------------------------------------------------------

TSV_HEADER = ["process_id", "step", "entity", "class", "span_text"]


def write_predictions_tsv(path, grids: list[PredictionGrid]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TSV_HEADER)
        for grid in grids:
            for name, row in zip(grid.entities, grid.cells):
                for step, cell in enumerate(row):
                    writer.writerow([grid.process_id, step, name, cell.class_name, cell.span_text])


def read_predictions_tsv(path) -> list[PredictionGrid]:
    rows_by_process: dict[str, dict[str, dict[int, CellPrediction]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != TSV_HEADER:
            raise ValueError(f"{path}: bad prediction dump header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            pid, step_s, entity, class_name, span_text = row
            if class_name not in (NOWHERE, SOMEWHERE, SPAN):
                raise ValueError(f"{path}:{lineno}: unknown class {class_name!r}")
            if pid not in rows_by_process:
                rows_by_process[pid] = {}
                order.append(pid)
            cells = rows_by_process[pid].setdefault(entity, {})
            cells[int(step_s)] = CellPrediction(class_name=class_name, span_text=span_text)
    grids = []
    for pid in order:
        entities = list(rows_by_process[pid])
        cell_rows = []
        for name in entities:
            by_step = rows_by_process[pid][name]
            steps = sorted(by_step)
            if steps != list(range(len(steps))):
                raise ValueError(f"{path}: {pid}/{name}: steps are not contiguous from 0")
            cell_rows.append([by_step[s] for s in steps])
        if len({len(r) for r in cell_rows}) != 1:
            raise ValueError(f"{path}: {pid}: entities disagree on step count")
        grids.append(PredictionGrid(process_id=pid, entities=entities, cells=cell_rows))
    return grids
