"""Scoring protocols over (predicted grid, gold grid) pairs.

Task 1 asks ten questions per (process, entity): three booleans (is the
entity created / destroyed / moved), three step numbers (when), and four
locations (where created, where destroyed from, where moved from, where moved
to). Task 2 scores precision/recall/F1 over four tuple families derived from
whole-process events: inputs, outputs, conversions, and moves. The violation
counter checks predicted state changes against three commonsense rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import ProcessInstance, NOWHERE
from .events import (
    EntityEvents,
    EventSet,
    NOWHERE_VIEW,
    PredictionGrid,
    derive_events,
    events_from_views,
    gold_views,
)

CAT1_QUESTIONS = ("cat1_created", "cat1_destroyed", "cat1_moved")
CAT2_QUESTIONS = ("cat2_created", "cat2_destroyed", "cat2_moved")
CAT3_QUESTIONS = ("cat3_created", "cat3_destroyed", "cat3_moved_from", "cat3_moved_to")
ALL_QUESTIONS = CAT1_QUESTIONS + CAT2_QUESTIONS + CAT3_QUESTIONS

TUPLE_FAMILIES = ("inputs", "outputs", "conversions", "moves")


def _align(pred_grids: list[PredictionGrid], instances: list[ProcessInstance]):
    """Pair predictions with gold instances by process id."""
    by_id = {g.process_id: g for g in pred_grids}
    if len(by_id) != len(pred_grids):
        raise ValueError("duplicate process ids in predictions")
    pred_ids, gold_ids = set(by_id), {inst.id for inst in instances}
    if pred_ids != gold_ids:
        raise ValueError(
            f"prediction/gold id mismatch: only-pred={sorted(pred_ids - gold_ids)} "
            f"only-gold={sorted(gold_ids - pred_ids)}"
        )
    pairs = []
    for inst in sorted(instances, key=lambda i: i.id):
        grid = by_id[inst.id]
        if set(grid.entities) != set(inst.entities):
            raise ValueError(f"{inst.id}: predicted entities do not match gold entities")
        if grid.n_columns != inst.n_sentences + 1:
            raise ValueError(
                f"{inst.id}: prediction has {grid.n_columns} columns, "
                f"expected {inst.n_sentences + 1}"
            )
        pairs.append((grid, inst))
    return pairs


# ---------------------------------------------------------------------------
# Task 1: sentence-level questions
# ---------------------------------------------------------------------------


@dataclass
class Task1Report:
    cat1: float
    cat2: float
    cat3: float
    macro: float
    micro: float
    per_question: dict[str, float]
    asked: dict[str, int]
    correct: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "cat1": self.cat1, "cat2": self.cat2, "cat3": self.cat3,
            "macro": self.macro, "micro": self.micro,
            "per_question": self.per_question,
            "asked": self.asked, "correct": self.correct,
        }

    def format_table(self) -> str:
        lines = [
            f"{'Cat 1':>10} {'Cat 2':>10} {'Cat 3':>10} {'Macro':>10} {'Micro':>10}",
            f"{self.cat1:>10.2f} {self.cat2:>10.2f} {self.cat3:>10.2f} "
            f"{self.macro:>10.2f} {self.micro:>10.2f}",
            "",
        ]
        for q in ALL_QUESTIONS:
            lines.append(f"  {q:<18} {self.per_question[q]:>7.2f}  "
                         f"({self.correct[q]}/{self.asked[q]})")
        return "\n".join(lines)


def _question_outcomes(pred: EntityEvents, gold: EntityEvents):
    """(question, asked, correct) triples for one entity pair. Step and
    location questions are asked only when the gold boolean is true and use
    exact list matches."""
    out = [
        ("cat1_created", True, pred.is_created == gold.is_created),
        ("cat1_destroyed", True, pred.is_destroyed == gold.is_destroyed),
        ("cat1_moved", True, pred.is_moved == gold.is_moved),
        ("cat2_created", gold.is_created, pred.creations == gold.creations),
        ("cat2_destroyed", gold.is_destroyed, pred.destructions == gold.destructions),
        ("cat2_moved", gold.is_moved,
         [m[0] for m in pred.moves] == [m[0] for m in gold.moves]),
        ("cat3_created", gold.is_created, pred.created_at == gold.created_at),
        ("cat3_destroyed", gold.is_destroyed, pred.destroyed_from == gold.destroyed_from),
        ("cat3_moved_from", gold.is_moved,
         [m[1] for m in pred.moves] == [m[1] for m in gold.moves]),
        ("cat3_moved_to", gold.is_moved,
         [m[2] for m in pred.moves] == [m[2] for m in gold.moves]),
    ]
    return [(q, asked, asked and correct) for q, asked, correct in out]


def _ratio(correct: int, asked: int) -> float:
    # vacuously perfect when nothing was asked
    return 100.0 * correct / asked if asked else 100.0


def score_task1(pred_grids: list[PredictionGrid],
                instances: list[ProcessInstance]) -> Task1Report:
    asked = {q: 0 for q in ALL_QUESTIONS}
    correct = {q: 0 for q in ALL_QUESTIONS}
    for grid, inst in _align(pred_grids, instances):
        pred_events = derive_events(grid)
        gold_events = events_from_views(gold_views(inst), inst.entities, inst.id)
        for name in inst.entities:
            for q, was_asked, ok in _question_outcomes(pred_events.per_entity[name],
                                                       gold_events.per_entity[name]):
                if was_asked:
                    asked[q] += 1
                    correct[q] += int(ok)
    cat_scores = {}
    for cat, questions in (("cat1", CAT1_QUESTIONS), ("cat2", CAT2_QUESTIONS),
                           ("cat3", CAT3_QUESTIONS)):
        cat_scores[cat] = _ratio(sum(correct[q] for q in questions),
                                 sum(asked[q] for q in questions))
    total_asked = sum(asked.values())
    total_correct = sum(correct.values())
    return Task1Report(
        cat1=cat_scores["cat1"], cat2=cat_scores["cat2"], cat3=cat_scores["cat3"],
        macro=(cat_scores["cat1"] + cat_scores["cat2"] + cat_scores["cat3"]) / 3.0,
        micro=_ratio(total_correct, total_asked),
        per_question={q: _ratio(correct[q], asked[q]) for q in ALL_QUESTIONS},
        asked=asked, correct=correct,
    )


# ---------------------------------------------------------------------------
# Task 2: document-level tuples
# ---------------------------------------------------------------------------


@dataclass
class FamilyCounts:
    matched: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.n_gold if self.n_gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class Task2Report:
    precision: float
    recall: float
    f1: float
    families: dict[str, FamilyCounts]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "families": {
                name: {
                    "matched": c.matched, "predicted": c.n_pred, "gold": c.n_gold,
                    "precision": c.precision, "recall": c.recall, "f1": c.f1,
                }
                for name, c in self.families.items()
            },
        }

    def format_table(self) -> str:
        lines = [
            f"{'family':<14} {'P':>8} {'R':>8} {'F1':>8} {'pred':>6} {'gold':>6}",
        ]
        for name in TUPLE_FAMILIES:
            c = self.families[name]
            lines.append(f"{name:<14} {c.precision:>8.2f} {c.recall:>8.2f} {c.f1:>8.2f} "
                         f"{c.n_pred:>6} {c.n_gold:>6}")
        lines.append(f"{'overall':<14} {self.precision:>8.2f} {self.recall:>8.2f} "
                     f"{self.f1:>8.2f}")
        return "\n".join(lines)


def _tuple_families(events: EventSet) -> dict[str, set]:
    """Inputs exist at the start but not at the end; outputs exist at the end
    and were created; conversions pair the entities created and destroyed at
    one step; moves carry (entity, step, from, to)."""
    pid = events.process_id
    inputs, outputs, moves = set(), set(), set()
    created_at_step: dict[int, set[str]] = {}
    destroyed_at_step: dict[int, set[str]] = {}
    for name, ev in events.per_entity.items():
        if ev.start_state != NOWHERE_VIEW and ev.end_state == NOWHERE_VIEW:
            inputs.add((pid, name))
        if ev.end_state != NOWHERE_VIEW and ev.is_created:
            outputs.add((pid, name))
        for step, src, dst in ev.moves:
            moves.add((pid, name, step, src, dst))
        for step in ev.creations:
            created_at_step.setdefault(step, set()).add(name)
        for step in ev.destructions:
            destroyed_at_step.setdefault(step, set()).add(name)
    conversions = {
        (pid, step, frozenset(created_at_step[step]), frozenset(destroyed_at_step[step]))
        for step in created_at_step
        if step in destroyed_at_step
    }
    return {"inputs": inputs, "outputs": outputs, "conversions": conversions, "moves": moves}


def score_task2(pred_grids: list[PredictionGrid],
                instances: list[ProcessInstance]) -> Task2Report:
    families = {name: FamilyCounts() for name in TUPLE_FAMILIES}
    for grid, inst in _align(pred_grids, instances):
        pred = _tuple_families(derive_events(grid))
        gold = _tuple_families(events_from_views(gold_views(inst), inst.entities, inst.id))
        for name in TUPLE_FAMILIES:
            counts = families[name]
            counts.matched += len(pred[name] & gold[name])
            counts.n_pred += len(pred[name])
            counts.n_gold += len(gold[name])
    overall = FamilyCounts(
        matched=sum(c.matched for c in families.values()),
        n_pred=sum(c.n_pred for c in families.values()),
        n_gold=sum(c.n_gold for c in families.values()),
    )
    return Task2Report(precision=overall.precision, recall=overall.recall, f1=overall.f1,
                       families=families)


# ---------------------------------------------------------------------------
# commonsense violation counting
# ---------------------------------------------------------------------------


@dataclass
class ViolationReport:
    predictions: int
    violations: int

    @property
    def proportion(self) -> float:
        return 100.0 * self.violations / self.predictions if self.predictions else 0.0

    def to_dict(self) -> dict:
        return {
            "state_change_predictions": self.predictions,
            "violations": self.violations,
            "violation_proportion": self.proportion,
        }

    def format_table(self) -> str:
        return (f"{'State Change Predictions':>26} {'Violations':>12} {'Proportion %':>14}\n"
                f"{self.predictions:>26} {self.violations:>12} {self.proportion:>14.2f}")


def count_violations(pred_grids: list[PredictionGrid],
                     instances: list[ProcessInstance]) -> ViolationReport:
    """Count predicted state changes that break a commonsense rule: the entity
    did not exist (per gold) before being moved or destroyed, the entity
    already existed (per gold) when created, or the entity had not yet been
    mentioned in the paragraph by the step of the change. Each event counts at
    most once."""
    predictions = 0
    violations = 0
    for grid, inst in _align(pred_grids, instances):
        pred_events = derive_events(grid)
        gold_rows = {name: row for name, row in zip(inst.entities, gold_views(inst))}
        first_mention = {
            name: (min(s for s, _ in spans) if spans else None)
            for name, spans in zip(inst.entities, inst.mentions)
        }
        for name, ev in pred_events.per_entity.items():
            gold_row = gold_rows[name]
            for kind, step in ev.all_events():
                predictions += 1
                existed_before = gold_row[step - 1] != NOWHERE_VIEW
                broken = False
                if kind in ("move", "destroy") and not existed_before:
                    broken = True
                if kind == "create" and existed_before:
                    broken = True
                mention = first_mention[name]
                sentence_end = inst.sentence_bounds[step - 1][1]
                if mention is None or mention >= sentence_end:
                    broken = True
                violations += int(broken)
    return ViolationReport(predictions=predictions, violations=violations)
