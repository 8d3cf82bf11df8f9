"""Hand-tabulated scorer cases.

Every case uses the fixed four-sentence paragraph from helpers (token offsets
documented there). Expected values are integer tallies worked out by hand:
Task 1 cases carry (correct, asked) per category, Task 2 cases carry
(matched, predicted, gold) per tuple family, and violation cases carry
(predictions, violations).
"""

from helpers import make_instance, make_pred

# --- Task 1: (name, entities, gold rows, pred rows, {cat: (correct, asked)})
TASK1_CASES = [
    (
        "identity",
        ["water", "steam"],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        {"cat1": (6, 6), "cat2": (3, 3), "cat3": (4, 4)},
    ),
    (
        "move_step_off_by_one",
        ["water", "steam"],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "lake", "lake", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        {"cat1": (6, 6), "cat2": (2, 3), "cat3": (4, 4)},
    ),
    (
        # perfect booleans with every step number shifted by one
        "all_steps_off_by_one",
        ["water"],
        [["?", "lake", "lake", "-", "-"]],
        [["?", "?", "lake", "lake", "-"]],
        {"cat1": (3, 3), "cat2": (0, 2), "cat3": (3, 3)},
    ),
    (
        "missed_creation",
        ["steam"],
        [["-", "-", "-", "sky", "sky"]],
        [["-", "-", "-", "-", "-"]],
        {"cat1": (2, 3), "cat2": (0, 1), "cat3": (0, 1)},
    ),
    (
        # "the lake" normalizes to "lake"; "ocean" is simply wrong
        "article_stripping_and_wrong_location",
        ["water"],
        [["?", "lake", "sea", "sea", "sea"]],
        [["?", "the lake", "ocean", "ocean", "ocean"]],
        {"cat1": (3, 3), "cat2": (1, 1), "cat3": (1, 2)},
    ),
    (
        "late_first_move",
        ["water"],
        [["?", "lake", "lake", "lake", "lake"]],
        [["?", "?", "lake", "lake", "lake"]],
        {"cat1": (3, 3), "cat2": (0, 1), "cat3": (2, 2)},
    ),
    (
        "recreation_identity",
        ["water"],
        [["-", "lake", "-", "sea", "sea"]],
        [["-", "lake", "-", "sea", "sea"]],
        {"cat1": (3, 3), "cat2": (2, 2), "cat3": (2, 2)},
    ),
    (
        "recreation_partial",
        ["water"],
        [["-", "lake", "-", "sea", "sea"]],
        [["-", "lake", "-", "-", "-"]],
        {"cat1": (3, 3), "cat2": (1, 2), "cat3": (1, 2)},
    ),
    (
        "mixed_entities",
        ["water", "steam"],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "lake", "lake", "sea", "-"], ["-", "-", "-", "?", "?"]],
        {"cat1": (6, 6), "cat2": (2, 3), "cat3": (3, 4)},
    ),
    (
        # no gold events at all, so only the booleans are asked
        "spurious_creation",
        ["water"],
        [["?", "?", "?", "?", "?"]],
        [["-", "lake", "lake", "lake", "lake"]],
        {"cat1": (2, 3), "cat2": (0, 0), "cat3": (0, 0)},
    ),
    (
        "everything_missed",
        ["water"],
        [["-", "lake", "lake", "lake", "-"]],
        [["?", "?", "?", "?", "?"]],
        {"cat1": (1, 3), "cat2": (0, 2), "cat3": (0, 2)},
    ),
    (
        "wrong_move_destination",
        ["water"],
        [["?", "lake", "sea", "sea", "sea"]],
        [["?", "lake", "sky", "sky", "sky"]],
        {"cat1": (3, 3), "cat2": (1, 1), "cat3": (1, 2)},
    ),
]

# --- Task 2: (name, entities, gold rows, pred rows,
#              {family: (matched, n_pred, n_gold)})
TASK2_CASES = [
    (
        "identity",
        ["water", "steam"],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        {"inputs": (1, 1, 1), "outputs": (1, 1, 1), "conversions": (0, 0, 0),
         "moves": (2, 2, 2)},
    ),
    (
        "conversion_identity",
        ["water", "steam"],
        [["?", "?", "?", "-", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "?", "?", "-", "-"], ["-", "-", "-", "sky", "sky"]],
        {"inputs": (1, 1, 1), "outputs": (1, 1, 1), "conversions": (1, 1, 1),
         "moves": (0, 0, 0)},
    ),
    (
        # one of two gold moves found, nothing spurious: move recall 50
        "missing_move",
        ["water"],
        [["?", "lake", "sea", "sea", "sea"]],
        [["?", "lake", "lake", "lake", "lake"]],
        {"inputs": (0, 0, 0), "outputs": (0, 0, 0), "conversions": (0, 0, 0),
         "moves": (1, 1, 2)},
    ),
    (
        # empty predictions with nonempty gold: precision 0 by convention
        "empty_predictions",
        ["water"],
        [["?", "lake", "sea", "sea", "sea"]],
        [["?", "?", "?", "?", "?"]],
        {"inputs": (0, 0, 0), "outputs": (0, 0, 0), "conversions": (0, 0, 0),
         "moves": (0, 0, 2)},
    ),
    (
        "spurious_predictions_empty_gold",
        ["water"],
        [["?", "?", "?", "?", "?"]],
        [["?", "lake", "lake", "-", "-"]],
        {"inputs": (0, 1, 0), "outputs": (0, 0, 0), "conversions": (0, 0, 0),
         "moves": (0, 1, 0)},
    ),
    (
        "wrong_move_location",
        ["water"],
        [["?", "lake", "lake", "lake", "lake"]],
        [["?", "sea", "sea", "sea", "sea"]],
        {"inputs": (0, 0, 0), "outputs": (0, 0, 0), "conversions": (0, 0, 0),
         "moves": (0, 1, 1)},
    ),
    (
        # conversion missed because the predicted creation lands a step late
        "conversion_step_mismatch",
        ["water", "steam"],
        [["?", "?", "-", "-", "-"], ["-", "-", "sky", "sky", "sky"]],
        [["?", "?", "-", "-", "-"], ["-", "-", "-", "sky", "sky"]],
        {"inputs": (1, 1, 1), "outputs": (1, 1, 1), "conversions": (0, 0, 1),
         "moves": (0, 0, 0)},
    ),
    (
        # an entity that always existed is not an output even if it survives
        "outputs_require_creation",
        ["water"],
        [["?", "lake", "lake", "lake", "lake"]],
        [["-", "lake", "lake", "lake", "lake"]],
        {"inputs": (0, 0, 0), "outputs": (0, 1, 0), "conversions": (0, 0, 0),
         "moves": (0, 0, 1)},
    ),
]

# --- violations: (name, entities, gold rows, pred rows,
#                  (predictions, violations))
VIOLATION_CASES = [
    (
        # rule 1: moved at t=1 while gold existence is nowhere at t=0
        "move_before_existence",
        ["water"],
        [["-", "-", "sea", "sea", "sea"]],
        [["?", "lake", "lake", "lake", "lake"]],
        (1, 1),
    ),
    (
        # rule 2: created while gold says it already exists
        "create_while_existing",
        ["water"],
        [["?", "?", "?", "?", "?"]],
        [["-", "lake", "lake", "lake", "lake"]],
        (1, 1),
    ),
    (
        # rule 3: steam is first mentioned in sentence 3 (token 15), so a
        # predicted creation at step 2 precedes any mention
        "change_before_mention",
        ["steam"],
        [["-", "-", "-", "sky", "sky"]],
        [["-", "-", "sky", "sky", "sky"]],
        (1, 1),
    ),
    (
        "clean_predictions",
        ["water", "steam"],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        [["?", "lake", "sea", "sea", "-"], ["-", "-", "-", "sky", "sky"]],
        (4, 0),
    ),
    (
        # one event breaking two rules still counts once
        "double_rule_break_counts_once",
        ["steam"],
        [["-", "-", "-", "sky", "sky"]],
        [["?", "sea", "sea", "sea", "sea"]],
        (1, 1),
    ),
    (
        # three events, only the destruction faces a nowhere gold state
        "mixed_events_one_violation",
        ["water"],
        [["?", "?", "?", "-", "-"]],
        [["?", "lake", "sea", "sea", "-"]],
        (3, 1),
    ),
]


def build_case(name, entities, gold_rows, pred_rows):
    inst = make_instance(f"case-{name}", entities, gold_rows)
    pred = make_pred(f"case-{name}", entities, pred_rows)
    return pred, inst
