"""Corpus parsing, mention search, synthesis, and embedding tables."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from procgraph.corpus import (
    CorpusError,
    EmbeddingTable,
    LocationGrid,
    LocationState,
    ProcessInstance,
    corpus_vocab,
    find_entity_mentions,
    instance_from_record,
    parse_corpus,
    synth_corpus,
    tokenize,
    write_corpus,
)
from procgraph.evaluation import count_violations
from procgraph.events import gold_views, events_from_views
from helpers import make_instance

PROPARA_TRAIN = os.environ.get("PROPARA_TRAIN", "")


def _mini_record(rid="p1"):
    return {
        "id": rid,
        "sentences": [["the", "water", "moves", "."], ["the", "water", "is", "destroyed", "."]],
        "entities": ["water"],
        "grid": [["?", "somewhere@1:1", "-"]],
    }


class TestParsing:
    def test_round_trip(self, tmp_path):
        record = _mini_record()
        record["grid"] = [["?", "water@1:1", "-"]]
        path = tmp_path / "corpus.jsonl"
        path.write_text(json.dumps(record) + "\n")
        parsed = parse_corpus(path)
        assert len(parsed) == 1
        out = tmp_path / "again.jsonl"
        write_corpus(parsed, out)
        reparsed = parse_corpus(out)
        assert reparsed[0].id == parsed[0].id
        assert reparsed[0].sentences == parsed[0].sentences
        assert reparsed[0].grid == parsed[0].grid

    def test_parse_is_idempotent(self, tmp_path):
        corpus = synth_corpus(5, 4)
        first = tmp_path / "first.jsonl"
        write_corpus(corpus, first)
        once = parse_corpus(first)
        second = tmp_path / "second.jsonl"
        write_corpus(once, second)
        twice = parse_corpus(second)
        assert [i.grid for i in once] == [i.grid for i in twice]
        assert [i.sentences for i in once] == [i.sentences for i in twice]

    def test_zero_entities_rejected(self):
        record = _mini_record()
        record["entities"] = []
        record["grid"] = []
        with pytest.raises(CorpusError, match="zero entities"):
            instance_from_record(record, "x")

    def test_grid_dimension_mismatch_rejected(self):
        record = _mini_record()
        record["grid"] = [["?", "-"]]
        with pytest.raises(CorpusError, match="columns"):
            instance_from_record(record, "x")

    def test_span_outside_tokens_rejected(self):
        record = _mini_record()
        record["grid"] = [["?", "x@50:51", "-"]]
        with pytest.raises(CorpusError, match="outside"):
            instance_from_record(record, "x")

    def test_malformed_state_names_record(self):
        record = _mini_record(rid="proc-7")
        record["grid"] = [["?", "@@bogus", "-"]]
        with pytest.raises(CorpusError, match="proc-7"):
            instance_from_record(record, "proc-7")

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"}\nnot json\n')
        with pytest.raises(CorpusError, match="2"):
            parse_corpus(path)

    def test_ordering_is_stable_by_id(self, tmp_path):
        records = [_mini_record("b"), _mini_record("a"), _mini_record("c")]
        path = tmp_path / "corpus.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        assert [i.id for i in parse_corpus(path)] == ["a", "b", "c"]

    @pytest.mark.skipif(not Path(PROPARA_TRAIN or "missing").exists(),
                        reason="official train split not supplied (set PROPARA_TRAIN)")
    def test_propara_train_statistics(self):
        corpus = parse_corpus(PROPARA_TRAIN)
        assert len(corpus) == 391
        mean_entities = sum(i.n_entities for i in corpus) / len(corpus)
        assert mean_entities == pytest.approx(4.17, abs=0.05)


class TestMentions:
    def test_absent_entity_gives_empty_list(self):
        assert find_entity_mentions(["ice", "melts"], "water") == []

    def test_single_token_match(self):
        assert find_entity_mentions(["water", "falls", "down"], "water") == [(0, 0)]

    def test_multiword_matches_linear_scan_oracle(self):
        tokens = tokenize("place the dish in the electric oven . the electric oven heats .")
        found = find_entity_mentions(tokens, "electric oven")

        needle = ["electric", "oven"]
        oracle, j = [], 0
        while j + 2 <= len(tokens):
            if tokens[j:j + 2] == needle:
                oracle.append((j, j + 1))
                j += 2
            else:
                j += 1
        assert found == oracle
        assert len(found) == 2

    def test_case_insensitive(self):
        assert find_entity_mentions(["Water", "flows"], "WATER") == [(0, 0)]

    def test_non_overlapping_left_to_right(self):
        assert find_entity_mentions(["a", "a", "a"], "a a") == [(0, 1)]

    def test_empty_name_rejected(self):
        with pytest.raises(ValueError):
            find_entity_mentions(["x"], "  ")

    def test_offsets_reproduce_entity_string(self):
        for inst in synth_corpus(11, 6):
            for name, mentions in zip(inst.entities, inst.mentions):
                for start, end in mentions:
                    assert " ".join(inst.tokens[start:end + 1]) == name.lower()


class TestSynthCorpus:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_corpus(synth_corpus(42, 10), a)
        write_corpus(synth_corpus(42, 10), b)
        assert a.read_bytes() == b.read_bytes()

    def test_zero_processes(self):
        assert synth_corpus(1, 0) == []

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            synth_corpus(1, -1)

    def test_size_limits_respected(self):
        for inst in synth_corpus(2, 15, max_entities=4, max_sentences=6):
            assert 2 <= inst.n_entities <= 4
            assert 3 <= inst.n_sentences <= 6

    def test_gold_grids_have_zero_violations(self):
        corpus = synth_corpus(7, 12)
        grids = [_as_pred(inst) for inst in corpus]
        report = count_violations(grids, corpus)
        assert report.violations == 0
        assert report.predictions > 0

    def test_entities_nowhere_before_creation_and_after_destruction(self):
        for inst in synth_corpus(9, 12):
            for row in gold_views(inst):
                seen_alive = False
                destroyed = False
                for view in row:
                    if view != ("nowhere",):
                        assert not destroyed, "state change after destruction"
                        seen_alive = True
                    elif seen_alive:
                        destroyed = True

    def test_mention_precedes_first_change(self):
        for inst in synth_corpus(13, 12):
            events = events_from_views(gold_views(inst), inst.entities, inst.id)
            for name, mentions in zip(inst.entities, inst.mentions):
                ev = events.per_entity[name].all_events()
                if ev:
                    first_change = ev[0][1]
                    sentence_end = inst.sentence_bounds[first_change - 1][1]
                    assert mentions and mentions[0][0] < sentence_end


def _as_pred(inst):
    from procgraph.events import CellPrediction, PredictionGrid
    rows = []
    for grid_row in inst.grid.rows:
        row = []
        for state in grid_row:
            if state.kind == "span":
                row.append(CellPrediction("span", span_text=inst.span_text(state.start, state.end),
                                          span=(state.start, state.end)))
            else:
                row.append(CellPrediction(state.kind))
        rows.append(row)
    return PredictionGrid(process_id=inst.id, entities=list(inst.entities), cells=rows)


class TestEmbeddings:
    def test_empty_vocab_has_only_unknown(self):
        table = EmbeddingTable.random([], dim=8, seed=0)
        assert table.words == ["<unk>"]
        assert table.matrix.shape == (1, 8)

    def test_known_word_returns_its_exact_row(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("water 1.0 2.0 3.0\nfire 4.0 5.0 6.0\n")
        table = EmbeddingTable.from_file(path, vocab=["water", "fire"])
        np.testing.assert_array_equal(
            table.lookup("water"),
            np.array([1.0, 2.0, 3.0], dtype=np.float32).astype(np.float64),
        )

    def test_oov_maps_to_shared_fixed_unknown(self):
        table = EmbeddingTable.random(["water"], dim=8, seed=0)
        first = table.lookup("director")
        np.testing.assert_array_equal(first, table.lookup("zeppelin"))
        again = EmbeddingTable.random(["water"], dim=8, seed=0)
        np.testing.assert_array_equal(first, again.lookup("director"))

    def test_inconsistent_width_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("water 1.0 2.0 3.0\nfire 4.0 5.0\n")
        with pytest.raises(ValueError, match="width"):
            EmbeddingTable.from_file(path)

    def test_oov_rate_matches_set_difference_oracle(self):
        corpus = synth_corpus(3, 6)
        vocab = corpus_vocab(corpus)[: 20]
        table = EmbeddingTable.random(vocab, dim=4, seed=1)
        tokens = [tok for inst in corpus for tok in inst.tokens]
        known = set(vocab)
        expected = sum(1 for tok in tokens if tok not in known) / len(tokens)
        assert table.oov_rate(tokens) == pytest.approx(expected)

    def test_random_table_deterministic_and_vocab_order_free(self):
        a = EmbeddingTable.random(["b", "a"], dim=6, seed=5)
        b = EmbeddingTable.random(["a", "b"], dim=6, seed=5)
        np.testing.assert_array_equal(a.lookup("a"), b.lookup("a"))
        assert a.vocab_hash() == b.vocab_hash()


class TestValidation:
    def test_crafted_instance_builder_produces_valid_grids(self):
        inst = make_instance("c1", ["water"], [["?", "lake", "sea", "sea", "-"]])
        assert inst.n_sentences == 4
        assert inst.grid.rows[0][1] == LocationState.span(5, 5)
        assert inst.grid.rows[0][4] == LocationState.nowhere()
