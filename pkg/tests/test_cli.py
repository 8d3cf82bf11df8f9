"""Command-line behavior: synth, train, predict, eval, trace."""

import json

import numpy as np
import pytest

from procgraph.autodiff import load_checkpoint
from procgraph.cli import main
from procgraph.corpus import parse_corpus, synth_corpus, write_corpus
from procgraph.evaluation import count_violations
from procgraph.events import read_predictions_tsv, write_predictions_tsv

from test_eval import gold_as_pred


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def small_run(tmp_path):
    """A trained tiny checkpoint over a 3-process corpus."""
    data = tmp_path / "data.jsonl"
    run("synth", "--seed", 5, "--n", 3, "--out", data)
    out = tmp_path / "run"
    code = run("train", "--data", data, "--out", out, "--epochs", 2,
               "--hidden", 8, "--embed-dim", 8, "--seed", 0,
               "--dropout-recurrent", 0.0, "--dropout-other", 0.0)
    assert code == 0
    return data, out / "model.ckpt"


class TestSynth:
    def test_zero_processes_writes_empty_file(self, tmp_path):
        out = tmp_path / "empty.jsonl"
        assert run("synth", "--seed", 1, "--n", 0, "--out", out) == 0
        assert out.read_text() == ""

    def test_same_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run("synth", "--seed", 9, "--n", 12, "--out", a)
        run("synth", "--seed", 9, "--n", 12, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_output_passes_validator_and_violation_check(self, tmp_path):
        out = tmp_path / "corpus.jsonl"
        assert run("synth", "--seed", 4, "--n", 20, "--out", out) == 0
        corpus = parse_corpus(out)
        assert len(corpus) == 20
        grids = [gold_as_pred(inst) for inst in corpus]
        assert count_violations(grids, corpus).violations == 0


class TestTrain:
    def test_writes_checkpoint_and_metrics(self, small_run):
        data, ckpt = small_run
        assert ckpt.exists()
        assert ckpt.with_name("model.ckpt.json").exists()
        assert ckpt.parent.joinpath("metrics.csv").exists()

    def test_defaults_recorded_in_sidecar(self, tmp_path):
        data = tmp_path / "data.jsonl"
        run("synth", "--seed", 5, "--n", 2, "--out", data)
        out = tmp_path / "run"
        assert run("train", "--data", data, "--out", out, "--epochs", 1,
                   "--hidden", 8, "--embed-dim", 8) == 0
        config = json.loads((out / "model.ckpt.json").read_text())["config"]
        # only explicitly overridden keys deviate from the stock defaults
        assert config["learning_rate"] == 0.002
        assert config["batch_size"] == 8
        assert config["dropout_recurrent"] == 0.4
        assert config["dropout_other"] == 0.3
        assert config["graph_layers"] == 2

    def test_mrc_only_checkpoint_lacks_graph_parameters(self, tmp_path):
        data = tmp_path / "data.jsonl"
        run("synth", "--seed", 5, "--n", 2, "--out", data)
        out = tmp_path / "run"
        assert run("train", "--data", data, "--out", out, "--epochs", 1,
                   "--hidden", 8, "--embed-dim", 8, "--mrc-only-prefix") == 0
        names = set(load_checkpoint(out / "model.ckpt"))
        assert not any(n.startswith(("graph", "gate", "loc/", "cond_mlp")) for n in names)

    def test_unknown_flag_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run("train", "--data", "x.jsonl", "--out", "y", "--warp", "9")
        assert err.value.code != 0

    def test_conflicting_ablation_flags_error(self, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        run("synth", "--seed", 5, "--n", 2, "--out", data)
        code = run("train", "--data", data, "--out", tmp_path / "run",
                   "--mrc-only-prefix", "--lstm-graph-unit",
                   "--hidden", 8, "--embed-dim", 8)
        assert code != 0
        assert "error:" in capsys.readouterr().err

    def test_missing_data_reports_error(self, tmp_path, capsys):
        code = run("train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o")
        assert code != 0
        assert "error:" in capsys.readouterr().err


class TestPredictAndEval:
    def test_round_trip_predict_then_eval(self, small_run, tmp_path, capsys):
        data, ckpt = small_run
        pred = tmp_path / "pred.tsv"
        assert run("predict", "--ckpt", ckpt, "--data", data, "--out", pred) == 0
        grids = read_predictions_tsv(pred)
        assert len(grids) == 3
        report_path = tmp_path / "report.json"
        assert run("eval", "--task", "1", "--pred", pred, "--gold", data,
                   "--out", report_path) == 0
        report = json.loads(report_path.read_text())
        assert 0.0 <= report["micro"] <= 100.0

    def test_eval_identical_pred_and_gold_scores_100(self, tmp_path):
        data = tmp_path / "gold.jsonl"
        run("synth", "--seed", 11, "--n", 5, "--out", data)
        corpus = parse_corpus(data)
        pred = tmp_path / "pred.tsv"
        write_predictions_tsv(pred, [gold_as_pred(inst) for inst in corpus])
        for task, key, want in (("1", "micro", 100.0), ("2", "f1", 100.0),
                                ("violations", "violations", 0)):
            out = tmp_path / f"report{task}.json"
            assert run("eval", "--task", task, "--pred", pred, "--gold", data,
                       "--out", out) == 0
            assert json.loads(out.read_text())[key] == want

    def test_version_mismatch_is_explicit(self, small_run, tmp_path, capsys):
        data, ckpt = small_run
        blob = bytearray(ckpt.read_bytes())
        blob[8] = 9
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        bad.with_name("bad.ckpt.json").write_bytes(ckpt.with_name("model.ckpt.json").read_bytes())
        code = run("predict", "--ckpt", bad, "--data", data, "--out", tmp_path / "p.tsv")
        assert code != 0
        assert "version" in capsys.readouterr().err

    def test_data_dir_env_fallback(self, small_run, tmp_path, monkeypatch, capsys):
        data, ckpt = small_run
        monkeypatch.setenv("PROCGRAPH_DATA_DIR", str(data.parent))
        monkeypatch.chdir(tmp_path / "run")
        assert run("predict", "--ckpt", ckpt, "--data", data.name,
                   "--out", tmp_path / "env.tsv") == 0


class TestTrace:
    def test_trace_emits_step_records_plus_initial_state(self, small_run, tmp_path, capsys):
        data, ckpt = small_run
        corpus = parse_corpus(data)
        inst = corpus[0]
        out = tmp_path / "trace.json"
        assert run("trace", "--ckpt", ckpt, "--data", data, "--id", inst.id,
                   "--out", out) == 0
        payload = json.loads(out.read_text())
        assert payload["process_id"] == inst.id
        assert payload["initial"]["step"] == 0
        assert len(payload["steps"]) == inst.n_sentences
        for record in payload["steps"]:
            assert "coref" in record
            assert len(record["entities"]) == inst.n_entities
        table = capsys.readouterr().out
        assert "(before first sentence)" in table

    def test_unknown_id_reports_error(self, small_run, tmp_path, capsys):
        data, ckpt = small_run
        assert run("trace", "--ckpt", ckpt, "--data", data, "--id", "nope") != 0
        assert "error:" in capsys.readouterr().err


class TestIdempotence:
    def test_synth_command_idempotent(self, tmp_path):
        out = tmp_path / "c.jsonl"
        run("synth", "--seed", 2, "--n", 6, "--out", out)
        first = out.read_bytes()
        run("synth", "--seed", 2, "--n", 6, "--out", out)
        assert out.read_bytes() == first
