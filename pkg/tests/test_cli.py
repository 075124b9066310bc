import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from carnn import store
from carnn.cli import cli, config_text, load_run_config
from carnn.errors import (CompatibilityError, ConfigError, DataError, FormatError,
                          InputOutputError, NumericalError)
from carnn.evaluate import generate_synthetic, report_from_json, write_interactions_csv
from carnn.model import load_params


runner = CliRunner()


def invoke(*args):
    return runner.invoke(cli, list(args))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic planted-signal dataset prepared and trained once per module."""
    root = tmp_path_factory.mktemp("cli")
    seqs, _ = generate_synthetic(30, 40, 40, 4, signal="input_ctx", seed=77)
    csv_path = str(root / "events.csv")
    write_interactions_csv(seqs, csv_path)
    cfg_path = str(root / "run.cfg")
    out = str(root / "out")
    with open(cfg_path, "w") as fh:
        fh.write("\n".join([
            f"dataset={csv_path}",
            "format=csv",
            "factors=hour_of_day",
            "min_user=2",
            "min_item=1",
            "split_ratio=0.8",
            "d=6",
            "epochs=10",
            "lr=0.05",
            "lambda=0.01",
            "seed=0",
            f"out={out}",
        ]) + "\n")
    result = invoke("prepare", "--config", cfg_path)
    assert result.exit_code == 0, result.output
    cache = os.path.join(out, "cache.bin")

    models = {}
    for variant in ("carnn", "rnn"):
        vout = str(root / f"out-{variant}")
        result = invoke("train", "--config", cfg_path, "--variant", variant,
                        "--out", vout, "--cache", cache)
        assert result.exit_code == 0, result.output
        models[variant] = os.path.join(vout, "model.carn")
    return {"root": root, "csv": csv_path, "cfg": cfg_path, "out": out,
            "cache": cache, "models": models}


class TestRunConfig:
    def test_file_parsing_and_overrides(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("# comment\nd=7\nlambda=0.5\nbptt_window=none\nks=1,5\nshuffle=false\n")
        cfg = load_run_config(str(path), seed=9)
        assert cfg.d == 7 and cfg.l2 == 0.5 and cfg.bptt_window is None
        assert cfg.ks == (1, 5) and cfg.shuffle is False and cfg.seed == 9

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("mystery=1\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_text_round_trip(self, tmp_path):
        cfg = load_run_config(None, d=13, variant="input", ks=(1, 5))
        path = tmp_path / "echo.cfg"
        path.write_text(config_text(cfg))
        again = load_run_config(str(path))
        assert again == cfg

    def test_unsorted_ks_rejected(self):
        with pytest.raises(ConfigError):
            load_run_config(None, ks=(5, 1))


class TestPrepare:
    def test_stats_reported(self, workdir):
        stats = open(os.path.join(workdir["out"], "prepare_stats.txt")).read()
        assert "records_parsed=1200" in stats
        assert "users_after_filtering=30" in stats
        assert "items_after_filtering=40" in stats
        assert "input_context_values=24" in stats
        assert "test_positions=240" in stats

    def test_cache_is_byte_identical_across_runs(self, workdir, tmp_path):
        out2 = str(tmp_path / "again")
        result = invoke("prepare", "--config", workdir["cfg"], "--out", out2)
        assert result.exit_code == 0, result.output
        a = open(workdir["cache"], "rb").read()
        b = open(os.path.join(out2, "cache.bin"), "rb").read()
        assert a == b

    def test_cache_round_trips_through_reader(self, workdir):
        split = store.read_cache(workdir["cache"])
        assert split.sequences.n_users == 30
        assert split.sequences.n_items == 40
        assert split.sequences.annotated

    def test_missing_dataset_is_config_error(self, tmp_path):
        result = invoke("prepare", "--out", str(tmp_path / "o"))
        assert result.exit_code == ConfigError.exit_code

    def test_unreadable_dataset_is_io_error(self, tmp_path):
        result = invoke("prepare", "--dataset", str(tmp_path / "missing.csv"),
                        "--out", str(tmp_path / "o"))
        assert result.exit_code == InputOutputError.exit_code

    def test_empty_dataset_is_data_error(self, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("")
        result = invoke("prepare", "--dataset", str(src), "--out", str(tmp_path / "o"))
        assert result.exit_code == DataError.exit_code

    def test_wrong_format_is_format_error(self, tmp_path):
        src = tmp_path / "events.csv"
        src.write_text("1::2::3::4\n5::6::7::8\na::b::c::d\n")
        result = invoke("prepare", "--dataset", str(src), "--format", "csv",
                        "--out", str(tmp_path / "o"))
        assert result.exit_code == FormatError.exit_code


class TestTrain:
    def test_model_and_loss_trace_written(self, workdir):
        model = workdir["models"]["carnn"]
        assert os.path.exists(model)
        loss = open(os.path.join(os.path.dirname(model), "loss.csv")).read().splitlines()
        assert loss[0] == "epoch,mean_pair_loss,wall_seconds"
        assert len(loss) == 11

    def test_context_blind_variant_declares_singleton_banks(self, workdir):
        params = load_params(workdir["models"]["rnn"])
        assert params.config.n_input_contexts == 1
        assert params.config.n_transition_bins == 1

    def test_same_seed_is_byte_identical(self, workdir, tmp_path):
        out2 = str(tmp_path / "again")
        result = invoke("train", "--config", workdir["cfg"], "--variant", "carnn",
                        "--out", out2, "--cache", workdir["cache"])
        assert result.exit_code == 0, result.output
        a = open(workdir["models"]["carnn"], "rb").read()
        b = open(os.path.join(out2, "model.carn"), "rb").read()
        assert a == b

    def test_effective_config_reproduces_run(self, workdir, tmp_path):
        echoed = os.path.join(os.path.dirname(workdir["models"]["carnn"]),
                              "train.effective.cfg")
        out2 = str(tmp_path / "refed")
        result = invoke("train", "--config", echoed, "--out", out2)
        assert result.exit_code == 0, result.output
        a = open(workdir["models"]["carnn"], "rb").read()
        b = open(os.path.join(out2, "model.carn"), "rb").read()
        assert a == b

    def test_echoed_config_pins_derived_cache_path(self, workdir, tmp_path):
        # train with the cache path left implicit, then refeed the echo into
        # a fresh output directory: the pinned input must still resolve
        result = invoke("train", "--config", workdir["cfg"], "--variant", "carnn")
        assert result.exit_code == 0, result.output
        echoed = os.path.join(workdir["out"], "train.effective.cfg")
        assert f"cache={workdir['cache']}" in open(echoed).read()
        out2 = str(tmp_path / "elsewhere")
        result = invoke("train", "--config", echoed, "--out", out2)
        assert result.exit_code == 0, result.output
        a = open(os.path.join(workdir["out"], "model.carn"), "rb").read()
        b = open(os.path.join(out2, "model.carn"), "rb").read()
        assert a == b

    def test_missing_cache_is_io_error(self, workdir, tmp_path):
        result = invoke("train", "--config", workdir["cfg"],
                        "--cache", str(tmp_path / "none.bin"), "--out", str(tmp_path / "o"))
        assert result.exit_code == InputOutputError.exit_code


class TestEval:
    def eval_variant(self, workdir, tmp_path, variant, model=None):
        out = str(tmp_path / f"eval-{variant}")
        args = ["eval", "--config", workdir["cfg"], "--variant", variant,
                "--out", out, "--cache", workdir["cache"]]
        if model:
            args += ["--model", model]
        result = invoke(*args)
        assert result.exit_code == 0, result.output
        return result, json.load(open(os.path.join(out, "metrics.json"))), out

    def test_console_table_columns(self, workdir, tmp_path):
        result, _, _ = self.eval_variant(workdir, tmp_path, "carnn",
                                         workdir["models"]["carnn"])
        assert "Recall@1" in result.output and "NDCG" in result.output

    def test_report_reload_equals_in_memory(self, workdir, tmp_path):
        _, raw, out = self.eval_variant(workdir, tmp_path, "carnn",
                                        workdir["models"]["carnn"])
        from carnn.evaluate import evaluate
        split = store.read_cache(workdir["cache"])
        rep = evaluate(split, load_params(workdir["models"]["carnn"]),
                       split.sequences.scheme)
        reloaded = report_from_json(open(os.path.join(out, "metrics.json")).read())
        assert reloaded == rep

    def test_pop_baseline_needs_no_model(self, workdir, tmp_path):
        _, raw, _ = self.eval_variant(workdir, tmp_path, "pop")
        assert 0.0 <= raw["recall@1"] <= 1.0

    def test_context_model_beats_plain_on_planted_signal(self, workdir, tmp_path):
        _, carnn_raw, _ = self.eval_variant(workdir, tmp_path, "carnn",
                                            workdir["models"]["carnn"])
        _, rnn_raw, _ = self.eval_variant(workdir, tmp_path, "rnn",
                                          workdir["models"]["rnn"])
        assert carnn_raw["recall@1"] > rnn_raw["recall@1"]

    def test_f1_identity_on_emitted_report(self, workdir, tmp_path):
        _, raw, _ = self.eval_variant(workdir, tmp_path, "carnn",
                                      workdir["models"]["carnn"])
        for k in (1, 5, 10):
            assert abs(raw[f"f1@{k}"] - 2 * raw[f"recall@{k}"] / (k + 1)) < 1e-12

    def test_vocabulary_mismatch_names_both_sizes(self, workdir, tmp_path):
        # model trained against a smaller vocabulary
        seqs, _ = generate_synthetic(10, 12, 20, 4, signal="input_ctx", seed=5)
        csv_path = str(tmp_path / "small.csv")
        write_interactions_csv(seqs, csv_path)
        out = str(tmp_path / "small-out")
        assert invoke("prepare", "--config", workdir["cfg"], "--dataset", csv_path,
                      "--out", out).exit_code == 0
        assert invoke("train", "--config", workdir["cfg"], "--out", out,
                      "--cache", os.path.join(out, "cache.bin")).exit_code == 0
        result = invoke("eval", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", os.path.join(out, "model.carn"),
                        "--out", str(tmp_path / "x"))
        assert result.exit_code == CompatibilityError.exit_code
        assert "12" in result.output and "40" in result.output

    def test_byte_identical_reports(self, workdir, tmp_path):
        _, _, out_a = self.eval_variant(workdir, tmp_path, "carnn", workdir["models"]["carnn"])
        out_b = str(tmp_path / "eval-b")
        result = invoke("eval", "--config", workdir["cfg"], "--variant", "carnn",
                        "--out", out_b, "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"])
        assert result.exit_code == 0
        a = open(os.path.join(out_a, "metrics.json"), "rb").read()
        b = open(os.path.join(out_b, "metrics.json"), "rb").read()
        assert a == b


class TestPredict:
    def test_top_k_lines(self, workdir, tmp_path):
        split = store.read_cache(workdir["cache"])
        seq = split.sequences.sequences[0]
        n_tr = int(split.n_train[0])
        t = int(seq.timestamps[n_tr - 1]) + 3600
        result = invoke("predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"],
                        "--user", seq.user, "--timestamp", str(t), "--k", "5")
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert len(lines) == 6  # header plus 5 ranked items
        assert lines[1].startswith("1\t")

    def test_k1_is_argmax_of_full_scoring(self, workdir):
        from carnn.context import input_context, transition_bin
        from carnn.model import hidden_step, score_all, zero_state

        split = store.read_cache(workdir["cache"])
        params = load_params(workdir["models"]["carnn"])
        seq = split.sequences.sequences[0]
        n_tr = int(split.n_train[0])
        t = int(seq.timestamps[n_tr - 1]) + 7200
        result = invoke("predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"],
                        "--user", seq.user, "--timestamp", str(t), "--k", "1")
        assert result.exit_code == 0
        top_item = result.output.strip().splitlines()[1].split("\t")[1]

        h = zero_state(params.config)
        for j in range(n_tr):
            h = hidden_step(h, seq.items[j], seq.input_ctxs[j], seq.trans_bins[j], params)
        scheme = split.sequences.scheme
        scores = score_all(h, input_context(t, scheme),
                           transition_bin(t, int(seq.timestamps[n_tr - 1]), scheme), params)
        assert top_item == split.sequences.item_ids()[int(np.argmax(scores))]

    def test_identical_context_cells_identical_rankings(self, workdir):
        split = store.read_cache(workdir["cache"])
        seq = split.sequences.sequences[0]
        n_tr = int(split.n_train[0])
        base = int(seq.timestamps[n_tr - 1])
        args = ["predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                "--model", workdir["models"]["carnn"], "--user", seq.user, "--k", "3"]
        # same hour of day, same whole-day gap: identical cells
        a = invoke(*args, "--timestamp", str(base + 600))
        b = invoke(*args, "--timestamp", str(base + 1200))
        assert a.output.splitlines()[1:] == b.output.splitlines()[1:]

    def test_long_horizon_uses_top_interval_bin(self, workdir):
        split = store.read_cache(workdir["cache"])
        seq = split.sequences.sequences[0]
        n_tr = int(split.n_train[0])
        t = int(seq.timestamps[n_tr - 1]) + 40 * 86400
        result = invoke("predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"],
                        "--user", seq.user, "--timestamp", str(t), "--k", "1")
        assert result.exit_code == 0
        assert "transition_bin=30" in result.output

    def test_unknown_user_is_data_error(self, workdir):
        result = invoke("predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"],
                        "--user", "ghost", "--timestamp", "99999999999")
        assert result.exit_code == DataError.exit_code

    def test_timestamp_before_history_rejected(self, workdir):
        split = store.read_cache(workdir["cache"])
        seq = split.sequences.sequences[0]
        result = invoke("predict", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--model", workdir["models"]["carnn"],
                        "--user", seq.user, "--timestamp", "1")
        assert result.exit_code == DataError.exit_code


class TestGradcheck:
    def test_default_tiny_model_passes(self):
        result = invoke("gradcheck")
        assert result.exit_code == 0, result.output
        assert "gradient check passed" in result.output

    def test_epsilon_flag_honored_in_report(self):
        result = invoke("gradcheck", "--epsilon", "1e-4")
        assert result.exit_code == 0
        assert "epsilon=0.0001" in result.output

    def test_corrupted_gradient_fails_naming_the_bank(self):
        result = invoke("gradcheck", "--corrupt", "M_bank")
        assert result.exit_code == NumericalError.exit_code
        assert "M_bank" in result.output


class TestSweep:
    def test_grid_rows_and_planted_dominance(self, workdir, tmp_path):
        out = str(tmp_path / "sweep")
        result = invoke("sweep", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--out", out, "--d-values", "4,6", "--variants", "rnn,carnn")
        assert result.exit_code == 0, result.output
        lines = open(os.path.join(out, "sweep.csv")).read().strip().splitlines()
        assert len(lines) == 1 + 4  # header + |variants| x |d_values|
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
        assert all(r["status"] == "ok" for r in rows)
        by_key = {(r["variant"], r["d"]): float(r["recall@1"]) for r in rows}
        for d in ("4", "6"):
            assert by_key[("carnn", d)] >= by_key[("rnn", d)]

    def test_cell_failures_recorded_and_sweep_continues(self, workdir, tmp_path, monkeypatch):
        import carnn.cli as cli_mod

        def boom(split, params, cfg):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(cli_mod, "train", boom)
        out = str(tmp_path / "sweep-fail")
        result = invoke("sweep", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--out", out, "--d-values", "4", "--variants", "rnn,carnn")
        assert result.exit_code == 0, result.output
        lines = open(os.path.join(out, "sweep.csv")).read().strip().splitlines()
        assert len(lines) == 3
        assert all("error:NumericalError" in line for line in lines[1:])

    def test_bad_grid_rejected(self, workdir, tmp_path):
        result = invoke("sweep", "--config", workdir["cfg"], "--cache", workdir["cache"],
                        "--out", str(tmp_path / "s"), "--d-values", "4",
                        "--variants", "pop")
        assert result.exit_code == ConfigError.exit_code
