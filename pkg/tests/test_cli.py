"""Command-line surface: configs, manifests, artifacts, exit codes."""

import json

import pytest

from shortlong.cli import load_config, main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def forged(tmp_path):
    """A small forged dataset on disk, plus its run directory."""
    out = tmp_path / "forge_run"
    rc = run(["forge", "--out", out, "--seed", "3",
              "--set", "corpus=builtin-needle", "--set", "corpus_sources=60",
              "--set", "n_target=24", "--set", "target_short_tokens=48",
              "--set", "target_long_tokens=160"])
    assert rc == 0
    return out / "data" / "forged.jsonl"


class TestConfigParsing:
    def test_round_trip(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("alpha = 2.0\n# comment\nmethod=orpo\n")
        assert load_config(cfg) == {"alpha": "2.0", "method": "orpo"}

    def test_malformed_line_reports_number(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("alpha = 1\nbroken line\n")
        with pytest.raises(ValueError, match="line 2"):
            load_config(cfg)

    def test_bad_override(self, tmp_path):
        assert run(["speedup", "--out", tmp_path / "r", "--set", "oops"]) == 1


class TestSpeedupCommand:
    def test_prints_known_value(self, tmp_path, capsys):
        assert run(["speedup", "--out", tmp_path / "r", "--c", "0.125"]) == 0
        out = capsys.readouterr().out
        assert "speedup=1.939" in out
        assert (tmp_path / "r" / "reports" / "speedup.csv").exists()

    def test_manifest_written(self, tmp_path):
        run(["speedup", "--out", tmp_path / "r", "--seed", "7"])
        manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
        assert manifest["subcommand"] == "speedup"
        assert manifest["seed"] == 7
        assert "tool_version" in manifest


class TestVerifyBoundsCommand:
    def test_small_profile_passes(self, tmp_path, capsys):
        rc = run(["verify-bounds", "--out", tmp_path / "r", "--seed", "1",
                  "--set", "lemma_instances=20000",
                  "--set", "theorem1_scenarios=60",
                  "--set", "theorem2_scenarios=40",
                  "--set", "necessity_attempts=30000"])
        assert rc == 0
        report = json.loads((tmp_path / "r" / "reports" / "bounds.json").read_text())
        assert report["lemma1"]["max_violation"] <= 1e-9
        assert report["assumption_necessity"]["max_violation"] > 1e-9
        assert "witness found" in capsys.readouterr().out

    def test_seed_pinned_reports_identical(self, tmp_path):
        args = ["--seed", "4", "--set", "lemma_instances=5000",
                "--set", "theorem1_scenarios=20", "--set", "theorem2_scenarios=10",
                "--set", "necessity_attempts=5000"]
        run(["verify-bounds", "--out", tmp_path / "a", *args])
        run(["verify-bounds", "--out", tmp_path / "b", *args])
        a = (tmp_path / "a" / "reports" / "bounds.json").read_bytes()
        b = (tmp_path / "b" / "reports" / "bounds.json").read_bytes()
        assert a == b

    def test_nonconvex_selftest_exits_nonzero_with_witness(self, tmp_path):
        rc = run(["verify-bounds", "--out", tmp_path / "r", "--selftest-nonconvex"])
        assert rc == 2
        report = json.loads((tmp_path / "r" / "reports" / "bounds.json").read_text())
        assert report["selftest_nonconvex"]["witness"] is not None


class TestForgeTrainEvalPipeline:
    def test_forge_writes_dataset_stats_manifest(self, forged):
        run_dir = forged.parent.parent
        stats = json.loads((run_dir / "data" / "forge_stats.json").read_text())
        assert stats["emitted"] == 24
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["subcommand"] == "forge"
        lines = forged.read_text().splitlines()
        assert len(lines) == 24
        record = json.loads(lines[0])
        assert sorted(record) == ["answer", "question", "x_long", "x_short", "y_l", "y_w"]

    def test_forge_rerun_byte_identical(self, tmp_path):
        args = ["--seed", "3", "--set", "corpus=builtin-needle",
                "--set", "corpus_sources=40", "--set", "n_target=10",
                "--set", "target_short_tokens=48", "--set", "target_long_tokens=160"]
        run(["forge", "--out", tmp_path / "a", *args])
        run(["forge", "--out", tmp_path / "b", *args])
        assert (tmp_path / "a" / "data" / "forged.jsonl").read_bytes() == \
            (tmp_path / "b" / "data" / "forged.jsonl").read_bytes()

    def test_train_then_eval(self, forged, tmp_path, capsys):
        train_dir = tmp_path / "train_run"
        rc = run(["train", "--out", train_dir, "--seed", "0",
                  "--set", f"dataset={forged}", "--set", f"eval_dataset={forged}",
                  "--set", "method=orpo", "--set", "alpha=1.0",
                  "--set", "epochs=2", "--set", "batch_size=8",
                  "--set", "model_hidden=8"])
        assert rc == 0
        ckpt = train_dir / "checkpoints" / "final.json"
        assert ckpt.exists()
        log_csv = (train_dir / "logs" / "train_log.csv").read_text().splitlines()
        assert log_csv[0].startswith("step,lr,total,po_term,ra_term,nll_term")
        assert len(log_csv) == 1 + 6  # 24 samples / batch 8 * 2 epochs

        eval_dir = tmp_path / "eval_run"
        rc = run(["eval", "--out", eval_dir, "--set", f"checkpoint={ckpt}",
                  "--set", f"dataset={forged}"])
        assert rc == 0
        result = json.loads((eval_dir / "reports" / "eval.json").read_text())
        assert set(result) == {"short_acc", "long_acc"}
        assert 0.0 <= result["short_acc"] <= 1.0

    def test_train_compare_matrix(self, forged, tmp_path, capsys):
        out = tmp_path / "cmp"
        rc = run(["train", "--out", out, "--seed", "0",
                  "--compare", "alpha:0,1", "--seeds", "0,1",
                  "--set", f"dataset={forged}", "--set", f"eval_dataset={forged}",
                  "--set", "method=orpo", "--set", "epochs=1",
                  "--set", "batch_size=8", "--set", "model_hidden=8"])
        assert rc == 0
        comparison = (out / "reports" / "comparison.csv").read_text().splitlines()
        assert len(comparison) == 1 + 4
        margins = (out / "reports" / "margins.csv").read_text().splitlines()
        assert margins[0] == "step,alpha=0#seed0,alpha=0#seed1,alpha=1#seed0,alpha=1#seed1"

    def test_missing_dataset_is_config_error(self, tmp_path):
        assert run(["train", "--out", tmp_path / "r"]) == 1

    def test_malformed_dataset_line_number(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"question": "q"}\n')
        rc = run(["train", "--out", tmp_path / "r", "--set", f"dataset={bad}"])
        assert rc == 1
        assert "line 1" in capsys.readouterr().err


class TestGradCheckCommand:
    def test_passes_and_reports(self, tmp_path, capsys):
        rc = run(["grad-check", "--out", tmp_path / "r", "--seed", "0",
                  "--set", "points=25"])
        assert rc == 0
        report = json.loads((tmp_path / "r" / "reports" / "gradcheck.json").read_text())
        assert report["loss_gradients"]["max_relative_error"] < 1e-4
        assert report["policy_gradients"]["max_relative_error"] < 1e-4
        assert len(report["loss_gradients"]["combos"]) == 15
