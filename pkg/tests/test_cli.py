import json

import numpy as np
import pytest

from overlapdetect.cli import EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH, EXIT_OK, analyze_report, oracle_check, run
from overlapdetect.montecarlo import CSV_HEADER

UNIFORM = {"type": "memoryless", "probs": [0.5, 0.5]}


def write(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2))
    return str(path)


def small_experiment(**extra):
    doc = {"model": UNIFORM, "beta": 2, "n_grid": [512], "trials_per_stratum": 200, "type1_trials": 2000, "seed": 4}
    doc.update(extra)
    return doc


class TestAnalyze:
    def test_uniform_identity(self):
        report = analyze_report({"model": UNIFORM, "n": 2**20})
        assert report["source"]["H1"]["value"] == pytest.approx(1.0, abs=1e-12)
        assert report["source"]["H1"]["unit"] == "log2"
        assert report["pair"]["I"]["value"] == pytest.approx(1.0, abs=1e-12)
        assert report["t_mdo"]["log_n"]["value"] == pytest.approx(20.0, abs=1e-9)
        assert report["t_star"]["value"] == pytest.approx(20.0)
        assert report["flags"] == []

    def test_uniform_with_read_length(self):
        report = analyze_report({"model": UNIFORM, "n": 2**20, "beta": 3})
        assert report["ell"] == 60
        # largest t with 2^t <= n_ell = n - 119
        assert report["t_mdo"]["prior_odds"]["value"] == 19
        assert report["t_mdo"]["log_n"]["value"] == 20

    def test_uninformative_channel_flag(self):
        report = analyze_report({"model": UNIFORM, "channel": {"rows": [[0.5, 0.5], [0.5, 0.5]]}})
        assert "detection impossible: I = 0" in report["flags"]

    def test_markov_mixing(self):
        report = analyze_report({"model": {"type": "markov", "kernel": [[0.9, 0.1], [0.1, 0.9]]}, "mixing_steps": [1, 3]})
        assert [m["s"] for m in report["source"]["mixing"]] == [1, 3]
        assert report["source"]["mixing"][0]["value"] == pytest.approx(0.4)
        assert report["source"]["mixing"][1]["value"] == pytest.approx(0.4 * 0.8**2)

    def test_every_number_has_a_unit(self):
        report = analyze_report({"model": UNIFORM, "channel": {"rows": [[0.9, 0.1], [0.1, 0.9]]}, "beta": 10})

        def walk(node):
            if isinstance(node, dict):
                if "value" in node:
                    assert "unit" in node
                for v in node.values():
                    walk(v)
            elif isinstance(node, list):
                for v in node:
                    walk(v)

        walk(report["source"])
        walk(report["pair"])

    def test_writes_report(self, tmp_path):
        cfg = write(tmp_path, {"model": UNIFORM})
        assert run(["analyze", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "analysis.json").read_text())
        assert report["source"]["H1"]["value"] == pytest.approx(1.0)


class TestConfigErrors:
    def test_unknown_key_line(self, tmp_path, capsys):
        text = '{\n  "model": {"type": "memoryless", "probs": [0.5, 0.5]},\n  "bogus": 1\n}\n'
        out = tmp_path / "out"
        assert run(["analyze", "--config", write(tmp_path, text), "--out", str(out)]) == EXIT_CONFIG
        assert "line 3" in capsys.readouterr().err
        assert not out.exists()

    def test_malformed_json(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert run(["analyze", "--config", write(tmp_path, '{"model": \n  [1,'), "--out", str(out)]) == EXIT_CONFIG
        assert "line 2" in capsys.readouterr().err
        assert not out.exists()

    def test_invalid_model(self, tmp_path):
        cfg = write(tmp_path, {"model": {"type": "memoryless", "probs": [0.5, 0.6]}})
        assert run(["analyze", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert run(["analyze", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == EXIT_IO

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        cfg = write(tmp_path, {"model": UNIFORM})
        assert run(["analyze", "--config", cfg, "--out", str(blocker / "sub")]) == EXIT_IO

    def test_sweep_needs_three_points(self, tmp_path):
        out = tmp_path / "out"
        cfg = write(tmp_path, small_experiment(n_grid=[512, 1024]))
        assert run(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_unknown_experiment_key(self, tmp_path, capsys):
        doc = small_experiment()
        doc["trials"] = 5
        assert run(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "trials" in capsys.readouterr().err


class TestSimulate:
    def test_outputs(self, tmp_path):
        out = tmp_path / "out"
        assert run(["simulate", "--config", write(tmp_path, small_experiment()), "--out", str(out)]) == EXIT_OK
        lines = (out / "simulate.csv").read_bytes().split(b"\n")
        assert lines[0].decode() == ",".join(CSV_HEADER)
        assert b"\r" not in (out / "simulate.csv").read_bytes()
        report = json.loads((out / "simulate.json").read_text())
        assert report["records"][0]["n"] == 512

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write(tmp_path, small_experiment())
        outputs = []
        for name in ("a", "b"):
            assert run(["simulate", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
            outputs.append(((tmp_path / name / "simulate.csv").read_bytes(),
                            (tmp_path / name / "simulate.json").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_seed_override(self, tmp_path):
        cfg = write(tmp_path, small_experiment())
        run(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "4"])
        run(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
        run(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"])
        a, b, c = ((tmp_path / d / "simulate.json").read_bytes() for d in "abc")
        assert a == b and a != c

    def test_sweep_outputs(self, tmp_path):
        out = tmp_path / "out"
        cfg = write(tmp_path, small_experiment(n_grid=[256, 512, 1024]))
        assert run(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
        doc = json.loads((out / "sweep.json").read_text())
        assert "phi_trend" in doc["verdicts"]
        assert (out / "sweep.csv").exists()

    def test_no_temp_files_left(self, tmp_path):
        out = tmp_path / "out"
        run(["simulate", "--config", write(tmp_path, small_experiment()), "--out", str(out)])
        assert sorted(p.name for p in out.iterdir()) == ["simulate.csv", "simulate.json"]


class TestOracleCheck:
    def test_default_suite(self, tmp_path):
        cfg = write(tmp_path, {"n": 16, "ell": 4, "instances": 10_000})
        out = tmp_path / "out"
        assert run(["oracle-check", "--config", cfg, "--seed", "7", "--out", str(out)]) == EXIT_OK
        summary = json.loads((out / "oracle_check.json").read_text())
        assert summary == {"n": 16, "ell": 4, "checked": 10_000, "mismatches": 0}

    def test_ternary_models(self):
        ok, summary = oracle_check({
            "n": 12, "ell": 3, "instances": 600,
            "models": [{"type": "memoryless", "probs": [0.5, 0.3, 0.2]}],
            "channels": [{"rows": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}, {"rows": [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]}],
        }, seed=1)
        assert ok and summary["checked"] == 600

    def test_mismatch_exit_code(self, tmp_path, monkeypatch, capsys):
        import overlapdetect.cli as cli
        from overlapdetect.detectors import Decision

        monkeypatch.setattr(cli, "detect_noiseless", lambda pair, model, n: Decision(99, np.zeros(0), np.zeros(0), 0.0))
        cfg = write(tmp_path, {"n": 16, "ell": 4, "instances": 10, "channels": [{"rows": [[1, 0], [0, 1]]}]})
        assert run(["oracle-check", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_MISMATCH
        err = capsys.readouterr().err
        assert "oracle mismatch" in err and '"detector": 99' in err
