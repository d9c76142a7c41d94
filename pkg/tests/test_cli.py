"""End-to-end tests for the command-line surface."""

import json
import os

import pytest
from click.testing import CliRunner

from devicesurv import synth
from devicesurv.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def small_corpus_dir(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("corpus")
    corpus = synth.gen_corpus(synth.SynthConfig(seed=0, n_patients=25))
    paths = synth.write_corpus(corpus, outdir)
    return outdir, paths, corpus


def _write_config(tmp_path, output_dir, paths=None, params=None, extra=None):
    cfg = {"output_dir": str(output_dir)}
    if paths:
        cfg["paths"] = {k: str(v) for k, v in paths.items()}
    if params:
        cfg["params"] = params
    if extra:
        cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _stderr_json(result):
    return json.loads(result.stderr.strip().splitlines()[-1])


class TestConfigValidation:
    def test_unknown_top_level_key(self, runner, tmp_path):
        cfg = _write_config(tmp_path, tmp_path / "out", extra={"mystery": 1})
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 2
        err = _stderr_json(result)
        assert err["code"] == "config"
        assert "mystery" in err["message"]

    def test_unknown_paths_key(self, runner, tmp_path):
        cfg = _write_config(tmp_path, tmp_path / "out", paths={"bogus": tmp_path})
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 2

    def test_unknown_params_key(self, runner, tmp_path):
        cfg = _write_config(tmp_path, tmp_path / "out", params={"bogus": 1})
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 2

    def test_missing_output_dir_key(self, runner, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"paths": {}}))
        result = runner.invoke(main, ["ingest", "--config", str(path)])
        assert result.exit_code == 2

    def test_invalid_json(self, runner, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        result = runner.invoke(main, ["ingest", "--config", str(path)])
        assert result.exit_code == 3
        assert _stderr_json(result)["code"] == "input_format"

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(main, ["ingest", "--config", str(tmp_path / "nope.json")])
        assert result.exit_code == 4
        assert _stderr_json(result)["code"] == "missing_artifact"

    def test_nonexistent_configured_path(self, runner, tmp_path):
        cfg = _write_config(
            tmp_path, tmp_path / "out", paths={"notes": tmp_path / "missing.jsonl"}
        )
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 4
        err = _stderr_json(result)
        assert err["context"]["key"] == "notes"

    def test_env_override_for_paths(self, runner, tmp_path, small_corpus_dir, monkeypatch):
        _, paths, _ = small_corpus_dir
        bogus = tmp_path / "bogus.jsonl"
        bogus.write_text("")
        cfg = _write_config(tmp_path, tmp_path / "out", paths={"notes": bogus})
        monkeypatch.setenv("DEVICESURV_NOTES", paths["notes"])
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 0
        assert "100 notes" in result.output  # 25 patients x 4 notes


class TestLocking:
    def test_lock_blocks_second_run(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        outdir = tmp_path / "out"
        outdir.mkdir()
        (outdir / ".lock").write_text("12345")
        cfg = _write_config(tmp_path, outdir, paths={"notes": paths["notes"]})
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 2
        assert "locked" in _stderr_json(result)["message"]

    def test_lock_released_after_success(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir, paths={"notes": paths["notes"]})
        assert runner.invoke(main, ["ingest", "--config", cfg]).exit_code == 0
        assert not (outdir / ".lock").exists()
        assert runner.invoke(main, ["ingest", "--config", cfg]).exit_code == 0


class TestArtifacts:
    def test_ingest_writes_meta(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir, paths={"notes": paths["notes"]})
        result = runner.invoke(main, ["ingest", "--config", cfg])
        assert result.exit_code == 0
        meta = json.loads((outdir / "ingest.meta.json").read_text())
        assert meta["command"] == "ingest"
        assert len(meta["config_hash"]) == 12
        assert (outdir / "notes.normalized.jsonl").exists()

    def test_missing_artifact_exit_code(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        cfg = _write_config(tmp_path, tmp_path / "out", paths={"notes": paths["notes"]})
        result = runner.invoke(main, ["train", "--config", cfg])
        assert result.exit_code == 4
        assert "labelmodel fit" in _stderr_json(result)["message"]

    def test_tag_and_candidates(self, runner, tmp_path, small_corpus_dir):
        _, paths, corpus = small_corpus_dir
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir, paths={"notes": paths["notes"]})
        assert runner.invoke(main, ["tag", "--config", cfg]).exit_code == 0
        result = runner.invoke(main, ["candidates", "--config", cfg])
        assert result.exit_code == 0
        lines = (outdir / "candidates.csv").read_text().splitlines()
        assert lines[0].startswith("candidate_id,relation_type,note_id")
        assert len(lines) - 1 == len(corpus.candidates)


class TestPipelineChain:
    def test_full_chain(self, runner, tmp_path, small_corpus_dir):
        _, paths, corpus = small_corpus_dir
        outdir = tmp_path / "out"
        cfg = _write_config(
            tmp_path,
            outdir,
            paths={
                "notes": paths["notes"],
                "gold_relations": paths["gold_relations"],
                "dev_gold": paths["gold_relations"],
            },
            params={"lf_set": "benchmark", "seed": 0},
        )
        for cmd in (
            ["lf", "apply"],
            ["lf", "stats"],
            ["labelmodel", "fit"],
            ["train"],
            ["predict"],
            ["eval"],
        ):
            result = runner.invoke(main, cmd + ["--config", cfg])
            assert result.exit_code == 0, (cmd, result.output, result.stderr)
        for artifact in (
            "label_matrix.bin", "lf_stats.csv", "label_model.json", "labels.csv",
            "classifier.bin", "scores.csv", "metrics.csv",
        ):
            assert (outdir / artifact).exists()
        metrics = (outdir / "metrics.csv").read_text().splitlines()[1]
        f1 = float(metrics.split(",")[2])
        assert f1 >= 90.0

    def test_rerun_is_deterministic(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        outputs = []
        for run in range(2):
            outdir = tmp_path / f"out{run}"
            cfg = _write_config(
                tmp_path,
                outdir,
                paths={
                    "notes": paths["notes"],
                    "gold_relations": paths["gold_relations"],
                    "dev_gold": paths["gold_relations"],
                },
                params={"lf_set": "benchmark", "seed": 0},
            )
            for cmd in (["lf", "apply"], ["labelmodel", "fit"], ["train"], ["predict"]):
                assert runner.invoke(main, cmd + ["--config", cfg]).exit_code == 0
            outputs.append((outdir / "scores.csv").read_text())
        assert outputs[0] == outputs[1]


class TestReconcileCommand:
    def test_reconcile_smoke(self, runner, tmp_path, small_corpus_dir):
        _, paths, _ = small_corpus_dir
        outdir = tmp_path / "out"
        outdir.mkdir()
        import shutil

        shutil.copy(paths["extracted_implants"], outdir / "extracted_implants.csv")
        cfg = _write_config(tmp_path, outdir, paths={"registry": paths["registry"]})
        result = runner.invoke(main, ["reconcile", "--config", cfg])
        assert result.exit_code == 0
        summary = json.loads((outdir / "reconciliation_summary.json").read_text())
        assert summary["fractions"]["agreement"] == 1.0


class TestStatsCommands:
    def test_regression_nb(self, runner, tmp_path):
        counts_file = tmp_path / "counts.csv"
        counts_file.write_text(
            "patient_id,count\n" + "".join(f"p{i},{2 + i % 2}\n" for i in range(40))
        )
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir)
        result = runner.invoke(
            main, ["regression", "nb", "--config", cfg, "--counts-file", str(counts_file)]
        )
        assert result.exit_code == 0
        payload = json.loads((outdir / "nb.json").read_text())
        assert payload["terms"][0]["term"] == "intercept"

    def test_ttest(self, runner, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("value\n1\n2\n3\n")
        b.write_text("value\n2\n3\n4\n")
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir)
        result = runner.invoke(
            main, ["ttest", "--config", cfg, "--a-file", str(a), "--b-file", str(b)]
        )
        assert result.exit_code == 0
        payload = json.loads((outdir / "ttest.json").read_text())
        assert payload["df"] == pytest.approx(4.0)

    def test_report_forest_from_cox_artifact(self, runner, tmp_path):
        outdir = tmp_path / "out"
        outdir.mkdir()
        cox = {
            "terms": [
                {"term": "implant_system=B", "coef": 0.7, "se": 0.1, "HR": 2.014,
                 "CI_low": 1.656, "CI_high": 2.449, "p": 0.0001}
            ],
            "groups": {
                "A": {"n_patients": 50, "n_events": 5, "person_years": 123.4},
                "B": {"n_patients": 50, "n_events": 12, "person_years": 110.0},
            },
        }
        (outdir / "cox.json").write_text(json.dumps(cox))
        cfg = _write_config(tmp_path, outdir)
        result = runner.invoke(main, ["report", "forest", "--config", cfg])
        assert result.exit_code == 0
        lines = (outdir / "forest.csv").read_text().splitlines()
        assert lines[0] == "system,n_patients,n_events,person_years,HR,CI_low,CI_high,p"
        row_a = lines[1].split(",")
        assert row_a[0] == "A" and row_a[4] == ""  # reference level, blank HR
        row_b = lines[2].split(",")
        assert row_b[4] == "2.014"


class TestSynthCommand:
    def test_synth_gen(self, runner, tmp_path):
        outdir = tmp_path / "out"
        cfg = _write_config(tmp_path, outdir, params={"seed": 1})
        result = runner.invoke(main, ["synth", "gen", "--config", cfg])
        assert result.exit_code == 0
        for name in ("notes.jsonl", "gold_relations.csv", "gold_events.csv",
                     "registry.csv", "extracted_implants.csv"):
            assert (outdir / name).exists()
