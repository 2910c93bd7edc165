from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from ipcir.layout import serialize_layout, ProxyLayout, LayoutInstance, Modality


def run_cli(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "ipcir.cli", *args],
        capture_output=True, text=True, env=full_env, cwd=cwd,
    )


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    proc = run_cli(
        "gen-synth", "--out", str(root), "--dim", "16", "--gallery", "200",
        "--queries", "10", "--edit", "0.7", "--noise", "0.4", "--proxies", "3",
        "--seed", "17", "--hard-negatives", "0.2",
    )
    assert proc.returncode == 0, proc.stderr
    return root / "manifest.json"


class TestCommands:
    def test_gen_synth_prints_manifest_path(self, dataset):
        assert dataset.exists()

    def test_ingest_summary(self, dataset):
        proc = run_cli("ingest", "--manifest", str(dataset))
        assert proc.returncode == 0, proc.stderr
        assert "queries: 10" in proc.stdout
        assert "dim: 16" in proc.stdout

    def test_retrieve_writes_outputs(self, dataset, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "retrieve", "--manifest", str(dataset), "--lambda", "0.3",
            "--weights", "1,1,1", "--agg", "mean", "--norm", "minmax",
            "--out", str(out), "--threads", "2",
        )
        assert proc.returncode == 0, proc.stderr
        for name in ("rankings.csv", "report.json", "report.csv", "report.png"):
            assert (out / name).exists(), name
        assert "recall@1:" in proc.stdout

    def test_no_figures_flag(self, dataset, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "retrieve", "--manifest", str(dataset), "--out", str(out), "--no-figures"
        )
        assert proc.returncode == 0, proc.stderr
        assert not (out / "report.png").exists()

    def test_evaluate_skips_rankings(self, dataset, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "evaluate", "--manifest", str(dataset), "--out", str(out), "--no-figures"
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "report.json").exists()
        assert not (out / "rankings.csv").exists()

    def test_sweep_lambda_csv(self, dataset, tmp_path):
        out = tmp_path / "sweep"
        proc = run_cli(
            "sweep-lambda", "--manifest", str(dataset), "--grid", "0,0.5,1",
            "--out", str(out), "--no-figures",
        )
        assert proc.returncode == 0, proc.stderr
        lines = (out / "sweep_lambda.csv").read_text().splitlines()
        assert lines[0] == "lambda,metric,k,value"
        xs = {line.split(",")[0] for line in lines[1:]}
        assert xs == {"0.0", "0.5", "1.0"}

    def test_sweep_proxies_csv(self, dataset, tmp_path):
        out = tmp_path / "sweep"
        proc = run_cli(
            "sweep-proxies", "--manifest", str(dataset), "--max-proxies", "3",
            "--out", str(out), "--no-figures",
        )
        assert proc.returncode == 0, proc.stderr
        lines = (out / "sweep_proxies.csv").read_text().splitlines()
        assert lines[0] == "n_proxies,metric,k,value"
        assert {line.split(",")[0] for line in lines[1:]} == {"1", "2", "3"}

    def test_threads_env_fallback(self, dataset, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "evaluate", "--manifest", str(dataset), "--out", str(out), "--no-figures",
            env={"IPCIR_THREADS": "2"},
        )
        assert proc.returncode == 0, proc.stderr


class TestExitCodes:
    def test_missing_manifest_is_config_error(self, tmp_path):
        proc = run_cli(
            "retrieve", "--manifest", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "out"),
        )
        assert proc.returncode == 2
        assert "error[" in proc.stderr

    def test_bad_lambda_is_config_error(self, dataset, tmp_path):
        proc = run_cli(
            "retrieve", "--manifest", str(dataset), "--lambda", "1.5",
            "--out", str(tmp_path / "out"),
        )
        assert proc.returncode == 2

    def test_corrupt_set_file_is_data_error(self, dataset, tmp_path):
        import shutil

        data_dir = dataset.parent
        corrupted = tmp_path / "data"
        shutil.copytree(data_dir, corrupted)
        blob = bytearray((corrupted / "gallery.ipce").read_bytes())
        blob[:4] = b"BAD!"
        (corrupted / "gallery.ipce").write_bytes(bytes(blob))
        proc = run_cli(
            "retrieve", "--manifest", str(corrupted / "manifest.json"),
            "--out", str(tmp_path / "out"),
        )
        assert proc.returncode == 3
        assert "error[embed_store]" in proc.stderr

    def test_protocol_error_exit_code(self, dataset, tmp_path):
        proc = run_cli(
            "sweep-proxies", "--manifest", str(dataset), "--max-proxies", "9",
            "--out", str(tmp_path / "out"), "--no-figures",
        )
        assert proc.returncode == 4
        assert "error[pipeline]" in proc.stderr


class TestValidateLayouts:
    def _corpus(self, tmp_path) -> Path:
        corpus = tmp_path / "layouts"
        corpus.mkdir()
        good = ProxyLayout(
            "a park", (LayoutInstance("a bench", (0.1, 0.5, 0.4, 0.9), Modality.TEXT),)
        )
        (corpus / "good.json").write_text(serialize_layout(good))
        (corpus / "inverted.json").write_text(json.dumps({
            "scene": "a park",
            "instances": [{"desc": "a bench", "bbox": [0.8, 0.2, 0.2, 0.9],
                           "modality": "text"}],
        }))
        (corpus / "broken.json").write_text('{"scene": "x", ')
        return corpus

    def test_report_lines_and_exit_code(self, tmp_path):
        corpus = self._corpus(tmp_path)
        proc = run_cli("validate-layouts", str(corpus))
        assert proc.returncode == 3
        lines = [l for l in proc.stdout.splitlines() if l]
        assert any(l.startswith("inverted.json\t0\tx_order") for l in lines)
        assert any(l.startswith("broken.json\t-\tparse") for l in lines)
        assert not any(l.startswith("good.json") for l in lines)

    def test_clean_corpus_exits_zero(self, tmp_path):
        corpus = tmp_path / "layouts"
        corpus.mkdir()
        good = ProxyLayout(
            "a shop", (LayoutInstance("a sign", (0.2, 0.1, 0.9, 0.4), Modality.IMAGE),)
        )
        (corpus / "only.json").write_text(serialize_layout(good))
        proc = run_cli("validate-layouts", str(corpus))
        assert proc.returncode == 0
        assert proc.stdout == ""

    def test_report_file_output(self, tmp_path):
        corpus = self._corpus(tmp_path)
        report = tmp_path / "findings.txt"
        proc = run_cli("validate-layouts", str(corpus), "--out", str(report))
        assert proc.returncode == 3
        assert "inverted.json" in report.read_text()
