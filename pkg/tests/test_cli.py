import io
import json
from pathlib import Path

import pandas as pd
import pytest

from helpers import perfect_run
from memtrack.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from memtrack.experiments import COMPARE_COLUMNS, PVS_COLUMNS
from memtrack.metrics import GAP_COLUMNS
from memtrack.records import read_csv, read_run, read_truth, write_run, write_truth
from memtrack.scenario import archetype, generate

EXAMPLE = str(Path(__file__).resolve().parent.parent / "docs" / "examples" / "reentry.yaml")


def run_example(tmp_path, name="run", *extra):
    out, gt = tmp_path / f"{name}.jsonl", tmp_path / f"{name}_gt.jsonl"
    code = main(["run", "--config", EXAMPLE, "--out", str(out), "--gt-out", str(gt), *extra])
    return code, out, gt


def lines_without_timestamp(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    header.pop("created_at")
    return [header] + lines[1:]


class TestRunCommand:
    """memtrack run"""

    def test_writes_run_and_truth(self, tmp_path):
        code, out, gt = run_example(tmp_path)
        assert code == EXIT_OK
        record = read_run(out)
        assert len(record.frames) == 40
        assert len(read_truth(gt).frames) == 40

    def test_deterministic_apart_from_timestamp(self, tmp_path):
        _, first, _ = run_example(tmp_path, "first")
        _, second, _ = run_example(tmp_path, "second")
        assert lines_without_timestamp(first) == lines_without_timestamp(second)

    def test_policy_and_seed_override(self, tmp_path):
        code, out, _ = run_example(tmp_path, "override", "--policy", "coupled", "--seed", "5")
        assert code == EXIT_OK
        record = read_run(out)
        assert record.config.policy.kind.value == "coupled"
        assert record.scenario_seed == 5
        assert record.config.encoder_noise_seed == 5

    def test_missing_config_argument(self, tmp_path):
        assert main(["run", "--out", str(tmp_path / "run.jsonl")]) == EXIT_USAGE

    def test_invalid_config(self, tmp_path):
        config = tmp_path / "bad.yaml"
        config.write_text("targets: 2\nframes: 5\nseed: 1\ntau: 1.5\n", encoding="utf-8")
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "run.jsonl")]) == EXIT_USAGE

    def test_negative_seed(self, tmp_path):
        code, _, _ = run_example(tmp_path, "negative", "--seed", "-1")
        assert code == EXIT_USAGE

    def test_json_logs(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MEMTRACK_LOG", "info")
        run_example(tmp_path)
        events = [json.loads(line)["event"] for line in capsys.readouterr().err.splitlines()
                  if line.startswith("{")]
        assert events[0] == "cli_start"
        assert "run_complete" in events
        assert events[-1] == "cli_end"


class TestEvalAndRender:
    """memtrack eval / memtrack render"""

    @pytest.fixture
    def perfect_files(self, tmp_path):
        truth, _ = generate(archetype("reentry", 3))
        run_path, gt_path = tmp_path / "run.jsonl", tmp_path / "gt.jsonl"
        write_run(perfect_run(truth), run_path, created_at="2026-01-01T00:00:00+00:00")
        write_truth(truth, gt_path)
        return run_path, gt_path

    def test_eval_perfect_run(self, perfect_files, capsys):
        run_path, gt_path = perfect_files
        assert main(["eval", "--run", str(run_path), "--gt", str(gt_path), "--resolution", "64"]) == EXIT_OK
        table = pd.read_csv(io.StringIO(capsys.readouterr().out))
        row = table.iloc[0]
        assert list(table.columns) == ["schema_version", "HOTA", "DetA", "AssA", "J", "F", "JF", "IDSW"]
        assert (row["HOTA"], row["J"], row["F"], row["IDSW"]) == (1.0, 1.0, 1.0, 0)

    def test_eval_missing_run(self, perfect_files, tmp_path):
        _, gt_path = perfect_files
        assert main(["eval", "--run", str(tmp_path / "absent.jsonl"), "--gt", str(gt_path)]) == EXIT_RUNTIME

    def test_eval_frame_mismatch(self, perfect_files, tmp_path):
        run_path, _ = perfect_files
        other, _ = generate(archetype("density(3)", 0))
        gt_path = tmp_path / "other.jsonl"
        write_truth(other, gt_path)
        assert main(["eval", "--run", str(run_path), "--gt", str(gt_path)]) == EXIT_RUNTIME

    def test_resolution_floor(self, perfect_files):
        run_path, gt_path = perfect_files
        assert main(["eval", "--run", str(run_path), "--gt", str(gt_path), "--resolution", "32"]) == EXIT_USAGE

    def test_render(self, perfect_files, tmp_path):
        run_path, gt_path = perfect_files
        first, second = tmp_path / "a", tmp_path / "b"
        for outdir in (first, second):
            assert main(["render", "--run", str(run_path), "--gt", str(gt_path),
                         "--outdir", str(outdir), "--resolution", "64"]) == EXIT_OK
        images = sorted(first.glob("frame_*.ppm"))
        assert len(images) == 40
        assert images[0].name == "frame_0000.ppm"
        assert images[0].read_bytes().startswith(b"P6\n64 64\n255\n")
        for image in images:
            assert image.read_bytes() == (second / image.name).read_bytes()


class TestExperimentCommands:
    """memtrack compare / pvs / sweep"""

    def test_compare_rows(self, tmp_path):
        out = tmp_path / "compare.csv"
        assert main(["compare", "--archetype", "reentry", "--seeds", "2", "--resolution", "64",
                     "--out", str(out)]) == EXIT_OK
        table = read_csv(out)
        assert list(table.columns) == COMPARE_COLUMNS
        assert list(table["kind"]) == ["run"] * 4 + ["mean", "mean", "delta"]
        assert list(table["policy"][:4]) == ["coupled", "coupled", "decoupled", "decoupled"]

    def test_compare_unknown_archetype(self, tmp_path):
        assert main(["compare", "--archetype", "nope", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE

    def test_pvs_rows(self, tmp_path):
        out = tmp_path / "pvs.csv"
        assert main(["pvs", "--archetype", "reentry_multi", "--seeds", "1", "--resolution", "64",
                     "--out", str(out)]) == EXIT_OK
        table = read_csv(out)
        assert list(table.columns) == PVS_COLUMNS
        assert list(table["variant"]) == ["one_by_one", "coupled", "decoupled"] * 2

    def test_sweep_gap_table(self, tmp_path):
        out, runs = tmp_path / "gaps.csv", tmp_path / "runs.csv"
        assert main(["sweep", "--densities", "3", "--seeds", "1", "--resolution", "64",
                     "--out", str(out), "--runs-out", str(runs)]) == EXIT_OK
        assert list(read_csv(out).columns) == GAP_COLUMNS
        assert len(read_csv(runs)) == 2

    def test_bad_densities(self, tmp_path):
        assert main(["sweep", "--densities", "3,x", "--out", str(tmp_path / "g.csv")]) == EXIT_USAGE
