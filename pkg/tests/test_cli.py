import json

import pytest

from vehiclemae.cli import EXIT_OK, EXIT_VALIDATION, main
from vehiclemae.data import ManifestRecord, load_manifest, write_manifest
from vehiclemae.losses import COMPONENTS
from vehiclemae.training import METRICS_NAME, read_metrics


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--n", "16", "--seed", "1"]) == EXIT_OK
    return out


def test_synth_writes_manifest(dataset):
    records = load_manifest(dataset / "manifest.jsonl")
    assert len(records) == 16
    assert (dataset / "corpus.txt").is_file()


def test_check_grads(capsys):
    assert main(["check-grads", "--seed", "7", "--instances", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in COMPONENTS:
        assert name in out
    assert "FAIL" not in out


def test_mask_plan_renders_three_overlays(dataset, tmp_path, capsys):
    records = load_manifest(dataset / "manifest.jsonl")
    index = next(i for i, r in enumerate(records) if r.angle is not None)
    out = tmp_path / "plans"
    code = main(["mask-plan", "--manifest", str(dataset / "manifest.jsonl"), "--index", str(index), "--out", str(out)])
    assert code == EXIT_OK
    assert len(list(out.glob("*.png"))) == 3
    plan = json.loads(next(out.glob("*symmetry_guided.json")).read_text())
    assert len(plan["masked"]) == 12
    assert "FAIL" not in capsys.readouterr().out


def test_mask_plan_bad_index(dataset, tmp_path):
    code = main(["mask-plan", "--manifest", str(dataset / "manifest.jsonl"), "--index", "99", "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION


def test_gen_prompts(dataset, tmp_path):
    records = load_manifest(dataset / "manifest.jsonl")
    bare = tmp_path / "bare.jsonl"
    write_manifest(bare, [ManifestRecord(str(dataset / r.image_path), None, r.box, r.angle) for r in records])
    out = tmp_path / "with_prompts.jsonl"
    assert main(["gen-prompts", "--manifest", str(bare), "--output", str(out)]) == EXIT_OK
    assert [r.prompt for r in load_manifest(out)] == [r.prompt for r in records]


def test_pretrain_and_plot(dataset, tmp_path, monkeypatch):
    run = tmp_path / "run"
    monkeypatch.setenv("VEHICLEMAE_OUT", str(run))
    monkeypatch.setenv("VEHICLEMAE_SEED", "3")
    assert main(["pretrain", "--manifest", str(dataset / "manifest.jsonl"), "--epochs", "1"]) == EXIT_OK
    rows = read_metrics(run / METRICS_NAME)
    assert len(rows) == 1
    assert '"seed": 3' in (run / METRICS_NAME).read_text().splitlines()[0]
    plots = tmp_path / "plots"
    assert main(["plot", "--metrics", str(run / METRICS_NAME), "--out", str(plots)]) == EXIT_OK
    assert len(list(plots.glob("*.png"))) == len(COMPONENTS) + 1


def test_pretrain_with_config_file(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 8, "mask": {"ratio": 0.5}}))
    out = tmp_path / "run"
    code = main(["pretrain", "--config", str(cfg), "--manifest", str(dataset / "manifest.jsonl"), "--out", str(out)])
    assert code == EXIT_OK
    rows = read_metrics(out / METRICS_NAME)
    assert len(rows) == 2 and rows[0]["masked_count"] == 8 * 8


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nope"],
        ["pretrain"],
        ["mask-plan"],
        ["plot", "--metrics", "/nonexistent/metrics.jsonl"],
        ["pretrain", "--manifest", "/nonexistent/manifest.jsonl"],
    ],
)
def test_validation_failures_exit_one(argv):
    assert main(argv) == EXIT_VALIDATION


def test_bad_env_seed(monkeypatch, tmp_path):
    monkeypatch.setenv("VEHICLEMAE_SEED", "abc")
    assert main(["synth", "--out", str(tmp_path), "--n", "1"]) == EXIT_VALIDATION
