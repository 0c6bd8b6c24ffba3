import csv
import json
import subprocess
import sys

import pytest

from weakground import cli

TRAIN_CFG = {"epochs": 2, "hidden_dim": 32, "embed_dim": 16, "batch_scenes": 4, "lr": 2e-3,
             "encoder_layers": 1, "decoder_layers": 1}
train_mod = sys.modules["weakground.train"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "train.json").write_text(json.dumps(TRAIN_CFG))
    assert run("gen-data", "--scenes", 16, "--seed", 3, "--out", root / "train.jsonl") == 0
    assert run("gen-data", "--scenes", 6, "--seed", 1003, "--out", root / "test.jsonl") == 0
    assert run("train", "--data", root / "train.jsonl", "--config", root / "train.json",
               "--out", root / "run") == 0
    return root


def test_gen_data_writes_sidecars(workdir):
    assert (workdir / "train.jsonl").exists()
    meta = json.loads((workdir / "train.jsonl.meta.json").read_text())
    assert meta["seed"] == 3 and "detector" in meta


def test_gen_data_detector_override(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"detector": {"num_proposals": 20}}))
    assert run("gen-data", "--scenes", 2, "--config", tmp_path / "g.json", "--out", tmp_path / "d.jsonl") == 0
    first = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert len(first["proposals"]["boxes"]) == 20


def test_train_outputs(workdir):
    for name in ("config.json", "best.ckpt", "train_log.json"):
        assert (workdir / "run" / name).exists()


def test_eval_report_is_reproducible(workdir, capsys):
    args = ["eval", "--ckpt", workdir / "run" / "best.ckpt", "--data", workdir / "test.jsonl"]
    assert run(*args, "--report", workdir / "a.csv") == 0
    assert run(*args, "--report", workdir / "b.csv") == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    methods = {r["method"] for r in csv.DictReader((workdir / "a.csv").open())}
    assert methods == {"upper_bound", "random", "ours"}
    assert "ours" in capsys.readouterr().out


def test_eval_with_baseline(workdir):
    assert run("train", "--data", workdir / "train.jsonl", "--config", workdir / "train.json",
               "--method", "mil_nce", "--out", workdir / "mil") == 0
    assert run("eval", "--ckpt", workdir / "run" / "best.ckpt", "--data", workdir / "test.jsonl",
               "--baseline", f"mil_nce={workdir / 'mil' / 'best.ckpt'}", "--report", workdir / "c.csv") == 0
    methods = {r["method"] for r in csv.DictReader((workdir / "c.csv").open())}
    assert "mil_nce" in methods


def test_ablate(workdir):
    cfg = workdir / "abl.json"
    cfg.write_text(json.dumps({**TRAIN_CFG, "epochs": 1, "recon_start_epoch": 1}))
    assert run("ablate", "--data", workdir / "train.jsonl", "--eval-data", workdir / "test.jsonl",
               "--config", cfg, "--out", workdir / "abl.csv") == 0
    methods = {r["method"] for r in csv.DictReader((workdir / "abl.csv").open())}
    assert len(methods) == 5


def test_export_viz(workdir):
    first = json.loads((workdir / "test.jsonl").read_text().splitlines()[0])
    scene_id = first["scene_id"]
    out = workdir / "view.json"
    assert run("export-viz", "--data", workdir / "test.jsonl", "--ckpt", workdir / "run" / "best.ckpt",
               "--scene-id", scene_id, "--out", out) == 0
    view = json.loads(out.read_text())
    assert view["scene_id"] == scene_id and view["queries"]
    assert view["queries"][0]["prediction"] == view["queries"][0]["nms_kept"][0]


def test_export_viz_unknown_scene(workdir):
    assert run("export-viz", "--data", workdir / "test.jsonl", "--ckpt", workdir / "run" / "best.ckpt",
               "--scene-id", "nope", "--out", workdir / "x.json") == cli.EXIT_DATA


class TestExitCodes:
    def test_missing_argument(self):
        with pytest.raises(SystemExit) as exc:
            run("train", "--data", "x")
        assert exc.value.code == cli.EXIT_USAGE

    def test_unknown_config_key(self, workdir, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"lamda": 1}))
        assert run("train", "--data", workdir / "train.jsonl", "--config", tmp_path / "bad.json",
                   "--out", tmp_path / "o") == cli.EXIT_USAGE

    def test_missing_data(self, workdir, tmp_path):
        assert run("train", "--data", tmp_path / "none.jsonl", "--config", workdir / "train.json",
                   "--out", tmp_path / "o") == cli.EXIT_DATA

    def test_corrupt_data(self, workdir, tmp_path):
        (tmp_path / "bad.jsonl").write_text("{not json\n")
        assert run("eval", "--ckpt", workdir / "run" / "best.ckpt", "--data", tmp_path / "bad.jsonl",
                   "--report", tmp_path / "r.csv") == cli.EXIT_DATA

    def test_incompatible_data(self, workdir, tmp_path):
        (tmp_path / "g.json").write_text(json.dumps({"detector": {"num_proposals": 20}}))
        run("gen-data", "--scenes", 2, "--config", tmp_path / "g.json", "--out", tmp_path / "d.jsonl")
        assert run("eval", "--ckpt", workdir / "run" / "best.ckpt", "--data", tmp_path / "d.jsonl",
                   "--report", tmp_path / "r.csv") == cli.EXIT_DATA

    def test_diverged(self, workdir, tmp_path, monkeypatch):
        def nan(*args, **kwargs):
            return {"cls": float("nan")}
        monkeypatch.setattr(train_mod, "training_components", nan)
        assert run("train", "--data", workdir / "train.jsonl", "--config", workdir / "train.json",
                   "--out", tmp_path / "o") == cli.EXIT_DIVERGED


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "weakground.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("gen-data", "train", "eval", "ablate", "export-viz"):
        assert name in out.stdout
