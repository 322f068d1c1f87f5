import json
from pathlib import Path

import numpy as np
import pytest

from bical.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, read_config
from bical.dedup import save_clip
from bical.errors import ConfigError
from bical.model import load_checkpoint
from bical.trainer import LOG_COLUMNS

from dedup_fixtures import fifty_clip_fixture

from pipeline_helpers import GEN, TRAIN, artifact_bytes, run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    return root, run_pipeline(root)


def test_pipeline_outputs(pipeline):
    root, (c, v, t, p) = pipeline
    for f in ["corpus.jsonl", "corpus.bin", "manifest.json"]:
        assert (c / f).exists()
    for f in ["vocab.json", "vocab.bin", "supervision.jsonl", "supervision.bin"]:
        assert (v / f).exists()
    assert (t / "log.csv").read_text().splitlines()[0].split(",") == LOG_COLUMNS
    result = json.loads(p.read_text())
    assert 0 <= result["top1"] <= result["top5"] <= 1


def test_manifest_paths_exist_and_argv_reruns(pipeline, tmp_path):
    root, (c, v, t, p) = pipeline
    manifest = json.loads((t / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["deterministic"]
    for entry in manifest["inputs"] + manifest["artifacts"]:
        assert Path(entry["path"]).exists()
    argv = list(manifest["argv"])
    argv[argv.index("--out") + 1] = str(tmp_path / "again")
    assert main(argv) == EXIT_OK
    assert (tmp_path / "again" / "model.bin").read_bytes() == (t / "model.bin").read_bytes()


def test_determinism_two_runs(tmp_path):
    a = artifact_bytes(run_pipeline(tmp_path / "a")[0].parent)
    b = artifact_bytes(run_pipeline(tmp_path / "b")[0].parent)
    assert a.keys() == b.keys() and len(a) > 10
    assert a == b


def test_gen_byte_identical(tmp_path):
    for d in ("x", "y"):
        assert main(["gen", "--seed", "7", "--out", str(tmp_path / d)] + GEN) == EXIT_OK
    for f in ("corpus.jsonl", "corpus.bin"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_stage2_zero_equals_stage1(pipeline, tmp_path):
    _, (c, v, _, _) = pipeline
    out = tmp_path / "t0"
    args = ["train", "--corpus", str(c), "--vocab", str(v), "--out", str(out),
            "--stage1-epochs", "2", "--stage2-epochs", "0", "--batch-size", "16", "--hidden", "8"]
    assert main(args) == EXIT_OK
    p1, _, _ = load_checkpoint(out / "stage1")
    p2, _, _ = load_checkpoint(out / "model")
    assert p1.equals(p2)
    assert (out / "stage1.bin").read_bytes() == (out / "model.bin").read_bytes()


def test_resume_matches_full_run(pipeline, tmp_path):
    _, (c, v, t, _) = pipeline
    out = tmp_path / "r"
    base = ["--corpus", str(c), "--vocab", str(v), "--out", str(out), "--deterministic"] + TRAIN
    assert main(["train"] + base) == EXIT_OK
    # continue from the end-of-stage-1 checkpoint into a fresh directory
    out2 = tmp_path / "r2"
    assert main(["train", "--corpus", str(c), "--vocab", str(v), "--out", str(out2),
                 "--resume", str(out / "stage1.json"), "--deterministic"] + TRAIN) == EXIT_OK
    assert (out2 / "model.bin").read_bytes() == (t / "model.bin").read_bytes()


def test_config_file_and_override(pipeline, tmp_path):
    _, (c, v, _, _) = pipeline
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"# training\ncorpus = {c}\nvocab = {v}\nout = {tmp_path / 'o'}\n"
                   "stage1-epochs = 1\nstage2_epochs = 5\nbatch_size = 16\nhidden = 8\n"
                   "disable_q2t = true\n")
    assert main(["train", "--config", str(cfg), "--stage2-epochs", "0"]) == EXIT_OK
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["train"]["stage2_epochs"] == 0
    assert manifest["config"]["train"]["stage1_epochs"] == 1
    assert manifest["config"]["train"]["disable_q2t"] is True


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lr = 0.1\nmystery_knob = 3\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    assert "mystery_knob" in capsys.readouterr().err
    cfg.write_text("lr = fast\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    assert "'lr'" in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        cfg.write_text("a = 1\na = 2\n")
        read_config(cfg)
    assert info.value.key == "a"


def test_invalid_values_are_config_errors(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "g"), "--isomorphism-rate", "2"]) == EXIT_CONFIG
    assert main(["dedup", "--corpus", "x", "--downstream", "y", "--report", "r.json",
                 "--threshold", "-1"]) == EXIT_CONFIG


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--no-such-flag"]) == EXIT_USAGE
    assert main(["gen"]) == EXIT_USAGE
    assert main(["probe", "--split", "abc"]) == EXIT_USAGE


def test_runtime_errors(tmp_path):
    assert main(["probe", "--checkpoint", str(tmp_path / "none"), "--corpus", str(tmp_path),
                 "--out", str(tmp_path / "r.json")]) == EXIT_RUNTIME
    bad = tmp_path / "c"
    bad.mkdir()
    (bad / "corpus.jsonl").write_text("{oops\n")
    assert main(["vocab", "--corpus", str(bad), "--out", str(tmp_path / "v")]) == EXIT_RUNTIME


def test_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["dedup", "--help"])
    assert info.value.code == 0
    assert "--threshold" in capsys.readouterr().out


def test_dedup_command(tmp_path):
    corpus, downstream = fifty_clip_fixture(seed=0)
    for c in corpus:
        save_clip(tmp_path / "corpus" / c.clip_id, c)
    for c in downstream:
        save_clip(tmp_path / "down" / c.clip_id, c)
    reports = []
    for name in ("a.json", "b.json"):
        assert main(["dedup", "--corpus", str(tmp_path / "corpus"), "--downstream",
                     str(tmp_path / "down"), "--threshold", "2", "--seed", "3",
                     "--report", str(tmp_path / name)]) == EXIT_OK
        reports.append((tmp_path / name).read_bytes())
    assert reports[0] == reports[1]
    report = json.loads(reports[0])
    dropped = {d["clip_id"] for d in report["dropped"]}
    assert len(dropped) == 20 and all(not cid.startswith("rand") for cid in dropped)
    assert all(d["min_distance"] < 2 for d in report["dropped"])
    assert (tmp_path / "a.manifest.json").exists()


def test_ablate_shape(tmp_path, capsys):
    args = ["ablate", "--seeds", "2", "--n-queries", "3", "--samples-per-mode", "15",
            "--stage1-epochs", "1", "--stage2-epochs", "1", "--hidden", "8",
            "--no-diagnostics", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    rows = [l for l in out if l.split() and l.split()[0] in
            ("QS", "TS", "QS+TS", "BCN_Q", "BCN_T", "BCN")]
    assert len(rows) == 6 and all(len(r.split()) == 4 for r in rows)
    data = json.loads((tmp_path / "ablation.json").read_text())
    assert list(data["summary"]) == ["QS", "TS", "QS+TS", "BCN_Q", "BCN_T", "BCN"]
    assert all(len(v) == 2 for v in data["top1"].values())
    assert set(data["summary"]["BCN"]) == {"mean", "std"}
