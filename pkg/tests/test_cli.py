import json

import pytest

from cildrift.cli import main


CONFIG_TEMPLATE = """
[strategy]
kind = {kind}
delta = 0

[optimizer]
microbatch_size = 4
max_epochs = 4

[dataset]
synthetic = true
classes = 4
train_per_class = 20
dev_per_class = 5
test_per_class = 10
dim = 8
mode = {mode}
negatives_train = 12
negatives_dev = 4
negatives_test = 6
data_seed = 3

[run]
sessions = 2
permutations = 1
seed = 4
output = {out}
"""


def write_cfg(tmp_path, kind="ice_o", mode="detection", name="exp.ini"):
    out = tmp_path / "results"
    path = tmp_path / name
    path.write_text(CONFIG_TEMPLATE.format(kind=kind, mode=mode, out=out))
    return path, out


def test_gen_synthetic_then_inspect(tmp_path, capsys):
    out = tmp_path / "toy.cilf"
    rc = main([
        "gen-synthetic", "--out", str(out), "--classes", "3", "--train", "5",
        "--test", "2", "--dim", "4", "--mode", "detection", "--neg-train", "4",
        "--seed", "1",
    ])
    assert rc == 0
    assert out.exists()
    rc = main(["inspect", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "task mode    : detection" in text
    assert "dimension    : 4" in text


def test_run_command_writes_report(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path)
    rc = main(["run", "--config", str(cfg)])
    assert rc == 0
    for name in ("metrics.tsv", "summary.tsv", "traces.tsv", "manifest.json", "report.json"):
        assert (out / name).exists(), name
    assert "session 2" in capsys.readouterr().out


def test_run_overrides(tmp_path):
    cfg, out = write_cfg(tmp_path)
    other = tmp_path / "other"
    rc = main([
        "run", "--config", str(cfg), "--strategy", "drifted", "--delta", "1.5",
        "--seed", "9", "--permutations", "1", "--out", str(other),
    ])
    assert rc == 0
    manifest = json.loads((other / "manifest.json").read_text())
    assert manifest["strategy"] == "drifted"
    assert manifest["master_seed"] == 9


def test_run_resume_roundtrip(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    first = (out / "report.json").read_bytes()
    assert main(["run", "--config", str(cfg), "--resume"]) == 0
    assert (out / "report.json").read_bytes() == first


def test_sweep_delta(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path)
    rc = main(["sweep-delta", "--config", str(cfg), "--deltas=-1,0,1"])
    assert rc == 0
    text = capsys.readouterr().out
    assert any(line.startswith("delta\t-1\t0\t1") for line in text.splitlines())
    table = (out / "delta_sweep.tsv").read_text().splitlines()
    assert table[0] == "delta\t-1\t0\t1"
    assert table[1].startswith("final_micro_f1\t")


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[strategy]\nkind = warp\n[dataset]\nsynthetic = true\n[run]\nsessions = 2\n")
    rc = main(["run", "--config", str(bad)])
    assert rc == 2
    assert "error" in capsys.readouterr().err

    rc = main(["run", "--config", str(tmp_path / "missing.ini")])
    assert rc == 2


def test_exit_code_data_error(tmp_path, capsys):
    garbage = tmp_path / "junk.cilf"
    garbage.write_bytes(b"NOTAFEATUREFILE")
    rc = main(["inspect", str(garbage)])
    assert rc == 3

    rc = main(["inspect", str(tmp_path / "absent.cilf")])
    assert rc == 3


def test_sweep_bad_delta_list(tmp_path):
    cfg, _ = write_cfg(tmp_path)
    assert main(["sweep-delta", "--config", str(cfg), "--deltas", "a,b"]) == 2
