import json
import os.path as op

import pytest

import splitflow as sf
from splitflow.cli import EXIT_CODES, main

data_path = op.join(sf.__path__[0], "data", "config_ref_data")
tiny_cfg = op.join(data_path, "tiny_run.cfg")


def _last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_verify(capsys):
    assert main(["verify", "--field", "time_poly", "--n", "200"]) == 0
    out = _last_json(capsys.readouterr().out)
    assert out["field"] == "time_poly"
    assert out["isc_residual_max"] < 1e-10
    assert out["limit"]["order"] == pytest.approx(1.0, abs=0.1)


def test_verify_bad_field(capsys):
    assert main(["verify", "--field", "quadratic"]) == EXIT_CODES["input"] == 2
    err = _last_json(capsys.readouterr().err)
    assert err["error"] == "input"
    assert "--field" in err["message"]


def test_pipeline(tmp_run_dir, capsys):
    common = ["--config", tiny_cfg, "--out", tmp_run_dir]
    assert main(["pretrain"] + common + ["--steps", "3"]) == 0
    out = _last_json(capsys.readouterr().out)
    assert out["run"] == "tiny-run"
    assert out["steps"] == 3
    assert op.isfile(out["checkpoint"])

    assert main(["distill"] + common + ["--teacher", "tiny-run", "--steps", "3"]) == 0
    out = _last_json(capsys.readouterr().out)
    assert out["checkpoint"].endswith(op.join("checkpoints", "distill.ckpt"))
    assert out["loss"] is not None

    assert main(["sample", "--name", "tiny-run", "--n", "7", "--k", "2"]) == 0
    out = _last_json(capsys.readouterr().out)
    assert out["n"] == 7
    assert op.isfile(out["samples"])

    assert main(["eval", "--name", "tiny-run", "--teacher", "tiny-run"]) == 0
    out = _last_json(capsys.readouterr().out)
    assert [r["sampler"] for r in out["reports"]] == [
        "few_step_1",
        "few_step_2",
        "teacher_euler_4",
    ]


def test_distill_without_teacher(tmp_run_dir, capsys):
    code = main(["distill", "--config", tiny_cfg, "--out", tmp_run_dir])
    assert code == EXIT_CODES["teacher"] == 4
    assert _last_json(capsys.readouterr().err)["error"] == "teacher"


def test_unknown_config_key(tmp_run_dir, capsys):
    code = main(["pretrain", "--config", op.join(data_path, "bad_key.cfg"), "--out", tmp_run_dir])
    assert code == EXIT_CODES["config"] == 3
    err = _last_json(capsys.readouterr().err)
    assert "flow_ratoi_p" in err["message"]


def test_prune(tmp_cfg_dir, capsys):
    sf.config.add_resource("runs", "gone-run", "/nonexistent/gone-run")
    assert main(["prune"]) == 0
    assert _last_json(capsys.readouterr().out) == {"pruned": ["gone-run"]}


def test_version():
    with pytest.raises(SystemExit):
        main(["--version"])
