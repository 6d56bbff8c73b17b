import csv
import json
import os
import os.path as op

import numpy as np
import pytest

import splitflow as sf
from splitflow import checkpoint, metrics, runner

data_path = op.join(sf.__path__[0], "data")
tiny_cfg = op.join(data_path, "config_ref_data", "tiny_run.cfg")


def _settings(out, **overrides):
    overrides = {("run", "out"): out, **{tuple(k.split(".")): v for k, v in overrides.items()}}
    return sf.config.read_run_config(tiny_cfg, overrides)


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_run_name_validation(tmp_run_dir):
    with pytest.raises(sf.SplitflowInputError):
        sf.Run(_settings(tmp_run_dir), name="bad_name")
    with pytest.raises(sf.SplitflowInputError):
        sf.Run(_settings(tmp_run_dir), name="0-run")
    assert not os.listdir(tmp_run_dir)


def test_run_registers_itself(tmp_run_dir):
    run = sf.Run(_settings(tmp_run_dir))
    assert run.name == "tiny-run"
    assert run.run_dir == op.join(op.abspath(tmp_run_dir), "tiny-run")
    assert sf.config.get_run_dir("tiny-run") == run.run_dir
    assert op.isfile(run.config_path)
    assert sf.config.read_run_config(run.config_path) == run.settings

    reopened = sf.Run.from_id("tiny-run")
    assert reopened.run_dir == run.run_dir
    assert reopened.settings.plan == run.settings.plan


def test_reopen_keeps_config_snapshot(tmp_run_dir):
    run = sf.Run(_settings(tmp_run_dir))
    with open(run.config_path) as f:
        snapshot = f.read()

    reopened = sf.Run.from_id("tiny-run", {("train", "steps"): "7"})
    assert reopened.settings.plan.steps == 7
    with open(run.config_path) as f:
        assert f.read() == snapshot
    assert sf.config.read_run_config(run.config_path) == run.settings


def test_full_pipeline(tmp_run_dir):
    run = sf.Run(_settings(tmp_run_dir))

    pretrained = run.pretrain()
    assert op.isfile(run.checkpoint_path("pretrain"))
    assert all(r.branch_mix == 1.0 for r in pretrained.history)
    _, ema, plan = checkpoint.load(run.checkpoint_path("pretrain"))
    assert ema is not None
    assert plan.mode == "from_scratch"

    distilled = run.distill(teacher="tiny-run")
    assert len(distilled.history) == 2
    meanflow = run.meanflow_distill(teacher=run.checkpoint_path("pretrain"))
    assert [r.objective for r in meanflow.history] == ["meanflow", "meanflow"]

    rows = _rows(run.metrics_path)
    assert [r["phase"] for r in rows] == ["pretrain"] * 2 + ["distill"] * 2 + ["meanflow_distill"] * 2
    assert [int(r["step"]) for r in rows] == [3, 6] * 3
    assert all(np.isfinite(float(r["loss"])) for r in rows)

    points = run.sample()
    assert points.shape == (20, 2)
    with open(run.samples_path) as f:
        assert f.readline().strip() == "x0,x1,cond"
    table = np.loadtxt(run.samples_path, delimiter=",", skiprows=1)
    assert table.shape == (20, 3)
    np.testing.assert_array_equal(table[:, :2], points)

    reports = run.evaluate(teacher="tiny-run")
    assert [r.sampler for r in reports] == ["few_step_1", "few_step_2", "teacher_euler_4"]
    assert all(r.mmd_rbf is not None and r.w2_1d is None for r in reports)
    assert reports[0].boundary_gap is not None
    assert reports[2].boundary_gap is None
    assert all(np.isfinite(r.limit_slope) for r in reports[:2])
    assert reports[2].limit_slope is None
    report_rows = _rows(run.reports_path)
    assert report_rows[0]["limit_slope"] != ""
    assert report_rows[2]["limit_slope"] == ""
    assert len(report_rows) == 3

    with open(run.summary_path) as f:
        summary = json.load(f)
    assert set(summary) == {"pretrain", "distill", "meanflow_distill", "evaluate"}
    assert summary["pretrain"]["ops_per_step"]["forward:student"] == 1.0
    assert summary["distill"]["ops_per_step"].get("jvp", 0) == 0
    assert 0 < summary["meanflow_distill"]["ops_per_step"]["jvp"] <= 1
    assert summary["distill"]["mode"] == "distill"


def test_training_is_deterministic(tmp_run_dir):
    first = sf.Run(_settings(tmp_run_dir), name="tiny-a")
    second = sf.Run(_settings(tmp_run_dir), name="tiny-b")
    first.pretrain()
    second.pretrain()
    with open(first.metrics_path, "rb") as a, open(second.metrics_path, "rb") as b:
        assert a.read() == b.read()

    other_seed = sf.Run(_settings(tmp_run_dir, **{"run.seed": "4"}), name="tiny-c")
    other_seed.pretrain()
    with open(first.metrics_path, "rb") as a, open(other_seed.metrics_path, "rb") as c:
        assert a.read() != c.read()


def test_missing_pieces(tmp_run_dir):
    run = sf.Run(_settings(tmp_run_dir))
    with pytest.raises(sf.ResourceDoesNotExistException):
        run.sample()
    with pytest.raises(sf.MissingTeacherError):
        run.distill()
    with pytest.raises(sf.ResourceDoesNotExistException):
        run.distill(teacher="no-such-run")


def test_clobber(tmp_run_dir):
    run = sf.Run(_settings(tmp_run_dir, **{"train.steps": "2"}))
    run.pretrain()
    run.clobber()
    assert run.clobbered
    assert not op.exists(run.run_dir)
    assert "tiny-run" not in sf.config.registered_runs()
    with pytest.raises(sf.ResourceDoesNotExistException):
        run.pretrain()
    run.clobber()


def test_evaluation_limit_check():
    rng = np.random.default_rng(3)
    points = metrics.make_probes(2, rng, n=64)
    check = runner.evaluation_limit_check(sf.AnalyticField.time_poly(), points)
    assert check.order == pytest.approx(1.0, abs=0.1)

    narrow = points._replace(r=points.t - 0.01)
    assert runner.evaluation_limit_check(sf.AnalyticField.time_poly(), narrow) is None
