import json
import os

import pytest

from metasrl.cli import main


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


TASK_DOC = {"mode": "HighSimilarity", "num_tasks": 3,
            "base": {"rows": 3, "cols": 3, "seed": 2}, "seed": 1}

RUN_DOC = {
    "task_source": TASK_DOC,
    "strategies": ["Random", "MetaSrl"],
    "runs_per_strategy": 2,
    "crpo": {"learning_rate": 0.5, "steps": 4, "tolerance": 0.05,
             "episodes_per_step": 1, "episode_horizon": 3},
    "master_seed": 7,
}


class TestGenTasks:
    def test_success(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "tasks.json", TASK_DOC)
        out = str(tmp_path / "tasks")
        assert main(["gen-tasks", "--config", cfg, "--out", out]) == 0
        names = sorted(os.listdir(out))
        assert names == ["manifest.json", "task_000.json", "task_001.json",
                         "task_002.json"]
        assert "wrote 3 tasks" in capsys.readouterr().out

    def test_bad_mode_exit_2(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bad.json", {**TASK_DOC, "mode": "Nope"})
        assert main(["gen-tasks", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["gen-tasks", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_generation_failure_exit_3(self, tmp_path, capsys):
        doc = {"mode": "LowSimilarity", "num_tasks": 1,
               "base": {"rows": 2, "cols": 2},
               "low_sim_prob_range": [0.0, 0.0]}
        cfg = write_json(tmp_path / "impossible.json", doc)
        assert main(["gen-tasks", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 3
        assert "runtime failure" in capsys.readouterr().err


class TestRun:
    def test_run_and_report(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "run.json", RUN_DOC)
        out = str(tmp_path / "run_out")
        assert main(["run", "--config", cfg, "--out", out]) == 0
        capsys.readouterr()
        files = os.listdir(out)
        assert "curves_Random.csv" in files
        assert "regret_MetaSrl.json" in files
        assert "config.json" in files

        assert main(["report", "--in", out, "--format", "csv"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("strategy,taog,")
        assert {l.split(",")[0] for l in lines[1:]} == {"Random", "MetaSrl"}

        assert main(["report", "--in", out, "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"Random", "MetaSrl"}
        assert "taog" in doc["Random"]

    def test_strategy_and_seed_overrides(self, tmp_path):
        cfg = write_json(tmp_path / "run.json", RUN_DOC)
        out = str(tmp_path / "one")
        assert main(["run", "--config", cfg, "--out", out,
                     "--seed", "3", "--strategy", "Random"]) == 0
        files = os.listdir(out)
        assert "curves_Random.csv" in files
        assert not any("MetaSrl" in f for f in files)
        written = json.loads(open(os.path.join(out, "config.json")).read())
        assert written["master_seed"] == 3
        assert written["strategies"] == ["Random"]

    def test_run_from_task_directory(self, tmp_path):
        cfg = write_json(tmp_path / "tasks.json", TASK_DOC)
        tasks_dir = str(tmp_path / "tasks")
        assert main(["gen-tasks", "--config", cfg, "--out", tasks_dir]) == 0
        run_doc = {**RUN_DOC, "task_source": tasks_dir,
                   "strategies": ["Random"], "runs_per_strategy": 1}
        rcfg = write_json(tmp_path / "run2.json", run_doc)
        out = str(tmp_path / "from_dir")
        assert main(["run", "--config", rcfg, "--out", out]) == 0

    def test_bad_strategy_exit_2(self, tmp_path):
        cfg = write_json(tmp_path / "run.json", RUN_DOC)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "x"),
                     "--strategy", "Bogus"]) == 2


class TestReport:
    def test_empty_dir_exit_2(self, tmp_path):
        assert main(["report", "--in", str(tmp_path)]) == 2
