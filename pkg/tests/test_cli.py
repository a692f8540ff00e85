import json

import pytest

import cli
from conftest import write_lines


def test_run_prints_metrics(tmp_path, planted, capsys):
    out = tmp_path / "out"
    code = cli.main([
        "run", "--data", planted.data_dir, "--out", str(out),
        "--num-subtasks", "2", "--iterations", "1", "--log-level", "WARNING",
    ])
    assert code == 0
    metrics = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(metrics) == {"hits1", "hits5", "mrr", "coverage_recall", "n_test"}
    assert metrics["n_test"] == len(planted.test)

    assert cli.main(["eval", "--out", str(out)]) == 0
    again = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert again == pytest.approx(metrics)


def test_partition_command(tmp_path, planted, capsys):
    assert cli.main(["partition", "--data", planted.data_dir, "--num-subtasks", "3"]) == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.strip().splitlines()]
    assert len(rows) == planted.kg_s.entity_count
    assert {part for _, part in rows} == {"0", "1", "2"}

    target = tmp_path / "parts.tsv"
    assert cli.main(["partition", "--data", planted.data_dir, "--num-subtasks", "3", "--out", str(target)]) == 0
    assert target.exists()


def test_engine_errors_exit_with_one(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    write_lines(data / "rel_triples_1", [("a", "r")])
    write_lines(data / "rel_triples_2", [("x", "r", "y")])
    assert cli.main(["run", "--data", str(data), "--out", str(tmp_path / "out")]) == 1
    assert cli.main(["eval", "--out", str(tmp_path / "missing")]) == 1


def test_bad_arguments_exit_with_two():
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--data", "d"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["unknown"])
