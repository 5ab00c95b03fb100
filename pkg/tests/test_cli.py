import csv
import json

import pytest

from crashsim.cli import ENV_DATA, EXIT_DATA, EXIT_USAGE, main

pytestmark = pytest.mark.filterwarnings("ignore:scenario type .* left unstratified")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--scenarios", "10", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_generate_layout(dataset):
    m = json.loads((dataset / "manifest.json").read_text())
    assert len(m["scenarios"]) == 10
    assert sum(m["split_counts"].values()) == 10
    assert len(list((dataset / "logs").glob("*.jsonl"))) == 10


def test_evaluate_is_deterministic(dataset, tmp_path, capsys):
    outs = []
    for n in range(2):
        p = tmp_path / f"r{n}.json"
        argv = ["evaluate", "--dataset", str(dataset), "--split", "all", "--samples", "0", "--quiet", "--out", str(p)]
        assert main(argv) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    rep = json.loads(outs[0])
    assert rep["settings"]["config"] == "single" and rep["samples"]["windows"] > 0
    assert "APA=" in capsys.readouterr().out


def test_dataset_from_environment(dataset, monkeypatch, tmp_path):
    monkeypatch.setenv(ENV_DATA, str(dataset))
    assert main(["evaluate", "--split", "all", "--samples", "0", "--quiet", "--out", str(tmp_path / "r.json")]) == 0


def test_noise_sweep_csv(dataset, tmp_path):
    argv = ["sweep", "--dataset", str(dataset), "--split", "all", "--samples", "0", "--quiet",
            "--param", "noise", "--values", "0,0.5", "--configs", "ego+infra", "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = list(csv.DictReader((tmp_path / "sweep_noise.csv").open()))
    assert [float(r["noise"]) for r in rows] == [0.0, 0.5]
    assert all(0.0 <= float(r["apa"]) <= 1.0 for r in rows)
    assert (tmp_path / "sweep_noise.svg").read_text().startswith("<svg")


def test_report_table(dataset, tmp_path, capsys):
    p = tmp_path / "r.json"
    main(["evaluate", "--dataset", str(dataset), "--split", "all", "--samples", "0", "--quiet", "--out", str(p)])
    capsys.readouterr()
    assert main(["report", "--inputs", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("| Config | mIOU") and "| single |" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["generate", "--scenarios", "0", "--out", "x"],
        ["generate", "--scenarios", "2", "--types", "13", "--out", "x"],
        ["evaluate", "--dataset", "x", "--config", "nope"],
        ["evaluate", "--dataset", "x", "--samples", "-1"],
        ["sweep", "--dataset", "x", "--param", "noise", "--values", "a,b"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_missing_dataset_env(monkeypatch):
    monkeypatch.delenv(ENV_DATA, raising=False)
    assert main(["evaluate"]) == EXIT_USAGE


def test_data_errors(tmp_path, dataset, capsys):
    assert main(["evaluate", "--dataset", str(tmp_path), "--quiet"]) == EXIT_DATA
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "logs").mkdir()
    (broken / "manifest.json").write_text((dataset / "manifest.json").read_text())
    for f in (dataset / "logs").iterdir():
        lines = f.read_text().splitlines()
        (broken / "logs" / f.name).write_text("\n".join(lines[:-1]) + "\n")
    assert main(["evaluate", "--dataset", str(broken), "--split", "all", "--quiet"]) == EXIT_DATA
    assert "missing termination" in capsys.readouterr().err
