import json

import numpy as np
import pytest

from dpmorse.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

SMALL = ["--method", "em_hard", "--k0", "6", "--k", "2", "--n", "400", "--data-seed", "0", "--seed", "0"]


def test_fit_tev_merge_chain(tmp_path, capsys):
    model, tevs, merged = tmp_path / "model.json", tmp_path / "tevs.json", tmp_path / "merge.json"
    assert main(["fit", *SMALL, "--out", str(model)]) == EXIT_OK
    doc = json.loads(model.read_text())
    assert doc["model"]["weights"] and doc["privacy"] is None
    assert main(["tev", "--model", str(model), "--out", str(tevs)]) == EXIT_OK
    t = json.loads(tevs.read_text())
    assert t["n_centers"] == 6
    assert [(r["a"], r["b"]) for r in t["records"]] == sorted((r["a"], r["b"]) for r in t["records"])
    assert main(["merge", "--tevs", str(tevs), "--k", "2", "--k0", "6", "--out", str(merged), "--render"]) == 0
    m = json.loads(merged.read_text())
    assert m["achieved_k"] == 2 and sorted(set(m["labels"])) == [0, 1]
    assert "leaf" in capsys.readouterr().err


def test_run_then_score(tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["run", *SMALL, "--repeats", "1", "--out", str(report)]) == EXIT_OK
    assert json.loads(report.read_text())["repeats"][0]["ari_merged"] == 1.0
    assert main(["score", "--pred", str(report), *SMALL]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["ari"] == 1.0


def test_score_label_files(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.json"
    a.write_text("0\n0\n1\n1\n")
    b.write_text("[0, 1, 0, 1]")
    assert main(["score", "--pred", str(a), "--truth", str(b)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["ari"] == -0.5


def test_run_on_csv_data(tmp_path):
    rng = np.random.default_rng(0)
    rows = np.vstack([rng.normal([-5, 0], 0.3, size=(60, 2)), rng.normal([5, 0], 0.3, size=(60, 2))])
    csv = tmp_path / "d.csv"
    csv.write_text("x,y,c\n" + "".join(f"{x},{y},{i // 60}\n" for i, (x, y) in enumerate(rows)))
    out = tmp_path / "r.json"
    args = ["run", "--data", str(csv), "--has-header", "--label-column", "c", "--bounds=-10:10",
            "--method", "em_hard", "--k0", "3", "--k", "2", "--repeats", "1", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert json.loads(out.read_text())["repeats"][0]["ari_merged"] == 1.0


def test_sweep_writes_json_and_csv(tmp_path):
    out = tmp_path / "s.json"
    args = ["sweep", *SMALL, "--repeats", "1", "--morse-grid", "on,off", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert len(json.loads(out.read_text())["cells"]) == 2
    assert out.with_suffix(".csv").read_text().startswith("epsilon,k0,method,morse")


@pytest.mark.parametrize("args", [["run", "--k", "9", "--k0", "6"], ["run", "--epsilon", "-1"],
                                  ["run", "--method", "nope"], ["bogus"], ["sweep", "--epsilons", "a,b"]])
def test_config_errors_exit_1(args):
    try:
        code = main(args)
    except SystemExit as exc:  # argparse rejects before dispatch
        code = exc.code
    assert code == EXIT_CONFIG


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nx,3\n")
    assert main(["run", "--data", str(bad), "--repeats", "1"]) == EXIT_DATA
    assert main(["run", "--data", str(tmp_path / "missing.csv")]) == EXIT_DATA
    assert main(["tev", "--model", str(bad)]) == EXIT_DATA
