import json
import subprocess
import sys

import pytest

from cctlab.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from cctlab.scenarios import read_table

SMALL = {"contingencies": [3, 9], "n_per_contingency": 8, "seed": 5,
         "models": ["linear", "knn"]}


def write_config(path, **over):
    path.write_text(json.dumps({**SMALL, **over}))
    return str(path)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json", out_dir=str(root / "out"))
    assert main(["dataset", "--config", cfg]) == EXIT_OK
    return root, cfg


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_bad_configs(tmp_path):
    assert main(["dataset", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sede": 1}))
    assert main(["dataset", "--config", str(bad)]) == EXIT_USAGE
    bad.write_text("{not json")
    assert main(["dataset", "--config", str(bad)]) == EXIT_USAGE
    bad.write_text(json.dumps({"beta": -5}))
    assert main(["dataset", "--config", str(bad)]) == EXIT_USAGE


def test_simulate_stable_and_unstable(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["simulate", "--contingency", "3", "--duration", "0.17", "--out-dir", out]) == 0
    text = capsys.readouterr().out
    assert "verdict: stable" in text
    assert (tmp_path / "trajectory_c3_0.17s.csv").is_file()
    assert main(["simulate", "--contingency", "3", "--duration", "0.1705", "--out-dir", out]) == 0
    assert "verdict: unstable" in capsys.readouterr().out


def test_simulate_with_cct(tmp_path, capsys):
    assert main(["simulate", "--contingency", "9", "--duration", "0.1", "--cct",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("cct:"))
    assert line.startswith("cct: finite") and 0.2 < float(line.split()[2]) < 0.5


def test_simulate_errors(tmp_path):
    out = str(tmp_path)
    assert main(["simulate", "--contingency", "42", "--duration", "0.1", "--out-dir", out]) \
        == EXIT_USAGE
    assert main(["simulate", "--contingency", "1", "--duration", "0.1", "--load", "1", "2",
                 "--out-dir", out]) == EXIT_USAGE
    assert main(["simulate", "--contingency", "1", "--duration", "0.1",
                 "--load", "40", "40", "40", "--out-dir", out]) == EXIT_NUMERIC


def test_dataset_outputs(built):
    root, _ = built
    out = root / "out"
    for name in ("dataset.csv", "provenance.json", "summary.csv", "histogram.json"):
        assert (out / name).is_file()
    names, X, y = read_table(out / "dataset.csv")
    assert len(names) == 16 and X.shape == (16, 16)
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 5 and prov["n_rows"] == 16
    assert (out / "summary.csv").read_text().splitlines()[0] == "cont_no,mean_s,std_s,count"


def test_dataset_rerun_is_byte_identical(built, tmp_path):
    root, _ = built
    cfg = write_config(tmp_path / "cfg.json", out_dir=str(tmp_path / "again"))
    assert main(["dataset", "--config", cfg]) == EXIT_OK
    for name in ("dataset.csv", "provenance.json", "summary.csv", "histogram.json"):
        assert (tmp_path / "again" / name).read_bytes() == (root / "out" / name).read_bytes()


def test_select_and_idempotence(built, tmp_path, capsys):
    root, cfg = built
    data = str(root / "out" / "dataset.csv")
    first = tmp_path / "first"
    assert main(["select", data, "--config", cfg, "--out-dir", str(first)]) == EXIT_OK
    report = json.loads((first / "selection_with-label.json").read_text())
    assert report["kept"] and "kept" in capsys.readouterr().out
    second = tmp_path / "second"
    assert main(["select", str(first / "reduced_with-label.csv"), "--config", cfg,
                 "--out-dir", str(second)]) == EXIT_OK
    again = json.loads((second / "selection_with-label.json").read_text())
    assert again["kept"] == report["kept"]


def test_select_no_t1_mode_needs_t1_columns(built, tmp_path):
    root, cfg = built
    first = tmp_path / "r"
    main(["select", str(root / "out" / "dataset.csv"), "--mode", "no-label", "--config", cfg,
          "--out-dir", str(first)])
    assert main(["select", str(first / "reduced_no-label.csv"), "--mode", "no-label-plus-t1",
                 "--config", cfg, "--out-dir", str(first)]) == EXIT_USAGE


def test_bench_outputs(built, tmp_path, capsys):
    root, cfg = built
    out = tmp_path / "bench"
    assert main(["bench", str(root / "out" / "dataset.csv"), "--config", cfg,
                 "--out-dir", str(out)]) == EXIT_OK
    lines = (out / "bench_with-label.csv").read_text().splitlines()
    assert lines[0] == "model,r2,mse,mae,mape_pct"
    assert [l.split(",")[0] for l in lines[1:]] == ["linear", "knn"]
    assert (out / "clusters_with-label.csv").is_file()
    assert json.loads((out / "bench_with-label.json").read_text())["mode"] == "with-label"
    assert "linear" in capsys.readouterr().out


def test_bench_rerun_identical_and_missing_file(built, tmp_path):
    root, cfg = built
    data = str(root / "out" / "dataset.csv")
    for d in ("a", "b"):
        assert main(["bench", data, "--models", "tree", "--config", cfg,
                     "--out-dir", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "bench_with-label.csv").read_bytes() == \
        (tmp_path / "b" / "bench_with-label.csv").read_bytes()
    assert main(["bench", str(tmp_path / "missing.csv"), "--config", cfg]) == EXIT_USAGE


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "cctlab", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
