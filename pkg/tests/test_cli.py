import csv
from pathlib import Path

import numpy as np
import pytest

from reprinv import __version__
from reprinv.cli import main
from reprinv.layers import build_mlp, save_model
from reprinv.ppm import read_pnm, write_pnm


@pytest.fixture
def mlp_files(tmp_path):
    model = build_mlp((3, 8, 8), [384], seed=0)
    save_model(model, tmp_path / "m.manifest", tmp_path / "m.params")
    return tmp_path / "m.manifest", tmp_path / "m.params"


def snapshot(directory: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def read_rows(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith(f"# reprinv {__version__} | command: reprinv ")
    return list(csv.DictReader(lines[1:]))


def fast_commands(tmp_path, manifest, params):
    m = ["--model", str(manifest), "--params", str(params)]
    return {
        "invert": ["invert", *m, "--iters", "30", "--candidates", "2", "--search-iters", "10"],
        "epsilon-search": ["epsilon-search", *m, "--iters", "10", "--candidates", "3"],
        "sweep": ["sweep", "--kind", "width", "--grid", "8,16", "--input", "1,4,4", "--iters", "20",
                  "--candidates", "2", "--search-iters", "5", "--jobs", "2"],
        "analytic": ["analytic", "--width", "16", "--probe-seeds", "3"],
        "capacity": ["capacity", "--m", "192", "--p", "0.5", "--n", "3", *m, "--samples", "4"],
        "train": ["train", "--count", "20", "--classes", "2", "--shape", "3,4,4", "--hidden", "8",
                  "--epochs", "2"],
        "noise-compare": ["noise-compare", "--count", "8", "--classes", "2", "--shape", "3,8,8",
                          "--channels", "2,4", "--epochs", "1", "--iters", "10", "--eps", "decay:0.01"],
    }


@pytest.mark.parametrize("name", ["invert", "epsilon-search", "sweep", "analytic", "capacity", "train",
                                  "noise-compare"])
def test_byte_identical_reruns(tmp_path, mlp_files, name, capsys):
    argv = fast_commands(tmp_path, *mlp_files)[name] + ["--seed", "7", "--out", str(tmp_path / "out")]
    assert main(argv) == 0
    first = snapshot(tmp_path / "out")
    assert first
    assert main(argv) == 0
    assert snapshot(tmp_path / "out") == first
    for fname, data in first.items():
        if fname.endswith(".csv"):
            assert data.startswith(b"# reprinv ") and b"seed: 7" in data.splitlines()[0]


def test_invert_outputs(tmp_path, mlp_files, capsys):
    manifest, params = mlp_files
    out = tmp_path / "o"
    code = main(["invert", "--model", str(manifest), "--params", str(params), "--iters", "300",
                 "--eps", "decay:0.003", "--out", str(out)])
    assert code == 0
    trace = read_rows(out / "trace.csv")
    assert len(trace) == 301
    (row,) = read_rows(out / "metrics.csv")
    assert float(row["m_g"]) < float(row["m_s"]) and row["good"] == "1"
    assert read_pnm(out / "a_g.ppm").shape == (3, 8, 8)


def test_missing_model_exit_2(tmp_path, caplog):
    missing = tmp_path / "nope.manifest"
    assert main(["invert", "--model", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in caplog.text


def test_bad_flag_value_exit_2(tmp_path, mlp_files):
    assert main(["invert", "--model", str(mlp_files[0]), "--eps", "fast", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["invert", "--no-such-flag"])
    assert info.value.code == 2


def test_divergence_exit_3(tmp_path, mlp_files, caplog):
    manifest, params = mlp_files
    code = main(["invert", "--model", str(manifest), "--params", str(params), "--iters", "20",
                 "--eps", "1e38", "--out", str(tmp_path)])
    assert code == 3
    assert "diverged" in caplog.text


def test_capacity_prints(tmp_path, capsys):
    assert main(["capacity", "--m", "192", "--p", "0.5", "--n", "3", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "1536"
    assert main(["capacity", "--m", "192", "--p", "0", "--n", "3", "--out", str(tmp_path)]) == 2


def test_analytic_roundtrip(tmp_path, capsys):
    assert main(["analytic", "--out", str(tmp_path)]) == 0
    (row,) = read_rows(tmp_path / "roundtrip.csv")
    assert float(row["rel_error"]) < 1e-6 and row["width"] == "192"
    assert "roundtrip relative error" in capsys.readouterr().out
    assert len(read_rows(tmp_path / "probe.csv")) == 10


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nm = 10\np = 0.5\nn = 2\n")
    assert main(["capacity", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "40"
    assert main(["capacity", "--config", str(cfg), "--n", "1", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "20"
    header = (tmp_path / "capacity.csv").read_text().splitlines()[0]
    assert "m=10" in header and "n=1" in header
    cfg.write_text("bogus = 1\n")
    assert main(["capacity", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_target_resampled(tmp_path, mlp_files, caplog):
    manifest, params = mlp_files
    write_pnm(tmp_path / "t.ppm", np.full((3, 16, 16), 0.5))
    code = main(["invert", "--model", str(manifest), "--params", str(params), "--target", str(tmp_path / "t.ppm"),
                 "--iters", "5", "--eps", "0.001", "--out", str(tmp_path / "o")])
    assert code == 0
    assert "resampled" in caplog.text


def test_train_outputs(tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train", "--arch", "convnet", "--channels", "4", "--classes", "2", "--count", "10",
                 "--shape", "3,8,8", "--epochs", "2", "--out", str(out)]) == 0
    assert len(read_rows(out / "history.csv")) == 2
    assert (out / "model.manifest").read_text().startswith("reprinv-model 1")
    assert read_pnm(out / "filters.ppm").shape[0] == 3
    size = (out / "model.params").stat().st_size
    assert size % 8 == 0 and size > 0


def test_noise_compare_table(tmp_path, capsys):
    argv = fast_commands(tmp_path, "x", "y")["noise-compare"] + ["--out", str(tmp_path)]
    assert main(argv) == 0
    rows = read_rows(tmp_path / "compare.csv")
    assert [r["metric"] for r in rows] == ["m_g", "m_s", "m_i", "eps", "train_accuracy"]
    assert set(rows[0]) == {"metric", "untrained", "structured", "noise"}
