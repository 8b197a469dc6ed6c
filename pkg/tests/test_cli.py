import os
import subprocess
import sys

import numpy as np
import pytest

from navtrans.cli import main
from navtrans.dataset import read_dataset
from navtrans.graph import NavPlan, read_graph


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


GEN_ARGS = [
    "gen",
    "--train-graphs", "2",
    "--new-graphs", "1",
    "--routes-per-graph", "4",
    "--double-fraction", "0.25",
    "--seed", "5",
]


def dir_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            full = os.path.join(base, name)
            out[os.path.relpath(full, root)] = open(full, "rb").read()
    return out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    code = main(GEN_ARGS + ["--out", str(path)])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    path = tmp_path_factory.mktemp("run")
    code = main(
        [
            "train",
            "--data", str(data_dir),
            "--out", str(path),
            "--variant", "full",
            "--hidden-size", "8",
            "--dec-embed-dim", "6",
            "--dropout", "0.0",
            "--epochs", "2",
            "--batch-size", "16",
            "--max-nodes", "48",
            "--seed", "3",
        ]
    )
    assert code == 0
    return path


# -- gen -----------------------------------------------------------------------


def test_gen_writes_dataset_and_prints_counts(tmp_path, capsys):
    out = tmp_path / "data"
    code, stdout, _ = run(GEN_ARGS + ["--out", str(out)], capsys)
    assert code == 0
    assert "split" in stdout and "training" in stdout and "#double" in stdout
    assert "hygiene: ok" in stdout
    splits = read_dataset(out)
    assert set(splits) == {"training", "test-repeated", "test-new"}
    assert (out / "run_manifest.txt").exists()
    manifest = (out / "run_manifest.txt").read_text()
    assert "config_sha256=" in manifest and "seed=5" in manifest


def test_gen_deterministic_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(GEN_ARGS + ["--out", str(a)], capsys)[0] == 0
    assert run(GEN_ARGS + ["--out", str(b)], capsys)[0] == 0
    assert dir_bytes(a) == dir_bytes(b)


def test_gen_zero_routes_fails_before_writing(tmp_path, capsys):
    out = tmp_path / "data"
    code, _, err = run(
        ["gen", "--routes-per-graph", "0", "--out", str(out)], capsys
    )
    assert code == 1
    assert "positive" in err
    assert not out.exists()


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("routes_per_graph=3\nwarp_speed=9\n")
    code, _, err = run(["gen", "--config", str(cfg), "--out", str(tmp_path / "d")], capsys)
    assert code == 1
    assert "warp_speed" in err


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("train_graphs=1\nnew_graphs=1\nroutes_per_graph=3\nseed=9\n")
    out = tmp_path / "d"
    code, stdout, _ = run(
        ["gen", "--config", str(cfg), "--out", str(out), "--routes-per-graph", "2"],
        capsys,
    )
    assert code == 0
    splits = read_dataset(out)
    assert len(splits["training"].samples) >= 2


# -- train ---------------------------------------------------------------------


def test_train_outputs(run_dir):
    for name in (
        "checkpoint.ckpt",
        "checkpoint_last.ckpt",
        "train_report.csv",
        "loss_curve.png",
        "run_manifest.txt",
    ):
        assert (run_dir / name).exists(), name
    report = (run_dir / "train_report.csv").read_text().splitlines()
    assert report[0].startswith("epoch,loss,")
    assert len(report) == 3  # header + 2 epochs


def test_train_resume_extends_run(tmp_path, data_dir, capsys):
    first = tmp_path / "r1"
    args = [
        "train", "--data", str(data_dir), "--variant", "ablation-mask",
        "--hidden-size", "8", "--dec-embed-dim", "6", "--dropout", "0.0",
        "--batch-size", "16", "--max-nodes", "48", "--seed", "4",
    ]
    code, _, _ = run(args + ["--out", str(first), "--epochs", "1"], capsys)
    assert code == 0
    second = tmp_path / "r2"
    code, _, _ = run(
        [
            "train",
            "--data", str(data_dir),
            "--out", str(second),
            "--resume", str(first / "checkpoint_last.ckpt"),
            "--epochs", "2",
        ],
        capsys,
    )
    assert code == 0
    report = (second / "train_report.csv").read_text().splitlines()
    assert len(report) == 2  # header + epoch 1 only
    assert report[1].startswith("1,")


# -- eval ----------------------------------------------------------------------


def test_eval_outputs_and_ordering(tmp_path, data_dir, run_dir, capsys):
    out = tmp_path / "eval"
    code, stdout, _ = run(
        [
            "eval",
            "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--data", str(data_dir),
            "--splits", "test-repeated,test-new",
            "--out", str(out),
        ],
        capsys,
    )
    assert code == 0
    assert "EM%" in stdout
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "split,n,em_pct,f1_pct,ed,gm_pct"
    assert len(summary) == 3
    assert (out / "metrics.png").exists()
    rep = (out / "test-repeated_samples.csv").read_text().splitlines()
    assert rep[0].startswith("sample_id,")
    ids = [line.split(",")[0] for line in rep[1:]]
    assert ids == sorted(ids)


def test_eval_sample_order_identical_across_checkpoints(tmp_path, data_dir, run_dir, capsys):
    other_run = tmp_path / "othertrain"
    code, _, _ = run(
        [
            "train", "--data", str(data_dir), "--out", str(other_run),
            "--variant", "full-no-mask", "--hidden-size", "8", "--dec-embed-dim", "6",
            "--dropout", "0.0", "--epochs", "1", "--batch-size", "16",
            "--max-nodes", "48", "--seed", "8",
        ],
        capsys,
    )
    assert code == 0
    outs = []
    for i, ckpt in enumerate((run_dir / "checkpoint.ckpt", other_run / "checkpoint.ckpt")):
        out = tmp_path / f"eval{i}"
        code, _, _ = run(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data_dir),
             "--splits", "test-repeated", "--out", str(out)],
            capsys,
        )
        assert code == 0
        rows = (out / "test-repeated_samples.csv").read_text().splitlines()[1:]
        outs.append([r.split(",")[0] for r in rows])
    assert outs[0] == outs[1]


def test_eval_mismatched_hidden_size_rejected(tmp_path, data_dir, run_dir, capsys):
    out = tmp_path / "evalbad"
    code, _, err = run(
        [
            "eval",
            "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--data", str(data_dir),
            "--hidden-size", "128",
            "--out", str(out),
        ],
        capsys,
    )
    assert code == 1
    assert "hidden_size" in err
    assert not out.exists()  # no partial output


def test_eval_unknown_split(tmp_path, data_dir, run_dir, capsys):
    code, _, err = run(
        [
            "eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--data", str(data_dir), "--splits", "test-imaginary",
            "--out", str(tmp_path / "e"),
        ],
        capsys,
    )
    assert code == 1
    assert "test-imaginary" in err


# -- predict -----------------------------------------------------------------------


def test_predict_masked_prints_executable_plan(tmp_path, data_dir, run_dir, capsys):
    graph_file = next((data_dir / "graphs").glob("train-*.graph"))
    g = read_graph(graph_file)
    start = next(n for n in g.nodes if n.location_type == "room")
    att_dir = tmp_path / "att"
    code, stdout, _ = run(
        [
            "predict",
            "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--graph", str(graph_file),
            "--start", start.tag,
            "--text", "go out and turn left, then follow the corridor",
            "--attention", str(att_dir),
        ],
        capsys,
    )
    assert code == 0
    lines = stdout.strip().splitlines()
    plan_line = next(l for l in lines if l.startswith("plan:"))
    node_line = next(l for l in lines if l.startswith("nodes:"))
    behaviors = tuple(plan_line.split()[1:])
    g.execute_plan(NavPlan(start, behaviors))  # masked output must execute
    assert node_line.split()[1] == start.tag

    csv_lines = (att_dir / "decoder_attention.csv").read_text().splitlines()
    header, rows = csv_lines[0], csv_lines[1:]
    cols = np.array([[float(v) for v in r.split(",")[1:]] for r in rows])
    assert np.allclose(cols.sum(axis=0), 1.0, atol=1e-6)
    assert (att_dir / "decoder_attention.png").exists()
    assert (att_dir / "encoder_attention.csv").exists()
    assert (att_dir / "encoder_attention.png").exists()


def test_predict_unknown_start_tag(data_dir, run_dir, capsys):
    graph_file = next((data_dir / "graphs").glob("train-*.graph"))
    code, _, err = run(
        [
            "predict", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--graph", str(graph_file), "--start", "R-99", "--text", "go",
        ],
        capsys,
    )
    assert code == 1
    assert "R-99" in err


def test_predict_missing_graph_file(run_dir, capsys):
    code, _, err = run(
        [
            "predict", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
            "--graph", "/nonexistent/g.graph", "--start", "R-0", "--text", "go",
        ],
        capsys,
    )
    assert code == 2


def test_missing_subcommand_is_validation_error(capsys):
    code, _, err = run([], capsys)
    assert code == 1


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "navtrans.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "predict" in proc.stdout
