import json

import numpy as np
import pytest

from egoexo import data, report, retrieval
from egoexo.cli import main
from egoexo.metrics import CMCCurve


def run(argv):
    return main([str(a) for a in argv])


def test_toygen_counting_contract(tmp_path, capsys):
    out = tmp_path / "ds"
    code = run(["toygen", "--scenes", 4, "--seqs", 5, "--len", 50,
                "--seed", 7, "--out", out, "--image-size", 32])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    manifest = data.load_manifest(payload["manifest"])
    assert len(manifest.sequences) == 20
    total = sum(c["frames"] for c in manifest.counts().values())
    assert total == 1000
    pairs = sum(
        1 for split in ("train", "val", "test")
        for _ in data.iterate_aligned_pairs(manifest, split, "side")
    )
    assert pairs == 1000
    assert (out / "run.jsonl").exists()
    assert (out / "config_echo.json").exists()


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["flow", "compute"])  # --manifest missing
    assert exc.value.code == 2


def test_eval_retr_bad_gallery_magic(tmp_path, capsys, tiny_retr_model, tiny_dataset):
    bad = tmp_path / "bad.gal"
    bad.write_bytes(b'{"kind": "F_exo", "count": 1, "dim": 4}\nZZZZ' + b"\0" * 24)
    code = run([
        "eval", "retr", "--ckpt", tiny_retr_model["ckpt"],
        "--manifest", tiny_dataset.root / "manifest.json",
        "--gallery", bad, "--out", tmp_path / "out",
    ])
    assert code == 1
    assert "SchemaError" in capsys.readouterr().err


def test_flow_compute_cli(tiny_dataset, tmp_path, capsys):
    code = run(["flow", "compute", "--manifest", tiny_dataset.root / "manifest.json",
                "--split", "val", "--sigma", "1.0", "--out", tmp_path])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    n_val = sum(s.length - 1 for s in tiny_dataset.split_sequences("val"))
    assert payload["fields_written"] == 2 * n_val


def test_gallery_and_query_cli(tiny_retr_model, tiny_dataset, tmp_path, capsys):
    gal_path = tmp_path / "test.gal"
    code = run(["retr", "gallery", "--ckpt", tiny_retr_model["ckpt"],
                "--manifest", tiny_dataset.root / "manifest.json",
                "--split", "test", "--view", "exo",
                "--gallery-out", gal_path])
    assert code == 0
    gallery = retrieval.load_gallery(gal_path)
    assert gallery.kind == "F_exo"

    code = run(["retr", "query", "--ckpt", tiny_retr_model["ckpt"],
                "--gallery", gal_path,
                "--manifest", tiny_dataset.root / "manifest.json",
                "--split", "test", "--view", "ego"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert payload["queries"] == gallery.embeddings.shape[0]
    assert 1.0 <= payload["mean_rank"] <= gallery.embeddings.shape[0]


def test_eval_retr_cli_writes_reports(tiny_retr_model, tiny_dataset, tmp_path, capsys):
    out = tmp_path / "eval"
    code = run(["eval", "retr", "--ckpt", tiny_retr_model["ckpt"],
                "--manifest", tiny_dataset.root / "manifest.json",
                "--split", "test", "--out", out])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert 0.0 <= summary["auc"] <= 1.0
    curve = report.read_cmc_csv(out / "cmc.csv")
    assert isinstance(curve, CMCCurve)
    assert (out / "cmc.png").exists()


def test_plot_cli_roundtrip(tmp_path, capsys):
    curve = CMCCurve.from_values(np.linspace(0.2, 1.0, 10), 10)
    csv_path = tmp_path / "c.csv"
    report.write_cmc_csv(curve, csv_path)
    code = run(["plot", "--csv", csv_path, "--labels", "demo",
                "--plot-out", tmp_path / "fig.png"])
    assert code == 0
    assert (tmp_path / "fig.png").exists()


def test_probe_invariance_cli(tiny_retr_model, tiny_dataset, tmp_path, capsys):
    out = tmp_path / "probe"
    code = run(["probe", "invariance", "--ckpt", tiny_retr_model["ckpt"],
                "--manifest", tiny_dataset.root / "manifest.json", "--out", out])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["chance"] == pytest.approx(0.2)
    assert (out / "grid.csv").exists()
    assert (out / "grid.png").exists()


def test_synth_train_and_eval_cli(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert run(["toygen", "--scenes", 1, "--seqs", 2, "--len", 3,
                "--seed", 11, "--out", ds, "--image-size", 32]) == 0
    out = tmp_path / "synth"
    code = run(["synth", "train", "--manifest", ds / "manifest.json",
                "--out", out, "--epochs", 1, "--batch-size", 2,
                "--base-channels", 4, "--gen-depth", 5])
    assert code == 0
    ckpts = sorted(out.glob("synth_*.ckpt.npz"))
    assert ckpts

    gen_dir = tmp_path / "generated"
    code = run(["synth", "generate", "--ckpt", ckpts[-1],
                "--manifest", ds / "manifest.json", "--split", "train",
                "--out", gen_dir])
    assert code == 0

    eval_dir = tmp_path / "eval_synth"
    code = run(["eval", "synth", "--ckpt", ckpts[-1],
                "--manifest", ds / "manifest.json", "--split", "train",
                "--out", eval_dir])
    assert code == 0
    rep = json.loads((eval_dir / "report.json").read_text())
    assert set(rep["inception_score"]) == {"synthesized", "ground_truth"}
    assert (eval_dir / "quality.csv").exists()
    assert (eval_dir / "samples.png").exists()


def test_config_file_overrides(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert run(["toygen", "--scenes", 1, "--seqs", 1, "--len", 2,
                "--seed", 1, "--out", ds, "--image-size", 32]) == 0
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[retrieval]\nepochs = 1\nwidth_base = 4\ninput_size = 32\n"
                   "batch_size = 4\nvalidate_every = 0\n")
    out = tmp_path / "retr"
    code = run(["retr", "train", "--manifest", ds / "manifest.json",
                "--config", cfg, "--out", out])
    assert code == 0
    echo = json.loads((out / "retrieval_config.json").read_text())
    assert echo["epochs"] == 1 and echo["width_base"] == 4


def test_config_file_unknown_key(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert run(["toygen", "--scenes", 1, "--seqs", 1, "--len", 2,
                "--seed", 1, "--out", ds, "--image-size", 32]) == 0
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[retrieval]\nnot_a_knob = 3\n")
    code = run(["retr", "train", "--manifest", ds / "manifest.json",
                "--config", cfg, "--out", tmp_path / "x"])
    assert code == 1
    assert "SchemaError" in capsys.readouterr().err
