import json
import math
import os

import numpy as np
import pytest

from despeckle.checkpoint import load_checkpoint, save_checkpoint
from despeckle.cli import main
from despeckle.imaging import Domain, Image, read_pgm, write_pgm
from despeckle.manifest import sha256_file
from despeckle.metrics import enl
from despeckle.model import Architecture, init_net, zero_weights

TINY = ["--set", "model.K=1", "--set", "model.channels=4", "--set", "train.patches=8",
        "--set", "train.batch=4", "--set", "train.epochs=3", "--set", "train.patch_size=12"]


def write(path, a):
    write_pgm(Image(np.asarray(a, dtype=float), Domain.BYTE255), path)
    return path


@pytest.fixture
def clean_dir(tmp_path):
    d = tmp_path / "clean"
    d.mkdir()
    i, j = np.indices((24, 24))
    write(d / "waves.pgm", np.round(127 + 90 * np.sin(i / 3) * np.cos(j / 4)))
    write(d / "ramp.pgm", np.round(np.linspace(20, 230, 24 * 24).reshape(24, 24)))
    return d


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_simulate_counts_and_determinism(tmp_path, clean_dir):
    assert main(["simulate", str(clean_dir), "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["simulate", str(clean_dir), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    a, b = manifest(tmp_path / "a"), manifest(tmp_path / "b")
    assert len(a["output_hashes"]) == 20
    assert a["output_hashes"] == b["output_hashes"]
    assert a["seeds"]["ramp_L4_r3.pgm"] == 3 + 0 * 10 + 3
    assert a["seeds"]["waves_L4_r2.pgm"] == 3 + 1 * 10 + 2
    assert a["config_snapshot"]["noise.seed"] == 3


def test_simulate_noise_variance_on_card(tmp_path):
    assert main(["testcard", "--value", "64", "--out", str(tmp_path / "card")]) == 0
    out = tmp_path / "noisy"
    assert main(["simulate", str(tmp_path / "card"), "--realizations", "2", "--out", str(out)]) == 0
    for p in sorted(out.glob("*.pgm")):
        ratio = read_pgm(p).pixels / 64.0
        assert ratio.var() == pytest.approx(1 / 4, rel=0.1)


def test_refuses_overwrite_without_force(tmp_path, clean_dir, capsys):
    args = ["simulate", str(clean_dir), "--realizations", "1", "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_empty_input_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["simulate", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 2


def test_train_outputs_and_determinism(tmp_path, clean_dir):
    for name in ("r1", "r2"):
        assert main(["train", "--data", str(clean_dir), "--out", str(tmp_path / name), "--deterministic"] + TINY) == 0
    assert os.environ["OPENBLAS_NUM_THREADS"] == "1"
    rows = (tmp_path / "r1" / "loss.txt").read_text().splitlines()
    assert len(rows) == 3
    losses = [float(r.split()[1]) for r in rows]
    assert losses[-1] < losses[0]
    ck1, ck2 = (tmp_path / n / "checkpoint.dspk" for n in ("r1", "r2"))
    assert ck1.read_bytes() == ck2.read_bytes()
    m = manifest(tmp_path / "r1")
    assert m["checkpoint_hash"] == sha256_file(ck1)
    assert m["config_snapshot"]["model.channels"] == 4
    assert len(m["input_hashes"]) == 2


def test_train_requires_data(tmp_path):
    assert main(["train", "--out", str(tmp_path / "t")]) == 2


@pytest.fixture
def zero_ck(tmp_path):
    p = tmp_path / "zero.dspk"
    save_checkpoint(zero_weights(init_net(Architecture(K=2, channels=4), tau=0.1)), p)
    return p


def test_denoise_identity_and_default_tau(tmp_path, clean_dir, zero_ck):
    out = tmp_path / "den"
    assert main(["denoise", str(zero_ck), str(clean_dir), "--tau", "0", "--out", str(out)]) == 0
    for p in clean_dir.glob("*.pgm"):
        src = read_pgm(p).pixels
        got = read_pgm(out / f"{p.stem}_denoised.pgm").pixels
        assert np.array_equal(got, np.maximum(src, 1.0))  # log floor at 1/255
    assert manifest(out)["config_snapshot"]["tau"] == 0.0
    out2 = tmp_path / "den2"
    assert main(["denoise", str(zero_ck), str(clean_dir), "--out", str(out2)]) == 0
    assert manifest(out2)["config_snapshot"]["tau"] == 0.1


def test_denoise_with_references(tmp_path, clean_dir, zero_ck, capsys):
    noisy = tmp_path / "noisy"
    main(["simulate", str(clean_dir), "--realizations", "1", "--out", str(noisy)])
    out = tmp_path / "den"
    assert main(["denoise", str(zero_ck), str(noisy), "--clean", str(clean_dir), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "psnr" in text and "mean" in text
    rows = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and all(r["psnr"] > 0 for r in rows)


def test_sweep_consistency(tmp_path, clean_dir, zero_ck):
    img = clean_dir / "waves.pgm"
    assert main(["sweep-tau", str(zero_ck), str(img), "--taus", "0.1", "0.05", "0.1",
                 "--clean", str(img), "--out", str(tmp_path / "sw")]) == 0
    rows = [json.loads(l) for l in (tmp_path / "sw" / "sweep.jsonl").read_text().splitlines()]
    assert rows[0] == rows[2]
    assert rows[0]["hf_energy"] <= rows[1]["hf_energy"]
    main(["denoise", str(zero_ck), str(img), "--tau", "0.1", "--out", str(tmp_path / "d")])
    a = (tmp_path / "sw" / "waves_tau0.1000.pgm").read_bytes()
    assert a == (tmp_path / "d" / "waves_denoised.pgm").read_bytes()
    assert main(["sweep-tau", str(zero_ck), str(img), "--taus", "-1", "--out", str(tmp_path / "bad")]) == 2


def test_attack_null_budget(tmp_path, clean_dir, zero_ck):
    img = str(clean_dir / "waves.pgm")
    out = tmp_path / "atk"
    assert main(["attack", str(zero_ck), img, img, "--set", "attack.epsilon=0", "--set", "attack.alpha=0",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "attack.json").read_text())
    assert rep["linf"] == 0 and rep["psnr_before"] == rep["psnr_after"]
    assert np.array_equal(read_pgm(out / "adversarial.pgm").pixels, read_pgm(img).pixels)
    assert np.all(read_pgm(out / "delta.pgm").pixels == 0)


def test_attack_budget(tmp_path, clean_dir, zero_ck):
    noisy = tmp_path / "n"
    main(["simulate", str(clean_dir / "waves.pgm"), "--realizations", "1", "--out", str(noisy)])
    out = tmp_path / "atk"
    assert main(["attack", str(zero_ck), str(noisy / "waves_L4_r0.pgm"), str(clean_dir / "waves.pgm"),
                 "--out", str(out)]) == 0
    rep = json.loads((out / "attack.json").read_text())
    assert rep["linf"] <= 4 / 255 + 1e-12 and rep["steps"] == 10
    assert read_pgm(out / "delta.pgm").pixels.max() == 255


def test_evaluate_identical_pairs(tmp_path, clean_dir, capsys):
    assert main(["evaluate", "full", str(clean_dir), str(clean_dir), "--out", str(tmp_path / "ev")]) == 0
    text = capsys.readouterr().out
    assert "inf" in text
    rows = [json.loads(l) for l in (tmp_path / "ev" / "metrics.jsonl").read_text().splitlines()]
    assert all(r["psnr"] == "inf" and r["ssim"] == 1.0 for r in rows)


def test_evaluate_mean_row(tmp_path, clean_dir):
    noisy = tmp_path / "noisy"
    main(["simulate", str(clean_dir), "--realizations", "1", "--out", str(noisy)])
    test = tmp_path / "test"
    test.mkdir()
    for p in clean_dir.glob("*.pgm"):
        (test / p.name).write_bytes((noisy / f"{p.stem}_L4_r0.pgm").read_bytes())
    main(["evaluate", "full", str(clean_dir), str(test), "--out", str(tmp_path / "ev")])
    rows = [json.loads(l) for l in (tmp_path / "ev" / "metrics.jsonl").read_text().splitlines()]
    table = (tmp_path / "ev" / "metrics.txt").read_text().splitlines()
    mean_line = [l for l in table if l.startswith("mean")][0].split()
    assert float(mean_line[1]) == pytest.approx(np.mean([r["psnr"] for r in rows]), abs=1e-6)
    assert main(["evaluate", "full", str(clean_dir), str(noisy), "--out", str(tmp_path / "bad")]) == 2


def test_reference_free_enl_increases_after_smoothing(tmp_path, zero_ck):
    main(["testcard", "--size", "64", "--out", str(tmp_path / "card")])
    main(["simulate", str(tmp_path / "card"), "--realizations", "1", "--out", str(tmp_path / "noisy")])
    main(["denoise", str(zero_ck), str(tmp_path / "noisy"), "--tau", "1.0", "--out", str(tmp_path / "den")])
    ref, test = tmp_path / "ref", tmp_path / "test"
    ref.mkdir()
    test.mkdir()
    (ref / "x.pgm").write_bytes((tmp_path / "noisy" / "testcard_constant_L4_r0.pgm").read_bytes())
    (test / "x.pgm").write_bytes((tmp_path / "den" / "testcard_constant_L4_r0_denoised.pgm").read_bytes())
    assert main(["evaluate", "free", str(ref), str(test), "--out", str(tmp_path / "ev")]) == 0
    row = json.loads((tmp_path / "ev" / "metrics.jsonl").read_text())
    assert row["enl"] > enl(read_pgm(ref / "x.pgm"))


def test_diffuse_constant_unchanged(tmp_path):
    main(["testcard", "--size", "16", "--out", str(tmp_path / "c")])
    assert main(["diffuse", str(tmp_path / "c" / "testcard_constant.pgm"), "--tau", "0.5", "--steps", "3",
                 "--out", str(tmp_path / "d")]) == 0
    assert np.all(read_pgm(tmp_path / "d" / "testcard_constant_diffused.pgm").pixels == 128)


def test_bad_config_key(tmp_path, clean_dir, capsys):
    assert main(["simulate", str(clean_dir), "--set", "noise.looks=3", "--out", str(tmp_path / "x")]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_shapes_testcard_seeded(tmp_path):
    for run in ("a", "b"):
        assert main(["testcard", "--kind", "shapes", "--size", "32", "--seed", "4", "--out", str(tmp_path / run)]) == 0
    a = (tmp_path / "a" / "testcard_shapes.pgm").read_bytes()
    assert a == (tmp_path / "b" / "testcard_shapes.pgm").read_bytes()
    assert len(np.unique(read_pgm(tmp_path / "a" / "testcard_shapes.pgm").pixels)) > 1
