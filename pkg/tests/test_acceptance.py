"""Acceptance criteria, one test per criterion (criterion 4 is split per op).

A one-line verdict per criterion is printed in the terminal summary."""

import time

import numpy as np
import pytest

from despeckle.adversary import AttackConfig, model_target, pgd_attack
from despeckle.autodiff import ops
from despeckle.autodiff.gradcheck import grad_check
from despeckle.autodiff.tensor import Tensor
from despeckle.checkpoint import decode_checkpoint, encode_checkpoint
from despeckle.cli import main
from despeckle.metrics import cx, enl, epd_roa, psnr, ssim
from despeckle.model import Architecture, forward, init_net, zero_weights
from despeckle.speckle import digamma, log_speckle_bias, sample_gamma
from despeckle.spectral import gaussian_convolution_oracle, high_freq_energy, implicit_heat_step

import desk
from netutil import net_loss_fn
from oracles import cx_loop, enl_loop, epd_roa_loop, psnr_loop, ssim_loop
from test_spectral import dense_laplacian

TAUS = (0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20)


# --- 1 ---------------------------------------------------------------------


def test_criterion_01_spectral_solver_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    for shape in ((8, 8), (13, 7)):
        A_lap = dense_laplacian(*shape)
        for tau in (0.01, 0.1, 1.0):
            z = rng.standard_normal(shape)
            u = np.linalg.solve(np.eye(z.size) - tau * A_lap, z.ravel()).reshape(shape)
            assert np.max(np.abs(implicit_heat_step(z, tau) - u)) < 1e-8
    assert time.perf_counter() - start < 1.0


# --- 2 ---------------------------------------------------------------------


def test_criterion_02_multiplier_law():
    n = 16
    tau = 0.1
    a, b = np.indices((n, n))
    worst = 0.0
    for i in range(n):
        for j in range(n):
            zi, zj = 2 * np.pi * i / n, 2 * np.pi * j / n
            mode = np.cos(zi * a + zj * b)
            gain = np.sum(implicit_heat_step(mode, tau) * mode) / np.sum(mode * mode)
            law = 1.0 / (-2 * tau * (np.cos(zi) + np.cos(zj) - 2) + 1)
            worst = max(worst, abs(gain - law))
    assert worst < 1e-10


# --- 3 ---------------------------------------------------------------------


def band_limited_field(n=64, cutoff=np.pi / 4, seed=0):
    rng = np.random.default_rng(seed)
    k = 2 * np.pi * np.fft.fftfreq(n)
    keep = (np.abs(k)[:, None] <= cutoff) & (np.abs(k)[None, :] <= cutoff)
    spec = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * keep
    spec[0, 0] = 0
    f = np.fft.ifft2(spec).real  # real part keeps the band (mask is symmetric)
    return f / f.std()


def test_criterion_03_heat_kernel_consistency():
    f = band_limited_field()
    u = f
    for _ in range(20):
        u = implicit_heat_step(u, 0.05)
    g = gaussian_convolution_oracle(f, 1.0)
    assert np.linalg.norm(u - g) / np.linalg.norm(g) < 2e-2


# --- 4 ---------------------------------------------------------------------


def _probe(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def _kinkfree(shape, seed, gap=1e-3):
    x = _probe(shape, seed)
    return np.where(np.abs(x) < gap, np.copysign(2 * gap, x), x)


GRAD_CASES = {
    "conv2d": (lambda x, w, b: ops.weighted_sum(ops.conv2d(x, w, b), _probe((2, 4, 6, 6), 9)),
               lambda: [_probe((2, 3, 6, 6), 1), _probe((4, 3, 3, 3), 2), _probe(4, 3)], 1e-6),
    "relu": (lambda x: ops.weighted_sum(ops.relu(x), _probe((4, 5), 9)), lambda: [_kinkfree((4, 5), 1)], 1e-6),
    "batch_norm": (
        lambda x, g, b: ops.weighted_sum(
            ops.batch_norm(x, g, b, ops.BatchNormState.fresh(2), True), _probe((4, 2, 3, 3), 9)),
        lambda: [_probe((4, 2, 3, 3), 1), _probe(2, 2) + 1.5, _probe(2, 3)], 1e-5),
    "spectral_diffusion": (lambda x: ops.weighted_sum(ops.spectral_diffusion(x, 0.1), _probe((1, 1, 8, 8), 9)),
                           lambda: [_probe((1, 1, 8, 8), 1)], 1e-8, 1e-2),
    "logcosh_loss": (lambda p, t: ops.logcosh_loss(p, t, -0.13), lambda: [_probe((3, 4), 1), _probe((3, 4), 2)], 1e-5),
    "add_sub": (lambda a, b: ops.sum_squares(ops.sub(ops.add(a, b), ops.scale(b, 3.0))),
                lambda: [_probe((3, 3), 1), _probe((3, 3), 2)], 1e-5),
    "log_floor_exp": (lambda x: ops.sum_squares(ops.exp(ops.log_floor(x, 1e-3))),
                      lambda: [np.abs(_probe((3, 3), 1)) + 0.05], 1e-5),
    "clip": (lambda x: ops.sum_squares(ops.clip(x, -1.0, 1.0)), lambda: [_kinkfree((4, 4), 1) * 1.3 + 0.01], 1e-5),
    "reshape_add_scalar": (lambda x: ops.sum_squares(ops.add_scalar(ops.reshape(x, (2, 6)), 0.5)),
                           lambda: [_probe((3, 4), 1)], 1e-5),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_criterion_04_gradient_ops(name):
    # linear ops take a large step: central differences are then exact up to rounding
    f, point, tol, *h = GRAD_CASES[name]
    assert grad_check(f, point(), h=h[0] if h else 1e-5) < tol


def test_criterion_04_gradient_full_unrolled_net():
    start = time.perf_counter()
    net = init_net(Architecture(K=5, channels=64), 0.1, seed=0)
    names = ["stage0.conv1.weight", "stage1.bn2.gamma", "stage2.conv3.weight",
             "stage3.bn4.beta", "stage4.conv5.bias", "stage4.conv5.weight"]
    f, params = net_loss_fn(net, names)
    x = _probe((1, 1, 8, 8), 5)
    assert grad_check(f, [x] + params, coords=12, seed=1) < 1e-5
    assert time.perf_counter() - start < 30


# --- 5 ---------------------------------------------------------------------


@pytest.mark.parametrize("L", [1, 4, 10])
def test_criterion_05_gamma_statistics(L):
    eta = sample_gamma(1_000_000, L, seed=100 + L)
    assert abs(eta.mean() - 1.0) < 0.01
    assert abs(eta.var() - 1.0 / L) < 0.03 / L
    assert abs(np.log(eta).mean() - (digamma(L) - np.log(L))) < 5e-3
    assert log_speckle_bias(L) == digamma(L) - np.log(L)


# --- 6 ---------------------------------------------------------------------


def test_criterion_06_non_expansiveness():
    net = zero_weights(init_net(Architecture(K=5, channels=8), 0.1))
    rng = np.random.default_rng(6)
    for _ in range(100):
        u1 = rng.standard_normal((1, 1, 16, 16))
        u2 = rng.standard_normal((1, 1, 16, 16))
        d_out = np.linalg.norm(forward(net, Tensor(u1)).data - forward(net, Tensor(u2)).data)
        assert d_out <= np.linalg.norm(u1 - u2) * (1 + 1e-12)
        d = u1 - u2
        d -= d.mean()
        u2z = u1 - d
        d_out = np.linalg.norm(forward(net, Tensor(u1)).data - forward(net, Tensor(u2z)).data)
        assert d_out <= 0.999 * np.linalg.norm(d)


# --- desk-scale models shared by 7, 8, 9 -----------------------------------


@pytest.fixture(scope="module")
def desk_models():
    cache = {}

    def get(seed, tau):
        if (seed, tau) not in cache:
            cache[(seed, tau)] = desk.train_desk(seed, tau)
        return cache[(seed, tau)]

    return get


@pytest.mark.slow
def test_criterion_07_tau_smoothness(desk_models):
    net = desk_models(0, 0.1)
    for y, f in desk.noisy_test_set(0):
        energy = [high_freq_energy(desk.restore(net, f, t).pixels) for t in TAUS]
        assert all(b <= a for a, b in zip(energy, energy[1:])), energy


@pytest.mark.slow
def test_criterion_08_desk_despeckling(desk_models, capsys):
    gains_psnr, gains_ssim = [], []
    for seed in desk.SEEDS:
        net = desk_models(seed, 0.1)
        for y, f in desk.noisy_test_set(seed):
            yb, fb = desk.byte(y.pixels), desk.byte(f.pixels)
            ub = desk.byte(desk.restore(net, f).pixels)
            gains_psnr.append(psnr(yb, ub) - psnr(yb, fb))
            gains_ssim.append(ssim(yb, ub) - ssim(yb, fb))
    with capsys.disabled():
        print(f"\n  mean PSNR gain {np.mean(gains_psnr):.3f} dB, mean SSIM gain {np.mean(gains_ssim):.4f}")
    assert np.mean(gains_psnr) >= 3.0
    assert np.mean(gains_ssim) >= 0.05


@pytest.mark.slow
def test_criterion_09_adversarial_mitigation(desk_models, capsys):
    cfg = AttackConfig(epsilon=4 / 255, alpha=1 / 255, steps=10)
    c = log_speckle_bias(desk.LOOKS)
    drops = {0.1: [], 0.0: []}
    smoother = []
    for seed in desk.SEEDS:
        for tau in drops:
            net = desk_models(seed, tau)
            target = model_target(net, tau, c)
            for y, f in desk.noisy_test_set(seed):
                adv = pgd_attack(target, f, y, cfg)
                yb = desk.byte(y.pixels)
                before = psnr(yb, desk.byte(desk.restore(net, f, tau).pixels))
                after_img = desk.restore(net, adv, tau)
                drops[tau].append(before - psnr(yb, desk.byte(after_img.pixels)))
                if tau == 0.1:
                    smoother.append(
                        high_freq_energy(desk.restore(net, adv, 0.18).pixels)
                        < high_freq_energy(after_img.pixels)
                    )
    with capsys.disabled():
        print(f"\n  mean PSNR drop: tau=0.1 {np.mean(drops[0.1]):.3f} dB, tau=0 {np.mean(drops[0.0]):.3f} dB")
    assert np.mean(drops[0.1]) < np.mean(drops[0.0])
    assert all(smoother)


# --- 10 --------------------------------------------------------------------


def test_criterion_10_metric_oracles():
    rng = np.random.default_rng(10)
    for _ in range(3):
        y = np.floor(rng.random((16, 16)) * 256)
        h = np.floor(rng.random((16, 16)) * 256)
        assert abs(psnr(y, h) - psnr_loop(y, h)) < 1e-10
        assert abs(ssim(y, h) - ssim_loop(y, h)) < 1e-10
        assert abs(enl(h) - enl_loop(h)) < 1e-10
        assert abs(cx(h) - cx_loop(h)) < 1e-10
        for d in ("HD", "VD"):
            assert abs(epd_roa(y, h, d) - epd_roa_loop(y, h, d)) < 1e-10
        assert abs(cx(h) ** 2 * enl(h) - 1.0) < 1e-10


# --- 11 --------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    from despeckle.imaging import write_pgm
    from corpus import train_images

    data = tmp_path / "train"
    data.mkdir()
    for k, img in enumerate(train_images(64)[:3]):
        write_pgm(desk.byte(img.pixels), data / f"img{k}.pgm")
    args = ["train", "--preset", "desk", "--data", str(data), "--deterministic",
            "--set", "train.patches=32", "--set", "train.epochs=1"]
    for run in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / run)]) == 0
    a = (tmp_path / "a" / "checkpoint.dspk").read_bytes()
    assert a == (tmp_path / "b" / "checkpoint.dspk").read_bytes()
    assert encode_checkpoint(decode_checkpoint(a)) == a
