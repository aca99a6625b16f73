"""End-to-end acceptance checks.

Each test covers one numbered criterion and emits a single
"CRITERION nn PASS/FAIL" line (live, bypassing capture) before asserting.
The two desk-scale end-to-end criteria (06, 07) train real runs and dominate
the suite's runtime; everything else finishes in seconds to minutes.
"""

import csv

import numpy as np
import pytest
import torch

from conftest import make_sine_square, make_two_tone, write_ucr_tsv
from fd_utils import gradient_agreement
from test_objective import FirstCoordinateCritic, SumCritic, TinyMlpCritic, tiny_bundle
from utsgan.data import load_ucr
from utsgan.evaluation import (
    GaussianSummary,
    fid_report,
    fid_scores,
    fid_score,
    frechet_distance,
    train_fcn,
)
from utsgan.networks import NetworkWidths, init_bundle
from utsgan.objective import generator_objective, gradient_penalty, loss_x, loss_y
from utsgan.trainer import TrainingConfig, train

CHECKPOINT_EPOCHS = (250, 500, 750, 1000)

TINY = NetworkWidths(g_base=16, f_encoder=8, f_bottleneck=16, f_decoder=16,
                     d_y_widths=(8, 16, 8), d_y_kernels=(8, 5, 3))


def report(capsys, number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# --------------------------------------------------------------------------
# 1. unified = (l_x + l_y) / 2 over every logged step, <= 1e-12 relative
# --------------------------------------------------------------------------

def test_criterion_01_exact_average_identity(tiny_run_env, capsys):
    worst = 0.0
    checked = 0
    for run_dir in (tiny_run_env.unified, tiny_run_env.serial):
        header, body = read_rows(run_dir / "losses.csv")
        i_lx, i_ly, i_u = header.index("l_x"), header.index("l_y"), header.index("unified")
        for row in body:
            l_x, l_y, unified = float(row[i_lx]), float(row[i_ly]), float(row[i_u])
            rel = abs(unified - (l_x + l_y) / 2.0) / max(1.0, abs(unified))
            worst = max(worst, rel)
            checked += 1
    report(capsys, 1, checked > 0 and worst <= 1e-12,
           f"unified = (l_x+l_y)/2 over {checked} logged steps, worst rel err {worst:.2e} (tol 1e-12)")


# --------------------------------------------------------------------------
# 2. analytic gradient penalty vs. finite-difference gradient norms,
#    100 random 8-parameter critics, 1e-4 relative
# --------------------------------------------------------------------------

def test_criterion_02_gradient_penalty_oracle(capsys):
    lam = 10.0
    h = 1e-6
    worst = 0.0
    for trial in range(100):
        gen = torch.Generator().manual_seed(5000 + trial)
        critic = TinyMlpCritic(seed=trial)
        real = torch.randn(4, 3, generator=gen, dtype=torch.float64)
        fake = torch.randn(4, 3, generator=gen, dtype=torch.float64)
        eps = torch.rand(4, generator=gen, dtype=torch.float64)
        analytic = float(gradient_penalty(critic, real, fake, lam, eps).detach())

        x_hat = (eps[:, None] * real + (1.0 - eps[:, None]) * fake).detach()
        norms = []
        with torch.no_grad():
            for i in range(x_hat.shape[0]):
                grad = np.zeros(x_hat.shape[1])
                for j in range(x_hat.shape[1]):
                    plus = x_hat.clone()
                    plus[i, j] += h
                    minus = x_hat.clone()
                    minus[i, j] -= h
                    grad[j] = (float(critic(plus)[i]) - float(critic(minus)[i])) / (2 * h)
                norms.append(np.linalg.norm(grad))
        oracle = lam * float(np.mean((np.asarray(norms) - 1.0) ** 2))
        worst = max(worst, abs(analytic - oracle) / max(abs(oracle), 1e-12))
    report(capsys, 2, worst <= 1e-4,
           f"penalty vs. finite-difference norms, worst rel err {worst:.2e} over 100 trials (tol 1e-4)")


# --------------------------------------------------------------------------
# 3. analytic penalty cases: sum critic over d=4 -> exactly 10; a
#    single-coordinate critic -> exactly 0 (tol 1e-10)
# --------------------------------------------------------------------------

def test_criterion_03_analytic_penalty_cases(capsys):
    gen = torch.Generator().manual_seed(77)
    real = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    fake = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    eps = torch.rand(3, generator=gen, dtype=torch.float64)
    sum_penalty = float(gradient_penalty(SumCritic(), real, fake, 10.0, eps).detach())
    unit_penalty = float(gradient_penalty(FirstCoordinateCritic(), real, fake, 10.0, eps).detach())
    err_sum = abs(sum_penalty - 10.0)
    err_unit = abs(unit_penalty)
    report(capsys, 3, err_sum <= 1e-10 and err_unit <= 1e-10,
           f"sum critic penalty {sum_penalty} (want 10), unit-gradient critic {unit_penalty} (want 0), tol 1e-10")


# --------------------------------------------------------------------------
# 4. Fréchet oracles: identity <= 1e-6; 1-D closed form = 1 +- 1e-8;
#    commuting diagonal = 8 +- 1e-8; symmetry <= 1e-8 on 50 PSD pairs
# --------------------------------------------------------------------------

def test_criterion_04_frechet_oracles(capsys):
    rng = np.random.default_rng(404)

    def psd_summary(dim):
        m = rng.standard_normal((dim, dim))
        return GaussianSummary(mean=rng.standard_normal(dim),
                               cov=(m @ m.T) / dim + 0.1 * np.eye(dim))

    identity_worst = max(frechet_distance(s, s) for s in (psd_summary(16) for _ in range(5)))

    one_d = frechet_distance(
        GaussianSummary(mean=np.array([0.0]), cov=np.array([[1.0]])),
        GaussianSummary(mean=np.array([1.0]), cov=np.array([[1.0]])),
    )
    diag = frechet_distance(
        GaussianSummary(mean=np.zeros(2), cov=np.diag([1.0, 4.0])),
        GaussianSummary(mean=np.zeros(2), cov=np.diag([9.0, 16.0])),
    )
    symmetry_worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(2, 24))
        a, b = psd_summary(dim), psd_summary(dim)
        symmetry_worst = max(symmetry_worst, abs(frechet_distance(a, b) - frechet_distance(b, a)))

    ok = (identity_worst <= 1e-6 and abs(one_d - 1.0) <= 1e-8
          and abs(diag - 8.0) <= 1e-8 and symmetry_worst <= 1e-8)
    report(capsys, 4, ok,
           f"identity {identity_worst:.2e} (tol 1e-6), 1-D {one_d:.10f} (want 1), "
           f"diagonal {diag:.10f} (want 8), symmetry {symmetry_worst:.2e} over 50 pairs (tol 1e-8)")


# --------------------------------------------------------------------------
# 5. coupling: series-side generator objective has nonzero gradient w.r.t.
#    the image generator when trained jointly, exactly zero gradient when the
#    image generator's output is treated as a fixed input
# --------------------------------------------------------------------------

def test_criterion_05_coupling(capsys):
    bundle = tiny_bundle(seed=3)
    # train mode, as in the optimization loop: batch-statistic normalization
    # keeps the freshly initialized networks' gradients well scaled
    bundle.train()
    z = torch.randn(3, bundle.d_z, generator=torch.Generator().manual_seed(8),
                    dtype=torch.float64)
    g_params = list(bundle.g.parameters())

    def joint_series_term():
        return -bundle.d_y(bundle.f(bundle.g(z))).mean()

    grads = torch.autograd.grad(joint_series_term(), g_params, allow_unused=True)
    grads = [torch.zeros_like(p) if gr is None else gr for p, gr in zip(g_params, grads)]
    norm = float(torch.sqrt(sum((gr ** 2).sum() for gr in grads)))

    # finite-difference confirmation: the directional derivative along the
    # normalized analytic gradient must reproduce the gradient norm
    direction = [gr / norm for gr in grads]

    def shifted_value(step: float) -> float:
        with torch.no_grad():
            for p, d in zip(g_params, direction):
                p.add_(step * d)
        try:
            return float(joint_series_term().detach())
        finally:
            with torch.no_grad():
                for p, d in zip(g_params, direction):
                    p.sub_(step * d)

    h = 1e-6
    numeric = (shifted_value(h) - shifted_value(-h)) / (2.0 * h)
    fd_ok = abs(numeric - norm) <= 1e-3 * norm

    def severed_series_term():
        with torch.no_grad():
            fixed_images = bundle.g(z)
        return -bundle.d_y(bundle.f(fixed_images)).mean()

    severed = torch.autograd.grad(severed_series_term(), g_params, allow_unused=True)
    severed_zero = all(gr is None for gr in severed)

    report(capsys, 5, norm > 1e-8 and fd_ok and severed_zero,
           f"joint gradient norm {norm:.3e} > 0 (directional finite difference "
           f"{numeric:.3e}), severed-path gradient exactly 0: {severed_zero}")


# --------------------------------------------------------------------------
# 8. per-epoch wall clock: unified < serial on identical config, >= 20 epochs
# --------------------------------------------------------------------------

def epoch_seconds(run_dir) -> np.ndarray:
    _, body = read_rows(run_dir / "timing.csv")
    return np.asarray([float(row[1]) for row in body])


def test_criterion_08_training_cost(tmp_path, capsys):
    samples, labels = make_two_tone(n_per_class=8, length=64, seed=31)
    dataset = load_ucr(write_ucr_tsv(tmp_path / "Cost_TRAIN.tsv", samples, labels))
    widths = NetworkWidths(g_base=64, f_encoder=16, f_bottleneck=64, f_decoder=32)

    def cfg(mode, epochs, seed=0):
        return TrainingConfig(mode=mode, epochs=epochs, image_size=16,
                              checkpoint_epochs=(epochs,), seed=seed, widths=widths)

    # warm both code paths once so one-time kernel setup is not billed
    for mode in ("serial", "unified"):
        train(dataset, 0, cfg(mode, 2), tmp_path / "warmup" / mode)

    times = {}
    for mode in ("serial", "unified"):
        run_dir = train(dataset, 0, cfg(mode, 24), tmp_path / "timed" / mode)
        times[mode] = epoch_seconds(run_dir)
    unified_mean = float(times["unified"].mean())
    serial_mean = float(times["serial"].mean())
    report(capsys, 8, unified_mean < serial_mean and len(times["unified"]) >= 20,
           f"mean epoch wall clock over {len(times['unified'])} epochs: "
           f"unified {unified_mean:.3f}s < serial {serial_mean:.3f}s")


# --------------------------------------------------------------------------
# 9. determinism: identical seed/config -> identical loss logs (<= 1e-6
#    relative per entry) and identical FID reports
# --------------------------------------------------------------------------

def test_criterion_09_determinism(tmp_path, capsys):
    samples, labels = make_two_tone(n_per_class=8, length=32, seed=41)
    dataset = load_ucr(write_ucr_tsv(tmp_path / "Det_TRAIN.tsv", samples, labels))
    cfg = TrainingConfig(mode="unified", epochs=3, n_critic=2, d_z=8, image_size=8,
                         checkpoint_epochs=(3,), seed=0, widths=TINY, batch_size=4)
    run_a = train(dataset, 0, cfg, tmp_path / "a")
    run_b = train(dataset, 0, cfg, tmp_path / "b")

    _, body_a = read_rows(run_a / "losses.csv")
    _, body_b = read_rows(run_b / "losses.csv")
    worst = 0.0
    assert len(body_a) == len(body_b)
    for row_a, row_b in zip(body_a, body_b):
        for cell_a, cell_b in zip(row_a, row_b):
            a, b = float(cell_a), float(cell_b)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))

    classifier = train_fcn(dataset, seed=1, max_epochs=10, patience=10)
    report_a = fid_report(run_a / "epoch_3.ckpt", dataset, 0, classifier,
                          runs=3, samples_per_run=16, seed=2)
    report_b = fid_report(run_b / "epoch_3.ckpt", dataset, 0, classifier,
                          runs=3, samples_per_run=16, seed=2)
    report(capsys, 9, worst <= 1e-6 and report_a == report_b,
           f"loss logs match to {worst:.2e} (tol 1e-6) over {len(body_a)} rows; "
           f"FID reports identical: {report_a == report_b}")


# --------------------------------------------------------------------------
# 10. analytic parameter gradients of loss_x, loss_y, generator_objective
#     agree with central differences on >= 95% of 200 probed coordinates
# --------------------------------------------------------------------------

def test_criterion_10_gradient_checks(capsys):
    bundle = tiny_bundle(seed=11)
    gen = torch.Generator().manual_seed(99)
    z = torch.randn(3, bundle.d_z, generator=gen, dtype=torch.float64)
    real_images = torch.tanh(torch.randn(3, 3, 8, 8, generator=gen, dtype=torch.float64))
    real_series = torch.tanh(torch.randn(3, 16, generator=gen, dtype=torch.float64))
    eps = torch.rand(3, generator=gen, dtype=torch.float64)

    def loss_x_value():
        wgan, gp = loss_x(bundle.d_x, bundle.g, real_images, z, 10.0, eps)
        return gp - wgan

    def loss_y_value():
        wgan, gp = loss_y(bundle.d_y, bundle.f, bundle.g, real_series, z, 10.0, eps)
        return gp - wgan

    def gen_value():
        return generator_objective(bundle.d_x, bundle.d_y, bundle.g, bundle.f, z)

    total_agree = total_probes = 0
    pieces = []
    for name, fn, params, n in (
        ("loss_x", loss_x_value, list(bundle.d_x.parameters()) + list(bundle.g.parameters()), 67),
        ("loss_y", loss_y_value,
         list(bundle.d_y.parameters()) + list(bundle.f.parameters()) + list(bundle.g.parameters()), 67),
        ("generator_objective", gen_value,
         list(bundle.g.parameters()) + list(bundle.f.parameters()), 66),
    ):
        agree, probes = gradient_agreement(fn, params, n_probes=n, seed=hash(name) % 2**32)
        total_agree += agree
        total_probes += probes
        pieces.append(f"{name} {agree}/{probes}")
    fraction = total_agree / total_probes
    report(capsys, 10, total_probes == 200 and fraction >= 0.95,
           f"central-difference agreement {total_agree}/200 = {fraction:.1%} "
           f"({', '.join(pieces)}; tol 1e-3 relative)")


# --------------------------------------------------------------------------
# 11. FCN sanity on the separable sine/square set: validation accuracy
#     >= 0.95 and FID(real half, real half) < FID(real, white noise)
# --------------------------------------------------------------------------

def test_criterion_11_fcn_sanity(tmp_path, capsys):
    samples, labels = make_sine_square(n_per_class=50, length=128, seed=11)
    dataset = load_ucr(write_ucr_tsv(tmp_path / "SineSquare_TRAIN.tsv", samples, labels))
    classifier = train_fcn(dataset, seed=0)

    rng = np.random.default_rng(23)
    order = rng.permutation(dataset.n)
    half_a, half_b = dataset.samples[order[:50]], dataset.samples[order[50:]]
    self_score = fid_score(classifier, half_a, half_b)
    noise_score = fid_score(classifier, dataset.samples,
                            rng.standard_normal(dataset.samples.shape))
    report(capsys, 11, classifier.val_accuracy >= 0.95 and self_score < noise_score,
           f"validation accuracy {classifier.val_accuracy:.3f} (need >= 0.95); "
           f"FID real-vs-real {self_score:.3f} < real-vs-noise {noise_score:.3f}")


# --------------------------------------------------------------------------
# 6. desk-scale end-to-end: 20-series 2-class length-512 set, unified mode,
#    1000 epochs at the reduced 32x32 image size; median FID over 25 runs
#    improves from epoch 250 to 1000 and is non-increasing in >= 3 of the 4
#    checkpoint transitions
# --------------------------------------------------------------------------

def test_criterion_06_desk_scale_end_to_end(beetlefly_like_path, tmp_path, capsys):
    dataset = load_ucr(beetlefly_like_path)
    assert (dataset.n, dataset.length, dataset.n_classes) == (20, 512, 2)

    cfg = TrainingConfig(mode="unified", epochs=1000, image_size=32,
                         checkpoint_epochs=CHECKPOINT_EPOCHS, seed=0)
    run_dir = train(dataset, 0, cfg, tmp_path / "runs")
    classifier = train_fcn(dataset, seed=0)

    medians = {}
    for epoch in CHECKPOINT_EPOCHS:
        scores, _, _ = fid_scores(run_dir / f"epoch_{epoch}.ckpt", dataset, 0,
                                  classifier, runs=25, seed=0)
        medians[epoch] = float(np.median(scores))

    transitions = [(250, 500), (500, 750), (750, 1000), (250, 1000)]
    non_increasing = sum(medians[b] <= medians[a] for a, b in transitions)
    improved = medians[1000] < medians[250]
    detail = ", ".join(f"{e}: {medians[e]:.3f}" for e in CHECKPOINT_EPOCHS)
    report(capsys, 6, improved and non_increasing >= 3,
           f"median FID by epoch {{{detail}}}; 1000 < 250: {improved}; "
           f"non-increasing transitions {non_increasing}/4")


# --------------------------------------------------------------------------
# 7. directional comparison: 3 small datasets x 2 seeds at equal epochs,
#    unified final FID <= serial in a majority of the 6 runs, one shared
#    classifier per dataset
# --------------------------------------------------------------------------

def test_criterion_07_directional_comparison(tmp_path, capsys):
    corpora = []
    samples, labels = make_two_tone(n_per_class=10, length=128, seed=21)
    corpora.append(write_ucr_tsv(tmp_path / "ToneA_TRAIN.tsv", samples, labels))
    samples, labels = make_sine_square(n_per_class=10, length=128, seed=22)
    corpora.append(write_ucr_tsv(tmp_path / "Waves_TRAIN.tsv", samples, labels))
    samples, labels = make_two_tone(n_per_class=10, length=100, seed=23,
                                    f_low=2.0, f_high=6.0)
    corpora.append(write_ucr_tsv(tmp_path / "ToneB_TRAIN.tsv", samples, labels))

    epochs = 200
    wins = 0
    outcomes = []
    for path in corpora:
        dataset = load_ucr(path)
        classifier = train_fcn(dataset, seed=0)
        for seed in (0, 1):
            finals = {}
            for mode in ("unified", "serial"):
                cfg = TrainingConfig(mode=mode, epochs=epochs, image_size=32,
                                     checkpoint_epochs=(epochs,), seed=seed)
                run_dir = train(dataset, 0, cfg, tmp_path / "runs")
                rep = fid_report(run_dir / f"epoch_{epochs}.ckpt", dataset, 0,
                                 classifier, runs=9, seed=0)
                finals[mode] = rep.fid_mean
            win = finals["unified"] <= finals["serial"]
            wins += int(win)
            outcomes.append(
                f"{dataset.name}/seed{seed}: unified {finals['unified']:.2f} "
                f"{'<=' if win else '>'} serial {finals['serial']:.2f}")
    report(capsys, 7, wins >= 4,
           f"unified wins {wins}/6 ({'; '.join(outcomes)})")
