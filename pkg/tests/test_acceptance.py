"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

The desk-scale experiment settings live in the constants below each section so
that the runs are easy to audit. Run with ``pytest tests/test_acceptance.py -v``;
the summary block at the end of the session lists every criterion.
"""

from __future__ import annotations

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from biodiff import checkpoint as ckio
from biodiff import data as sd
from biodiff import engine as en
from biodiff import metrics as mt
from biodiff.cli import CONFIG_NAME, main
from biodiff.denoiser import UNetConfig, build_model
from biodiff.seeding import substream_seed
from biodiff.diffusion_math import (build_schedule, posterior_mean_from_eps, posterior_mean_from_x0,
                                    posterior_variance, q_sample)
from oracles import Criterion, finite_difference_check, l1_loss_fn, tiny_inputs, tiny_model

pytestmark = pytest.mark.acceptance


# -- 1. schedule / math ---------------------------------------------------------------

def _schedule_violations(s) -> list[str]:
    bad = []
    T = s.T
    if not (len(s.beta) == T and len(s.alpha) == T and len(s.alpha_bar) == T + 1 and len(s.posterior_var) == T):
        bad.append("table lengths")
    if not np.all((s.beta > 0) & (s.beta < 1)):
        bad.append("0 < beta < 1")
    if not np.array_equal(s.alpha, 1.0 - s.beta):
        bad.append("alpha = 1 - beta")
    if s.alpha_bar[0] != 1.0:
        bad.append("alpha_bar_0 = 1")
    if not np.array_equal(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha):
        bad.append("alpha_bar recursion")
    if not np.all(np.diff(s.alpha_bar) < 0):
        bad.append("alpha_bar strictly decreasing")
    bt = (1 - s.alpha_bar[:-1]) / (1 - s.alpha_bar[1:]) * s.beta
    if not np.allclose(s.posterior_var, bt, rtol=1e-12, atol=0):
        bad.append("beta_tilde formula")
    if not np.all((s.posterior_var >= 0) & (s.posterior_var <= s.beta)):
        bad.append("0 <= beta_tilde <= beta")
    if T >= 100 and not s.alpha_bar[T] < 1e-3:
        bad.append(f"alpha_bar_T = {s.alpha_bar[T]:.2e} >= 1e-3")
    return bad


def test_criterion_1_schedule_math():
    with Criterion(1, "schedule/math suite") as c:
        bad = {}
        for kind in ("linear", "cosine"):
            for T in (1, 10, 100, 1000):
                v = _schedule_violations(build_schedule(kind, T))
                if v:
                    bad[f"{kind}/{T}"] = v
        c.check("invariants", not bad, "all hold for linear+cosine at T=1,10,100,1000" if not bad else str(bad))

        ab = build_schedule("cosine", 1000).alpha_bar_at(500)
        c.check("cosine alpha_bar_500", abs(ab - 0.495) <= 0.005, f"{ab:.5f} (0.495 +- 0.005)")

        # every step of the sequential chain vs the closed form, 1e5 scalar draws
        rng = np.random.default_rng(2024)
        n, x0 = 100_000, 0.6
        worst = 0.0
        for kind in ("linear", "cosine"):
            s = build_schedule(kind, 1000)
            x = np.full(n, x0)
            for t in range(1, s.T + 1):
                x = math.sqrt(s.alpha_at(t)) * x + math.sqrt(s.beta_at(t)) * rng.standard_normal(n)
                if t in (1, 10, 100, 250, 500, 750, 1000):
                    closed = q_sample(np.full(n, x0), t, rng.standard_normal(n), s)
                    # moments compared on their natural scale: the std for the mean, the variance itself
                    scale = math.sqrt(max(x.var(), closed.var()))
                    worst = max(worst, abs(x.mean() - closed.mean()) / max(abs(closed.mean()), scale),
                                abs(x.var() - closed.var()) / closed.var())
        c.check("closed vs sequential", worst <= 0.02, f"max relative moment gap {worst:.4f} <= 0.02")
        c.runtime(10)
        c.finish()


# -- 2. posterior identity ------------------------------------------------------------

def test_criterion_2_posterior_identity():
    with Criterion(2, "posterior identity") as c:
        rng = np.random.default_rng(7)
        worst = 0.0
        scheds = [build_schedule("linear", 1000), build_schedule("cosine", 1000)]
        for i in range(1000):
            s = scheds[i % 2]
            t = int(rng.integers(1, s.T + 1))
            x0 = rng.uniform(-1, 1, (1, 32))
            eps = rng.standard_normal((1, 32))
            x_t = q_sample(x0, t, eps, s)
            a = posterior_mean_from_eps(x_t, eps, t, s)
            b = posterior_mean_from_x0(x0, x_t, t, s)
            worst = max(worst, float(np.linalg.norm(a - b) / np.linalg.norm(b)))
        c.check("eps-form vs x0-form", worst < 1e-6, f"max relative error {worst:.2e} over 1000 triples")

        exact = True
        for s in scheds + [build_schedule("linear", 1)]:
            for t in range(1, s.T + 1):
                exact &= posterior_variance(t, s, 0.0) == s.posterior_var_at(t)
                exact &= posterior_variance(t, s, 1.0) == s.beta_at(t)
        c.check("variance endpoints", exact, "v=0 -> beta_tilde and v=1 -> beta bit-exact at every t")
        c.runtime(5)
        c.finish()


# -- 3. gradient check ----------------------------------------------------------------

def test_criterion_3_gradient_check():
    with Criterion(3, "gradient check") as c:
        # label-conditional tiny model: exercises every layer type except the signal fusion
        m = tiny_model(seed=1, num_classes=3)
        assert m.config.base_channels == 8 and m.config.channel_mults == (1, 2) and m.config.signal_length == 16
        x, t, eps, labels, _ = tiny_inputs(m, seed=0, with_labels=True)
        n_params = sum(p.numel() for p in m.parameters())
        errs = finite_difference_check(m, l1_loss_fn(m, x, t, eps, labels), h=1e-6)
        worst = max(errs, key=errs.get)
        c.check("all coordinates", errs[worst] < 1e-3,
                f"{n_params} params in {len(errs)} tensors, float64, worst {worst} rel {errs[worst]:.2e}")
        c.runtime(120)
        c.finish()


# -- 4. overfit sanity ----------------------------------------------------------------

C4_STEPS = 2000
C4_COPIES = 64
C4_SAMPLES = 16


def test_criterion_4_overfit():
    with Criterion(4, "overfit sanity") as c:
        target = sd.gen_simulated(1, seed=11).values[0]  # class-0 signal, (1, 512)
        data = sd.SignalSet(np.repeat(target[None], C4_COPIES, axis=0))
        cfg = UNetConfig(1, 512, base_channels=16, channel_mults=(1, 2, 2, 4, 4), num_res_blocks=1)
        tcfg = en.TrainConfig(lr=1e-3, batch_size=32, epochs=10_000, early_stop_patience=10_000,
                              max_steps=C4_STEPS, seed=0)
        res = en.train(build_model(cfg, 0), data, "unconditional", tcfg, build_schedule("cosine", 1000))
        hist = res.checkpoint.history
        first, last = hist[0]["train_loss"], hist[-1]["train_loss"]
        c.check("steps", len(res.step_losses) == C4_STEPS, f"{len(res.step_losses)} optimizer steps")
        c.check("loss drop", last <= 0.2 * first, f"final epoch {last:.4f} <= 20% of first epoch {first:.4f}")

        samples = en.sample_unconditional(res.checkpoint, C4_SAMPLES, seed=3)
        mse = float(((samples - target) ** 2).mean())
        noise = np.random.default_rng(3).standard_normal(samples.shape)
        base = float(((noise - target) ** 2).mean())
        c.check("sample MSE", base >= 5 * mse, f"{mse:.4f} vs normal baseline {base:.3f} ({base / mse:.1f}x >= 5x)")
        c.runtime(15 * 60)
        c.finish()


# -- 5. desk-scale fidelity -----------------------------------------------------------

C5_PER_CLASS_TRAIN = 500
C5_EPOCHS = 10
C5_T = 250          # cosine; shortened from 1000 to keep sampling at desk scale
C5_PER_CLASS_EVAL = 100


@pytest.fixture(scope="module")
def desk_label_run():
    t0 = time.perf_counter()
    train = sd.gen_simulated(C5_PER_CLASS_TRAIN, seed=0)
    cfg = UNetConfig(1, 512, base_channels=16, channel_mults=(1, 2, 2, 4, 4), num_res_blocks=1, num_classes=5)
    tcfg = en.TrainConfig(epochs=C5_EPOCHS, early_stop_patience=C5_EPOCHS, seed=0)
    ck = en.train(build_model(cfg, 0), train, "label", tcfg, build_schedule("cosine", C5_T)).checkpoint
    synth = np.concatenate([en.sample_label_conditional(ck, k, C5_PER_CLASS_EVAL, seed=1) for k in range(5)])
    return {"train": train, "ckpt": ck, "synth": synth, "labels": np.repeat(np.arange(5), C5_PER_CLASS_EVAL),
            "seconds": time.perf_counter() - t0}


def test_criterion_5_desk_fidelity(desk_label_run):
    with Criterion(5, "desk-scale fidelity") as c:
        c.t0 -= desk_label_run["seconds"]
        real = sd.gen_simulated(C5_PER_CLASS_EVAL, seed=99)  # held out from training
        synth = desk_label_run["synth"]
        noise = sd.normalize_set(np.random.default_rng(5).standard_normal(synth.shape))
        coh_s = mt.wavelet_coherence_score(real, synth, seed=0)
        coh_n = mt.wavelet_coherence_score(real, noise, seed=0)
        c.check("coherence gap", coh_s - coh_n >= 20, f"synth {coh_s:.2f} - noise {coh_n:.2f} = {coh_s - coh_n:.2f} >= 20")
        d_s = mt.discriminative_score(real, synth, seed=0)
        d_n = mt.discriminative_score(real, noise, seed=0)
        c.check("disc synth", d_s < 0.45, f"{d_s:.3f} < 0.45")
        c.check("disc noise", d_n >= 0.45, f"{d_n:.3f} >= 0.45")
        c.runtime(60 * 60)
        c.finish()


def test_desk_samples_track_class_means(desk_label_run):
    # per-timestep sample mean within 3 training-std of the training class mean
    train, synth, labels = desk_label_run["train"], desk_label_run["synth"], desk_label_run["labels"]
    for k in range(5):
        ref = train.of_class(k).values[:, 0]
        mean_s = synth[labels == k, 0].mean(0)
        inside = np.abs(mean_s - ref.mean(0)) <= 3 * ref.std(0)
        assert inside.mean() >= 0.95, (k, inside.mean())


def test_desk_labels_steer_samples(desk_label_run):
    ck = desk_label_run["ckpt"]
    a = en.sample_label_conditional(ck, 0, 2, seed=4)
    b = en.sample_label_conditional(ck, 3, 2, seed=4)
    assert np.linalg.norm(a - b) > 0


# -- 6. restoration -------------------------------------------------------------------

C6_PER_CLASS_TRAIN = 400
C6_EPOCHS = 60
C6_T = 100          # cosine
C6_DRAWS = 8
C6_EMA = 0.995
C6_NOISE_STD = 0.5  # observation noise of the simulated signals (generator default 1.0)
C6_CORRUPTORS = [sd.CorruptionSpec("thermal", amplitude=0.2), sd.CorruptionSpec("mask", rate=0.2),
                 sd.CorruptionSpec("downsample", factor=4)]


@pytest.fixture(scope="module")
def desk_signal_run():
    t0 = time.perf_counter()
    train = sd.gen_simulated(C6_PER_CLASS_TRAIN, seed=0, noise_std=C6_NOISE_STD)
    cfg = UNetConfig(1, 512, base_channels=16, channel_mults=(1, 2, 2, 4, 4), num_res_blocks=1, signal_cond=True)
    tcfg = en.TrainConfig(epochs=C6_EPOCHS, early_stop_patience=C6_EPOCHS, ema_decay=C6_EMA, seed=0)
    ck = en.train(build_model(cfg, 0), train, "signal", tcfg, build_schedule("cosine", C6_T),
                  C6_CORRUPTORS).checkpoint
    return {"ckpt": ck, "train": train, "seconds": time.perf_counter() - t0}


def test_criterion_6_restoration(desk_signal_run):
    with Criterion(6, "restoration") as c:
        c.t0 -= desk_signal_run["seconds"]
        ck = desk_signal_run["ckpt"]
        held = sd.gen_simulated(20, seed=123, noise_std=C6_NOISE_STD).values  # 100 held-out signals
        thermal, mask, down = (s.with_seed(77) for s in C6_CORRUPTORS)

        deg, _ = sd.corrupt_set(held, thermal)
        out = en.restore(ck, deg, "denoise", seed=5, draws=C6_DRAWS).values
        r, b = ((out - held) ** 2).mean(), ((deg - held) ** 2).mean()
        c.check("denoise", r <= 0.5 * b, f"restored {r:.5f} <= 50% of degraded {b:.5f} (ratio {r / b:.3f})")

        deg, masks = sd.corrupt_set(held, mask)
        out = en.restore(ck, deg, "impute", seed=5, draws=C6_DRAWS).values
        m = np.zeros(held.shape, bool)
        for i, idx in enumerate(masks):
            m[i, :, idx] = True
        r, b = ((out - held)[m] ** 2).mean(), (held[m] ** 2).mean()
        c.check("impute", r < b, f"masked-region {r:.5f} < zero-fill {b:.5f} (ratio {r / b:.3f})")

        short = held[:, :, ::4]
        naive = sd.naive_upsample(short, 4, held.shape[-1])
        assert np.array_equal(naive, sd.corrupt_set(held, down)[0])
        out = en.restore(ck, short, "upsample", seed=5, draws=C6_DRAWS, factor=4).values
        r, b = ((out - held) ** 2).mean(), ((naive - held) ** 2).mean()
        c.check("upsample", r < b, f"restored {r:.5f} < linear interpolation {b:.5f} (ratio {r / b:.3f})")
        c.runtime(30 * 60)
        c.finish()


def test_self_conditioning_beats_noise(desk_signal_run):
    clean = desk_signal_run["train"].values[:10]
    out = en.sample_signal_conditional(desk_signal_run["ckpt"], clean, seed=2)
    noise = np.random.default_rng(2).standard_normal(clean.shape)
    assert ((noise - clean) ** 2).mean() >= 10 * ((out - clean) ** 2).mean()


def test_denoise_clean_input_stays_close(desk_signal_run):
    clean = sd.gen_simulated(2, seed=321, noise_std=C6_NOISE_STD).values
    out = en.restore(desk_signal_run["ckpt"], clean, "denoise", seed=2).values
    assert ((out - clean) ** 2).mean() < 0.2 ** 2


# -- 7. imbalance replica -------------------------------------------------------------

C7_TRAIN_COUNTS = {0: 1000, 1: 60, 2: 100, 3: 30, 4: 100}
C7_TEST_PER_CLASS = 200
C7_EPOCHS = 100
C7_T = 200          # cosine
C7_SEEDS = (0, 1, 2)


def test_criterion_7_imbalance():
    with Criterion(7, "imbalance augmentation") as c:
        train = sd.gen_ecg_beats(C7_TRAIN_COUNTS, seed=0)
        test = sd.gen_ecg_beats({k: C7_TEST_PER_CLASS for k in range(5)}, seed=1)
        cfg = UNetConfig(1, 144, base_channels=16, channel_mults=(1, 2, 2), num_res_blocks=1, num_classes=5)
        tcfg = en.TrainConfig(epochs=C7_EPOCHS, early_stop_patience=C7_EPOCHS, seed=0)
        ck = en.train(build_model(cfg, 0), train, "label", tcfg, build_schedule("cosine", C7_T)).checkpoint
        minority = [k for k in C7_TRAIN_COUNTS if k != 0]
        wins, rows = 0, []
        for s in C7_SEEDS:
            base = mt.train_cnn_classifier(train, test, seed=s)
            aug = mt.augment_balance(train, ck, seed=s)
            boosted = mt.train_cnn_classifier(aug, test, seed=s)
            fb = np.mean([base.per_class_f1[k] for k in minority])
            fa = np.mean([boosted.per_class_f1[k] for k in minority])
            wins += fa > fb
            rows.append(f"seed {s}: {fb:.3f}->{fa:.3f} (avg {base.average:.3f}->{boosted.average:.3f})")
        c.check("minority F1", wins >= 2, f"{wins}/3 strict improvements; " + ", ".join(rows))
        c.runtime(60 * 60)
        c.finish()


# -- 8. metric oracles ----------------------------------------------------------------

def test_criterion_8_metric_oracles():
    with Criterion(8, "metric oracles") as c:
        ds = sd.gen_simulated(20, seed=4)
        s = mt.wavelet_coherence_score(ds, ds, identity=True)
        c.check("coherence(A,A)", abs(s - 100) <= 1e-3, f"{s:.6f} = 100 +- 1e-3")

        corpus = sd.gen_simulated(80, seed=5)  # 400 signals
        perm = np.random.default_rng(0).permutation(len(corpus))
        half = len(corpus) // 2
        d = mt.discriminative_score(corpus.values[perm[:half]], corpus.values[perm[half:]], seed=0)
        c.check("self-split", d <= 0.1, f"{d:.3f} <= 0.1 (n = {len(corpus)})")

        z = mt.discriminative_score(np.zeros((100, 1, 512)), np.ones((100, 1, 512)), seed=0)
        c.check("zeros vs ones", z == 0.5, f"{z}")
        c.runtime(5 * 60)
        c.finish()


# -- 9. engineering contracts ---------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _file_digest(path: Path, root: Path) -> str:
    if path.name == CONFIG_NAME:
        # paths under the session root are the only settings that legitimately differ between runs
        text = path.read_text().replace(str(root), "<root>")
        return hashlib.sha256(text.encode()).hexdigest()
    return _digest(path)


TINY_FLAGS = ["--timesteps", "10", "--base-channels", "8", "--channel-mults", "1,2", "--num-res-blocks", "1",
              "--res-groups", "4", "--attn-heads", "2", "--batch-size", "16"]


def _cli_session(root: Path) -> dict[str, list[str]]:
    """Every command once; returns argv per step (outputs under ``root``)."""
    d = root / "data"
    steps = {
        "simulate": ["simulate", "--n-per-class", "12", "--length", "32", "--seed", "3", "--out", str(d)],
    }
    for regime in ("label", "uncond", "signal"):
        steps[f"train-{regime}"] = ["train", "--regime", regime, "--data", str(d / "train.csv"), "--epochs", "2",
                                    "--seed", "4", "--out", str(root / regime)] + TINY_FLAGS
    steps["generate-label"] = ["generate", "--ckpt", str(root / "label" / "ckpt.bdif"), "--n", "20", "--label", "2",
                               "--guidance", "1.5", "--seed", "5", "--out", str(root / "gen")]
    steps["generate-uncond"] = ["generate", "--ckpt", str(root / "uncond" / "ckpt.bdif"), "--n", "4",
                                "--seed", "5", "--out", str(root / "genu")]
    for task in ("denoise", "impute", "upsample"):
        steps[f"restore-{task}"] = ["restore", "--ckpt", str(root / "signal" / "ckpt.bdif"),
                                    "--data", str(d / "test.csv"), "--task", task, "--draws", "2",
                                    "--seed", "6", "--out", str(root / f"res-{task}")]
    steps["evaluate"] = ["evaluate", "--real", str(d / "train.csv"), "--synth", str(root / "gen" / "generated.csv"),
                         "--pairs", "10", "--classifier", str(d / "train.csv"), "--project", "--seed", "7",
                         "--out", str(root / "eval")]
    steps["augment"] = ["augment", "--ckpt", str(root / "label" / "ckpt.bdif"), "--data", str(d / "train.csv"),
                        "--target", "15", "--seed", "8", "--out", str(root / "aug")]
    return steps


def test_criterion_9_engineering_contracts(tmp_path):
    with Criterion(9, "engineering contracts") as c:
        # checkpoint round trip: bit-identical evaluation outputs for all regimes
        data = sd.gen_simulated(8, seed=0, length=16)
        sched = build_schedule("cosine", 20)
        same = []
        for regime in ("unconditional", "label", "signal"):
            cfg = UNetConfig(1, 16, base_channels=8, channel_mults=(1, 2), res_groups=4, attn_heads=2,
                             num_res_blocks=1, num_classes=5 if regime == "label" else None,
                             signal_cond=regime == "signal")
            corr = sd.CorruptionSpec("thermal", amplitude=0.2) if regime == "signal" else None
            ck = en.train(build_model(cfg, 0), data, regime, en.TrainConfig(epochs=2, batch_size=8), sched,
                          corr).checkpoint
            ckio.save(ck, tmp_path / f"{regime}.bdif")
            back = ckio.load(tmp_path / f"{regime}.bdif")
            if regime == "unconditional":
                a, b = en.sample_unconditional(ck, 3, 1), en.sample_unconditional(back, 3, 1)
            elif regime == "label":
                a, b = en.sample_label_conditional(ck, 2, 3, seed=1), en.sample_label_conditional(back, 2, 3, seed=1)
            else:
                a = en.sample_signal_conditional(ck, data.values[:3], seed=1)
                b = en.sample_signal_conditional(back, data.values[:3], seed=1)
            x = torch.randn(3, 1, 16)
            t = torch.tensor([1, 7, 20])
            lab = torch.tensor([0, 1, 4]) if regime == "label" else None
            cs = torch.as_tensor(data.values[:3], dtype=torch.float32) if regime == "signal" else None
            with torch.no_grad():
                e1, e2 = ck.build_model()(x, t, lab, cs), back.build_model()(x, t, lab, cs)
            same.append(np.array_equal(a, b) and torch.equal(e1, e2))
        c.check("checkpoint round trip", all(same), "samples and eps predictions bit-identical for 3 regimes")

        # guidance w = 0: combined estimate and full chain equal the plain conditional ones
        ck = ckio.load(tmp_path / "label.bdif")
        m = ck.build_model()
        x = torch.randn(4, 1, 16)
        t = torch.full((4,), 9)
        with torch.no_grad():
            eps_ok = torch.equal(en.guided_eps(m, x, t, 3, 0.0), m(x, t, torch.full((4,), 3)))
        guided = en.sample_label_conditional(ck, 3, 4, en.GuidanceConfig(0.0), seed=2)
        plain = en._reverse_chain(lambda x, t: m(x, t, torch.full((len(x),), 3)), ck.build_schedule(),
                                  (1, 16), en._Chains(substream_seed(2, "label", 3), 4)).numpy().astype(np.float64)
        c.check("guidance w=0", eps_ok and np.array_equal(guided, plain), "eps and sampled chain identical")

        # every CLI command twice with the same seed -> byte-identical outputs
        digests = []
        for run in ("a", "b"):
            root = tmp_path / run
            codes = {}
            for name, argv in _cli_session(root).items():
                codes[name] = main(argv)
            assert all(v == 0 for v in codes.values()), codes
            digests.append({str(p.relative_to(root)): _file_digest(p, root) for p in sorted(root.rglob("*")) if p.is_file()})
        diff = sorted(k for k in digests[0] if digests[0][k] != digests[1].get(k))
        c.check("CLI reproducible", not diff and len(digests[0]) == len(digests[1]),
                f"{len(digests[0])} files across 6 commands identical" if not diff else f"differ: {diff}")

        # exit-code contract: 0 ok, 2 usage/validation, 1 io, 3 numerical
        root = tmp_path / "a"
        d = root / "data"
        (tmp_path / "blocker").write_text("x")
        trunc = tmp_path / "trunc.bdif"
        trunc.write_bytes((root / "label" / "ckpt.bdif").read_bytes()[:200])
        (tmp_path / "bad.cfg").write_text("not_a_key=1\n")
        cases = [
            (0, ["simulate", "--n-per-class", "2", "--length", "16", "--out", str(tmp_path / "ok")]),
            (2, ["simulate", "--n-per-class", "0", "--out", str(tmp_path / "x")]),
            (2, ["simulate", "--no-such-flag", "1", "--out", str(tmp_path / "x")]),
            (2, ["simulate", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "x")]),
            (2, ["train", "--regime", "label", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "x")]),
            (2, ["train", "--regime", "gan", "--data", str(d / "train.csv"), "--out", str(tmp_path / "x")]),
            (2, ["generate", "--ckpt", str(root / "label" / "ckpt.bdif"), "--label", "9", "--out", str(tmp_path / "x")]),
            (2, ["restore", "--ckpt", str(root / "signal" / "ckpt.bdif"), "--data", str(d / "test.csv"),
                 "--task", "deblur", "--out", str(tmp_path / "x")]),
            (2, ["restore", "--ckpt", str(root / "label" / "ckpt.bdif"), "--data", str(d / "test.csv"),
                 "--out", str(tmp_path / "x")]),
            (2, ["augment", "--ckpt", str(root / "uncond" / "ckpt.bdif"), "--data", str(d / "train.csv"),
                 "--out", str(tmp_path / "x")]),
            (1, ["generate", "--ckpt", str(trunc), "--label", "1", "--out", str(tmp_path / "x")]),
            (1, ["simulate", "--n-per-class", "2", "--length", "16", "--out", str(tmp_path / "blocker" / "sub")]),
            (3, ["train", "--regime", "uncond", "--data", str(d / "train.csv"), "--epochs", "3", "--lr", "1e30",
                 "--out", str(tmp_path / "x")] + TINY_FLAGS),
        ]
        wrong = [(want, got, argv[0]) for want, argv in cases if (got := main(argv)) != want]
        c.check("exit codes", not wrong, f"{len(cases)} cases (0/1/2/3) as specified" if not wrong else str(wrong))
        c.runtime(10 * 60)
        c.finish()
