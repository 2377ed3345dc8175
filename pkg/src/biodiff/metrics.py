"""Fidelity metrics for synthetic signal corpora and the downstream F1 experiment."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import gaussian_filter1d, uniform_filter1d
from sklearn.metrics import f1_score
from sklearn.model_selection import train_test_split

from . import data as sd
from .errors import InvalidArgument
from .seeding import numpy_rng, substream_seed

MORLET_OMEGA0 = 6.0
N_SCALES = 32
COHERENCE_PAIRS = 200
DISC_MIN_PER_SET = 20
DISC_SETTINGS = {"hidden": 64, "layers": 2, "epochs": 10, "batch_size": 32, "lr": 1e-3, "test_fraction": 0.25}
CNN_SETTINGS = {"epochs": 20, "batch_size": 64, "lr": 1e-3, "channels": (16, 32, 64), "kernel": 5}


# -- wavelets ---------------------------------------------------------------------

def fourier_factor(omega0: float = MORLET_OMEGA0) -> float:
    """Equivalent Fourier period per unit scale for the Morlet wavelet."""
    return 4 * math.pi / (omega0 + math.sqrt(2 + omega0 ** 2))


def default_scales(length: int, n: int = N_SCALES, omega0: float = MORLET_OMEGA0) -> np.ndarray:
    """``n`` log-spaced scales whose periods span 2 .. length / 2 samples."""
    periods = np.geomspace(2.0, length / 2.0, n)
    return periods / fourier_factor(omega0)


def scale_periods(scales, omega0: float = MORLET_OMEGA0) -> np.ndarray:
    return np.asarray(scales) * fourier_factor(omega0)


def cwt(x, scales, omega0: float = MORLET_OMEGA0) -> np.ndarray:
    """Analytic Morlet transform of a 1-D series via FFT; returns (len(scales), L) complex."""
    x = np.asarray(x, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument("cwt expects a single-channel 1-D series")
    if x.shape[0] < 8:
        raise InvalidArgument("series must have at least 8 samples")
    if scales.size == 0:
        raise InvalidArgument("scales must be non-empty")
    if np.any(scales <= 0):
        raise InvalidArgument("scales must be positive")
    L = x.shape[0]
    X = np.fft.fft(x)
    omega = 2 * np.pi * np.fft.fftfreq(L)
    arg = scales[:, None] * omega[None, :]
    psi_hat = (math.pi ** -0.25) * np.exp(-0.5 * (arg - omega0) ** 2) * (omega > 0)[None, :]
    norm = np.sqrt(2 * np.pi * scales)[:, None]
    return np.fft.ifft(X[None, :] * psi_hat * norm, axis=1)


def _smooth(W: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Gaussian in time (std = scale / 2) then a 3-scale boxcar."""
    out = np.empty_like(W)
    for i, s in enumerate(scales):
        sigma = s / 2.0
        if np.iscomplexobj(W):
            out[i] = gaussian_filter1d(W[i].real, sigma, mode="nearest") + 1j * gaussian_filter1d(
                W[i].imag, sigma, mode="nearest"
            )
        else:
            out[i] = gaussian_filter1d(W[i], sigma, mode="nearest")
    if np.iscomplexobj(out):
        return uniform_filter1d(out.real, 3, axis=0, mode="nearest") + 1j * uniform_filter1d(
            out.imag, 3, axis=0, mode="nearest"
        )
    return uniform_filter1d(out, 3, axis=0, mode="nearest")


def wavelet_coherence(x, y, scales=None) -> np.ndarray:
    """Magnitude-squared wavelet coherence over the (scale, time) plane."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidArgument(f"shape mismatch {x.shape} vs {y.shape}")
    scales = default_scales(len(x)) if scales is None else np.asarray(scales)
    Wx, Wy = cwt(x, scales), cwt(y, scales)
    sxy = _smooth(Wx * np.conj(Wy), scales)
    sxx = _smooth(np.abs(Wx) ** 2, scales).real
    syy = _smooth(np.abs(Wy) ** 2, scales).real
    den = sxx * syy
    coh = np.zeros_like(den)
    ok = den > 0
    coh[ok] = np.abs(sxy[ok]) ** 2 / den[ok]
    return np.clip(coh, 0.0, 1.0)


def _as_array(s) -> np.ndarray:
    v = s.values if isinstance(s, sd.SignalSet) else np.asarray(s, dtype=np.float64)
    if v.ndim == 2:
        v = v[:, None, :]
    return v


def wavelet_coherence_score(real_set, synth_set, pairs: int = COHERENCE_PAIRS, seed: int = 0,
                            *, identity: bool = False) -> float:
    """100 x mean coherence over random real/synthetic pairs, channels and the plane.

    With ``identity`` the i-th real signal is paired with the i-th synthetic one.
    """
    real, synth = _as_array(real_set), _as_array(synth_set)
    if len(real) == 0 or len(synth) == 0:
        raise InvalidArgument("both sets must be non-empty")
    if real.shape[1:] != synth.shape[1:]:
        raise InvalidArgument(f"shape mismatch {real.shape[1:]} vs {synth.shape[1:]}")
    if identity:
        if len(real) != len(synth):
            raise InvalidArgument("identity pairing needs equally sized sets")
        idx = [(i, i) for i in range(len(real))]
    else:
        if pairs < 1:
            raise InvalidArgument("pairs must be positive")
        rng = numpy_rng(seed, "coherence")
        idx = list(zip(rng.integers(0, len(real), pairs), rng.integers(0, len(synth), pairs)))
    scales = default_scales(real.shape[-1])
    vals = [
        wavelet_coherence(real[i, c], synth[j, c], scales).mean()
        for i, j in idx
        for c in range(real.shape[1])
    ]
    return 100.0 * float(np.mean(vals))


# -- discriminative score ------------------------------------------------------------

class _SeqClassifier(nn.Module):
    def __init__(self, channels: int, hidden: int, layers: int, n_out: int = 1):
        super().__init__()
        self.rnn = nn.LSTM(channels, hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden, n_out)

    def forward(self, x):  # x: (B, C, L)
        _, (h, _) = self.rnn(x.transpose(1, 2))
        return self.head(h[-1]).squeeze(-1)


def discriminative_score(real_set, synth_set, seed: int = 0, **overrides) -> float:
    """|0.5 - accuracy| of a 2-layer LSTM trained to tell real (1) from synthetic (0)."""
    cfg = dict(DISC_SETTINGS, **overrides)
    real, synth = _as_array(real_set), _as_array(synth_set)
    for name, s in (("real", real), ("synthetic", synth)):
        if len(s) < DISC_MIN_PER_SET:
            raise InvalidArgument(f"{name} set has {len(s)} samples; at least {DISC_MIN_PER_SET} required")
    if real.shape[1:] != synth.shape[1:]:
        raise InvalidArgument(f"shape mismatch {real.shape[1:]} vs {synth.shape[1:]}")
    X = np.concatenate([real, synth]).astype(np.float32)
    y = np.concatenate([np.ones(len(real)), np.zeros(len(synth))]).astype(np.float32)
    split_seed = substream_seed(seed, "disc-split") % (2**32)
    X_tr, X_te, y_tr, y_te = train_test_split(X, y, test_size=cfg["test_fraction"], stratify=y,
                                              random_state=split_seed)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(substream_seed(seed, "disc-init"))
        model = _SeqClassifier(X.shape[1], cfg["hidden"], cfg["layers"])
    opt = torch.optim.Adam(model.parameters(), lr=cfg["lr"])
    lossf = nn.BCEWithLogitsLoss()
    Xt, yt = torch.from_numpy(X_tr), torch.from_numpy(y_tr)
    rng = numpy_rng(seed, "disc-shuffle")
    model.train()
    for _ in range(cfg["epochs"]):
        order = rng.permutation(len(Xt))
        for s in range(0, len(order), cfg["batch_size"]):
            b = order[s:s + cfg["batch_size"]]
            opt.zero_grad()
            lossf(model(Xt[b]), yt[b]).backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        pred = (model(torch.from_numpy(X_te)) > 0).numpy().astype(np.float32)
    acc = float((pred == y_te).mean())
    return abs(0.5 - acc)


# -- 1-D CNN classifier ----------------------------------------------------------------

class CNNClassifier(nn.Module):
    def __init__(self, channels: int, length: int, n_classes: int,
                 widths=CNN_SETTINGS["channels"], kernel: int = CNN_SETTINGS["kernel"]):
        super().__init__()
        layers = []
        prev = channels
        L = length
        for w in widths:
            layers += [nn.Conv1d(prev, w, kernel, padding=kernel // 2), nn.ReLU(), nn.MaxPool1d(2)]
            prev = w
            L //= 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev * L, n_classes)

    def forward(self, x):
        return self.head(self.features(x).flatten(1))


@dataclass
class F1Report:
    per_class_f1: dict[int, float]
    average: float
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"f1.class_{k}={v:.6f}" for k, v in sorted(self.per_class_f1.items())]
        lines.append(f"f1.average={self.average:.6f}")
        return "\n".join(lines) + "\n"


def train_cnn_classifier(train_set: sd.SignalSet, eval_set: sd.SignalSet, seed: int = 0,
                         **overrides) -> F1Report:
    """Train the fixed 3-block CNN on ``train_set``; per-class F1 on ``eval_set``."""
    cfg = dict(CNN_SETTINGS, **overrides)
    if train_set.labels is None or eval_set.labels is None:
        raise InvalidArgument("both sets need labels")
    train_classes = set(np.unique(train_set.labels).tolist())
    unseen = sorted(set(np.unique(eval_set.labels).tolist()) - train_classes)
    if unseen:
        raise InvalidArgument(f"eval classes {unseen} do not appear in the training set")
    if train_set.shape != eval_set.shape:
        raise InvalidArgument(f"shape mismatch {train_set.shape} vs {eval_set.shape}")
    n_classes = int(max(train_classes)) + 1
    C, L = train_set.shape

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(substream_seed(seed, "cnn-init"))
        model = CNNClassifier(C, L, n_classes, cfg["channels"], cfg["kernel"])
    opt = torch.optim.Adam(model.parameters(), lr=cfg["lr"])
    lossf = nn.CrossEntropyLoss()
    X = torch.as_tensor(train_set.values, dtype=torch.float32)
    y = torch.as_tensor(train_set.labels, dtype=torch.long)
    rng = numpy_rng(seed, "cnn-shuffle")
    model.train()
    for _ in range(cfg["epochs"]):
        order = rng.permutation(len(X))
        for s in range(0, len(order), cfg["batch_size"]):
            b = order[s:s + cfg["batch_size"]]
            opt.zero_grad()
            lossf(model(X[b]), y[b]).backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        pred = model(torch.as_tensor(eval_set.values, dtype=torch.float32)).argmax(1).numpy()
    return f1_report(eval_set.labels, pred, sorted(train_classes | set(eval_set.labels.tolist())))


def f1_report(y_true, y_pred, classes) -> F1Report:
    scores = f1_score(y_true, y_pred, labels=list(classes), average=None, zero_division=0)
    per = {int(c): float(s) for c, s in zip(classes, scores)}
    return F1Report(per, float(np.mean(list(per.values()))))


def augment_balance(train_set: sd.SignalSet, ckpt, target_per_class: int | dict | None = None,
                    seed: int = 0, guidance: float = 0.0, batch_size: int = 256) -> sd.SignalSet:
    """Top up every class below its target with label-conditional samples.

    ``target_per_class`` is an int, a ``{class: target}`` dict, or None for
    the current largest class count. Real rows are kept first, in order;
    appended rows are flagged in ``synthetic``.
    """
    from .engine import GuidanceConfig, sample_label_conditional

    if ckpt.regime != "label":
        raise InvalidArgument(f"augmentation needs a label-regime checkpoint, got {ckpt.regime!r}")
    if train_set.labels is None:
        raise InvalidArgument("training set has no labels")
    counts = train_set.class_counts()
    n_classes = ckpt.unet_config.num_classes
    if target_per_class is None:
        targets = {c: max(counts.values()) for c in range(n_classes)}
    elif isinstance(target_per_class, dict):
        targets = {int(k): int(v) for k, v in target_per_class.items()}
    else:
        if target_per_class < max(counts.values()):
            raise InvalidArgument(
                f"target {target_per_class} is below the largest class count {max(counts.values())}"
            )
        targets = {c: int(target_per_class) for c in range(n_classes)}

    parts = [sd.SignalSet(train_set.values, train_set.labels, np.zeros(len(train_set), bool))]
    model = ckpt.build_model()
    for cls in sorted(targets):
        need = targets[cls] - counts.get(cls, 0)
        if need <= 0:
            continue
        synth = sample_label_conditional(ckpt, cls, need, GuidanceConfig(guidance), seed,
                                         batch_size=batch_size, model=model)
        parts.append(sd.SignalSet(synth, np.full(need, cls), np.ones(need, bool)))
    out = sd.concat(parts)
    out.meta["class_counts"] = out.class_counts()
    return out


# -- projection ---------------------------------------------------------------------------

def pca_2d(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:2]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    proj = Xc @ comps.T
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    return proj


def export_projection(real_set, synth_set, path, method: str = "pca") -> np.ndarray:
    """Project both sets onto the top-2 principal components and write a CSV.

    Columns: ``x,y,origin,label``; returns the (n_real + n_synth, 2) coordinates.
    """
    if method != "pca":
        raise InvalidArgument(f"unsupported projection method {method!r} (only 'pca')")
    real, synth = _as_array(real_set), _as_array(synth_set)
    if len(real) == 0 or len(synth) == 0:
        raise InvalidArgument("both sets must be non-empty")
    if real.shape[1:] != synth.shape[1:]:
        raise InvalidArgument(f"shape mismatch {real.shape[1:]} vs {synth.shape[1:]}")
    if len(real) + len(synth) < 3:
        raise InvalidArgument("projection needs at least 3 samples in total")
    X = np.concatenate([real.reshape(len(real), -1), synth.reshape(len(synth), -1)])
    proj = pca_2d(X)

    def labels_of(s, n):
        if isinstance(s, sd.SignalSet) and s.labels is not None:
            return [str(int(v)) for v in s.labels]
        return [""] * n

    labels = labels_of(real_set, len(real)) + labels_of(synth_set, len(synth))
    origins = ["real"] * len(real) + ["synth"] * len(synth)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "origin", "label"])
        for (px, py), o, lab in zip(proj, origins, labels):
            w.writerow([format(px, ".6g"), format(py, ".6g"), o, lab])
    return proj


# -- report -------------------------------------------------------------------------------

@dataclass
class MetricReport:
    wavelet_coherence: float
    discriminative: float
    n_real: int
    n_synth: int
    settings: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.settings, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_text(self) -> str:
        return (
            f"wavelet_coherence={self.wavelet_coherence:.6f}\n"
            f"discriminative={self.discriminative:.6f}\n"
            f"n_real={self.n_real}\n"
            f"n_synth={self.n_synth}\n"
            f"settings_digest={self.digest}\n"
        )


def evaluate(real_set, synth_set, seed: int = 0, pairs: int = COHERENCE_PAIRS,
             identity: bool = False) -> MetricReport:
    real, synth = _as_array(real_set), _as_array(synth_set)
    settings = {
        "wavelet": {"omega0": MORLET_OMEGA0, "n_scales": N_SCALES, "pairs": pairs,
                    "identity": identity, "time_smoothing": "gaussian std=scale/2",
                    "scale_smoothing": "boxcar 3"},
        "discriminative": DISC_SETTINGS,
        "seed": seed,
    }
    return MetricReport(
        wavelet_coherence=wavelet_coherence_score(real, synth, pairs, seed, identity=identity),
        discriminative=discriminative_score(real, synth, seed),
        n_real=len(real),
        n_synth=len(synth),
        settings=settings,
    )


def write_report(text: str, path) -> None:
    Path(path).write_text(text, encoding="utf-8")
