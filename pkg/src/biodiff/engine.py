"""Training, sampling, restoration and fine-tuning for the 1-D diffusion model."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from . import data as sd
from .checkpoint import REGIMES, Checkpoint
from .denoiser import UNet1D, drop_labels, state_arrays
from .diffusion_math import NoiseSchedule, elbo_terms, p_sample_step
from .errors import EmptyDataset, InvalidArgument, TrainingDiverged
from .seeding import numpy_rng, substream_seed, torch_gen

log = logging.getLogger(__name__)

# Defaults per regime: (schedule kind, T)
REGIME_DIFFUSION = {
    "unconditional": ("cosine", 1000),
    "label": ("cosine", 1000),
    "signal": ("linear", 2000),
}
RESTORE_TASKS = ("denoise", "impute", "upsample")


@dataclass
class TrainConfig:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    epochs: int = 100
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    ema_decay: float | None = None
    seed: int = 0
    max_steps: int | None = None
    elbo_every: int = 0  # epochs between ELBO diagnostics; 0 disables

    def validate(self) -> None:
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if not self.lr > 0:
            raise InvalidArgument("lr must be > 0")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        if self.early_stop_patience < 0:
            raise InvalidArgument("early_stop_patience must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidArgument("val_fraction must lie in (0, 1)")
        if self.ema_decay is not None and not 0.0 < self.ema_decay < 1.0:
            raise InvalidArgument("ema_decay must lie in (0, 1)")


@dataclass
class GuidanceConfig:
    weight: float = 0.0

    def validate(self) -> None:
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise InvalidArgument("guidance weight must be finite and >= 0")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    step_losses: list[float] = field(default_factory=list)

    @property
    def history(self) -> list[dict]:
        return self.checkpoint.history


Corruptor = sd.CorruptionSpec | Sequence[sd.CorruptionSpec]


def _schedule_tensors(sched: NoiseSchedule):
    abar = torch.tensor(sched.alpha_bar, dtype=torch.float32)
    return abar.sqrt(), (1.0 - abar).sqrt()


def _split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = numpy_rng(seed, "split").permutation(n)
    if n < 2:
        return perm, perm
    n_val = min(n - 1, max(1, int(round(frac * n))))
    return perm[n_val:], perm[:n_val]


def _corrupt_batch(values: np.ndarray, corruptor: Corruptor, seed: int, *stream: int) -> np.ndarray:
    specs = [corruptor] if isinstance(corruptor, sd.CorruptionSpec) else list(corruptor)
    rng = numpy_rng(seed, "corrupt", *stream)
    out = np.empty_like(values)
    for i, v in enumerate(values):
        spec = specs[int(rng.integers(len(specs)))] if len(specs) > 1 else specs[0]
        out[i] = sd.corrupt(v, spec.with_seed(int(rng.integers(2**62)))).values
    return out


class _Trainer:
    """Shared optimisation loop for ``train`` and ``fine_tune``."""

    def __init__(self, model: UNet1D, regime: str, sched: NoiseSchedule, tcfg: TrainConfig,
                 corruptor: Corruptor | None, optimizer_state: dict | None = None):
        self.model = model
        self.regime = regime
        self.sched = sched
        self.tcfg = tcfg
        self.corruptor = corruptor
        self.opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=tuple(tcfg.betas))
        if optimizer_state is not None:
            self.opt.load_state_dict(optimizer_state)
            for group in self.opt.param_groups:
                group["lr"] = tcfg.lr
                group["betas"] = tuple(tcfg.betas)
        self.ema = copy.deepcopy(model).eval() if tcfg.ema_decay else None
        self.sqrt_abar, self.sqrt_1m_abar = _schedule_tensors(sched)
        self.gen = torch_gen(tcfg.seed, "train")
        self.step = 0

    def _inputs(self, x0: np.ndarray, labels: np.ndarray | None, stream: tuple[int, ...]):
        cond = None
        if self.regime == "signal":
            cond = torch.as_tensor(
                _corrupt_batch(x0, self.corruptor, self.tcfg.seed, *stream), dtype=torch.float32
            )
        lab = torch.as_tensor(labels, dtype=torch.long) if self.regime == "label" else None
        return torch.as_tensor(x0, dtype=torch.float32), lab, cond

    def loss(self, model, x0, labels, cond, gen: torch.Generator, train: bool):
        B = x0.shape[0]
        t = torch.randint(1, self.sched.T + 1, (B,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        x_t = self.sqrt_abar[t][:, None, None] * x0 + self.sqrt_1m_abar[t][:, None, None] * eps
        if labels is not None and train:
            cfg = model.config
            labels = drop_labels(labels, cfg.cond_drop_prob, cfg.null_label, gen)
        eps_hat = model(x_t, t, labels, cond)
        return (eps_hat - eps).abs().mean()

    def train_epoch(self, ds: sd.SignalSet, epoch: int) -> tuple[float, bool]:
        self.model.train()
        order = numpy_rng(self.tcfg.seed, "shuffle", epoch).permutation(len(ds))
        losses = []
        bs = self.tcfg.batch_size
        for b, start in enumerate(range(0, len(order), bs)):
            if self.tcfg.max_steps is not None and self.step >= self.tcfg.max_steps:
                return (float(np.mean(losses)) if losses else float("nan")), True
            idx = order[start:start + bs]
            labels = ds.labels[idx] if ds.labels is not None else None
            x0, lab, cond = self._inputs(ds.values[idx], labels, (epoch, b))
            loss = self.loss(self.model, x0, lab, cond, self.gen, train=True)
            self.step += 1
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(self.step, value)
            self.opt.zero_grad(set_to_none=True)
            loss.backward()
            self.opt.step()
            if self.ema is not None:
                with torch.no_grad():
                    d = self.tcfg.ema_decay
                    for pe, p in zip(self.ema.parameters(), self.model.parameters()):
                        pe.mul_(d).add_(p.detach(), alpha=1 - d)
            losses.append(value)
            self.step_losses.append(value)
        done = self.tcfg.max_steps is not None and self.step >= self.tcfg.max_steps
        return float(np.mean(losses)), done

    @torch.no_grad()
    def val_loss(self, ds: sd.SignalSet) -> float:
        # common random numbers: identical t / eps / corruption every epoch
        model = self.ema if self.ema is not None else self.model
        was = model.training
        model.eval()
        gen = torch_gen(self.tcfg.seed, "val")
        total, count = 0.0, 0
        bs = self.tcfg.batch_size
        for b, start in enumerate(range(0, len(ds), bs)):
            sl = slice(start, start + bs)
            labels = ds.labels[sl] if ds.labels is not None else None
            x0, lab, cond = self._inputs(ds.values[sl], labels, (10**6, b))
            loss = self.loss(model, x0, lab, cond, gen, train=False)
            total += float(loss) * len(x0)
            count += len(x0)
        model.train(was)
        return total / count

    def snapshot(self) -> tuple[dict, dict | None, dict]:
        ema = state_arrays(self.ema) if self.ema is not None else None
        return state_arrays(self.model), ema, copy.deepcopy(self.opt.state_dict())

    def fit(self, train_ds: sd.SignalSet, val_ds: sd.SignalSet, start_epoch: int = 0,
            on_epoch: Callable[[dict], None] | None = None) -> dict:
        self.step_losses: list[float] = []
        best = {"val": float("inf"), "state": self.snapshot(), "epoch": start_epoch}
        history = []
        since_best = 0
        for epoch in range(start_epoch + 1, start_epoch + self.tcfg.epochs + 1):
            train_loss, done = self.train_epoch(train_ds, epoch)
            val = self.val_loss(val_ds)
            row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val, "step": self.step}
            if self.tcfg.elbo_every and epoch % self.tcfg.elbo_every == 0:
                row["elbo"] = _elbo_monitor(self.ema or self.model, val_ds, self.sched, self.regime,
                                            self.corruptor, self.tcfg.seed)
            history.append(row)
            log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val)
            if on_epoch is not None:
                on_epoch(row)
            if not math.isfinite(val):
                raise TrainingDiverged(self.step, val)
            if val < best["val"]:
                best = {"val": val, "state": self.snapshot(), "epoch": epoch}
                since_best = 0
            else:
                since_best += 1
            if done or since_best >= self.tcfg.early_stop_patience:
                break
        best["history"] = history
        best["last_epoch"] = history[-1]["epoch"] if history else start_epoch
        return best


def _elbo_monitor(model, val_ds, sched, regime, corruptor, seed, n_steps: int = 8) -> float:
    """Cheap ELBO total on the first validation signal over a strided timestep subset."""
    x0 = val_ds.values[0]
    label = int(val_ds.labels[0]) if (regime == "label" and val_ds.labels is not None) else None
    cond = None
    if regime == "signal":
        cond = torch.as_tensor(_corrupt_batch(x0[None], corruptor, seed, 7), dtype=torch.float32)

    def eps_fn(x_t, t):
        x = torch.as_tensor(x_t, dtype=torch.float32)
        B = x.shape[0]
        lab = torch.full((B,), label, dtype=torch.long) if label is not None else None
        c = cond.expand(B, -1, -1) if cond is not None else None
        with torch.no_grad():
            return model(x, torch.full((B,), t), lab, c).numpy()

    steps = np.unique(np.linspace(2, sched.T, n_steps).astype(int)) if sched.T >= 2 else []
    rep = elbo_terms(x0, eps_fn, sched, mc_draws=2, timesteps=steps, rng=numpy_rng(seed, "elbo"))
    return rep.total


def _check_data(data: sd.SignalSet, model: UNet1D, regime: str, corruptor) -> None:
    if regime not in REGIMES:
        raise InvalidArgument(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if len(data) == 0:
        raise EmptyDataset("training data is empty")
    cfg = model.config
    if data.shape != (cfg.in_channels, cfg.signal_length):
        raise InvalidArgument(f"data shape {data.shape} != model shape ({cfg.in_channels}, {cfg.signal_length})")
    if regime == "label":
        if data.labels is None or np.any(data.labels < 0):
            raise InvalidArgument("label regime requires a label on every sample")
        if cfg.num_classes is None:
            raise InvalidArgument("label regime requires a model built with num_classes")
        if np.any(data.labels >= cfg.num_classes):
            raise InvalidArgument(f"labels must be < num_classes={cfg.num_classes}")
    if regime == "signal":
        if corruptor is None:
            raise InvalidArgument("signal regime requires a corruptor")
        if not cfg.signal_cond:
            raise InvalidArgument("signal regime requires a model built with signal_cond=True")


def schedule_descriptor(sched: NoiseSchedule) -> dict:
    d = {"kind": sched.kind, "T": sched.T}
    if sched.kind == "linear":
        d["beta_start"] = float(sched.beta[0])
        d["beta_end"] = float(sched.beta[-1])
    return d


def train(
    model: UNet1D,
    data: sd.SignalSet,
    regime: str,
    tcfg: TrainConfig,
    sched: NoiseSchedule,
    corruptor: Corruptor | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit ``model`` with the L1 noise-prediction loss and validation early stopping.

    Returns the checkpoint of the epoch with the lowest validation loss.
    ``model`` is left holding the weights of the last epoch run.
    """
    tcfg.validate()
    _check_data(data, model, regime, corruptor)
    tr_idx, val_idx = _split(len(data), tcfg.val_fraction, tcfg.seed)
    trainer = _Trainer(model, regime, sched, tcfg, corruptor)
    best = trainer.fit(data.subset(tr_idx), data.subset(val_idx), on_epoch=on_epoch)
    weights, ema, opt_state = best["state"]
    ckpt = Checkpoint(
        unet_config=model.config,
        schedule=schedule_descriptor(sched),
        regime=regime,
        weights=weights,
        ema_weights=ema,
        optimizer_state=opt_state,
        epochs_completed=best["epoch"],
        best_val_loss=best["val"],
        history=best["history"],
        extra={"corruptor": _corruptor_desc(corruptor)} if corruptor is not None else {},
    )
    return TrainResult(ckpt, trainer.step_losses)


def _corruptor_desc(corruptor) -> list[dict]:
    specs = [corruptor] if isinstance(corruptor, sd.CorruptionSpec) else list(corruptor)
    return [{"kind": s.kind, "amplitude": s.amplitude, "rate": s.rate, "factor": s.factor} for s in specs]


def corruptor_from_checkpoint(ckpt: Checkpoint) -> list[sd.CorruptionSpec] | None:
    desc = ckpt.extra.get("corruptor")
    if not desc:
        return None
    return [sd.CorruptionSpec(**d) for d in desc]


def fine_tune(
    ckpt: Checkpoint,
    subject_signals: sd.SignalSet,
    tcfg: TrainConfig | None = None,
    corruptor: Corruptor | None = None,
) -> TrainResult:
    """Continue training ``ckpt`` on one subject's signals; ``ckpt`` is not modified."""
    tcfg = tcfg or TrainConfig(lr=1e-4, epochs=10)
    tcfg.validate()
    if len(subject_signals) == 0:
        raise EmptyDataset("subject data is empty")
    if corruptor is None and ckpt.regime == "signal":
        corruptor = corruptor_from_checkpoint(ckpt)
    model = ckpt.build_model(use_ema=False)
    _check_data(subject_signals, model, ckpt.regime, corruptor)
    if tcfg.epochs == 0:
        return TrainResult(copy.deepcopy(ckpt), [])

    n = len(subject_signals)
    if n >= 2:
        tr_idx, val_idx = _split(n, tcfg.val_fraction, tcfg.seed)
    else:
        tr_idx = val_idx = np.arange(n)
    trainer = _Trainer(model, ckpt.regime, ckpt.build_schedule(), tcfg, corruptor,
                       optimizer_state=copy.deepcopy(ckpt.optimizer_state))
    if trainer.ema is not None and ckpt.ema_weights is not None:
        trainer.ema.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in ckpt.ema_weights.items()})
    best = trainer.fit(subject_signals.subset(tr_idx), subject_signals.subset(val_idx),
                       start_epoch=ckpt.epochs_completed)
    weights, ema, opt_state = best["state"]
    out = replace(
        ckpt,
        weights=weights,
        ema_weights=ema if ema is not None else None,
        optimizer_state=opt_state,
        epochs_completed=best["epoch"],
        best_val_loss=best["val"],
        history=list(ckpt.history) + best["history"],
        extra=dict(ckpt.extra, fine_tuned=True),
    )
    return TrainResult(out, trainer.step_losses)


# -- sampling ------------------------------------------------------------------

class _Chains:
    """Per-chain generators so each chain's draws depend only on (seed, index)."""

    def __init__(self, seed: int, n: int, offset: int = 0):
        self.gens = [torch_gen(seed, "sample", offset + i) for i in range(n)]

    def randn(self, shape) -> torch.Tensor:
        return torch.stack([torch.randn(shape, generator=g) for g in self.gens])


@torch.no_grad()
def _reverse_chain(
    eps_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    sched: NoiseSchedule,
    shape: tuple[int, int],
    chains: _Chains,
    clip: bool = True,
) -> torch.Tensor:
    """Ancestral sampling from x_T ~ N(0, I) down to x_0.

    With ``clip`` the implied x_0 is clipped to [-1, 1] at every step; this
    keeps the near-unit final betas of the cosine schedule from amplifying
    noise-estimate errors.
    """
    n = len(chains.gens)
    x = chains.randn(shape)
    for t in range(sched.T, 0, -1):
        tt = torch.full((n,), t, dtype=torch.long)
        eps_hat = eps_fn(x, tt)
        z = chains.randn(shape) if t > 1 else None
        x = p_sample_step(x, eps_hat, t, z, sched, clip_x0=(-1.0, 1.0) if clip else None)
    return x.clamp(-1.0, 1.0) if clip else x


def _batched(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield start, min(n, start + batch_size)


def _require_regime(ckpt: Checkpoint, regime: str) -> None:
    if ckpt.regime != regime:
        raise InvalidArgument(f"checkpoint was trained in the {ckpt.regime!r} regime, not {regime!r}")


def sample_unconditional(ckpt: Checkpoint, n: int, seed: int, *, batch_size: int = 256,
                         model: UNet1D | None = None) -> np.ndarray:
    """Draw ``n`` signals, shape (n, C, L), clipped to [-1, 1]."""
    _require_regime(ckpt, "unconditional")
    if n < 0:
        raise InvalidArgument("n must be >= 0")
    cfg = ckpt.unet_config
    shape = (cfg.in_channels, cfg.signal_length)
    if n == 0:
        return np.empty((0,) + shape)
    model = model or ckpt.build_model()
    sched = ckpt.build_schedule()
    out = []
    for s, e in _batched(n, batch_size):
        x = _reverse_chain(lambda x, t: model(x, t), sched, shape, _Chains(seed, e - s, s))
        out.append(x.numpy())
    return np.concatenate(out).astype(np.float64)


def guided_eps(model: UNet1D, x, t, label: int, weight: float):
    """(1 + w) * eps(x, t, label) - w * eps(x, t, null); w = 0 uses one call."""
    B = x.shape[0]
    lab = torch.full((B,), int(label), dtype=torch.long)
    cond = model(x, t, lab)
    if weight == 0:
        return cond
    uncond = model(x, t, torch.full((B,), model.config.null_label, dtype=torch.long))
    return (1.0 + weight) * cond - weight * uncond


def sample_label_conditional(ckpt: Checkpoint, label: int, n: int, g: GuidanceConfig | None = None,
                             seed: int = 0, *, batch_size: int = 256,
                             model: UNet1D | None = None) -> np.ndarray:
    _require_regime(ckpt, "label")
    g = g or GuidanceConfig()
    g.validate()
    cfg = ckpt.unet_config
    if not 0 <= int(label) < cfg.num_classes:
        raise InvalidArgument(f"label {label} out of range 0..{cfg.num_classes - 1}")
    shape = (cfg.in_channels, cfg.signal_length)
    if n == 0:
        return np.empty((0,) + shape)
    model = model or ckpt.build_model()
    sched = ckpt.build_schedule()
    out = []
    for s, e in _batched(n, batch_size):
        chains = _Chains(substream_seed(seed, "label", int(label)), e - s, s)
        x = _reverse_chain(lambda x, t: guided_eps(model, x, t, label, g.weight), sched, shape, chains)
        out.append(x.numpy())
    return np.concatenate(out).astype(np.float64)


def sample_signal_conditional(ckpt: Checkpoint, cond_signal: np.ndarray, seed: int, *,
                              draws: int = 1, batch_size: int = 256,
                              model: UNet1D | None = None) -> np.ndarray:
    """Reverse chain steered by ``cond_signal`` (C, L) or a batch (N, C, L).

    With ``draws > 1`` every condition is sampled that many times with
    independent chains and the outputs are averaged.
    """
    _require_regime(ckpt, "signal")
    cfg = ckpt.unet_config
    cond = np.asarray(cond_signal, dtype=np.float64)
    single = cond.ndim == 2
    if single:
        cond = cond[None]
    if cond.shape[1:] != (cfg.in_channels, cfg.signal_length):
        raise InvalidArgument(
            f"condition shape {cond.shape[1:]} != ({cfg.in_channels}, {cfg.signal_length})"
        )
    if draws < 1:
        raise InvalidArgument("draws must be >= 1")
    model = model or ckpt.build_model()
    sched = ckpt.build_schedule()
    shape = cond.shape[1:]
    rep = np.repeat(cond, draws, axis=0)
    out = []
    for s, e in _batched(len(rep), batch_size):
        c = torch.as_tensor(rep[s:e], dtype=torch.float32)
        x = _reverse_chain(lambda x, t: model(x, t, None, c), sched, shape, _Chains(seed, e - s, s))
        out.append(x.numpy())
    res = np.concatenate(out).astype(np.float64).reshape((len(cond), draws) + shape).mean(axis=1)
    return res[0] if single else res


@dataclass
class Restoration:
    values: np.ndarray
    meta: dict


def restore(ckpt: Checkpoint, degraded: np.ndarray, task: str, seed: int, *,
            draws: int = 1, factor: int | None = None, batch_size: int = 256) -> Restoration:
    """Denoise / impute / upsample via the signal-conditional sampler.

    For ``upsample`` the input is the naive full-length interpolation of the
    low-rate series; a short input of length L / factor is interpolated first.
    """
    if task not in RESTORE_TASKS:
        raise InvalidArgument(f"unknown task {task!r}; expected one of {RESTORE_TASKS}")
    x = np.asarray(degraded, dtype=np.float64)
    L = ckpt.unet_config.signal_length
    if task == "upsample" and factor and x.shape[-1] * factor == L and x.shape[-1] != L:
        x = sd.naive_upsample(x, factor, L)
    values = sample_signal_conditional(ckpt, x, seed, draws=draws, batch_size=batch_size)
    meta = {"task": task, "seed": seed, "draws": draws}
    if factor:
        meta["factor"] = factor
    return Restoration(values, meta)


def predict_call_counter(model: UNet1D) -> tuple[list[int], Callable[[], None]]:
    """Count forward calls of ``model``; returns (counter, remove_hook)."""
    counter = [0]

    def hook(*_):
        counter[0] += 1

    handle = model.register_forward_hook(hook)
    return counter, handle.remove
