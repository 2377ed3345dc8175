"""Noise schedules and the closed-form pieces of a discrete Gaussian diffusion.

Timesteps are 1-indexed: ``t = 1..T``. ``alpha_bar`` carries an extra
leading entry so that ``alpha_bar[0] == 1`` denotes clean data.

Everything here is plain float64 numpy and side-effect free; the functions
also accept torch tensors for the array arguments since they only use
arithmetic with python scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] == 1
    posterior_var: np.ndarray

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise InvalidArgument(f"timestep {t} outside 1..{self.T}")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self.check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self.check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction; ``t = 0`` is allowed and gives 1."""
        t = int(t)
        if not 0 <= t <= self.T:
            raise InvalidArgument(f"timestep {t} outside 0..{self.T}")
        return float(self.alpha_bar[t])

    def posterior_var_at(self, t: int) -> float:
        return float(self.posterior_var[self.check_t(t) - 1])

    def descriptor(self) -> dict:
        return {"kind": self.kind, "T": self.T}


def _linear_betas(T: int, beta_start: float | None, beta_end: float | None) -> np.ndarray:
    start = LINEAR_BETA_START if beta_start is None else beta_start
    if beta_end is None:
        # Short chains stretch the end point so that alpha_bar_T still reaches ~0.
        end = LINEAR_BETA_END * max(1.0, 1000.0 / T)
        end = min(end, MAX_BETA)
    else:
        end = beta_end
    return np.linspace(start, end, T, dtype=np.float64)


def _cosine_betas(T: int, s: float) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    abar = f / f[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return np.clip(betas, 0.0, MAX_BETA)


def build_schedule(
    kind: str,
    T: int,
    *,
    beta_start: float | None = None,
    beta_end: float | None = None,
    cosine_offset: float = COSINE_OFFSET,
) -> NoiseSchedule:
    """Precompute beta / alpha / alpha_bar / posterior variance tables.

    ``linear`` runs from 1e-4 to 0.02 for T >= 1000; for shorter chains the
    end point is scaled by 1000/T (capped at 0.999) unless ``beta_end`` is
    given explicitly.
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise InvalidArgument(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if kind == "linear":
        beta = _linear_betas(T, beta_start, beta_end)
    elif kind == "cosine":
        beta = _cosine_betas(T, cosine_offset)
    else:
        raise InvalidArgument(f"unknown schedule kind {kind!r} (expected linear or cosine)")
    if not np.all((beta > 0) & (beta < 1)):
        raise InvalidArgument("schedule produced betas outside (0, 1)")

    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    posterior_var = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta
    for arr in (beta, alpha, alpha_bar, posterior_var):
        arr.setflags(write=False)
    return NoiseSchedule(kind, T, beta, alpha, alpha_bar, posterior_var)


def _check_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise InvalidArgument(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def q_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Draw x_t from q(x_t | x_0) given an explicit standard-normal ``eps``."""
    _check_same_shape(x0, eps, "q_sample")
    abar = sched.alpha_bar_at(sched.check_t(t))
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def posterior_mean_from_eps(x_t, eps_hat, t: int, sched: NoiseSchedule):
    _check_same_shape(x_t, eps_hat, "posterior_mean_from_eps")
    t = sched.check_t(t)
    a, b, abar = sched.alpha_at(t), sched.beta_at(t), sched.alpha_bar_at(t)
    return (x_t - (b / math.sqrt(1.0 - abar)) * eps_hat) / math.sqrt(a)


def posterior_mean_from_x0(x0, x_t, t: int, sched: NoiseSchedule):
    """Mean of q(x_{t-1} | x_t, x_0)."""
    _check_same_shape(x0, x_t, "posterior_mean_from_x0")
    t = sched.check_t(t)
    a, b = sched.alpha_at(t), sched.beta_at(t)
    abar, abar_prev = sched.alpha_bar_at(t), sched.alpha_bar_at(t - 1)
    c0 = math.sqrt(abar_prev) * b / (1.0 - abar)
    ct = math.sqrt(a) * (1.0 - abar_prev) / (1.0 - abar)
    return c0 * x0 + ct * x_t


def posterior_variance(t: int, sched: NoiseSchedule, v=None):
    """Reverse-step variance, log-interpolated between beta_tilde (v=0) and beta (v=1).

    Evaluated as ``beta_tilde**(1-v) * beta**v``, which equals the log-space
    form but stays finite at t = 1 where beta_tilde is 0.
    """
    t = sched.check_t(t)
    bt = sched.posterior_var_at(t)
    if v is None:
        return bt
    v_arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v_arr)) or np.any(v_arr < 0) or np.any(v_arr > 1):
        raise InvalidArgument("variance interpolation v must lie in [0, 1]")
    b = sched.beta_at(t)
    out = np.power(bt, 1.0 - v_arr) * np.power(b, v_arr)
    return float(out) if out.ndim == 0 else out


def predict_x0_from_eps(x_t, eps_hat, t: int, sched: NoiseSchedule):
    _check_same_shape(x_t, eps_hat, "predict_x0_from_eps")
    abar = sched.alpha_bar_at(sched.check_t(t))
    return (x_t - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)


def p_sample_step(x_t, eps_hat, t: int, z, sched: NoiseSchedule, v=None, clip_x0=None):
    """One ancestral step x_t -> x_{t-1}; at t = 1 the mean is returned without noise.

    With ``clip_x0 = (lo, hi)`` the implied clean signal is clipped before the
    mean is formed; without clipping both routes give the same mean.
    """
    if clip_x0 is None:
        mu = posterior_mean_from_eps(x_t, eps_hat, t, sched)
    else:
        x0 = predict_x0_from_eps(x_t, eps_hat, t, sched).clip(*clip_x0)
        mu = posterior_mean_from_x0(x0, x_t, t, sched)
    if t == 1:
        return mu
    _check_same_shape(x_t, z, "p_sample_step")
    var = posterior_variance(t, sched, v)
    if isinstance(var, float):
        return mu + math.sqrt(var) * z
    return mu + np.sqrt(var) * z


def simple_loss(eps, eps_hat) -> float:
    """Mean absolute error between true and predicted noise."""
    _check_same_shape(eps, eps_hat, "simple_loss")
    diff = np.abs(np.asarray(eps, dtype=np.float64) - np.asarray(eps_hat, dtype=np.float64))
    return float(diff.mean())


def gaussian_kl(mean1, var1, mean2, var2):
    """Elementwise KL(N(mean1, var1) || N(mean2, var2))."""
    return 0.5 * (np.log(var2 / var1) + (var1 + (mean1 - mean2) ** 2) / var2 - 1.0)


def gaussian_nll(x, mean, var):
    return 0.5 * (math.log(2 * math.pi) + np.log(var) + (x - mean) ** 2 / var)


@dataclass
class ElboReport:
    """ELBO decomposition in nats per element (averaged over C x L)."""

    l_T: float
    kl_terms: dict[int, float]
    recon_nll: float
    total: float


EpsFn = Callable[[np.ndarray, int], np.ndarray]


def elbo_terms(
    x0: np.ndarray,
    eps_fn: EpsFn,
    sched: NoiseSchedule,
    mc_draws: int = 16,
    *,
    timesteps=None,
    rng: np.random.Generator | None = None,
) -> ElboReport:
    """Monte-Carlo estimate of the variational bound for one signal.

    ``eps_fn(x_t, t)`` maps a batch ``(mc_draws, C, L)`` at timestep ``t``
    to noise estimates of the same shape. The reverse variance is the fixed
    beta_tilde for t > 1; the t = 1 decoder uses beta_1 because beta_tilde_1
    is zero. ``timesteps`` restricts the KL sum to a subset of 2..T.
    """
    if mc_draws < 1:
        raise InvalidArgument("mc_draws must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    x0 = np.asarray(x0, dtype=np.float64)
    n_el = x0.size

    abar_T = sched.alpha_bar_at(sched.T)
    l_T = float(gaussian_kl(math.sqrt(abar_T) * x0, 1.0 - abar_T, 0.0, 1.0).sum() / n_el)

    steps = range(2, sched.T + 1) if timesteps is None else [int(t) for t in timesteps]
    batch0 = np.broadcast_to(x0, (mc_draws,) + x0.shape)
    kl_terms: dict[int, float] = {}
    for t in steps:
        if t < 2:
            continue
        eps = rng.standard_normal(batch0.shape)
        x_t = q_sample(batch0, t, eps, sched)
        mu_true = posterior_mean_from_x0(batch0, x_t, t, sched)
        mu_model = posterior_mean_from_eps(x_t, np.asarray(eps_fn(x_t, t), dtype=np.float64), t, sched)
        var = sched.posterior_var_at(t)
        kl = gaussian_kl(mu_true, var, mu_model, var)
        kl_terms[t] = float(kl.sum() / (mc_draws * n_el))

    eps = rng.standard_normal(batch0.shape)
    x1 = q_sample(batch0, 1, eps, sched)
    mu = posterior_mean_from_eps(x1, np.asarray(eps_fn(x1, 1), dtype=np.float64), 1, sched)
    recon = float(gaussian_nll(batch0, mu, sched.beta_at(1)).sum() / (mc_draws * n_el))

    total = l_T + sum(kl_terms.values()) + recon
    return ElboReport(l_T=l_T, kl_terms=kl_terms, recon_nll=recon, total=total)
