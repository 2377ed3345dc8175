"""1-D U-Net noise predictor with time, label and signal conditioning."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument


@dataclass
class UNetConfig:
    in_channels: int
    signal_length: int
    base_channels: int = 64
    channel_mults: tuple[int, ...] = (1, 2, 4, 8)
    res_groups: int = 8
    attn_heads: int = 4
    num_classes: int | None = None
    cond_drop_prob: float = 0.5
    time_embed_dim: int | None = None
    num_res_blocks: int = 2
    signal_cond: bool = False
    # feed the raw condition to the input convolution next to the fused channels
    cond_passthrough: bool = True

    def __post_init__(self):
        self.channel_mults = tuple(int(m) for m in self.channel_mults)
        if self.time_embed_dim is None:
            self.time_embed_dim = 4 * self.base_channels

    @property
    def null_label(self) -> int:
        return 0 if self.num_classes is None else self.num_classes

    def validate(self) -> None:
        for name in ("in_channels", "signal_length", "base_channels", "res_groups",
                     "attn_heads", "time_embed_dim", "num_res_blocks"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if not self.channel_mults or min(self.channel_mults) < 1:
            raise InvalidArgument("channel_mults must be a non-empty list of positive integers")
        factor = 2 ** (len(self.channel_mults) - 1)
        if self.signal_length % factor:
            raise InvalidArgument(
                f"signal_length {self.signal_length} is not divisible by {factor} "
                f"(2^(len(channel_mults) - 1))"
            )
        if self.base_channels % self.res_groups:
            raise InvalidArgument(
                f"base_channels {self.base_channels} is not divisible by res_groups {self.res_groups}"
            )
        for m in self.channel_mults:
            ch = self.base_channels * m
            if ch % self.attn_heads:
                raise InvalidArgument(
                    f"channel count {ch} is not divisible by attn_heads {self.attn_heads}"
                )
        if self.num_classes is not None and self.num_classes < 1:
            raise InvalidArgument("num_classes must be positive when given")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise InvalidArgument("cond_drop_prob must lie in [0, 1]")
        if self.time_embed_dim % 2:
            raise InvalidArgument("time_embed_dim must be even")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d)


@dataclass
class Condition:
    """Conditioning inputs for one call; ``None`` label means the null token."""

    label: object = None
    cond_signal: object = None
    extra: dict = field(default_factory=dict)


def time_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal embedding: sines then cosines at geometric frequencies (base 10000).

    ``t`` may be a python number or a 1-D tensor; returns ``(dim,)`` or ``(B, dim)``.
    """
    if dim % 2:
        raise InvalidArgument(f"embedding dim must be even, got {dim}")
    scalar = not torch.is_tensor(t)
    tt = torch.as_tensor(t, dtype=torch.float64 if scalar else None)
    if tt.ndim == 0:
        tt = tt[None]
    if torch.any(tt < 0):
        raise InvalidArgument("timestep must be non-negative")
    dtype = tt.dtype if tt.is_floating_point() else torch.float32
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype, device=tt.device) / half
    )
    args = tt.to(dtype)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb[0] if scalar else emb


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, ch: int, heads: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, ch)
        self.attn = nn.MultiheadAttention(ch, heads, batch_first=True)

    def forward(self, x):
        h = self.norm(x).transpose(1, 2)
        h, _ = self.attn(h, h, h, need_weights=False)
        return x + h.transpose(1, 2)


class Downsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class SignalFusion(nn.Module):
    """Concatenate x_t with the conditioning signal and mix back to C channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.mix = nn.Conv1d(2 * channels, channels, 1)

    def forward(self, x_t, cond_signal):
        if x_t.shape != cond_signal.shape:
            raise InvalidArgument(
                f"condition shape {tuple(cond_signal.shape)} != input shape {tuple(x_t.shape)}"
            )
        return self.mix(torch.cat([x_t, cond_signal], dim=1))


class UNet1D(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        base, emb_dim, g = c.base_channels, c.time_embed_dim, c.res_groups
        chans = [base * m for m in c.channel_mults]
        n_levels = len(chans)
        # attention at the two coarsest resolutions
        self.attn_levels = set(range(max(0, n_levels - 2), n_levels))

        self.time_mlp = nn.Sequential(
            nn.Linear(base, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.label_emb = (
            nn.Embedding(c.num_classes + 1, emb_dim) if c.num_classes is not None else None
        )
        self.fusion = SignalFusion(c.in_channels) if c.signal_cond else None
        self.passthrough = c.signal_cond and c.cond_passthrough
        in_ch = 2 * c.in_channels if self.passthrough else c.in_channels
        self.input_conv = nn.Conv1d(in_ch, base, 3, padding=1)

        self.down = nn.ModuleList()
        prev = base
        for i, ch in enumerate(chans):
            level = nn.ModuleDict()
            blocks = []
            for _ in range(c.num_res_blocks):
                blocks.append(ResBlock(prev, ch, emb_dim, g))
                prev = ch
            level["blocks"] = nn.ModuleList(blocks)
            level["attn"] = SelfAttention(ch, c.attn_heads, g) if i in self.attn_levels else nn.Identity()
            if i < n_levels - 1:
                level["down"] = Downsample(ch, ch)
            self.down.append(level)

        self.mid1 = ResBlock(prev, prev, emb_dim, g)
        self.mid_attn = SelfAttention(prev, c.attn_heads, g)
        self.mid2 = ResBlock(prev, prev, emb_dim, g)

        self.up = nn.ModuleList()
        for i in reversed(range(n_levels)):
            ch = chans[i]
            level = nn.ModuleDict()
            blocks = [ResBlock(prev + ch, ch, emb_dim, g)]
            for _ in range(c.num_res_blocks - 1):
                blocks.append(ResBlock(ch, ch, emb_dim, g))
            level["blocks"] = nn.ModuleList(blocks)
            level["attn"] = SelfAttention(ch, c.attn_heads, g) if i in self.attn_levels else nn.Identity()
            if i > 0:
                level["up"] = Upsample(ch, chans[i - 1])
                prev = chans[i - 1]
            else:
                prev = ch
            self.up.append(level)

        self.out_norm = nn.GroupNorm(g, base)
        self.out_conv = nn.Conv1d(base, c.in_channels, 3, padding=1)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def embed(self, t: torch.Tensor, labels: torch.Tensor | None) -> torch.Tensor:
        dtype = self.input_conv.weight.dtype
        emb = self.time_mlp(time_embedding(t.to(dtype), self.config.base_channels))
        if self.label_emb is not None:
            if labels is None:
                labels = torch.full_like(t, self.config.null_label, dtype=torch.long)
            emb = emb + self.label_emb(labels.long())
        return emb

    def forward(self, x, t, labels=None, cond_signal=None):
        """``x``: (B, C, L); ``t``: (B,) timesteps; ``labels``: (B,) with
        ``num_classes`` as the null token; ``cond_signal``: (B, C, L)."""
        if self.fusion is not None:
            if cond_signal is None:
                raise InvalidArgument("model is signal-conditional but no cond_signal was given")
            fused = self.fusion(x, cond_signal)
            x = torch.cat([fused, cond_signal], dim=1) if self.passthrough else fused
        emb = self.embed(t, labels)
        h = self.input_conv(x)
        skips = []
        for level in self.down:
            for block in level["blocks"]:
                h = block(h, emb)
            h = level["attn"](h)
            skips.append(h)
            if "down" in level:
                h = level["down"](h)
        h = self.mid2(self.mid_attn(self.mid1(h, emb)), emb)
        for level in self.up:
            h = torch.cat([h, skips.pop()], dim=1)
            for block in level["blocks"]:
                h = block(h, emb)
            h = level["attn"](h)
            if "up" in level:
                h = level["up"](h)
        return self.out_conv(F.silu(self.out_norm(h)))


def build_model(config: UNetConfig, seed: int = 0) -> UNet1D:
    """Construct a model whose initial weights depend only on ``seed``."""
    config.validate()
    devices = []
    with torch.random.fork_rng(devices=devices):
        torch.manual_seed(seed)
        model = UNet1D(config)
    return model


def fuse_signal_condition(model: UNet1D, x_t, cond_signal):
    """Apply the model's first-layer fusion of x_t and the conditioning signal."""
    if model.fusion is None:
        raise InvalidArgument("model was built without signal conditioning")
    x = torch.as_tensor(x_t, dtype=model.input_conv.weight.dtype)
    c = torch.as_tensor(cond_signal, dtype=x.dtype)
    if x.shape != c.shape:
        raise InvalidArgument(f"condition shape {tuple(c.shape)} != input shape {tuple(x.shape)}")
    single = x.ndim == 2
    out = model.fusion(x[None] if single else x, c[None] if single else c)
    return out[0] if single else out


def drop_labels(labels: torch.Tensor, p: float, null: int, generator: torch.Generator | None):
    """Replace each label by ``null`` independently with probability ``p``."""
    if p <= 0:
        return labels
    u = torch.rand(labels.shape, generator=generator)
    return torch.where(u < p, torch.full_like(labels, null), labels)


def predict_eps(
    model: UNet1D,
    x_t,
    t,
    cond: Condition | None = None,
    rng_for_drop: torch.Generator | None = None,
    train_mode: bool = False,
):
    """Noise estimate for ``x_t`` of shape (C, L) or (B, C, L).

    In ``train_mode`` labels are swapped for the null token with probability
    ``cond_drop_prob`` using ``rng_for_drop``; in eval mode no dropout occurs.
    Returns a tensor of the input's shape (gradients flow when ``train_mode``).
    """
    cfg = model.config
    cond = cond or Condition()
    dtype = model.input_conv.weight.dtype
    x = torch.as_tensor(x_t, dtype=dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != (cfg.in_channels, cfg.signal_length):
        raise InvalidArgument(
            f"input shape {tuple(x.shape[1:])} != ({cfg.in_channels}, {cfg.signal_length})"
        )
    B = x.shape[0]
    tt = torch.as_tensor(t)
    tt = tt.expand(B) if tt.ndim == 0 else tt
    labels = None
    if cfg.num_classes is not None:
        if cond.label is None:
            labels = torch.full((B,), cfg.null_label, dtype=torch.long)
        else:
            labels = torch.as_tensor(cond.label, dtype=torch.long)
            labels = labels.expand(B) if labels.ndim == 0 else labels
            bad = (labels < 0) | (labels >= cfg.num_classes)
            if torch.any(bad):
                raise InvalidArgument(
                    f"label out of range 0..{cfg.num_classes - 1}: {labels[bad].tolist()}"
                )
        if train_mode:
            labels = drop_labels(labels, cfg.cond_drop_prob, cfg.null_label, rng_for_drop)
    elif cond.label is not None:
        raise InvalidArgument("model was built without label conditioning")
    cs = None
    if cond.cond_signal is not None:
        cs = torch.as_tensor(cond.cond_signal, dtype=dtype)
        if single and cs.ndim == 2:
            cs = cs[None]
        if cs.shape != x.shape:
            raise InvalidArgument(f"condition shape {tuple(cs.shape)} != input shape {tuple(x.shape)}")

    was_training = model.training
    model.train(train_mode)
    try:
        if train_mode:
            out = model(x, tt, labels, cs)
        else:
            with torch.no_grad():
                out = model(x, tt, labels, cs)
    finally:
        model.train(was_training)
    return out[0] if single else out


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
