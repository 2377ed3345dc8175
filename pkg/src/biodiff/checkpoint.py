"""Checkpoint container and its binary file format.

Layout (all integers little-endian)::

    b"BDIF" | uint32 format_version | uint64 header_len | header (UTF-8 JSON)
    | payload (concatenated little-endian arrays)

The JSON header holds the config fields and a table of arrays
(name, dtype, shape, offset, nbytes) plus the payload size and CRC32.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .denoiser import UNet1D, UNetConfig, build_model
from .diffusion_math import NoiseSchedule, build_schedule
from .errors import CorruptCheckpoint, UnsupportedVersion

MAGIC = b"BDIF"
FORMAT_VERSION = 1
REGIMES = ("unconditional", "label", "signal")


@dataclass
class Checkpoint:
    unet_config: UNetConfig
    schedule: dict  # kind, T and optional beta_start / beta_end
    regime: str
    weights: dict[str, np.ndarray]
    ema_weights: dict[str, np.ndarray] | None = None
    optimizer_state: dict | None = None
    epochs_completed: int = 0
    best_val_loss: float = float("inf")
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def build_schedule(self) -> NoiseSchedule:
        s = dict(self.schedule)
        return build_schedule(s.pop("kind"), s.pop("T"), **s)

    def build_model(self, use_ema: bool = True) -> UNet1D:
        """Fresh eval-mode model carrying this checkpoint's weights (EMA if present)."""
        model = build_model(self.unet_config, seed=0)
        src = self.ema_weights if (use_ema and self.ema_weights is not None) else self.weights
        model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in src.items()})
        model.eval()
        return model


def _flatten_optimizer(state: dict | None) -> tuple[dict, dict[str, np.ndarray]]:
    if state is None:
        return {}, {}
    meta = {"param_groups": state["param_groups"], "state_keys": {}}
    arrays = {}
    for pid, pstate in state["state"].items():
        keys = []
        for k, v in pstate.items():
            arrays[f"optim.{pid}.{k}"] = np.asarray(v.detach().cpu().numpy() if torch.is_tensor(v) else v)
            keys.append(k)
        meta["state_keys"][str(pid)] = keys
    return meta, arrays


def _unflatten_optimizer(meta: dict, arrays: dict[str, np.ndarray]) -> dict | None:
    if not meta:
        return None
    state = {}
    for pid, keys in meta["state_keys"].items():
        state[int(pid)] = {k: torch.from_numpy(np.array(arrays[f"optim.{pid}.{k}"])) for k in keys}
    return {"state": state, "param_groups": meta["param_groups"]}


def _le(a: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays (e.g. Adam's step) to 1-d
    a = a if a.flags.c_contiguous else np.array(a, order="C")
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save(ckpt: Checkpoint, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for k, v in ckpt.weights.items():
        arrays[f"weights.{k}"] = v
    if ckpt.ema_weights is not None:
        for k, v in ckpt.ema_weights.items():
            arrays[f"ema.{k}"] = v
    opt_meta, opt_arrays = _flatten_optimizer(ckpt.optimizer_state)
    arrays.update(opt_arrays)

    table = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = _le(np.asarray(arrays[name]))
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = {
        "unet_config": ckpt.unet_config.to_dict(),
        "schedule": ckpt.schedule,
        "regime": ckpt.regime,
        "has_ema": ckpt.ema_weights is not None,
        "optimizer": opt_meta,
        "epochs_completed": ckpt.epochs_completed,
        "best_val_loss": ckpt.best_val_loss,
        "history": ckpt.history,
        "extra": ckpt.extra,
        "arrays": table,
        "payload_nbytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True, allow_nan=True).encode("utf-8")
    blob = MAGIC + struct.pack("<IQ", ckpt.format_version, len(hbytes)) + hbytes + payload
    Path(path).write_bytes(blob)


def load(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    prefix = len(MAGIC) + struct.calcsize("<IQ")
    if len(blob) < prefix or blob[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: missing BDIF header")
    version, hlen = struct.unpack("<IQ", blob[4:prefix])
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(version, FORMAT_VERSION)
    if prefix + hlen > len(blob):
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(blob[prefix:prefix + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    payload = blob[prefix + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise CorruptCheckpoint(
            f"{path}: payload has {len(payload)} bytes, expected {header['payload_nbytes']}"
        )
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CorruptCheckpoint(f"{path}: payload checksum mismatch")

    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()

    weights = {k[len("weights."):]: v for k, v in arrays.items() if k.startswith("weights.")}
    ema = {k[len("ema."):]: v for k, v in arrays.items() if k.startswith("ema.")} if header["has_ema"] else None
    return Checkpoint(
        unet_config=UNetConfig.from_dict(header["unet_config"]),
        schedule=header["schedule"],
        regime=header["regime"],
        weights=weights,
        ema_weights=ema,
        optimizer_state=_unflatten_optimizer(header["optimizer"], arrays),
        epochs_completed=header["epochs_completed"],
        best_val_loss=header["best_val_loss"],
        history=header["history"],
        extra=header["extra"],
        format_version=version,
    )
