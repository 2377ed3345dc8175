"""Command-line entry point: ``biodiff {simulate,train,generate,restore,evaluate,augment}``.

Settings resolve as flags > ``--config`` file (key=value lines) > defaults,
and every run writes ``resolved_config.txt`` into its ``--out`` directory.
Exit codes: 0 ok, 1 I/O failure, 2 usage / validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckio
from . import data as sd
from . import engine as en
from . import metrics as mt
from .denoiser import UNetConfig, build_model
from .diffusion_math import build_schedule
from .errors import (CorruptCheckpoint, EmptyDataset, InvalidArgument, ParseError,
                     TrainingDiverged, UnsupportedVersion)
from .seeding import substream_seed

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_NAME = "resolved_config.txt"
REGIME_ALIASES = {"uncond": "unconditional", "unconditional": "unconditional",
                  "label": "label", "signal": "signal"}

log = logging.getLogger("biodiff")


class UsageError(Exception):
    pass


def _opt_int(s: str) -> int | None:
    return None if s in ("", "none", "None") else int(s)


def _opt_float(s: str) -> float | None:
    return None if s in ("", "none", "None") else float(s)


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s


# command -> key -> (type, default); keys double as --flag-names with '-' for '_'
COMMON = {"seed": (int, 0), "out": (_str, None), "verbose": (_bool, False)}
SPECS: dict[str, dict[str, tuple]] = {
    "simulate": {
        "n_per_class": (int, 4000),
        "n_test_per_class": (_opt_int, None),
        "length": (int, 512),
        "noise_std": (float, 1.0),
    },
    "train": {
        "regime": (_str, "label"),
        "data": (_str, None),
        "channels": (int, 1),
        "num_classes": (_opt_int, None),
        "epochs": (int, 100),
        "batch_size": (int, 32),
        "lr": (_opt_float, None),
        "patience": (int, 10),
        "val_fraction": (float, 0.1),
        "max_steps": (_opt_int, None),
        "ema_decay": (_opt_float, None),
        "schedule": (_str, ""),
        "timesteps": (_opt_int, None),
        "base_channels": (int, 64),
        "channel_mults": (_str, "1,2,4,8"),
        "res_groups": (int, 8),
        "attn_heads": (int, 4),
        "num_res_blocks": (int, 2),
        "cond_drop_prob": (float, 0.5),
        "corrupt": (_str, "thermal:0.2"),
        "cond_passthrough": (_bool, True),
    },
    "generate": {
        "ckpt": (_str, None),
        "n": (int, 10),
        "label": (_opt_int, None),
        "guidance": (float, 0.0),
        "batch_size": (int, 256),
    },
    "restore": {
        "ckpt": (_str, None),
        "data": (_str, None),
        "task": (_str, "denoise"),
        "factor": (int, 4),
        "draws": (int, 1),
        "channels": (int, 1),
        "batch_size": (int, 256),
    },
    "evaluate": {
        "real": (_str, None),
        "synth": (_str, None),
        "channels": (int, 1),
        "pairs": (int, mt.COHERENCE_PAIRS),
        "classifier": (_str, ""),
        "project": (_bool, False),
        "pairing": (_str, "auto"),
    },
    "augment": {
        "ckpt": (_str, None),
        "data": (_str, None),
        "target": (_opt_int, None),
        "guidance": (float, 0.0),
        "batch_size": (int, 256),
    },
}
REQUIRED = {
    "simulate": ("out",),
    "train": ("data", "out"),
    "generate": ("ckpt", "out"),
    "restore": ("ckpt", "data", "out"),
    "evaluate": ("real", "synth", "out"),
    "augment": ("ckpt", "data", "out"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biodiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, spec in SPECS.items():
        p = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--verbose", action="store_const", const=True)
        for key, (typ, default) in spec.items():
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, action=argparse.BooleanOptionalAction, dest=key)
            elif key == "task":
                p.add_argument(flag, dest=key)
            else:
                p.add_argument(flag, type=typ, dest=key, help=f"default: {default}")
    return parser


def read_config_file(path: str, allowed: dict) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "config":
            continue
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = allowed[key][0](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict:
    allowed = dict(COMMON, **SPECS[command])
    cfg = {k: d for k, (_, d) in allowed.items()}
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None):
        cfg.update(read_config_file(ns.config, allowed))
    cfg.update(flags)
    for key in REQUIRED[command]:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(cfg: dict, command: str, out: Path) -> None:
    lines = [f"# biodiff {command}"] + [f"{k}={_fmt(cfg[k])}" for k in sorted(cfg)]
    (out / CONFIG_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_corruptors(text: str, seed: int) -> list[sd.CorruptionSpec]:
    """``kind:value[:value]`` items separated by ``;`` or ``+``.

    thermal:STD, drift:PEAK, spikes:PEAK:RATE, mask:RATE, downsample:FACTOR.
    """
    specs = []
    for item in text.replace("+", ";").split(";"):
        item = item.strip()
        if not item:
            continue
        kind, *vals = item.split(":")
        try:
            nums = [float(v) for v in vals]
            if kind in ("thermal", "drift"):
                spec = sd.CorruptionSpec(kind, amplitude=nums[0], seed=seed)
            elif kind == "spikes":
                spec = sd.CorruptionSpec(kind, amplitude=nums[0], rate=nums[1], seed=seed)
            elif kind == "mask":
                spec = sd.CorruptionSpec(kind, rate=nums[0], seed=seed)
            elif kind == "downsample":
                spec = sd.CorruptionSpec(kind, factor=int(nums[0]), seed=seed)
            else:
                raise UsageError(f"--corrupt: unknown kind {kind!r}; expected one of {sd.CORRUPTION_KINDS}")
        except (IndexError, ValueError):
            raise UsageError(f"--corrupt: malformed item {item!r}") from None
        try:
            spec.validate()
        except InvalidArgument as exc:
            raise UsageError(f"--corrupt: {exc}") from None
        specs.append(spec)
    if not specs:
        raise UsageError("--corrupt: no corruption given")
    return specs


def _load(path: str, channels: int, **kw) -> sd.SignalSet:
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return sd.load_csv(path, channels, **kw)


def _load_ckpt(path: str) -> ckio.Checkpoint:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return ckio.load(path)


# -- commands ------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> None:
    if cfg["n_per_class"] < 1:
        raise UsageError("--n-per-class must be a positive integer")
    n_test = cfg["n_test_per_class"]
    if n_test is None:
        n_test = max(1, cfg["n_per_class"] // 10)
    if n_test < 1:
        raise UsageError("--n-test-per-class must be a positive integer")
    seed = cfg["seed"]
    kw = {"length": cfg["length"], "noise_std": cfg["noise_std"]}
    train = sd.gen_simulated(cfg["n_per_class"], substream_seed(seed, "data", 0), **kw)
    test = sd.gen_simulated(n_test, substream_seed(seed, "data", 1), **kw)
    sd.write_csv(train, out / "train.csv")
    sd.write_csv(test, out / "test.csv")
    manifest = sd.simulated_manifest(seed, cfg["n_per_class"], cfg["noise_std"], cfg["length"])
    manifest += f"n_test_per_class={n_test}\n"
    (out / "manifest.txt").write_text(manifest, encoding="utf-8")
    print(f"wrote {len(train)} train / {len(test)} test signals to {out}")


def cmd_train(cfg: dict, out: Path) -> None:
    regime = REGIME_ALIASES.get(cfg["regime"])
    if regime is None:
        raise UsageError(f"--regime must be one of uncond, label, signal (got {cfg['regime']!r})")
    data = _load(cfg["data"], cfg["channels"])
    C, L = data.shape
    kind_default, T_default = en.REGIME_DIFFUSION[regime]
    kind = cfg["schedule"] or kind_default
    T = cfg["timesteps"] or T_default
    num_classes = None
    if regime == "label":
        num_classes = cfg["num_classes"] or int(data.labels.max()) + 1
    try:
        mults = tuple(int(m) for m in cfg["channel_mults"].split(","))
    except ValueError:
        raise UsageError("--channel-mults must be comma-separated integers") from None
    ucfg = UNetConfig(
        in_channels=C, signal_length=L, base_channels=cfg["base_channels"],
        channel_mults=mults, res_groups=cfg["res_groups"], attn_heads=cfg["attn_heads"],
        num_classes=num_classes, cond_drop_prob=cfg["cond_drop_prob"],
        num_res_blocks=cfg["num_res_blocks"], signal_cond=regime == "signal",
        cond_passthrough=cfg["cond_passthrough"],
    )
    seed = cfg["seed"]
    corruptor = parse_corruptors(cfg["corrupt"], substream_seed(seed, "corrupt")) if regime == "signal" else None
    lr = cfg["lr"] if cfg["lr"] is not None else (1e-4 if regime == "signal" else 3e-4)
    tcfg = en.TrainConfig(
        lr=lr, batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        early_stop_patience=cfg["patience"], val_fraction=cfg["val_fraction"],
        ema_decay=cfg["ema_decay"], seed=substream_seed(seed, "train"), max_steps=cfg["max_steps"],
    )
    model = build_model(ucfg, substream_seed(seed, "init"))
    sched = build_schedule(kind, T)

    log_path = out / "loss_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])

        def on_epoch(row):
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
            fh.flush()

        result = en.train(model, data, regime, tcfg, sched, corruptor, on_epoch=on_epoch)
    ckio.save(result.checkpoint, out / "ckpt.bdif")
    print(f"best val_loss {result.checkpoint.best_val_loss:.6f} at epoch "
          f"{result.checkpoint.epochs_completed}; checkpoint {out / 'ckpt.bdif'}")


def cmd_generate(cfg: dict, out: Path) -> None:
    ckpt = _load_ckpt(cfg["ckpt"])
    if cfg["n"] < 0:
        raise UsageError("--n must be >= 0")
    seed = substream_seed(cfg["seed"], "sample")
    if ckpt.regime == "label":
        if cfg["label"] is None:
            raise UsageError("--label is required for a label-regime checkpoint")
        k = ckpt.unet_config.num_classes
        if not 0 <= cfg["label"] < k:
            raise UsageError(f"--label {cfg['label']} out of range 0..{k - 1}")
        values = en.sample_label_conditional(ckpt, cfg["label"], cfg["n"], en.GuidanceConfig(cfg["guidance"]),
                                             seed, batch_size=cfg["batch_size"])
        labels = np.full(len(values), cfg["label"])
    elif ckpt.regime == "unconditional":
        if cfg["label"] is not None:
            raise UsageError("--label given but the checkpoint is unconditional")
        values = en.sample_unconditional(ckpt, cfg["n"], seed, batch_size=cfg["batch_size"])
        labels = None
    else:
        raise UsageError("generate needs an unconditional or label checkpoint; use restore for signal checkpoints")
    sd.write_csv(sd.SignalSet(values, labels), out / "generated.csv")
    print(f"wrote {len(values)} signals to {out / 'generated.csv'}")


def cmd_restore(cfg: dict, out: Path) -> None:
    if cfg["task"] not in en.RESTORE_TASKS:
        raise UsageError(f"--task must be one of {', '.join(en.RESTORE_TASKS)} (got {cfg['task']!r})")
    ckpt = _load_ckpt(cfg["ckpt"])
    if ckpt.regime != "signal":
        raise UsageError(f"restore needs a signal-regime checkpoint, got {ckpt.regime!r}")
    data = _load(cfg["data"], cfg["channels"], normalize_rows=False)
    L = ckpt.unet_config.signal_length
    values = data.values
    if values.shape[-1] != L:
        if cfg["task"] == "upsample" and values.shape[-1] * cfg["factor"] == L:
            values = sd.naive_upsample(values, cfg["factor"], L)
        else:
            raise UsageError(f"input length {values.shape[-1]} does not match checkpoint length {L}")
    res = en.restore(ckpt, values, cfg["task"], substream_seed(cfg["seed"], "sample"),
                     draws=cfg["draws"], factor=cfg["factor"] if cfg["task"] == "upsample" else None,
                     batch_size=cfg["batch_size"])
    sd.write_csv(sd.SignalSet(res.values, data.labels), out / "restored.csv")
    print(f"restored {len(res.values)} signals ({cfg['task']}) to {out / 'restored.csv'}")


def cmd_evaluate(cfg: dict, out: Path) -> None:
    # corpora are compared exactly as stored
    real = _load(cfg["real"], cfg["channels"], normalize_rows=False)
    synth = _load(cfg["synth"], cfg["channels"], normalize_rows=False)
    if real.shape != synth.shape:
        raise UsageError(f"shape mismatch: real {real.shape} vs synthetic {synth.shape}")
    if cfg["pairing"] not in ("auto", "random", "identity"):
        raise UsageError(f"--pairing must be auto, random or identity (got {cfg['pairing']!r})")
    # auto: a corpus compared with itself is paired signal-by-signal
    identity = cfg["pairing"] == "identity" or (
        cfg["pairing"] == "auto" and real.values.shape == synth.values.shape
        and np.array_equal(real.values, synth.values))
    report = mt.evaluate(real, synth, seed=substream_seed(cfg["seed"], "eval"), pairs=cfg["pairs"],
                         identity=identity)
    text = report.to_text()
    if cfg["classifier"]:
        train_set = _load(cfg["classifier"], cfg["channels"], normalize_rows=False,
                          flag_column=_has_flag(cfg["classifier"]))
        if train_set.shape != real.shape:
            raise UsageError("classifier training set shape does not match --real")
        f1 = mt.train_cnn_classifier(train_set, real, substream_seed(cfg["seed"], "classifier"))
        text += f1.to_text()
    mt.write_report(text, out / "report.txt")
    if cfg["project"]:
        mt.export_projection(real, synth, out / "projection.csv")
    sys.stdout.write(text)


def _has_flag(path: str) -> bool:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return "synthetic" in first


def cmd_augment(cfg: dict, out: Path) -> None:
    ckpt = _load_ckpt(cfg["ckpt"])
    if ckpt.regime != "label":
        raise UsageError(f"augment needs a label-regime checkpoint, got {ckpt.regime!r}")
    data = _load(cfg["data"], ckpt.unet_config.in_channels)
    if data.shape != (ckpt.unet_config.in_channels, ckpt.unet_config.signal_length):
        raise UsageError("data shape does not match the checkpoint")
    aug = mt.augment_balance(data, ckpt, cfg["target"], substream_seed(cfg["seed"], "sample"),
                             cfg["guidance"], batch_size=cfg["batch_size"])
    sd.write_csv(aug, out / "augmented.csv", header=True, flag_column=True)
    n_syn = int(aug.synthetic.sum())
    print(f"appended {n_syn} synthetic rows; counts {aug.class_counts()}")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "generate": cmd_generate,
    "restore": cmd_restore,
    "evaluate": cmd_evaluate,
    "augment": cmd_augment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads = os.environ.get("BIODIFF_NUM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        cfg = resolve(ns.command, ns)
        logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, ns.command, out)
        COMMANDS[ns.command](cfg, out)
    except (UsageError, InvalidArgument, ParseError, EmptyDataset, UnsupportedVersion) as exc:
        print(f"biodiff {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"biodiff {ns.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CorruptCheckpoint) as exc:
        print(f"biodiff {ns.command}: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
