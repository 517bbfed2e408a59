"""Experiment config files.

Grammar: INI-style ``[section]`` headers followed by ``key = value`` lines;
``#`` and ``;`` start comments. Sections and keys are fixed (see
``SCHEMA``); anything else is rejected. Command-line overrides use
``section.key=value``. A resolved config serializes back to the same grammar.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .losses import LossSpec
from .pipeline import AugmentSpec
from .thresholding import ThresholdMethod
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


SCHEMA: dict[str, dict[str, str]] = {
    "data": {"manifest": ""},
    "train": {
        "mode": "selfsup",
        "epochs": "50",
        "batch_size": "16",
        "lr": "0.001",
        "patience": "5",
        "seed": "0",
        "seeds": "1,2,3,4,5",
        "eval_resize": "64x64",
    },
    "threshold": {
        "method": "otsu",
        "t": "127",
        "nu": "1",
        "tau": "auto",
        "kappa": "0",
        "omega": "0.5",
        "window": "11",
        "c": "2",
        "sigma": "auto",
        "invert": "false",
    },
    "loss": {"kind": "focal_tversky", "alpha": "auto", "beta": "auto", "gamma": "auto", "eps": "auto"},
    "augment": {
        "hflip_p": "0.5",
        "vflip_p": "0.5",
        "brightness_delta": "0",
        "contrast_lo": "1",
        "contrast_hi": "1",
    },
}


@dataclass
class Settings:
    train: TrainConfig
    manifest: Optional[Path] = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    raw: dict = field(default_factory=dict)

    def to_text(self) -> str:
        return dump_raw(self.raw)


def _defaults() -> dict[str, dict[str, str]]:
    return {s: dict(keys) for s, keys in SCHEMA.items()}


def _set(raw, section, key, value, origin):
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]")
    raw[section][key] = value.strip()


def read_config(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = _defaults()
    for section in parser.sections():
        for key, value in parser.items(section):
            _set(raw, section, key, value, str(path))
    return raw


def apply_overrides(raw, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _set(raw, section, key, value, "override")
    return raw


def _opt_float(text: str) -> Optional[float]:
    return None if text.lower() in ("auto", "none", "") else float(text)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _size(text: str) -> tuple[int, int]:
    w, _, h = text.lower().partition("x")
    return int(w), int(h or w)


def resolve(raw) -> Settings:
    """Turn raw strings into typed configuration objects (validation happens in their constructors)."""
    try:
        tr, th, lo, au = raw["train"], raw["threshold"], raw["loss"], raw["augment"]
        method = ThresholdMethod(
            kind=th["method"],
            t=float(th["t"]),
            nu=float(th["nu"]),
            tau=_opt_float(th["tau"]),
            kappa=float(th["kappa"]),
            omega=float(th["omega"]),
            window=int(th["window"]),
            c=float(th["c"]),
            sigma=_opt_float(th["sigma"]),
            invert=_bool(th["invert"]),
        )
        loss = LossSpec(
            kind=lo["kind"],
            alpha=_opt_float(lo["alpha"]),
            beta=_opt_float(lo["beta"]),
            gamma=_opt_float(lo["gamma"]),
            eps=_opt_float(lo["eps"]),
        )
        aug = AugmentSpec(
            hflip_p=float(au["hflip_p"]),
            vflip_p=float(au["vflip_p"]),
            brightness_delta=float(au["brightness_delta"]),
            contrast_range=(float(au["contrast_lo"]), float(au["contrast_hi"])),
        )
        cfg = TrainConfig(
            mode=tr["mode"],
            threshold=method,
            loss=loss,
            epochs=int(tr["epochs"]),
            batch_size=int(tr["batch_size"]),
            lr=float(tr["lr"]),
            patience=int(tr["patience"]),
            seed=int(tr["seed"]),
            eval_resize=_size(tr["eval_resize"]),
            augment=aug,
        )
        seeds = [int(s) for s in tr["seeds"].replace(" ", "").split(",") if s]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    manifest = Path(raw["data"]["manifest"]) if raw["data"]["manifest"] else None
    return Settings(cfg, manifest, seeds, raw)


def load_settings(path=None, overrides=None) -> Settings:
    raw = read_config(path) if path else _defaults()
    return resolve(apply_overrides(raw, overrides))


def dump_raw(raw) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {raw[section][k]}" for k in keys)
        lines.append("")
    return "\n".join(lines)
