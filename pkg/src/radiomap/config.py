"""INI-style run configuration shared by the command-line tools.

Sections: ``[run]``, ``[generate]``, ``[network]``, ``[train]``,
``[benchmark]`` and ``[render]``. See ``configs/`` for commented examples.
Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from radiomap.autoencoder import AutoencoderConfig
from radiomap.mapgen import ChannelConfig, GenerationConfig
from radiomap.training import TrainConfig


class ConfigError(ValueError):
    """Invalid or missing configuration value."""


@dataclass
class RunConfig:
    path: Path
    parser: configparser.ConfigParser
    master_seed: int
    deterministic: bool
    precision: int
    threads: int

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def has(self, section: str) -> bool:
        return self.parser.has_section(section)

    def section(self, name: str) -> configparser.SectionProxy:
        if not self.parser.has_section(name):
            raise ConfigError(f"config has no [{name}] section")
        return self.parser[name]

    def resolve(self, value: str) -> Path:
        p = Path(value).expanduser()
        return p if p.is_absolute() else (self.path.parent / p)

    def path_option(self, section: str, key: str, required: bool = True) -> Path | None:
        sec = self.section(section)
        if key not in sec or not sec[key].strip():
            if required:
                raise ConfigError(f"[{section}] {key} is required")
            return None
        return self.resolve(sec[key].strip())


def _get(sec, key, conv, default):
    if key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: cannot parse {raw!r}") from exc


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    run = parser["run"] if parser.has_section("run") else parser[parser.default_section]
    seed = _get(run, "master_seed", int, 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("[run] master_seed must be a 64-bit unsigned integer")
    precision = _get(run, "precision", int, 32)
    if precision not in (32, 64):
        raise ConfigError("[run] precision must be 32 or 64")
    threads = _get(run, "threads", int, 1)
    return RunConfig(path, parser, seed, _get(run, "deterministic", _bool, True), precision,
                     max(1, threads))


def generation_config(rc: RunConfig) -> tuple[GenerationConfig, int]:
    """Generation settings and the number of maps ``T``."""
    sec = rc.section("generate")
    mode = sec.get("mode", "gudmundson").strip()
    freespace = mode == "freespace"
    try:
        channel = ChannelConfig(
            pathloss_exponent=_get(sec, "pathloss_exponent", float, 2.0 if freespace else 3.0),
            gain_at_unit_distance=_get(sec, "gain_at_unit_distance", float, -30.0),
            shadowing_variance=_get(sec, "shadowing_variance", float, 0.0 if freespace else 10.0),
            shadowing_decay_base=_get(sec, "shadowing_decay_base", float, 0.95),
        )
        gen = GenerationConfig(
            side_x=_get(sec, "side_x", float, 100.0),
            side_y=_get(sec, "side_y", float, 100.0),
            ny=_get(sec, "ny", int, 32),
            nx=_get(sec, "nx", int, 32),
            frequencies=_get(sec, "frequencies", _floats, (900e6,)),
            tx_powers=_get(sec, "tx_powers", _floats, (11.0, 7.0)),
            mode=mode,
            channel=channel,
            noise_psd=_get(sec, "noise_psd", float, -np.inf),
            noise_sigma=_get(sec, "noise_sigma", float, 1.0),
            omega_min=_get(sec, "omega_min", int, 50),
            omega_max=_get(sec, "omega_max", int, 300),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[generate] {exc}") from exc
    T = _get(sec, "T", int, 10)
    if T < 1:
        raise ConfigError("[generate] T must be >= 1")
    return gen, T


def autoencoder_config(rc: RunConfig, ny: int, nx: int) -> AutoencoderConfig:
    sec = rc.section("network") if rc.has("network") else {}
    get = (lambda k, d: _get(sec, k, int, d)) if sec else (lambda k, d: d)
    mask = _get(sec, "mask_channel", _bool, True) if sec else True
    try:
        return AutoencoderConfig(ny=ny, nx=nx, in_channels=2 if mask else 1,
                                 latent_dim=get("latent_dim", 64), stages=get("stages", 3),
                                 filters_per_conv=get("filters_per_conv", 64),
                                 convs_per_stage=get("convs_per_stage", 1))
    except ValueError as exc:
        raise ConfigError(f"[network] {exc}") from exc


def train_config(rc: RunConfig) -> TrainConfig:
    sec = rc.section("train")
    try:
        return TrainConfig(
            mode=sec.get("mode", "synthetic_target").strip(),
            batch_size=_get(sec, "batch_size", int, 32),
            epochs=_get(sec, "epochs", int, 10),
            lr=_get(sec, "lr", float, 1e-4),
            seed=_get(sec, "seed", int, rc.master_seed),
            q_splits=_get(sec, "q_splits", int, 1),
            input_fraction=_get(sec, "input_fraction", float, 0.5),
            disjoint_split=_get(sec, "disjoint_split", _bool, False),
            holdout_fraction=_get(sec, "holdout_fraction", float, 0.1),
            patience=_get(sec, "patience", int, 20),
            denoise_sigma=_get(sec, "denoise_sigma", float, 0.0),
            ablation_target=sec.get("ablation_target", "true").strip(),
            checkpoint_every=_get(sec, "checkpoint_every", int, 0),
            checkpoint_dir=(str(rc.resolve(sec["checkpoint_dir"]))
                            if sec.get("checkpoint_dir") else None),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from exc


def benchmark_settings(rc: RunConfig) -> dict:
    sec = rc.section("benchmark")
    names = tuple(x for x in sec.get("estimators", "network, kriging, multikernel, knn")
                  .replace(",", " ").split())
    sizes = _get(sec, "omega_sizes", _ints, (50, 100, 200, 300))
    trials = _get(sec, "trials", int, 20)
    if trials < 1 or not sizes:
        raise ConfigError("[benchmark] needs trials >= 1 and at least one omega size")
    return dict(estimators=names, omega_sizes=sizes, trials=trials,
                noise_sigma=_get(sec, "noise_sigma", float, 1.0),
                seed=_get(sec, "seed", int, rc.master_seed))
