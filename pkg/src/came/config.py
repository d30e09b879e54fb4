"""Run configuration: a plain-text key=value file with sections, strict
unknown-key rejection, and environment overrides for seed and output
directory only.

Grammar (INI subset): ``[section]`` headers, ``key = value`` lines, ``#`` or
``;`` comments. Booleans are true/false, lists are comma-separated. Unknown
sections or keys are errors. Overrides: the environment variables CAME_SEED
and CAME_OUT_DIR, then the --seed/--out command-line flags, win in that
order (flags strongest).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .losses import LossConfig
from .model import CameConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    m: int = 50
    zipf_s: float = 1.2
    total: int = 20000
    d_x: int = 32
    d_c: int = 16
    noise_sigma: float = 0.75
    pairs_per_image: int = 12
    val_fraction: float = 0.1
    test_fraction: float = 0.2


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (5, 10, 20)
    graph_constraint: bool = True


@dataclass(frozen=True)
class AblateConfig:
    modules: tuple[str, ...] = ("baseline", "me", "me_ew", "me_ew_pw")
    expert_counts: tuple[int, ...] = (2, 3, 4)
    gammas: tuple[float, ...] = (0.25, 0.5, 1.0, 5.0)
    workers: int = 4


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: CameConfig = field(default_factory=CameConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _convert(raw: str, like, where: str):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() not in _BOOL:
            raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if isinstance(like, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from exc
    if isinstance(like, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from exc
    if isinstance(like, tuple):
        items = [v.strip() for v in raw.split(",") if v.strip()]
        if not items:
            raise ConfigError(f"{where}: expected a comma-separated list")
        elem = like[0] if like else ""
        return tuple(_convert(v, elem, where) for v in items)
    return raw


_SECTION_TARGETS = {
    "data": ("data", DataConfig),
    "model": ("model", CameConfig),
    "loss": ("loss", LossConfig),
    "train": ("train", TrainConfig),
    "eval": ("eval", EvalConfig),
    "ablate": ("ablate", AblateConfig),
}
_RUN_KEYS = {"seed", "out_dir"}


def load_config(path=None) -> RunConfig:
    """Parse a config file (defaults when path is None), then apply the
    CAME_SEED / CAME_OUT_DIR environment overrides."""
    config = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(
            inline_comment_prefixes=("#", ";"), interpolation=None
        )
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc

        updates: dict[str, object] = {}
        for section in parser.sections():
            if section == "run":
                for key, raw in parser.items("run"):
                    if key not in _RUN_KEYS:
                        raise ConfigError(f"[run] has no key {key!r}")
                    current = getattr(config, key)
                    updates[key] = _convert(raw, current, f"[run] {key}")
                continue
            if section not in _SECTION_TARGETS:
                raise ConfigError(f"unknown config section [{section}]")
            attr, cls = _SECTION_TARGETS[section]
            target = updates.get(attr, getattr(config, attr))
            fields = {f for f in cls.__dataclass_fields__}
            kv = {}
            for key, raw in parser.items(section):
                if section == "train" and key == "seed":
                    raise ConfigError("set the seed under [run], not [train]")
                if key not in fields:
                    raise ConfigError(f"[{section}] has no key {key!r}")
                kv[key] = _convert(raw, getattr(target, key), f"[{section}] {key}")
            try:
                updates[attr] = replace(target, **kv)
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
        config = replace(config, **updates)

    if "CAME_SEED" in os.environ:
        try:
            config = replace(config, seed=int(os.environ["CAME_SEED"]))
        except ValueError as exc:
            raise ConfigError(f"CAME_SEED must be an integer: {exc}") from exc
    if "CAME_OUT_DIR" in os.environ:
        config = replace(config, out_dir=os.environ["CAME_OUT_DIR"])
    return config.with_seed(config.seed)
