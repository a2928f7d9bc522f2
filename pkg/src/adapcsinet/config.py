"""Layered experiment configuration.

Config files are plain ``key = value`` text with dotted keys, one per
line; ``#`` starts a comment. Every key must be in the documented schema
(unknown keys are errors), values are typed, and cross-field invariants
are checked before any compute starts. Precedence, lowest to highest:
profile defaults, config file, ``ACN_*`` environment variables (double
underscore encodes the dot, e.g. ``ACN_TRAIN__LR``), explicit overrides.

Two profiles exist: ``desk`` (default, laptop-scale) and ``paper``
(full-scale channel-generation settings; selectable, not CI-sized).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .channel import OfdmConfig, UlaConfig
from .csi import codeword_length
from .model import ModelDims
from .raytrace import TraceConfig
from .scene import SceneParams
from .training import TrainSettings

ENV_PREFIX = "ACN_"


class ConfigError(ValueError):
    """Bad key, bad value or inconsistent combination; names the key path."""


# ---------------------------------------------------------------------------
# value parsers
# ---------------------------------------------------------------------------

def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_str(s: str) -> str:
    return s.strip()


def _parse_fraction(s: str) -> Fraction:
    f = Fraction(s.strip())
    if not 0 < f < 1:
        raise ValueError(f"compression ratio must be in (0, 1), got {f}")
    return f


def _parse_fraction_list(s: str) -> tuple[Fraction, ...]:
    return tuple(_parse_fraction(part) for part in s.split(",") if part.strip())


def _parse_int_list(s: str) -> tuple[int, ...]:
    """Comma-separated integers with ``a-b`` ranges, e.g. ``0-39,41``."""
    out: list[int] = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"descending range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


# key -> (parser, desk default, paper default); defaults given as strings so
# every path through the parser is exercised identically
_SCHEMA: dict[str, tuple] = {
    "profile": (_parse_str, "desk", "paper"),
    "out_dir": (_parse_str, "runs/desk", "runs/paper"),

    "scene.count": (_parse_int, "56", "200"),
    "scene.seed": (_parse_int, "101", "101"),
    "scene.grid_size": (_parse_int, "32", "100"),
    "scene.width": (_parse_float, "10.0", "10.0"),
    "scene.depth": (_parse_float, "10.0", "10.0"),
    "scene.height": (_parse_float, "3.0", "3.0"),
    "scene.bs_x": (_parse_float, "0.75", "0.75"),
    "scene.bs_y": (_parse_float, "0.75", "0.75"),
    "scene.bs_height": (_parse_float, "2.9", "2.9"),
    "scene.ue_height": (_parse_float, "0.8", "0.8"),
    "scene.walls_min": (_parse_int, "1", "1"),
    "scene.walls_max": (_parse_int, "3", "3"),
    "scene.wall_len_min": (_parse_float, "3.0", "3.0"),
    "scene.wall_len_max": (_parse_float, "8.0", "8.0"),
    "scene.lattice": (_parse_float, "0.5", "0.5"),
    "scene.min_ue_area": (_parse_float, "4.0", "4.0"),
    "scene.anchor_prob": (_parse_float, "0.7", "0.7"),
    "scene.max_attempts": (_parse_int, "200", "200"),
    "scene.rel_permittivity": (_parse_float, "1.99", "1.99"),
    "scene.conductivity": (_parse_float, "0.012", "0.012"),

    "channel.subcarriers": (_parse_int, "64", "256"),
    "channel.antennas": (_parse_int, "8", "8"),
    "channel.center_freq": (_parse_float, "5.8e9", "5.8e9"),
    "channel.bandwidth": (_parse_float, "20e6", "20e6"),
    "channel.spacing_wavelengths": (_parse_float, "0.5", "0.5"),
    "channel.max_reflections": (_parse_int, "2", "2"),
    "channel.max_diffractions": (_parse_int, "1", "1"),
    "channel.diffraction": (_parse_bool, "false", "true"),
    "channel.min_gain_db": (_parse_float, "60.0", "60.0"),
    "channel.samples_per_scene": (_parse_int, "200", "1000"),
    "channel.seed": (_parse_int, "202", "202"),

    "preprocess.nc": (_parse_int, "16", "32"),
    "preprocess.crs": (_parse_fraction_list, "1/8,1/16,1/24,1/32", "1/8,1/16,1/24,1/32"),
    "preprocess.projection_seed": (_parse_int, "303", "303"),

    "model.alpha": (_parse_float, "0.6", "0.6"),

    "train.batch_size": (_parse_int, "200", "200"),
    "train.epochs_step1": (_parse_int, "120", "1000"),
    "train.epochs_step2": (_parse_int, "150", "1000"),
    "train.lr": (_parse_float, "0.001", "0.001"),
    "train.plateau_patience": (_parse_int, "30", "30"),
    "train.lr_factor": (_parse_float, "0.5", "0.5"),
    "train.seeds": (_parse_int_list, "1,2,3", "1,2,3"),

    "split.train": (_parse_int_list, "0-39", "0-159"),
    "split.val": (_parse_int_list, "40-47", "160-179"),
    "split.test": (_parse_int_list, "48-55", "180-199"),

    "online.env_id": (_parse_int, "-1", "-1"),
    "online.budgets": (_parse_int_list, "25,50,100,200,400", "1000,2000,3000,4000,5000"),
    "online.eval_count": (_parse_int, "200", "1000"),
    "online.cr": (_parse_fraction, "1/16", "1/24"),
    "online.lr": (_parse_float, "1e-4", "1e-4"),
    "online.epochs": (_parse_int, "200", "200"),
    "online.early_stop_patience": (_parse_int, "30", "30"),
    "online.seed": (_parse_int, "404", "404"),

    "switch.crs": (_parse_fraction_list, "1/16", "1/24"),
    "switch.min_los_train": (_parse_int, "200", "1000"),
    "switch.min_los_eval": (_parse_int, "40", "200"),
}


@dataclass(frozen=True)
class SplitSpec:
    """Environment split; test environments never feed gradient updates."""

    train_env_ids: tuple[int, ...]
    val_env_ids: tuple[int, ...]
    test_env_ids: tuple[int, ...]
    samples_per_env: int
    seed: int

    def validate(self) -> None:
        tr, va, te = map(set, (self.train_env_ids, self.val_env_ids, self.test_env_ids))
        if tr & va or tr & te or va & te:
            raise ConfigError("split.train/split.val/split.test must be pairwise disjoint")
        if not tr or not va or not te:
            raise ConfigError("every split must contain at least one environment")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved, validated run configuration."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    # typed views ----------------------------------------------------------
    def scene_params(self) -> SceneParams:
        v = self.values
        return SceneParams(
            width=v["scene.width"], depth=v["scene.depth"], height=v["scene.height"],
            bs_xy=(v["scene.bs_x"], v["scene.bs_y"]), bs_height=v["scene.bs_height"],
            ue_height=v["scene.ue_height"],
            n_walls_range=(v["scene.walls_min"], v["scene.walls_max"]),
            wall_len_range=(v["scene.wall_len_min"], v["scene.wall_len_max"]),
            lattice=v["scene.lattice"], min_ue_area=v["scene.min_ue_area"],
            anchor_prob=v["scene.anchor_prob"], max_attempts=v["scene.max_attempts"],
            rel_permittivity=v["scene.rel_permittivity"],
            conductivity=v["scene.conductivity"])

    def trace_config(self) -> TraceConfig:
        v = self.values
        return TraceConfig(center_freq=v["channel.center_freq"],
                           max_reflections=v["channel.max_reflections"],
                           max_diffractions=v["channel.max_diffractions"],
                           diffraction=v["channel.diffraction"],
                           min_gain_db=v["channel.min_gain_db"])

    def ofdm_config(self) -> OfdmConfig:
        v = self.values
        return OfdmConfig(n_subcarriers=v["channel.subcarriers"],
                          center_freq=v["channel.center_freq"],
                          bandwidth=v["channel.bandwidth"])

    def ula_config(self) -> UlaConfig:
        v = self.values
        return UlaConfig(n_antennas=v["channel.antennas"],
                         spacing_wavelengths=v["channel.spacing_wavelengths"])

    def model_dims(self, cr: Fraction) -> ModelDims:
        v = self.values
        n = 2 * v["preprocess.nc"] * v["channel.antennas"]
        return ModelDims(nc=v["preprocess.nc"], nt=v["channel.antennas"],
                         m=codeword_length(n, cr), g=v["scene.grid_size"])

    def split_spec(self) -> SplitSpec:
        v = self.values
        return SplitSpec(train_env_ids=v["split.train"], val_env_ids=v["split.val"],
                         test_env_ids=v["split.test"],
                         samples_per_env=v["channel.samples_per_scene"],
                         seed=v["scene.seed"])

    def train_settings(self, step: int, seed: int) -> TrainSettings:
        v = self.values
        if step == 1:
            return TrainSettings(epochs=v["train.epochs_step1"],
                                 batch_size=v["train.batch_size"],
                                 lr=v["train.lr"], seed=seed)
        return TrainSettings(epochs=v["train.epochs_step2"],
                             batch_size=v["train.batch_size"], lr=v["train.lr"],
                             seed=seed, plateau_patience=v["train.plateau_patience"],
                             lr_factor=v["train.lr_factor"])

    def online_settings(self, seed: int) -> TrainSettings:
        v = self.values
        return TrainSettings(epochs=v["online.epochs"], batch_size=v["train.batch_size"],
                             lr=v["online.lr"], seed=seed,
                             early_stop_patience=v["online.early_stop_patience"])

    def online_env(self) -> int:
        env = self.values["online.env_id"]
        return self.values["split.test"][0] if env < 0 else env

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                rendered = ",".join(str(x) for x in val)
            else:
                rendered = str(val)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _read_config_file(path) -> dict[str, str]:
    raw: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def _env_overrides(environ) -> dict[str, str]:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        out[key] = value
    return out


def parse_and_validate(path=None, overrides: dict[str, str] | None = None,
                       environ=None) -> ExperimentConfig:
    """Resolve defaults, file, environment and overrides into a config.

    Raises ConfigError with the offending key path on unknown keys, type
    errors or cross-field inconsistencies.
    """
    environ = os.environ if environ is None else environ
    layers: list[tuple[str, dict[str, str]]] = []
    if path is not None:
        layers.append((str(path), _read_config_file(path)))
    layers.append(("environment", _env_overrides(environ)))
    layers.append(("override", dict(overrides or {})))

    for source, layer in layers:
        for key in layer:
            if key not in _SCHEMA:
                raise ConfigError(f"{source}: unknown config key {key!r}")

    # profile decides the defaults; later layers may still override any key
    profile = "desk"
    for _, layer in layers:
        if "profile" in layer:
            profile = layer["profile"].strip()
    if profile not in ("desk", "paper"):
        raise ConfigError(f"profile: must be 'desk' or 'paper', got {profile!r}")
    col = 1 if profile == "desk" else 2

    values: dict = {}
    for key, spec in _SCHEMA.items():
        parser = spec[0]
        text = spec[col]
        source = "default"
        for layer_name, layer in layers:
            if key in layer:
                text = layer[key]
                source = layer_name
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"{key} (from {source}): {exc}") from exc
    values["profile"] = profile

    cfg = ExperimentConfig(values=values)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["preprocess.nc"] > v["channel.subcarriers"]:
        raise ConfigError("preprocess.nc exceeds channel.subcarriers "
                          f"({v['preprocess.nc']} > {v['channel.subcarriers']})")
    if v["scene.grid_size"] < 8 or v["scene.grid_size"] % 4:
        raise ConfigError("scene.grid_size must be >= 8 and a multiple of 4")
    if abs(v["scene.width"] - v["scene.depth"]) > 1e-9:
        raise ConfigError("scene.width and scene.depth must match (square rasters)")
    if v["scene.walls_max"] < v["scene.walls_min"] or v["scene.walls_min"] < 0:
        raise ConfigError("scene.walls_min/scene.walls_max out of order")
    if v["channel.antennas"] < 1:
        raise ConfigError("channel.antennas must be >= 1")
    if v["train.batch_size"] < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if not v["train.seeds"]:
        raise ConfigError("train.seeds must not be empty")

    try:
        cfg.scene_params().validate()
        cfg.trace_config().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    n = 2 * v["preprocess.nc"] * v["channel.antennas"]
    for key in ("preprocess.crs", "switch.crs"):
        for cr in v[key]:
            try:
                codeword_length(n, cr)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
    try:
        codeword_length(n, v["online.cr"])
    except ValueError as exc:
        raise ConfigError(f"online.cr: {exc}") from exc
    for key, cr_key in (("online.cr", v["online.cr"]),):
        if cr_key not in v["preprocess.crs"]:
            raise ConfigError(f"{key}={cr_key} is not among preprocess.crs")
    for cr in v["switch.crs"]:
        if cr not in v["preprocess.crs"]:
            raise ConfigError(f"switch.crs entry {cr} is not among preprocess.crs")

    count = v["scene.count"]
    for key in ("split.train", "split.val", "split.test"):
        ids = v[key]
        if not ids:
            raise ConfigError(f"{key} must not be empty")
        if min(ids) < 0 or max(ids) >= count:
            raise ConfigError(f"{key} references environments outside 0..{count - 1}")
    cfg.split_spec().validate()

    if v["online.env_id"] >= 0 and v["online.env_id"] not in v["split.test"]:
        raise ConfigError("online.env_id must be one of split.test")
    if any(b <= 0 for b in v["online.budgets"]):
        raise ConfigError("online.budgets must be positive (budget 0 is implicit)")
    if list(v["online.budgets"]) != sorted(v["online.budgets"]):
        raise ConfigError("online.budgets must be ascending")
    if v["online.eval_count"] < 1:
        raise ConfigError("online.eval_count must be >= 1")


def documented_keys() -> list[tuple[str, str, str]]:
    """(key, desk default, paper default) rows for the README grammar table."""
    return [(k, s[1], s[2]) for k, s in _SCHEMA.items()]
