"""Flat key=value run configuration.

A config file holds one `section.key = value` assignment per line, with blank
lines and # comments ignored.  Every key has a typed default below; unknown
keys are rejected and values parse according to the default's type (ints,
floats, comma-separated lists).  serialize/parse round-trips exactly.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .errors import ConfigurationError
from .hjepa import HjepaConfig
from .plant import PlantParams, RenderConfig

DEFAULTS: dict = {
    "plant.cart_mass": 1.0,
    "plant.pole_mass": 0.1,
    "plant.pole_half_length": 0.5,
    "plant.gravity": 9.81,
    "plant.integration_dt": 0.001,
    "plant.process_noise_std": 0.0001,
    "plant.force_limit": 20.0,
    "plant.track_limit": 2.4,
    "render.width": 32,
    "render.height": 32,
    "render.channels": 1,
    "render.world_window": 4.8,
    "control.state_weights": (1.0, 0.1, 10.0, 0.1),
    "control.action_weight": 0.01,
    "control.riccati_tol": 1e-9,
    "control.riccati_max_iter": 10000,
    "hjepa.embed_dim": 256,
    "hjepa.frame_stack": 2,
    "hjepa.horizon": 20,
    "hjepa.depth_h": 4,
    "hjepa.depth_m": 2,
    "hjepa.depth_l": 1,
    "hjepa.ema_rate": 0.99,
    "hjepa.encoder_widths": (1024, 512),
    "hjepa.predictor_hidden": 1024,
    "hjepa.actor_hidden": 128,
    "data.train_trajectories": 200,
    "data.test_trajectories": 40,
    "data.embed_train_trajectories": 80,
    "data.embed_test_trajectories": 40,
    "data.trajectory_steps": 400,
    "data.exploration_std": 1.0,
    "data.init_angle_range": 0.15,
    "data.init_position_range": 0.4,
    "data.max_attempts": 100,
    "train.models": ("hjepa", "jepa1", "jepa4", "supervised2", "supervised4", "autoencoder"),
    "train.learning_rate": 0.01,
    "train.batch_size": 256,
    "train.grad_clip": 5.0,
    "train.anchor_stride": 4,
    "train.baseline_anchor_stride": 8,
    "train.stage1_epochs": 15,
    "train.bracket_epochs": 15,
    "train.actor_epochs": 500,
    "train.baseline_epochs": 6,
    "train.supervised_epochs": 8,
    "train.autoencoder_epochs": 8,
    "train.supervised_subsample": 2,
    "train.actor_subsample": 2,
    "eval.methods_encoding": ("oracle", "zero", "hjepa", "jepa1", "jepa4", "supervised2", "supervised4", "autoencoder"),
    "eval.methods_prediction": ("oracle", "zero", "repeat", "hjepa", "jepa1", "jepa4"),
    "sweep.methods": ("hjepa", "jepa1", "raw_frame", "no_prediction"),
    "sweep.snr_grid_db": (0.0, 5.0, 10.0, 15.0, 20.0, 25.0),
    "sweep.episodes": 20,
    "sweep.episode_steps": 2000,
    "sweep.init_angle_range": 0.15,
    "sweep.init_position_range": 0.4,
    "sweep.score_threshold": 0.62,
    "sweep.device_cap": 4096,
    "sweep.total_bandwidth": 1e8,
    "sweep.noise_psd": 4e-21,
    "sweep.carrier_freq_ghz": 3.5,
    "sweep.ref_distance": 30.0,
    "sweep.distance_min": 10.0,
    "sweep.distance_max": 50.0,
    "sweep.slot_seconds": 0.001,
    "sweep.embedding_bits_per_dim": 32,
    "sweep.pixel_bits": 8,
}


def default_config() -> dict:
    return dict(DEFAULTS)


def _parse_scalar(key: str, text: str, kind: type):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"invalid value for '{key}': {text!r} ({exc})") from None


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigurationError(f"unknown config key '{key}'")
    default = DEFAULTS[key]
    text = text.strip()
    if isinstance(default, tuple):
        if not text:
            raise ConfigurationError(f"empty list for '{key}'")
        elem_kind = type(default[0]) if default else str
        return tuple(_parse_scalar(key, part.strip(), elem_kind) for part in text.split(","))
    return _parse_scalar(key, text, type(default))


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        out[key.strip()] = parse_value(key.strip(), value)
    return out


def load_config(path: Optional[str] = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
        cfg.update(parse_config_text(text))
    return cfg


def apply_overrides(cfg: dict, assignments: Sequence[str]) -> None:
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        cfg[key.strip()] = parse_value(key.strip(), value)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: dict) -> str:
    lines = [f"{key} = {_format_value(cfg[key])}" for key in DEFAULTS]
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- typed objects


def plant_params(cfg: dict) -> PlantParams:
    limit = cfg["plant.force_limit"]
    return PlantParams(
        cart_mass=cfg["plant.cart_mass"],
        pole_mass=cfg["plant.pole_mass"],
        pole_half_length=cfg["plant.pole_half_length"],
        gravity=cfg["plant.gravity"],
        integration_dt=cfg["plant.integration_dt"],
        process_noise_std=cfg["plant.process_noise_std"],
        u_max=limit,
        u_min=-limit,
        track_limit=cfg["plant.track_limit"],
    )


def render_config(cfg: dict) -> RenderConfig:
    return RenderConfig(
        width=cfg["render.width"],
        height=cfg["render.height"],
        channels=cfg["render.channels"],
        world_window=cfg["render.world_window"],
    )


def hjepa_config(cfg: dict) -> HjepaConfig:
    return HjepaConfig(
        embed_dim=cfg["hjepa.embed_dim"],
        frame_stack=cfg["hjepa.frame_stack"],
        horizon=cfg["hjepa.horizon"],
        depth_high=cfg["hjepa.depth_h"],
        depth_medium=cfg["hjepa.depth_m"],
        depth_low=cfg["hjepa.depth_l"],
        ema_rate=cfg["hjepa.ema_rate"],
        encoder_widths=tuple(cfg["hjepa.encoder_widths"]),
        predictor_hidden=cfg["hjepa.predictor_hidden"],
        actor_hidden=cfg["hjepa.actor_hidden"],
    )
