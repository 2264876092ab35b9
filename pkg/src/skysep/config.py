"""Plain key = value config files for scenarios and training runs.

Lines are `key = value`; `#` starts a comment. Waypoint lists use
semicolon-separated `x,y` pairs; numeric lists are comma-separated.

Scenario keys (all optional, defaults shown by `default_scenario`):
  route1, route2        waypoints, e.g. "0,1200; 3000,0; ...; 9500,0"
  spawn_rate            aircraft per second per route
  min_headway           seconds
  wind_east, wind_north m/s
  episode_length        seconds
  capture_radius, detect_radius, protected_radius   m
  max_intruders
  kappa_x, kappa_y, kappa_heading_deg, kappa_speed, kappa_dist,
  kappa_prev_cmd        corruption radii
  norm_offset, norm_scale   six comma-separated per-column constants

Training keys:
  total_steps (required), seed (required), batch_size, minibatch_size,
  learning_rate, epochs, discount, gae_lambda, clip_ratio, value_coef,
  entropy_coef, inv_weight, anchor_weight, curriculum, grad_clip

Evaluation keys:
  checkpoint_<tag> (one per evaluated policy), checkpoint_teacher
  (defaults to checkpoint_nominal; drives the evaluation-time adversary)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .observation import (CorruptionBounds, FeatureNorms,
                          default_corruption_bounds, default_feature_norms)
from .sim import (AirspaceEnv, RewardParams, Route, RouteNetwork, Wind,
                  default_route_network)
from .trainer import TrainConfig


class ConfigError(Exception):
    pass


def parse_kv(path) -> dict:
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _floats(text) -> list:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _waypoints(text) -> np.ndarray:
    pts = []
    for pair in text.split(";"):
        xy = _floats(pair)
        if len(xy) != 2:
            raise ConfigError(f"bad waypoint '{pair.strip()}'")
        pts.append(xy)
    if len(pts) < 2:
        raise ConfigError("a route needs at least two waypoints")
    return np.array(pts)


@dataclass
class ScenarioConfig:
    network: RouteNetwork
    wind: Wind = Wind()
    reward_params: RewardParams = RewardParams()
    spawn_rate: float = 1.0 / 60.0
    min_headway: float = 30.0
    episode_length: float = 3000.0
    max_intruders: int = 5
    corruption_bounds: CorruptionBounds = field(
        default_factory=default_corruption_bounds)
    feature_norms: FeatureNorms = field(default_factory=default_feature_norms)

    @property
    def detect_radius(self) -> float:
        return self.reward_params.detect_radius

    def make_env(self, rng: np.random.Generator,
                 event_log=None) -> AirspaceEnv:
        return AirspaceEnv(self.network, self.wind, self.reward_params,
                           self.spawn_rate, self.min_headway,
                           self.episode_length, rng, event_log)


def default_scenario() -> ScenarioConfig:
    return ScenarioConfig(network=default_route_network())


def load_scenario(kv: dict) -> ScenarioConfig:
    base = default_scenario()
    routes = []
    i = 1
    while f"route{i}" in kv:
        routes.append(Route(_waypoints(kv[f"route{i}"])))
        i += 1
    network = RouteNetwork(
        routes=tuple(routes) if routes else base.network.routes,
        capture_radius=float(kv.get("capture_radius", 100.0)))
    reward = RewardParams(
        protected_radius=float(kv.get("protected_radius", 100.0)),
        detect_radius=float(kv.get("detect_radius", 500.0)))
    max_intruders = int(kv.get("max_intruders", 5))
    kappa_row = np.array([
        float(kv.get("kappa_x", 60.0)),
        float(kv.get("kappa_y", 60.0)),
        math.radians(float(kv.get("kappa_heading_deg", 5.0))),
        float(kv.get("kappa_speed", 2.0)),
        float(kv.get("kappa_dist", 60.0)),
        float(kv.get("kappa_prev_cmd", 0.0)),
    ])
    bounds = CorruptionBounds(np.tile(kappa_row, (1 + max_intruders, 1)))
    norms = base.feature_norms
    if "norm_offset" in kv or "norm_scale" in kv:
        offset = np.array(_floats(kv["norm_offset"])) \
            if "norm_offset" in kv else norms.offset
        scale = np.array(_floats(kv["norm_scale"])) \
            if "norm_scale" in kv else norms.scale
        if len(offset) != 6 or len(scale) != 6:
            raise ConfigError("norm_offset / norm_scale need six values")
        norms = FeatureNorms(offset=offset, scale=scale)
    return ScenarioConfig(
        network=network,
        wind=Wind(float(kv.get("wind_east", 0.0)),
                  float(kv.get("wind_north", 0.0))),
        reward_params=reward,
        spawn_rate=float(kv.get("spawn_rate", base.spawn_rate)),
        min_headway=float(kv.get("min_headway", 30.0)),
        episode_length=float(kv.get("episode_length", 3000.0)),
        max_intruders=max_intruders,
        corruption_bounds=bounds,
        feature_norms=norms,
    )


def load_train_config(kv: dict) -> TrainConfig:
    for required in ("total_steps", "seed"):
        if required not in kv:
            raise ConfigError(f"missing required config key '{required}'")
    defaults = TrainConfig(total_steps=0)
    curriculum = tuple(_floats(kv["curriculum"])) if "curriculum" in kv \
        else defaults.curriculum
    return TrainConfig(
        total_steps=int(kv["total_steps"]),
        seed=int(kv["seed"]),
        discount=float(kv.get("discount", defaults.discount)),
        gae_lambda=float(kv.get("gae_lambda", defaults.gae_lambda)),
        clip_ratio=float(kv.get("clip_ratio", defaults.clip_ratio)),
        learning_rate=float(kv.get("learning_rate", defaults.learning_rate)),
        epochs=int(kv.get("epochs", defaults.epochs)),
        value_coef=float(kv.get("value_coef", defaults.value_coef)),
        entropy_coef=float(kv.get("entropy_coef", defaults.entropy_coef)),
        inv_weight=float(kv.get("inv_weight", defaults.inv_weight)),
        anchor_weight=float(kv.get("anchor_weight", defaults.anchor_weight)),
        curriculum=curriculum,
        batch_size=int(kv.get("batch_size", defaults.batch_size)),
        minibatch_size=int(kv.get("minibatch_size", defaults.minibatch_size)),
        grad_clip=float(kv.get("grad_clip", defaults.grad_clip)),
    )


def load_checkpoint_paths(kv: dict) -> dict:
    """Policy tag -> checkpoint path from checkpoint_<tag> keys."""
    paths = {k[len("checkpoint_"):]: v for k, v in kv.items()
             if k.startswith("checkpoint_") and k != "checkpoint_teacher"}
    if not paths:
        raise ConfigError("missing required config key 'checkpoint_<tag>'")
    teacher = kv.get("checkpoint_teacher", paths.get("nominal"))
    if teacher is None:
        raise ConfigError("missing required config key 'checkpoint_teacher'")
    return {"policies": paths, "teacher": teacher}
