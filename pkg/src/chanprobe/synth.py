"""Synthetic radio propagation environment: a URA base station serving LOS/NLOS users
clustered in a few disjoint angular sectors (a street-canyon-like, multimodal channel law)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ChannelDataset,
    RngStream,
    UraGeometry,
    iter_blocks,
    normalize_dataset,
    pmap,
)
from .errors import ConfigError, InvalidArgument

# (azimuth center, azimuth spread, elevation center, elevation spread), radians.
# Azimuth pi/2 and elevation pi/2 are broadside; elevation is the zenith angle.
DEFAULT_SECTORS = (
    (0.95, 0.05, 1.75, 0.04),
    (1.62, 0.06, 1.68, 0.03),
    (2.30, 0.05, 1.90, 0.05),
)


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: UraGeometry = field(default_factory=UraGeometry)
    n_clusters_range: tuple[int, int] = (1, 5)
    los_probability: float = 0.4
    rician_k_db: float = 8.0
    angle_sectors: tuple[tuple[float, float, float, float], ...] = DEFAULT_SECTORS
    per_path_gain_profile: float = 0.5
    diffuse_floor_db: float = -30.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_clusters_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"n_clusters_range must satisfy 1 <= lo <= hi, got {self.n_clusters_range}")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ConfigError("los_probability must lie in [0, 1]")
        if not self.angle_sectors:
            raise ConfigError("at least one angle sector is required")
        for sector in self.angle_sectors:
            if len(sector) != 4:
                raise ConfigError(f"sector must have 4 entries, got {sector}")
            if sector[1] <= 0 or sector[3] <= 0:
                raise ConfigError(f"sector spreads must be > 0, got {sector}")
            if not all(math.isfinite(v) for v in sector):
                raise ConfigError("sector angles must be finite")
        if self.per_path_gain_profile < 0:
            raise ConfigError("per_path_gain_profile must be non-negative")
        if not math.isfinite(self.rician_k_db):
            raise ConfigError("rician_k_db must be finite")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_clusters_range"] = list(self.n_clusters_range)
        d["angle_sectors"] = [list(s) for s in self.angle_sectors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        try:
            if "geometry" in d:
                d["geometry"] = UraGeometry(**d["geometry"])
            if "n_clusters_range" in d:
                d["n_clusters_range"] = tuple(int(v) for v in d["n_clusters_range"])
            if "angle_sectors" in d:
                d["angle_sectors"] = tuple(tuple(float(v) for v in s) for s in d["angle_sectors"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def steering_vector(geometry: UraGeometry, azimuth, elevation) -> np.ndarray:
    """URA response a_v (x) a_h; vectorized over broadcastable angle arrays (last axis = antennas)."""
    azimuth = np.asarray(azimuth, dtype=float)
    elevation = np.asarray(elevation, dtype=float)
    if not (np.all(np.isfinite(azimuth)) and np.all(np.isfinite(elevation))):
        raise InvalidArgument("angles must be finite")
    u_v = geometry.spacing_vertical * np.cos(elevation)
    u_h = geometry.spacing_horizontal * np.sin(elevation) * np.cos(azimuth)
    k = np.arange(geometry.n_vertical)
    l = np.arange(geometry.n_horizontal)
    a_v = np.exp(2j * np.pi * u_v[..., None] * k)
    a_h = np.exp(2j * np.pi * u_h[..., None] * l)
    return (a_v[..., :, None] * a_h[..., None, :]).reshape(*a_v.shape[:-1], -1)


def _generate_block(config: ScenarioConfig, gen: np.random.Generator, m: int) -> np.ndarray:
    geo = config.geometry
    n = geo.n_antennas
    sectors = np.asarray(config.angle_sectors)
    lo, hi = config.n_clusters_range
    p_max = hi

    sector = gen.integers(len(sectors), size=m)
    is_los = gen.random(m) < config.los_probability
    n_paths = gen.integers(lo, hi + 1, size=m)

    az_c, az_s, el_c, el_s = (sectors[sector, i][:, None] for i in range(4))
    az = az_c + az_s * gen.standard_normal((m, p_max))
    el = el_c + el_s * gen.standard_normal((m, p_max))

    profile = np.exp(-config.per_path_gain_profile * np.arange(p_max))
    active = np.arange(p_max)[None, :] < n_paths[:, None]
    power = np.where(active, profile[None, :], 0.0)
    power /= power.sum(axis=1, keepdims=True)
    gains = (gen.standard_normal((m, p_max)) + 1j * gen.standard_normal((m, p_max))) * np.sqrt(power / 2)

    k_lin = 10.0 ** (config.rician_k_db / 10.0)
    los_gain = math.sqrt(k_lin / (k_lin + 1.0)) * np.exp(2j * np.pi * gen.random(m))
    scatter_scale = np.where(is_los, math.sqrt(1.0 / (k_lin + 1.0)), 1.0)
    los_az = az_c[:, 0] + az_s[:, 0] * gen.standard_normal(m)
    los_el = el_c[:, 0] + el_s[:, 0] * gen.standard_normal(m)

    h = np.einsum("mp,mpn->mn", gains, steering_vector(geo, az, el)) * scatter_scale[:, None]
    h += np.where(is_los, 1.0, 0.0)[:, None] * los_gain[:, None] * steering_vector(geo, los_az, los_el)

    floor = 10.0 ** (config.diffuse_floor_db / 10.0)
    diffuse = (gen.standard_normal((m, n)) + 1j * gen.standard_normal((m, n))) * math.sqrt(floor / 2)
    return h + diffuse


def generate_rpe(config: ScenarioConfig, n_samples: int, stream_id: int = 0) -> ChannelDataset:
    """Draw ``n_samples`` normalized channels from the scenario.

    Samples are produced in fixed-size blocks, each with its own random substream
    keyed by ``(config.seed, stream_id, block)``, so the output does not depend on
    the number of worker threads.
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    rng = RngStream(config.seed, stream_id)

    def work(block):
        b, start, stop = block
        return _generate_block(config, rng.generator(b), stop - start)

    samples = np.concatenate(pmap(work, iter_blocks(n_samples)), axis=0)
    raw = ChannelDataset(samples, meta={
        "generator": "synth-rpe",
        "seed": config.seed,
        "stream_id": stream_id,
        "scenario": config.to_dict(),
    })
    return normalize_dataset(raw)
