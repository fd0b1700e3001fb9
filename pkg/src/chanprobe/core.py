"""Value types, reproducible randomness, complex linear algebra and the CHD1 dataset format."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .errors import (
    BadMagic,
    ConfigError,
    DegenerateInput,
    EmptyDimension,
    InvalidArgument,
    NotPositiveSemidefinite,
    TruncatedBody,
    VersionMismatch,
)

log = logging.getLogger(__name__)

# Samples per RNG substream block. Fixed so that results never depend on the worker count.
BLOCK_SIZE = 4096

LOADING_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

# ---------------------------------------------------------------------------
# worker pool
# ---------------------------------------------------------------------------

_THREADS: int | None = None


def set_threads(n: int | None) -> None:
    """Cap the number of worker threads (``None`` falls back to CHANPROBE_THREADS)."""
    global _THREADS
    if n is not None and n < 1:
        raise InvalidArgument("thread count must be >= 1")
    _THREADS = n


def get_threads() -> int:
    if _THREADS is not None:
        return _THREADS
    env = os.environ.get("CHANPROBE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring malformed CHANPROBE_THREADS=%r", env)
    return 1


def pmap(fn: Callable, items: Iterable) -> list:
    """Ordered map over ``items``; parallel when more than one thread is allowed."""
    items = list(items)
    n = min(get_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def iter_blocks(m: int, size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    return [(b, start, min(start + size, m)) for b, start in enumerate(range(0, m, size))]


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def _key64(*parts: Any) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Generators are Philox instances seeded through ``SeedSequence`` with the
    stream id (plus optional block counters) in the spawn key, so any block of
    any stream can be regenerated independently of every other one.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream_id < 2**64):
            raise InvalidArgument("seed and stream_id must be unsigned 64-bit integers")

    def generator(self, *counters: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *counters))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, *labels: Any) -> "RngStream":
        """Derive a child stream for a named purpose."""
        return RngStream(self.seed, _key64(self.stream_id, *labels))


def as_stream(rng: RngStream | int | None) -> RngStream:
    if rng is None:
        return RngStream(0)
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator()


def sample_complex_standard_normal(rng, n: int, m: int | None = None) -> np.ndarray:
    """Draw from N_C(0, I): independent real and imaginary parts with variance 1/2.

    Returns shape ``(n,)`` or ``(m, n)``. ``rng`` may be an :class:`RngStream`
    or a numpy ``Generator``.
    """
    if n < 1 or (m is not None and m < 1):
        raise InvalidArgument("sample size must be positive")
    gen = _as_generator(rng)
    shape = (n, 2) if m is None else (m, n, 2)
    z = gen.standard_normal(shape) * math.sqrt(0.5)
    return z.view(np.complex128)[..., 0]


# ---------------------------------------------------------------------------
# small value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UraGeometry:
    n_vertical: int = 4
    n_horizontal: int = 16
    spacing_vertical: float = 1.0
    spacing_horizontal: float = 0.5

    def __post_init__(self):
        if self.n_vertical < 1 or self.n_horizontal < 1:
            raise ConfigError("array dimensions must be positive")
        if not (self.spacing_vertical > 0 and self.spacing_horizontal > 0):
            raise ConfigError("antenna spacings must be strictly positive")

    @property
    def n_antennas(self) -> int:
        return self.n_vertical * self.n_horizontal


@dataclass(frozen=True)
class NoiseConfig:
    sigma_sq: float

    def __post_init__(self):
        if not (self.sigma_sq > 0 and math.isfinite(self.sigma_sq)):
            raise InvalidArgument(f"noise variance must be positive and finite, got {self.sigma_sq}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseConfig":
        # SNR is defined as 1/sigma^2 for channels with E||h||^2 = N
        return cls(10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return -10.0 * math.log10(self.sigma_sq)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelDataset:
    """M channel vectors of common dimension N, stored as an (M, N) complex array."""

    samples: np.ndarray
    norm_target: float | None = None
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.complex128, copy=True)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] == 0:
            raise InvalidArgument(f"samples must be (M, N) with N > 0, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgument("channel samples contain NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        if self.norm_target is None:
            object.__setattr__(self, "norm_target", float(x.shape[1]))

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def squared_norms(self) -> np.ndarray:
        return np.sum(self.samples.real**2 + self.samples.imag**2, axis=1)

    def subset(self, start: int, stop: int | None = None) -> "ChannelDataset":
        return replace(self, samples=self.samples[start:stop], normalized=False)

    def with_meta(self, **kw) -> "ChannelDataset":
        return replace(self, meta={**self.meta, **kw})

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()[:16]


def normalize_dataset(ds: ChannelDataset) -> ChannelDataset:
    """Scale the whole set by one scalar so that the mean squared norm equals N."""
    total = float(np.sum(ds.squared_norms()))
    if total <= 0.0:
        raise DegenerateInput("cannot normalize an all-zero dataset")
    n, m = ds.n_antennas, ds.n_samples
    scale = math.sqrt(n * m / total)
    prior = float(ds.meta.get("norm_scale", 1.0))
    return ChannelDataset(
        ds.samples * scale,
        norm_target=float(n),
        normalized=True,
        meta={**ds.meta, "norm_scale": prior * scale},
    )


def check_normalized(ds: ChannelDataset, rtol: float = 1e-6) -> bool:
    mean = float(np.mean(ds.squared_norms()))
    return abs(mean - ds.norm_target) / ds.norm_target <= rtol


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def hermitian_asymmetry(c: np.ndarray) -> float:
    scale = np.linalg.norm(c)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(c - c.conj().T) / scale)


def cholesky_with_loading(c: np.ndarray, loading: float = 0.0, name: str = "C") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``c + total_loading * I`` and the total loading used.

    Rungs of the diagonal-loading ladder are tried in order (scaled by
    ``trace(c) / N``) until the factorization succeeds.
    """
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidArgument(f"{name}: expected a square matrix, got shape {c.shape}")
    if loading < 0:
        raise InvalidArgument("loading must be non-negative")
    if hermitian_asymmetry(c) > 1e-10:
        raise InvalidArgument(f"{name}: matrix is not Hermitian")
    n = c.shape[0]
    c = 0.5 * (c + c.conj().T)
    if loading == 0.0 and not np.any(c):
        return np.zeros_like(c), 0.0
    scale = max(float(np.trace(c).real) / n, 0.0)
    eye = np.eye(n)
    for rung in LOADING_LADDER:
        total = loading + rung * scale
        if total == 0.0 and rung > 0:
            continue
        try:
            return np.linalg.cholesky(c + total * eye), total
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveSemidefinite(f"{name}: Cholesky failed at maximum diagonal loading")


def cholesky_psd(c: np.ndarray, loading: float = 0.0, name: str = "C") -> np.ndarray:
    """Lower-triangular L with L L^H = c + loading I (loading ladder applied if needed)."""
    return cholesky_with_loading(c, loading, name)[0]


# ---------------------------------------------------------------------------
# CHD1 dataset file
# ---------------------------------------------------------------------------

CHD_MAGIC = b"CHD1"
CHD_VERSION = 1
_CHD_HEADER = struct.Struct("<4sHHIQ")
FLAG_NORMALIZED = 0x1


def encode_dataset(ds: ChannelDataset) -> bytes:
    flags = FLAG_NORMALIZED if ds.normalized else 0
    header = _CHD_HEADER.pack(CHD_MAGIC, CHD_VERSION, flags, ds.n_antennas, ds.n_samples)
    body = np.ascontiguousarray(ds.samples, dtype="<c8").tobytes()
    return header + body


def decode_dataset(raw: bytes, meta: dict | None = None) -> ChannelDataset:
    if len(raw) < _CHD_HEADER.size:
        raise TruncatedBody(f"file holds {len(raw)} bytes, header needs {_CHD_HEADER.size}")
    magic, version, flags, n, m = _CHD_HEADER.unpack_from(raw)
    if magic != CHD_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {CHD_MAGIC!r}")
    if version != CHD_VERSION:
        raise VersionMismatch(f"unsupported CHD version {version}")
    if n == 0:
        raise EmptyDimension("header declares N = 0")
    body = raw[_CHD_HEADER.size:]
    expected = m * n * 8
    if len(body) != expected:
        held = len(body) // (n * 8)
        raise TruncatedBody(f"header claims M={m} samples but body holds {held} ({len(body)} of {expected} bytes)")
    samples = np.frombuffer(body, dtype="<c8").reshape(m, n).astype(np.complex128)
    meta = dict(meta or {})
    norm_target = float(meta.pop("norm_target", n))
    return ChannelDataset(samples, norm_target=norm_target, normalized=bool(flags & FLAG_NORMALIZED), meta=meta)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(ds: ChannelDataset, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(encode_dataset(ds))
    side = {"norm_target": ds.norm_target, **ds.meta}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_dataset(path: str | Path) -> ChannelDataset:
    path = Path(path)
    raw = path.read_bytes()
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return decode_dataset(raw, meta)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        from dataclasses import asdict

        return asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dump_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def stack_real(x: np.ndarray) -> np.ndarray:
    """Map complex (..., N) to real (..., 2N) as [Re, Im]."""
    return np.concatenate([x.real, x.imag], axis=-1)


def unstack_real(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def hash_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


