"""Direct evaluation metrics for generated channels.

* spectral efficiency distribution compared with the Wasserstein-1 distance,
* codebook fingerprints (feedback-index histograms) compared with the TVD,
* the unbiased Gaussian-kernel MMD.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .core import ChannelDataset, NoiseConfig, UraGeometry, iter_blocks, pmap, stack_real
from .errors import ConfigError, DegenerateInput, IncompatibleFingerprints, InsufficientData, InvalidArgument

MMD_BLOCK = 512
BANDWIDTH_SUBSAMPLE = 2000


# ---------------------------------------------------------------------------
# spectral efficiency and W1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeSampleSet:
    values: np.ndarray
    sigma_sq: float


def spectral_efficiency(ds: ChannelDataset, noise: NoiseConfig) -> SeSampleSet:
    """Per-sample rate log2(1 + ||h||^2 / sigma^2) of y = h + n."""
    values = np.log2(1.0 + ds.squared_norms() / noise.sigma_sq)
    return SeSampleSet(values, noise.sigma_sq)


def _check_samples(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgument("Wasserstein distance needs non-empty sample sets")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidArgument("sample sets must be finite")
    return a, b


def wasserstein1_sorted(a, b) -> float:
    """Mean absolute difference of order statistics (equal sizes only)."""
    a, b = _check_samples(a, b)
    if a.size != b.size:
        raise InvalidArgument("sorted-difference form needs equal sample sizes")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def wasserstein1_cdf_area(a, b) -> float:
    """Exact area between the two empirical CDFs over the merged breakpoints."""
    a, b = _check_samples(a, b)
    a = np.sort(a)
    b = np.sort(b)
    grid = np.sort(np.concatenate([a, b]))
    widths = np.diff(grid)
    fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def wasserstein1(a, b) -> float:
    a, b = _check_samples(a, b)
    if a.size == b.size:
        return wasserstein1_sorted(a, b)
    return wasserstein1_cdf_area(a, b)


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Step-function CDF evaluated at every sample (ties collapse to their last step)."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    f = np.arange(1, x.size + 1) / x.size
    last = np.r_[x[1:] != x[:-1], True]
    return x[last], f[last]


# ---------------------------------------------------------------------------
# codebook fingerprinting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray  # (C, N), unit-norm rows
    c1: int | None = None
    c2: int | None = None
    geometry: UraGeometry | None = None

    def __post_init__(self):
        cw = np.atleast_2d(np.asarray(self.codewords, dtype=np.complex128))
        norms = np.linalg.norm(cw, axis=1)
        if np.any(norms == 0):
            raise ConfigError("codewords must be nonzero")
        cw = cw / norms[:, None]
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def bits(self) -> float:
        return math.log2(self.size)

    @property
    def codebook_id(self) -> str:
        return hashlib.sha256(self.codewords.astype("<c16").tobytes()).hexdigest()[:16]

    def to_dict(self) -> dict:
        geo = self.geometry
        return {
            "codebook_id": self.codebook_id,
            "size": self.size,
            "bits": self.bits,
            "c1": self.c1,
            "c2": self.c2,
            "n_vertical": geo.n_vertical if geo else None,
            "n_horizontal": geo.n_horizontal if geo else None,
        }


def dft_columns(n: int, c: int) -> np.ndarray:
    """First ``c`` columns of the n-point DFT grid, F[k, j] = exp(-j 2 pi k j / n)."""
    k = np.arange(n)[:, None]
    j = np.arange(c)[None, :]
    return np.exp(-2j * np.pi * k * j / n)


def build_codebook(geometry: UraGeometry, c1: int = 4, c2: int = 16) -> Codebook:
    """Kronecker DFT codebook; codeword j is column j of F_v (x) F_h, scaled to unit norm."""
    if c1 < 1 or c2 < 1:
        raise ConfigError("codebook sizes must be >= 1")
    full = np.kron(dft_columns(geometry.n_vertical, c1), dft_columns(geometry.n_horizontal, c2))
    return Codebook(full.T, c1=c1, c2=c2, geometry=geometry)


def feedback_indices(cb: Codebook, x: np.ndarray) -> np.ndarray:
    """1-based argmax_n |c_n^H h| for each row; the lowest index wins ties."""
    x = np.atleast_2d(x)
    if x.shape[1] != cb.codewords.shape[1]:
        raise InvalidArgument(f"dimension mismatch: {x.shape[1]} vs {cb.codewords.shape[1]}")
    corr = np.abs(x @ cb.codewords.conj().T)
    best = np.argmax(corr, axis=1)
    zero = np.flatnonzero(corr[np.arange(x.shape[0]), best] == 0.0)
    if zero.size:
        raise DegenerateInput(f"{zero.size} sample(s) have zero correlation with every codeword", zero)
    return best + 1


def feedback_index(cb: Codebook, h: np.ndarray) -> int:
    return int(feedback_indices(cb, np.asarray(h)[None, :])[0])


@dataclass(frozen=True)
class Fingerprint:
    histogram: np.ndarray
    n_samples: int
    codebook_id: str


def fingerprint(cb: Codebook, ds: ChannelDataset) -> Fingerprint:
    if ds.n_samples < 1:
        raise InsufficientData("fingerprint needs at least one sample")
    idx = np.concatenate(pmap(lambda blk: feedback_indices(cb, ds.samples[blk[1]:blk[2]]),
                              iter_blocks(ds.n_samples)))
    hist = np.bincount(idx - 1, minlength=cb.size) / ds.n_samples
    return Fingerprint(hist, ds.n_samples, cb.codebook_id)


def tvd(p: Fingerprint, q: Fingerprint) -> float:
    """Total variation distance 0.5 * sum |P(n) - Q(n)|."""
    if p.codebook_id != q.codebook_id or p.histogram.shape != q.histogram.shape:
        raise IncompatibleFingerprints("fingerprints were built from different codebooks")
    return float(0.5 * np.sum(np.abs(p.histogram - q.histogram)))


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def median_bandwidth(p: np.ndarray, q: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the pooled set.

    Each set contributes at most half of the 2000-point budget, picked at evenly
    spaced indices, so the result is symmetric in ``p`` and ``q``.
    """
    half = BANDWIDTH_SUBSAMPLE // 2
    parts = []
    for x in (p, q):
        if x.shape[0] > half:
            x = x[np.linspace(0, x.shape[0] - 1, half).round().astype(int)]
        parts.append(x)
    gamma = float(np.median(pdist(np.concatenate(parts, axis=0))))
    if gamma <= 0:
        raise DegenerateInput("median pairwise distance is zero; pass an explicit bandwidth")
    return gamma


def _as_real_rows(x) -> np.ndarray:
    if isinstance(x, ChannelDataset):
        return stack_real(x.samples)
    x = np.asarray(x)
    return stack_real(x) if np.iscomplexobj(x) else x.astype(float)


def mmd_unbiased(p_samples, q_samples, bandwidth: float | str = "auto") -> float:
    """Unbiased MMD^2 U-statistic with a Gaussian kernel exp(-||x - y||^2 / (2 gamma^2)).

    All four kernel terms exclude i == j. Since g_ij + g_ji = 2 g_ij after summing
    over both orders, only the upper triangle is evaluated. Rows are processed in
    fixed blocks and the partial sums are reduced in block order, so the value does
    not depend on the worker count.
    """
    p = _as_real_rows(p_samples)
    q = _as_real_rows(q_samples)
    if p.shape[0] != q.shape[0]:
        raise InvalidArgument(f"MMD needs equal sample counts, got {p.shape[0]} and {q.shape[0]}")
    n = p.shape[0]
    if n < 2:
        raise InsufficientData("MMD needs at least 2 samples per set")
    gamma = median_bandwidth(p, q) if bandwidth == "auto" else float(bandwidth)
    if not gamma > 0:
        raise InvalidArgument("bandwidth must be positive")
    scale = -1.0 / (2.0 * gamma * gamma)
    p_sq = np.einsum("ij,ij->i", p, p)
    q_sq = np.einsum("ij,ij->i", q, q)

    def kernel(a, b, a_sq, b_sq):
        # the copy keeps numpy off its a @ a.T shortcut, whose rounding differs from gemm
        d = a.copy() @ b.T
        d *= -2.0
        d += a_sq[:, None]
        d += b_sq[None, :]
        np.maximum(d, 0.0, out=d)
        d *= scale
        return np.exp(d, out=d)

    def block_sum(blk):
        # g is symmetric in (i, j) after summing, so only columns j > i are visited
        _, lo, hi = blk
        g = kernel(p[lo:hi], p[lo:], p_sq[lo:hi], p_sq[lo:])
        g += kernel(q[lo:hi], q[lo:], q_sq[lo:hi], q_sq[lo:])
        cross = kernel(p[lo:hi], q[lo:], p_sq[lo:hi], q_sq[lo:])
        cross += kernel(q[lo:hi], p[lo:], q_sq[lo:hi], p_sq[lo:])
        g -= cross
        g[np.tril_indices(hi - lo, m=g.shape[1])] = 0.0
        return 2.0 * float(np.sum(g))

    partial = pmap(block_sum, iter_blocks(n, MMD_BLOCK))
    return math.fsum(partial) / (n * (n - 1))
