"""Downstream applications for the cross-check: channel estimation from y = h + n
(LMMSE and GMM-prior MMSE estimators) and linear channel compression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.special import logsumexp

from .core import (
    ChannelDataset,
    NoiseConfig,
    RngStream,
    as_stream,
    iter_blocks,
    pmap,
    sample_complex_standard_normal,
)
from .errors import InsufficientData, InvalidArgument, NumericFailure
from .genmod.gmm import GmmModel, ScovModel, fit_gmm, fit_scov


@dataclass(frozen=True)
class ObservationSet:
    truth: ChannelDataset
    observations: np.ndarray
    sigma_sq: float

    def __post_init__(self):
        if self.observations.shape != self.truth.samples.shape:
            raise InvalidArgument("observations and ground truth differ in shape")
        if not self.sigma_sq > 0:
            raise InvalidArgument("sigma_sq must be positive")


def observe(ds: ChannelDataset, noise: NoiseConfig, rng: RngStream | int | None = None) -> ObservationSet:
    """y_i = h_i + sigma * eps_i with eps_i ~ N_C(0, I)."""
    rng = as_stream(rng)
    sigma = math.sqrt(noise.sigma_sq)

    def work(block):
        b, start, stop = block
        return sample_complex_standard_normal(rng.generator(b), ds.n_antennas, stop - start)

    eps = np.concatenate(pmap(work, iter_blocks(ds.n_samples)), axis=0)
    return ObservationSet(ds, ds.samples + sigma * eps, noise.sigma_sq)


class _GaussianPosterior:
    """Precomputed quantities of one Gaussian prior N_C(mu, C) observed in noise sigma^2."""

    def __init__(self, mean, cov, sigma_sq, label="prior"):
        n = mean.shape[0]
        a = cov + sigma_sq * np.eye(n)
        try:
            self.factor = cho_factor(a, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericFailure(f"{label}: C + sigma^2 I is not positive definite") from exc
        self.mean = mean
        # W = C A^{-1} = (A^{-1} C)^H because both are Hermitian
        self.gain = cho_solve(self.factor, cov).conj().T
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.factor[0]).real)))

    def estimate(self, y):
        return self.mean + (y - self.mean) @ self.gain.T

    def log_pdf(self, y):
        d = y - self.mean
        sol = cho_solve(self.factor, d.T)
        quad = np.einsum("ij,ji->i", d.conj(), sol).real
        n = self.mean.shape[0]
        return -n * math.log(math.pi) - self.logdet - quad


def estimate_lmmse(model: ScovModel, obs: ObservationSet) -> ChannelDataset:
    """mu_s + C_s (C_s + sigma^2 I)^{-1} (y - mu_s)."""
    _check_dim(model.n_antennas, obs)
    post = _GaussianPosterior(model.mean, model.covariance, obs.sigma_sq, "scov")
    return ChannelDataset(post.estimate(obs.observations), meta={"estimator": "lmmse"})


@dataclass
class _GmmCache:
    posteriors: dict = field(default_factory=dict)


def _gmm_posteriors(model: GmmModel, sigma_sq: float, cache: _GmmCache | None):
    if cache is not None and sigma_sq in cache.posteriors:
        return cache.posteriors[sigma_sq]
    posts = [_GaussianPosterior(model.means[k], model.covariances[k], sigma_sq, f"component {k}")
             for k in range(model.n_components)]
    if cache is not None:
        cache.posteriors[sigma_sq] = posts
    return posts


def estimate_gmm(model: GmmModel, obs: ObservationSet, _cache: _GmmCache | None = None) -> ChannelDataset:
    """sum_k p(k | y) [mu_k + C_k (C_k + sigma^2 I)^{-1} (y - mu_k)] with p(k | y) under
    the noisy mixture sum_k pi_k N_C(y; mu_k, C_k + sigma^2 I)."""
    _check_dim(model.n_antennas, obs)
    posts = _gmm_posteriors(model, obs.sigma_sq, _cache)
    y = obs.observations
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)

    def work(block):
        _, lo, hi = block
        yb = y[lo:hi]
        lp = np.stack([logw[k] + p.log_pdf(yb) for k, p in enumerate(posts)], axis=1)
        norm = logsumexp(lp, axis=1, keepdims=True)
        bad = np.flatnonzero(~np.isfinite(norm[:, 0]))
        if bad.size:
            raise NumericFailure(f"all component likelihoods underflow for sample {lo + bad[0]}")
        resp = np.exp(lp - norm)
        out = np.zeros_like(yb)
        for k, p in enumerate(posts):
            out += resp[:, k:k + 1] * p.estimate(yb)
        return out

    est = np.concatenate(pmap(work, iter_blocks(y.shape[0])), axis=0)
    return ChannelDataset(est, meta={"estimator": "gmm", "components": model.n_components})


def _check_dim(n, obs):
    if obs.observations.shape[1] != n:
        raise InvalidArgument(f"dimension mismatch: model N={n}, observations N={obs.observations.shape[1]}")


def nmse(truth: ChannelDataset, estimates: ChannelDataset) -> float:
    """sum_i ||h_i - h_hat_i||^2 / (N * M)."""
    h = truth.samples if isinstance(truth, ChannelDataset) else np.asarray(truth)
    e = estimates.samples if isinstance(estimates, ChannelDataset) else np.asarray(estimates)
    if h.shape != e.shape:
        raise InvalidArgument(f"size mismatch: {h.shape} vs {e.shape}")
    d = h - e
    return float(np.sum(d.real**2 + d.imag**2) / d.size)


@dataclass
class EstimatorModel:
    """A fitted channel estimator: ``kind`` is ``"lmmse"`` (scov prior) or ``"gmm"``."""

    kind: str
    prior: ScovModel | GmmModel
    _cache: _GmmCache = field(default_factory=_GmmCache, repr=False)

    @classmethod
    def fit(cls, kind: str, ds: ChannelDataset, components: int = 32, tol: float = 1e-4,
            max_iter: int = 30, rng=None) -> "EstimatorModel":
        if kind == "lmmse":
            return cls("lmmse", fit_scov(ds))
        if kind == "gmm":
            return cls("gmm", fit_gmm(ds, components, tol=tol, max_iter=max_iter, rng=rng))
        raise InvalidArgument(f"unknown estimator kind {kind!r}")

    def estimate(self, obs: ObservationSet) -> ChannelDataset:
        if self.kind == "lmmse":
            return estimate_lmmse(self.prior, obs)
        return estimate_gmm(self.prior, obs, self._cache)


# ---------------------------------------------------------------------------
# compression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearCompressor:
    basis: np.ndarray  # (N, r), orthonormal columns
    mean: np.ndarray
    rho: float

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    def compress(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.basis.conj()

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return self.mean + z @ self.basis.T


def latent_dim(n: int, rho: float) -> int:
    return max(1, int(math.floor(n / rho)))


def fit_compressor(ds: ChannelDataset, rho: float) -> LinearCompressor:
    """PCA truncation to the top floor(N / rho) eigenvectors of the sample covariance.

    Columns are ordered by descending eigenvalue and phase-normalized so that the
    first entry with non-negligible magnitude is real and positive.
    """
    if rho < 1:
        raise InvalidArgument("compression factor must be >= 1")
    n = ds.n_antennas
    if ds.n_samples < n:
        raise InsufficientData(f"need at least N={n} samples for a stable eigenbasis")
    scov = fit_scov(ds)
    try:
        lam, vec = eigh(scov.covariance)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("eigendecomposition of the sample covariance failed") from exc
    r = latent_dim(n, rho)
    basis = vec[:, ::-1][:, :r].copy()
    for j in range(r):
        col = basis[:, j]
        pivot = np.flatnonzero(np.abs(col) > 1e-8 * np.max(np.abs(col)))[0]
        basis[:, j] = col * (abs(col[pivot]) / col[pivot])
    return LinearCompressor(basis, scov.mean, float(rho))


def compress_reconstruct(lc: LinearCompressor, ds: ChannelDataset) -> ChannelDataset:
    return ChannelDataset(lc.reconstruct(lc.compress(ds.samples)),
                          meta={"compressor": "pca", "rho": lc.rho, "latent_dim": lc.latent_dim})
