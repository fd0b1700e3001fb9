"""Ancestral diffusion sampling with an exact denoiser for a Gaussian-mixture target.

The reverse chain runs on real-stacked vectors [Re h; Im h]. Instead of a trained
network, the denoising mean uses the closed-form conditional expectation
E[h_0 | h_t] under the (real image of the) fitted complex GMM.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..core import ChannelDataset, RngStream, as_stream, iter_blocks, pmap, unstack_real
from ..errors import ConfigError, InvalidArgument, NumericFailure
from .gmm import GmmModel

REFERENCE_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
MAX_BETA = 0.999

@dataclass(frozen=True)
class DiffusionSchedule:
    """Arrays are indexed by ``t - 1`` for steps t = 1..T."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas_sq: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at step t, with the convention alpha_bar(0) = 1."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1]),
                "betas": self.betas.tolist()}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "DiffusionSchedule":
        d = json.loads(Path(path).read_text())
        return schedule_from_betas(np.asarray(d["betas"], dtype=float))


def schedule_from_betas(betas: np.ndarray) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 1 or betas.size == 0 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ConfigError("betas must be a non-empty vector in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigmas_sq = (1.0 - alphas) * (1.0 - prev) / (1.0 - alpha_bars)
    return DiffusionSchedule(betas, alphas, alpha_bars, sigmas_sq)


def make_schedule(t_steps: int, beta_start: float | None = None, beta_end: float | None = None) -> DiffusionSchedule:
    """Linear beta schedule; sigma_1^2 = 0 because alpha_bar_0 = 1.

    Omitted endpoints default to 1e-4 and 0.02 at T = 1000 and are scaled by
    1000 / T otherwise, so a shorter chain still ends near pure noise.
    """
    if t_steps < 1:
        raise ConfigError("t_steps must be >= 1")
    if t_steps >= 1:
        scale = REFERENCE_STEPS / t_steps
        if beta_start is None:
            beta_start = min(DEFAULT_BETA_START * scale, MAX_BETA)
        if beta_end is None:
            beta_end = min(DEFAULT_BETA_END * scale, MAX_BETA)
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return schedule_from_betas(np.linspace(beta_start, beta_end, t_steps))


@dataclass(frozen=True)
class RealGmm:
    """Real 2N-dimensional image of a complex circular GMM.

    Covariance blocks are 0.5 * [[Re C, -Im C], [Im C, Re C]]; an
    eigendecomposition of every block is kept for the denoiser.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def from_complex(cls, gmm: GmmModel) -> "RealGmm":
        means = np.concatenate([gmm.means.real, gmm.means.imag], axis=1)
        re, im = gmm.covariances.real, gmm.covariances.imag
        top = np.concatenate([re, -im], axis=2)
        bottom = np.concatenate([im, re], axis=2)
        covs = 0.5 * np.concatenate([top, bottom], axis=1)
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        lam, vec = np.linalg.eigh(covs)
        return cls(gmm.weights.copy(), means, covs, np.clip(lam, 0.0, None), vec)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def complex_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Complex means and covariances rebuilt from the real blocks."""
        n = self.dim // 2
        mu = self.means[:, :n] + 1j * self.means[:, n:]
        cov = 2.0 * (self.covariances[:, :n, :n] + 1j * self.covariances[:, n:, :n])
        return mu, cov


def analytic_posterior_mean(rgmm: RealGmm, h_t: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """E[h_0 | h_t] for a GMM target under the forward process q(h_t | h_0).

    The noisy marginal is sum_k pi_k N(sqrt(ab) m_k, ab S_k + (1 - ab) I) and each
    component contributes m_k + sqrt(ab) S_k (ab S_k + (1 - ab) I)^{-1} (h_t - sqrt(ab) m_k),
    weighted by its posterior probability given h_t.
    """
    if not 1 <= t <= sched.n_steps:
        raise InvalidArgument(f"t must lie in [1, {sched.n_steps}], got {t}")
    h = np.atleast_2d(np.asarray(h_t, dtype=float))
    ab = sched.alpha_bar(t)
    sab = math.sqrt(ab)
    k_count = rgmm.n_components
    logw = np.empty((h.shape[0], k_count))
    shrunk = []
    with np.errstate(divide="ignore"):
        logpi = np.log(rgmm.weights)
    for k in range(k_count):
        lam = rgmm.eigvals[k]
        u = rgmm.eigvecs[k]
        denom = ab * lam + (1.0 - ab)
        z = (h - sab * rgmm.means[k]) @ u
        logw[:, k] = logpi[k] - 0.5 * np.sum(np.log(denom)) - 0.5 * np.einsum("ij,ij->i", z, z / denom)
        shrunk.append((z * (lam / denom)) @ u.T)
    norm = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericFailure(f"posterior component weights underflow at step {t}")
    w = np.exp(logw - norm)
    out = w @ rgmm.means
    for k in range(k_count):
        out += sab * w[:, k:k + 1] * shrunk[k]
    return out.reshape(np.shape(h_t)) if np.ndim(h_t) == 1 else out


def reverse_step_mean(h: np.ndarray, h0_hat: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """Mean of q(h_{t-1} | h_t, h_0) with h_0 replaced by its estimate."""
    a = float(sched.alphas[t - 1])
    ab = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    return (math.sqrt(a) * (1.0 - ab_prev) * h + math.sqrt(ab_prev) * (1.0 - a) * h0_hat) / (1.0 - ab)


def sample_diffusion(
    rgmm: RealGmm,
    sched: DiffusionSchedule,
    m: int,
    rng: RngStream | int | None = None,
) -> ChannelDataset:
    """Run the reverse chain from N(0, I) for t = T..1 and map the result to complex vectors."""
    if m < 1:
        raise InvalidArgument("sample count must be >= 1")
    rng = as_stream(rng)
    d = rgmm.dim

    def work(block):
        b, start, stop = block
        gen = rng.generator(b)
        size = stop - start
        h = gen.standard_normal((size, d))
        for t in range(sched.n_steps, 0, -1):
            eps = gen.standard_normal((size, d))
            try:
                h0 = analytic_posterior_mean(rgmm, h, t, sched)
            except NumericFailure as exc:
                raise NumericFailure(f"diffusion step {t}: {exc}") from exc
            h = reverse_step_mean(h, h0, t, sched) + math.sqrt(sched.sigmas_sq[t - 1]) * eps
        return unstack_real(h)

    samples = np.concatenate(pmap(work, iter_blocks(m, size=1024)), axis=0)
    return ChannelDataset(samples, meta={"generator": "diffusion", "t_steps": sched.n_steps,
                                         "components": rgmm.n_components,
                                         "seed": rng.seed, "stream_id": rng.stream_id})
