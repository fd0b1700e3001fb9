"""Sample-covariance Gaussian (scov) and complex Gaussian mixture models: EM fitting,
responsibilities and ancestral sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ..core import (
    ChannelDataset,
    RngStream,
    as_stream,
    cholesky_with_loading,
    iter_blocks,
    pmap,
    sample_complex_standard_normal,
    stack_real,
)
from ..errors import InsufficientData, InvalidArgument, NotPositiveSemidefinite, NumericFailure

log = logging.getLogger(__name__)

COLLAPSE_WEIGHT = 1e-6
MAX_RESEEDS = 3
INIT_SUBSET = 10_000
# responsibilities at or below this are dropped from the M-step sums
RESP_FLOOR = 1e-12


@dataclass(frozen=True)
class ScovModel:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.mean.shape[0]

    def to_gmm(self) -> "GmmModel":
        return GmmModel(np.ones(1), self.mean[None, :], self.covariance[None, :, :])


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    fit_log: tuple = ()
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=np.complex128)
        cov = np.asarray(self.covariances, dtype=np.complex128)
        k = w.shape[0]
        if k < 1 or mu.shape[0] != k or cov.shape[0] != k or cov.shape[1:] != (mu.shape[1], mu.shape[1]):
            raise InvalidArgument(f"inconsistent GMM shapes: {w.shape}, {mu.shape}, {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgument("mixing weights must lie on the probability simplex")
        for arr in (w, mu, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "fit_log", tuple(float(v) for v in self.fit_log))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.means.shape[1]

    @cached_property
    def cholesky_factors(self) -> np.ndarray:
        return np.stack([
            cholesky_with_loading(c, name=f"component {k} covariance")[0]
            for k, c in enumerate(self.covariances)
        ])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_scov(self) -> ScovModel:
        if self.n_components != 1:
            raise InvalidArgument("only a single-component GMM converts to scov")
        return ScovModel(self.means[0], self.covariances[0])

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Per-sample log p(x) for rows of ``x``."""
        return logsumexp(_joint_log_prob(self, np.atleast_2d(x)), axis=1)


def _component_log_pdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """log N_C(x; mean, L L^H) for each row of ``x``."""
    n = mean.shape[0]
    diag = np.diag(chol).real
    if np.any(diag <= 0):
        raise NotPositiveSemidefinite("singular component covariance")
    linv = solve_triangular(chol, np.eye(n), lower=True)
    w = x @ linv.T
    w -= linv @ mean
    wf = w.view(np.float64)
    quad = np.einsum("ij,ij->i", wf, wf)
    logdet = 2.0 * np.sum(np.log(np.diag(chol).real))
    return -n * math.log(math.pi) - logdet - quad


def _joint_log_prob(model: GmmModel, x: np.ndarray, chols=None) -> np.ndarray:
    chols = model.cholesky_factors if chols is None else chols
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    cols = pmap(lambda k: _component_log_pdf(x, model.means[k], chols[k]) + logw[k], range(model.n_components))
    return np.stack(cols, axis=1)


def fit_scov(ds: ChannelDataset) -> ScovModel:
    """Sample mean and (biased, 1/M) sample covariance."""
    if ds.n_samples < 2:
        raise InsufficientData("scov needs at least 2 samples")
    x = ds.samples
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d.conj() / ds.n_samples
    return ScovModel(mu, 0.5 * (cov + cov.conj().T))


def gmm_responsibility(model: GmmModel, h: np.ndarray) -> np.ndarray:
    """Posterior p(k | h); ``h`` may be a single vector or a batch of rows."""
    h = np.asarray(h)
    single = h.ndim == 1
    x = np.atleast_2d(h)
    if x.shape[1] != model.n_antennas:
        raise InvalidArgument(f"dimension mismatch: {x.shape[1]} vs {model.n_antennas}")
    lp = _joint_log_prob(model, x)
    norm = logsumexp(lp, axis=1, keepdims=True)
    bad = np.flatnonzero(~np.isfinite(norm[:, 0]))
    if bad.size:
        raise NumericFailure(f"all component densities underflow for sample index {bad[0]}")
    resp = np.exp(lp - norm)
    return resp[0] if single else resp


def _kmeanspp_means(x: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    from sklearn.cluster import kmeans_plusplus

    gen = rng.generator()
    m = x.shape[0]
    idx = np.sort(gen.choice(m, size=min(m, INIT_SUBSET), replace=False))
    sub = stack_real(x[idx])
    centers, _ = kmeans_plusplus(sub, k, random_state=int(gen.integers(2**31 - 1)))
    n = x.shape[1]
    return centers[:, :n] + 1j * centers[:, n:]


def _m_step_component(x, r_k, nk):
    rows = np.flatnonzero(r_k > RESP_FLOOR)
    if rows.size == 0:
        return None
    if rows.size < x.shape[0] // 2:
        x, r_k = x[rows], r_k[rows]
    mu = (r_k @ x) / nk
    d = x - mu
    cov = (d * r_k[:, None]).T @ d.conj() / nk
    return mu, 0.5 * (cov + cov.conj().T)


def fit_gmm(
    ds: ChannelDataset,
    k: int,
    tol: float = 1e-5,
    max_iter: int = 100,
    rng: RngStream | int | None = None,
) -> GmmModel:
    """Fit a K-component complex circular Gaussian mixture by EM.

    Means start from k-means++ seeds on a subset, covariances from the scov
    estimate, weights uniform. Iteration stops once the relative change of the
    mean log-likelihood drops below ``tol`` or after ``max_iter`` E-steps.
    Components whose weight collapses (or whose covariance cannot be factored)
    are re-seeded at the worst-explained sample; a re-seed is only kept if it
    does not lower the likelihood, and a component is frozen after
    ``MAX_RESEEDS`` attempts.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    m = ds.n_samples
    if m < 2 * k or m < 2:
        raise InsufficientData(f"need at least {2 * k} samples for k={k}, got {m}")
    rng = as_stream(rng)
    x = ds.samples
    scov = fit_scov(ds)

    if k == 1:
        means = scov.mean[None, :].copy()
    else:
        means = _kmeanspp_means(x, k, rng.substream("init"))
    covs = np.repeat(scov.covariance[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)
    reseeds = np.zeros(k, dtype=int)
    frozen = np.zeros(k, dtype=bool)

    def e_step(w, mu, cv):
        model = GmmModel(w, mu, cv)
        try:
            lp = _joint_log_prob(model, x)
        except NotPositiveSemidefinite:
            return None, None, None
        ll_i = logsumexp(lp, axis=1)
        return float(np.mean(ll_i)), lp, ll_i

    fit_log: list[float] = []
    ll, lp, ll_i = e_step(weights, means, covs)
    for it in range(max_iter):
        if ll is None or not math.isfinite(ll):
            raise NumericFailure(f"non-finite log-likelihood at EM iteration {it}")
        fit_log.append(ll)
        if it > 0 and abs(fit_log[-1] - fit_log[-2]) <= tol * abs(fit_log[-2]):
            break
        if it == max_iter - 1:
            break

        resp = np.exp(lp - ll_i[:, None])
        nk = resp.sum(axis=0)
        new_w = nk / m
        new_w /= new_w.sum()
        new_mu = means.copy()
        new_cov = covs.copy()

        def m_comp(j):
            if nk[j] <= 0 or frozen[j]:
                return None
            return _m_step_component(x, resp[:, j], nk[j])

        updates = pmap(m_comp, range(k))
        collapsed = []
        loaded = []
        for j, upd in enumerate(updates):
            if upd is None:
                if not frozen[j]:
                    collapsed.append(j)
                continue
            mu_j, cov_j = upd
            try:
                chol_j, load_j = cholesky_with_loading(cov_j, name=f"component {j}")
                if np.any(np.diag(chol_j).real <= 0):
                    raise NotPositiveSemidefinite(f"component {j}")
            except NotPositiveSemidefinite:
                collapsed.append(j)
                continue
            if load_j > 0:
                # store what the likelihood actually sees
                cov_j = cov_j + load_j * np.eye(cov_j.shape[0])
                loaded.append(j)
            new_mu[j], new_cov[j] = mu_j, cov_j
            if new_w[j] < COLLAPSE_WEIGHT and not frozen[j]:
                collapsed.append(j)

        # candidate without re-seeding: a generalized M-step, so never below ll
        base = e_step(new_w, new_mu, new_cov)
        if loaded and (base[0] is None or base[0] < ll):
            # a loaded covariance is no longer the M-step optimum; keep the old
            # parameters of those components so the step stays a generalized one
            new_mu, new_cov = new_mu.copy(), new_cov.copy()
            new_mu[loaded], new_cov[loaded] = means[loaded], covs[loaded]
            base = e_step(new_w, new_mu, new_cov)
        cand = base
        if collapsed:
            worst = np.argsort(ll_i)
            tw, tmu, tcov = new_w.copy(), new_mu.copy(), new_cov.copy()
            for rank, j in enumerate(collapsed):
                reseeds[j] += 1
                tmu[j] = x[worst[rank]]
                tcov[j] = scov.covariance
                tw[j] = max(new_w[j], 1.0 / m)
                if reseeds[j] >= MAX_RESEEDS:
                    frozen[j] = True
            tw /= tw.sum()
            trial = e_step(tw, tmu, tcov)
            if trial[0] is not None and base[0] is not None and trial[0] >= base[0]:
                cand = trial
                new_w, new_mu, new_cov = tw, tmu, tcov
                log.debug("EM iter %d: re-seeded components %s", it, collapsed)
        weights, means, covs = new_w, new_mu, new_cov
        ll, lp, ll_i = cand

    return GmmModel(weights, means, covs, fit_log=fit_log, info={
        "reseeds": reseeds.tolist(),
        "frozen": np.flatnonzero(frozen).tolist(),
        "iterations": len(fit_log),
        "tol": tol,
        "max_iter": max_iter,
    })


def sample_gmm(model: GmmModel, m: int, rng: RngStream | int | None = None) -> ChannelDataset:
    """Ancestral sampling: draw a component from the mixing weights, then mu_k + L_k eps."""
    if m < 1:
        raise InvalidArgument("sample count must be >= 1")
    rng = as_stream(rng)
    chols = model.cholesky_factors
    n = model.n_antennas

    def work(block):
        b, start, stop = block
        gen = rng.generator(b)
        size = stop - start
        comp = gen.choice(model.n_components, size=size, p=model.weights)
        eps = sample_complex_standard_normal(gen, n, size)
        out = np.empty((size, n), dtype=np.complex128)
        for j in np.unique(comp):
            sel = comp == j
            out[sel] = model.means[j] + eps[sel] @ chols[j].T
        return out

    samples = np.concatenate(pmap(work, iter_blocks(m)), axis=0)
    return ChannelDataset(samples, meta={"generator": "gmm", "components": model.n_components,
                                         "seed": rng.seed, "stream_id": rng.stream_id})


def sample_gmm_components(model: GmmModel, m: int, rng: RngStream | int | None = None) -> np.ndarray:
    """Component indices that :func:`sample_gmm` draws for the same stream."""
    rng = as_stream(rng)
    out = []
    for b, start, stop in iter_blocks(m):
        gen = rng.generator(b)
        out.append(gen.choice(model.n_components, size=stop - start, p=model.weights))
    return np.concatenate(out)
