import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanprobe.core import RngStream, UraGeometry
from chanprobe.errors import ConfigError, InvalidArgument
from chanprobe.genmod import GmmModel, ScovModel, sample_gmm
from chanprobe.genmod.diffusion import (
    DiffusionSchedule,
    RealGmm,
    analytic_posterior_mean,
    make_schedule,
    reverse_step_mean,
    sample_diffusion,
)
from chanprobe.metrics import build_codebook, fingerprint, mmd_unbiased, tvd

from conftest import random_covariance


def two_component(n=4):
    means = np.zeros((2, n), dtype=complex)
    means[0, 0], means[1, 1] = 2.0, -2.0j
    covs = np.stack([random_covariance(n, 1) * 0.3, random_covariance(n, 2) * 0.3])
    return GmmModel([0.35, 0.65], means, covs)


class TestSchedule:
    def test_single_step(self):
        s = make_schedule(1, 0.01, 0.01)
        assert s.alpha_bars[0] == pytest.approx(0.99, rel=1e-15)
        assert s.sigmas_sq[0] == 0.0

    def test_terminal_is_noise(self):
        assert make_schedule(1000).alpha_bars[-1] < 1e-4

    @pytest.mark.parametrize("t", [50, 100, 300, 1000])
    def test_default_endpoints_scale_with_steps(self, t):
        s = make_schedule(t)
        assert s.betas[0] == pytest.approx(1e-4 * 1000 / t, rel=1e-12)
        assert s.betas[-1] == pytest.approx(0.02 * 1000 / t, rel=1e-12)
        assert s.alpha_bars[-1] < 1e-4

    def test_explicit_endpoints_not_scaled(self):
        s = make_schedule(300, 1e-4, 0.02)
        assert s.betas[0] == 1e-4 and s.betas[-1] == 0.02

    @given(t=st.integers(1, 1200), b0=st.floats(1e-5, 1e-2), span=st.floats(0, 0.5))
    @settings(max_examples=50)
    def test_invariants(self, t, b0, span):
        s = make_schedule(t, b0, min(b0 + span, 0.9))
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.sigmas_sq[0] == 0.0
        assert np.all(s.sigmas_sq >= 0)
        assert np.all(s.sigmas_sq <= 1 - s.alphas + 1e-15)
        prev = np.concatenate([[1.0], s.alpha_bars[:-1]])
        assert np.allclose(s.sigmas_sq, (1 - s.alphas) * (1 - prev) / (1 - s.alpha_bars), rtol=1e-12)

    def test_linear_betas(self):
        s = make_schedule(5, 0.1, 0.5)
        assert np.allclose(s.betas, [0.1, 0.2, 0.3, 0.4, 0.5])

    @pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 0.01, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            make_schedule(*args)

    def test_json_round_trip(self, tmp_path):
        s = make_schedule(20)
        s.to_json(tmp_path / "s.json")
        back = DiffusionSchedule.from_json(tmp_path / "s.json")
        assert np.array_equal(back.alpha_bars, s.alpha_bars)


class TestRealGmm:
    def test_round_trip(self):
        g = two_component(6)
        mu, cov = RealGmm.from_complex(g).complex_moments()
        assert np.max(np.abs(mu - g.means)) <= 1e-12
        assert np.max(np.abs(cov - g.covariances)) <= 1e-12

    def test_block_structure(self):
        c = np.array([[2.0, 1 + 1j], [1 - 1j, 3.0]])
        r = RealGmm.from_complex(ScovModel(np.zeros(2), c).to_gmm()).covariances[0]
        expected = 0.5 * np.block([[c.real, -c.imag], [c.imag, c.real]])
        assert np.allclose(r, expected, atol=1e-15)
        assert np.allclose(r, r.T)


class TestPosteriorMean:
    def test_identity_covariance_closed_form(self):
        n = 3
        mu = np.array([1 + 2j, -0.5, 1j])
        # complex covariance 2I has real image I
        rg = RealGmm.from_complex(ScovModel(mu, 2 * np.eye(n)).to_gmm())
        m1 = rg.means[0]
        sched = make_schedule(100)
        h = np.random.default_rng(0).standard_normal((5, 2 * n))
        for t in (1, 10, 50, 100):
            ab = sched.alpha_bar(t)
            expected = math.sqrt(ab) * h + (1 - ab) * m1
            assert np.allclose(analytic_posterior_mean(rg, h, t, sched), expected, atol=1e-12)

    def test_small_noise_returns_input(self):
        rg = RealGmm.from_complex(two_component())
        h = np.random.default_rng(1).standard_normal((10, 8))
        err = {}
        for b1 in (1e-6, 1e-8):
            out = analytic_posterior_mean(rg, h, 1, make_schedule(100, b1, 0.02))
            err[b1] = np.max(np.abs(out - h))
        assert err[1e-6] < 1e-3
        # the deviation is first order in beta_1
        assert err[1e-8] / err[1e-6] == pytest.approx(1e-2, rel=0.05)

    def test_total_noise_returns_prior_mean(self):
        g = two_component()
        rg = RealGmm.from_complex(g)
        sched = make_schedule(3000, 1e-3, 0.05)
        assert sched.alpha_bars[-1] < 1e-30
        h = np.random.default_rng(2).standard_normal((10, 8)) * 3
        out = analytic_posterior_mean(rg, h, sched.n_steps, sched)
        assert np.allclose(out, rg.weights @ rg.means, atol=1e-10)

    def test_single_vector_shape(self):
        rg = RealGmm.from_complex(two_component())
        sched = make_schedule(10)
        assert analytic_posterior_mean(rg, np.zeros(8), 5, sched).shape == (8,)

    @pytest.mark.parametrize("t", [0, 11])
    def test_out_of_range(self, t):
        rg = RealGmm.from_complex(two_component())
        with pytest.raises(InvalidArgument):
            analytic_posterior_mean(rg, np.zeros(8), t, make_schedule(10))

    def test_matches_brute_force_conditioning(self):
        # direct Gaussian conditioning with explicit matrix inverses
        g = two_component(2)
        rg = RealGmm.from_complex(g)
        sched = make_schedule(50)
        t = 20
        ab = sched.alpha_bar(t)
        h = np.array([0.3, -1.0, 0.7, 0.2])
        logs, means = [], []
        for k in range(2):
            s, m = rg.covariances[k], rg.means[k]
            cov_t = ab * s + (1 - ab) * np.eye(4)
            d = h - math.sqrt(ab) * m
            sign, logdet = np.linalg.slogdet(cov_t)
            logs.append(math.log(rg.weights[k]) - 0.5 * logdet - 0.5 * d @ np.linalg.solve(cov_t, d))
            means.append(m + math.sqrt(ab) * s @ np.linalg.solve(cov_t, d))
        w = np.exp(np.array(logs) - max(logs))
        w /= w.sum()
        expected = w @ np.array(means)
        assert np.allclose(analytic_posterior_mean(rg, h, t, sched), expected, atol=1e-12)


def test_reverse_mean_last_step_is_estimate():
    sched = make_schedule(10)
    h, h0 = np.ones(4), np.arange(4.0)
    # alpha_bar_0 = 1, so the t=1 mean is exactly the denoised estimate
    assert np.allclose(reverse_step_mean(h, h0, 1, sched), h0)


class TestSampleDiffusion:
    def test_single_gaussian_moments(self):
        n = 4
        mu = np.array([1.0 + 1j, -1.0, 0.5j, 2.0])
        cov = random_covariance(n, 5)
        rg = RealGmm.from_complex(ScovModel(mu, cov).to_gmm())
        x = sample_diffusion(rg, make_schedule(300), 10_000, rng=4).samples
        assert np.linalg.norm(x.mean(axis=0) - mu) / np.linalg.norm(mu) < 0.05
        d = x - x.mean(axis=0)
        emp = d.T @ d.conj() / x.shape[0]
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.10

    def test_two_component_fingerprint_matches_ancestral(self):
        g = two_component()
        cb = build_codebook(UraGeometry(1, 4), 1, 4)
        diff = sample_diffusion(RealGmm.from_complex(g), make_schedule(300), 10_000, rng=1)
        anc = sample_gmm(g, 10_000, rng=2)
        assert tvd(fingerprint(cb, diff), fingerprint(cb, anc)) < 0.05

    def test_reproducible(self):
        rg = RealGmm.from_complex(two_component())
        a = sample_diffusion(rg, make_schedule(20), 1500, rng=3)
        b = sample_diffusion(rg, make_schedule(20), 1500, rng=3)
        assert np.array_equal(a.samples, b.samples)

    def test_zero_count(self):
        with pytest.raises(InvalidArgument):
            sample_diffusion(RealGmm.from_complex(two_component()), make_schedule(5), 0)


@pytest.mark.slow
def test_more_steps_do_not_hurt():
    g = two_component()
    rg = RealGmm.from_complex(g)
    mmd = {}
    for t_steps in (100, 1000):
        vals = []
        for seed in range(3):
            diff = sample_diffusion(rg, make_schedule(t_steps), 5000, rng=RngStream(seed, 1))
            anc = sample_gmm(g, 5000, rng=RngStream(seed, 2))
            vals.append(mmd_unbiased(diff, anc))
        mmd[t_steps] = np.mean(vals)
    nulls = [mmd_unbiased(sample_gmm(g, 5000, rng=RngStream(s, 3)), sample_gmm(g, 5000, rng=RngStream(s, 4))) for s in range(3)]
    noise = 3 * np.std(nulls) + abs(np.mean(nulls))
    assert mmd[1000] <= mmd[100] + noise
