import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanprobe.core import ChannelDataset, RngStream
from chanprobe.errors import (
    BadMagic,
    InsufficientData,
    InvalidArgument,
    NotPositiveSemidefinite,
    NumericFailure,
    TruncatedBody,
)
from chanprobe.genmod import GmmModel, ScovModel, fit_gmm, fit_scov, gmm_responsibility, sample_gmm
from chanprobe.genmod.gmm import sample_gmm_components
from chanprobe.genmod.io import decode_model, encode_model, read_model, write_model

from conftest import complex_gaussian, random_covariance


def two_cluster(m=4000, sep=10.0, w=0.3, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.random(m) < w
    x = complex_gaussian(m, 2, seed=seed + 1)
    x[z] += np.array([sep, 0.0])
    return ChannelDataset(x), np.array([0.0, 0.0]), np.array([sep, 0.0])


class TestScov:
    def test_repeated_vector(self):
        v = np.array([1 + 2j, -3j])
        s = fit_scov(ChannelDataset(np.stack([v, v])))
        assert np.allclose(s.mean, v) and np.allclose(s.covariance, 0)

    def test_hand_case(self):
        s = fit_scov(ChannelDataset(np.array([[1.0, 0.0], [-1.0, 0.0]])))
        assert np.allclose(s.mean, 0)
        assert np.allclose(s.covariance, np.diag([1.0, 0.0]))

    def test_translation(self):
        x = complex_gaussian(100, 3, seed=2)
        c = np.array([1 - 1j, 2.0, 3j])
        a, b = fit_scov(ChannelDataset(x)), fit_scov(ChannelDataset(x + c))
        assert np.allclose(b.mean, a.mean + c)
        assert np.allclose(b.covariance, a.covariance, atol=1e-12)

    def test_biased_normalization_matches_numpy(self):
        x = complex_gaussian(50, 4, seed=9)
        s = fit_scov(ChannelDataset(x))
        assert np.allclose(s.covariance, np.cov(x, rowvar=False, bias=True), atol=1e-13)

    def test_too_few(self):
        with pytest.raises(InsufficientData):
            fit_scov(ChannelDataset(np.ones((1, 3))))


class TestResponsibility:
    def test_single_component(self):
        model = ScovModel(np.zeros(3), np.eye(3)).to_gmm()
        assert np.array_equal(gmm_responsibility(model, np.ones(3)), [1.0])

    def test_identical_components(self):
        model = GmmModel([0.5, 0.5], np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
        r = gmm_responsibility(model, complex_gaussian(20, 2, seed=1) * 5)
        assert np.allclose(r, 0.5, atol=1e-15)

    @pytest.mark.parametrize("d", [0.5, 1.0, 2.0, 3.0])
    def test_unit_covariance_closed_form(self, d):
        mu1 = np.array([0.3 + 0.1j, -0.2j])
        direction = np.array([1.0 + 1.0j, 0.5]) / np.linalg.norm([1.0 + 1.0j, 0.5])
        mu2 = mu1 + d * direction
        model = GmmModel([0.5, 0.5], np.stack([mu1, mu2]), np.stack([np.eye(2)] * 2))
        p = gmm_responsibility(model, mu1)
        assert p[0] == pytest.approx(1.0 / (1.0 + math.exp(-d * d)), rel=1e-12)

    @given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
    @settings(max_examples=30, deadline=None)
    def test_rows_on_simplex(self, seed, k):
        rng = np.random.default_rng(seed)
        w = rng.random(k) + 0.01
        w /= w.sum()
        model = GmmModel(w, complex_gaussian(k, 3, seed=seed) * 3,
                         np.stack([random_covariance(3, seed + j) for j in range(k)]))
        r = gmm_responsibility(model, complex_gaussian(50, 3, seed=seed + 1) * 4)
        assert np.all((r >= 0) & (r <= 1))
        assert np.max(np.abs(r.sum(axis=1) - 1)) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            gmm_responsibility(ScovModel(np.zeros(3), np.eye(3)).to_gmm(), np.ones(2))

    def test_underflow(self):
        model = GmmModel([1.0], np.zeros((1, 2)), np.eye(2)[None] * 1e-3)
        with pytest.raises(NumericFailure, match="index 1"):
            gmm_responsibility(model, np.array([[0, 0], [1e200, 0]]))


class TestGmmModel:
    def test_simplex_enforced(self):
        with pytest.raises(InvalidArgument):
            GmmModel([0.6, 0.6], np.zeros((2, 2)), np.stack([np.eye(2)] * 2))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            GmmModel([1.0], np.zeros((1, 2)), np.eye(3)[None])

    def test_indefinite_component_named(self):
        model = GmmModel([1.0], np.zeros((1, 2)), np.diag([1.0, -1.0])[None])
        with pytest.raises(NotPositiveSemidefinite, match="component 0"):
            sample_gmm(model, 10)


class TestFitGmm:
    def test_k1_equals_scov(self):
        ds = ChannelDataset(complex_gaussian(500, 5, seed=4) @ random_covariance(5, 1))
        g, s = fit_gmm(ds, 1, rng=0), fit_scov(ds)
        assert np.array_equal(g.weights, [1.0])
        assert np.max(np.abs(g.means[0] - s.mean)) <= 1e-10
        assert np.max(np.abs(g.covariances[0] - s.covariance)) <= 1e-10

    def test_recovers_separated_mixture(self):
        ds, mu0, mu1 = two_cluster()
        g = fit_gmm(ds, 2, rng=1)
        order = np.argsort(np.abs(g.means[:, 0]))
        assert np.allclose(g.weights[order], [0.7, 0.3], atol=0.05)
        assert np.linalg.norm(g.means[order[0]] - mu0) < 0.1
        assert np.linalg.norm(g.means[order[1]] - mu1) < 0.1

    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    def test_log_likelihood_monotone(self, k):
        ds = ChannelDataset(complex_gaussian(2000, 4, seed=k) + (np.arange(2000) % 3)[:, None] * 2)
        g = fit_gmm(ds, k, tol=1e-8, max_iter=40, rng=k)
        log = np.asarray(g.fit_log)
        assert np.all(np.diff(log) >= -1e-9 * np.abs(log[:-1]))
        assert g.info["iterations"] == len(log)

    def test_final_log_matches_density(self):
        ds, *_ = two_cluster(m=1000)
        g = fit_gmm(ds, 2, tol=0.0, max_iter=5, rng=0)
        # the last entry is the likelihood of the returned parameters
        assert np.mean(g.log_density(ds.samples)) == pytest.approx(g.fit_log[-1], rel=1e-12)

    def test_deterministic(self):
        ds, *_ = two_cluster(m=1000)
        a, b = fit_gmm(ds, 3, rng=5), fit_gmm(ds, 3, rng=5)
        assert np.array_equal(a.means, b.means) and a.fit_log == b.fit_log

    def test_needs_2k_samples(self):
        with pytest.raises(InsufficientData):
            fit_gmm(ChannelDataset(complex_gaussian(7, 2)), 4)

    def test_duplicate_points_do_not_crash(self):
        # many more components than distinct points: collapse handling must keep EM alive
        base = complex_gaussian(3, 2, seed=1)
        ds = ChannelDataset(np.repeat(base, 30, axis=0) + 1e-3 * complex_gaussian(90, 2, seed=2))
        g = fit_gmm(ds, 8, max_iter=30, rng=0)
        log = np.asarray(g.fit_log)
        assert np.all(np.isfinite(log))
        assert np.all(np.diff(log) >= -1e-9 * np.abs(log[:-1]))


class TestSampleGmm:
    def test_standard_moments(self):
        model = ScovModel(np.zeros(4), np.eye(4)).to_gmm()
        x = sample_gmm(model, 100_000, rng=3).samples
        assert np.max(np.abs(x.mean(axis=0))) < 0.02
        emp = x.T @ x.conj() / x.shape[0]
        assert np.linalg.norm(emp - np.eye(4)) / 2 < 0.05

    def test_component_frequencies(self):
        w = np.array([0.1, 0.2, 0.3, 0.4])
        model = GmmModel(w, np.zeros((4, 2)), np.stack([np.eye(2)] * 4))
        comp = sample_gmm_components(model, 100_000, rng=8)
        freq = np.bincount(comp, minlength=4) / comp.size
        assert np.max(np.abs(freq - w)) < 0.01

    def test_components_match_samples(self):
        means = np.array([[100.0, 0.0], [-100.0, 0.0]])
        model = GmmModel([0.5, 0.5], means, np.stack([np.eye(2)] * 2))
        x = sample_gmm(model, 5000, rng=2).samples
        comp = sample_gmm_components(model, 5000, rng=2)
        assert np.array_equal(x[:, 0].real < 0, comp == 1)

    def test_zero_covariance(self):
        mu = np.array([1 + 1j, 2.0, -1j])
        x = sample_gmm(ScovModel(mu, np.zeros((3, 3))).to_gmm(), 50, rng=0).samples
        assert np.array_equal(x, np.broadcast_to(mu, x.shape))

    def test_reproducible(self):
        model = ScovModel(np.zeros(3), random_covariance(3)).to_gmm()
        a = sample_gmm(model, 9000, rng=RngStream(4, 2)).samples
        assert np.array_equal(a, sample_gmm(model, 9000, rng=RngStream(4, 2)).samples)

    def test_zero_count(self):
        with pytest.raises(InvalidArgument):
            sample_gmm(ScovModel(np.zeros(1), np.eye(1)).to_gmm(), 0)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        ds, *_ = two_cluster(m=600)
        g = fit_gmm(ds, 3, max_iter=5, rng=0)
        path = tmp_path / "m.gmm"
        write_model(g, path)
        back = read_model(path)
        assert np.array_equal(back.means, g.means)
        assert np.allclose(back.weights, g.weights, rtol=1e-15)
        assert np.allclose(back.covariances, g.covariances, atol=1e-12)
        assert encode_model(back) == path.read_bytes()

    def test_scov_stored_as_one_component(self):
        raw = encode_model(ScovModel(np.ones(2, complex), np.eye(2)))
        assert decode_model(raw).n_components == 1
        assert len(raw) == 14 + 8 + 16 * 2 + 16 * 3

    def test_bad_magic(self):
        raw = bytearray(encode_model(ScovModel(np.zeros(2), np.eye(2))))
        raw[:4] = b"NOPE"
        with pytest.raises(BadMagic):
            decode_model(bytes(raw))

    def test_truncated(self):
        raw = encode_model(ScovModel(np.zeros(2), np.eye(2)))
        with pytest.raises(TruncatedBody):
            decode_model(raw[:-1])
