"""Reference generative models: scov, complex GMM and an analytic-score diffusion sampler."""

from .gmm import GmmModel, ScovModel, fit_gmm, fit_scov, gmm_responsibility, sample_gmm

__all__ = ["GmmModel", "ScovModel", "fit_gmm", "fit_scov", "gmm_responsibility", "sample_gmm"]
