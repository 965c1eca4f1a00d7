import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmm_replica.covariance import CovarianceModel, factorize
from gmm_replica.gmm_data import MixtureDesign

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_design(kind="iid", p=200, sparsity=0.05, log_lambda=-2.0, *, alpha=0.5, mu_norm=2.0,
                sigma2=2.0, seed=1):
    factors = factorize(CovarianceModel(kind, p, sigma2=sigma2))
    return MixtureDesign.build(factors, alpha=alpha, sparsity=sparsity, mu_norm=mu_norm,
                               lam=float(np.exp(log_lambda)), rng=np.random.default_rng(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
