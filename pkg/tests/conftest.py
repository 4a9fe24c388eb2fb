import numpy as np
import pytest

from paft.data import TrialDataset


def make_dataset(rng, n=30, d=1, treated_frac=0.5, censor_frac=0.25,
                 alpha=1.0, tau=1.5, beta=None):
    """Small synthetic dataset drawn straight from the piecewise model."""
    beta = np.full(d, 0.8) if beta is None else np.asarray(beta, dtype=float)
    z = (rng.random(n) < treated_frac).astype(int)
    x = rng.normal(0.4, 0.6, size=(n, d))
    t0 = np.exp(x @ beta + rng.standard_normal(n))
    t = np.where((z == 1) & (t0 > tau), tau + np.exp(alpha) * (t0 - tau), t0)
    if censor_frac > 0:
        c = rng.uniform(0, np.quantile(t, 1.0 - censor_frac) * 2.0, n)
        y = np.minimum(t, c)
        event = (t <= c).astype(int)
    else:
        y, event = t, np.ones(n, dtype=int)
    names = tuple(f"x{j + 1}" for j in range(d))
    return TrialDataset(y, event, z, x, names)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_ds(rng):
    return make_dataset(rng, n=30)


@pytest.fixture
def two_subject_ds():
    # events at 1 and e on the control arm: residuals 0 and 1 at beta = 0
    return TrialDataset(
        time=(1.0, float(np.e)),
        event=(1, 1),
        treatment=(0, 0),
        covariates=((), ()),
        covariate_names=(),
    )
