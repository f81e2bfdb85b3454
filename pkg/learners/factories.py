import factory
import numpy as np

from environments.types import Dataset


def gaussian_dataset(mean, n, seed=0, cov=None, env_index=0):
    """Two symmetric Gaussian classes at +-mean"""
    rng = np.random.default_rng(seed)
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.eye(mean.shape[0]) if cov is None else np.asarray(cov)
    y = 2.0 * rng.integers(0, 2, size=n) - 1.0
    X = y[:, None] * mean + rng.multivariate_normal(np.zeros(mean.shape[0]), cov, size=n)
    return Dataset(X=X, y=y, env_index=env_index)


class GaussianDatasetFactory(factory.Factory):
    class Meta:
        model = gaussian_dataset

    mean = factory.LazyFunction(lambda: np.array([1.0, 0.5, 0.0]))
    n = 2000
    seed = factory.Sequence(lambda k: k)
    cov = None
    env_index = 0
