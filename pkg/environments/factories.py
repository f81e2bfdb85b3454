import factory
import numpy as np

from .generation import make_model_spec, sample_environment


class ModelSpecFactory(factory.Factory):
    """Small identity-mixing instance; pass r, d_s to resize"""

    class Meta:
        model = make_model_spec

    r = 2
    d_s = 4
    mu1 = factory.LazyAttribute(lambda o: np.ones(o.r))
    sigma1 = factory.LazyAttribute(lambda o: np.eye(o.r))
    S = None
    D = 0.0
    seed = factory.Sequence(lambda n: n)


class EnvParamsFactory(factory.Factory):
    class Meta:
        model = sample_environment

    spec = factory.SubFactory(ModelSpecFactory)
    index = factory.Sequence(lambda n: n)
    mu2_scale = 10.0
    sigma2_bar_source = None
    rng = None
