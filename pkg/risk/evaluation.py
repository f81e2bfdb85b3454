"""
Accuracy of linear classifiers on Gaussian environments.

Accuracy defaults to the closed form: for beta = S^T v split into an invariant block
beta1 (first r entries) and a spurious block beta2,

    accuracy = Phi((beta1.mu1 + s beta2.mu2) / sqrt(beta1' Sigma1 beta1 + beta2' Sigma2 beta2))

with s = -1 on flipped environments. Sampling-based accuracy is a cross-check.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr

from core.exceptions import DimensionMismatch, EmptyDataset, InvalidParameter, MissingClass
from core.linalg import frozen, symmetrize
from environments.generation import sample_dataset
from environments.types import Dataset, EnvParams, ModelSpec, MomentSet, MomentSource

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    v: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "v", frozen(np.asarray(self.v).reshape(-1)))
        if self.normalized and abs(np.linalg.norm(self.v) - 1.0) > NORM_TOL:
            raise InvalidParameter(f"normalized classifier has norm {np.linalg.norm(self.v)!r}")

    @classmethod
    def unit(cls, v) -> "LinearClassifier":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        length = np.linalg.norm(v)
        if length == 0:
            raise InvalidParameter("cannot normalize the zero vector")
        return cls(v=v / length, normalized=True)

    @property
    def dim(self) -> int:
        return int(self.v.shape[0])


ClassifierLike = Union[LinearClassifier, np.ndarray]


def weight_vector(classifier: ClassifierLike) -> np.ndarray:
    """Accepts a LinearClassifier, anything with a `.v` attribute, or a raw vector"""
    v = getattr(classifier, "v", classifier)
    return np.asarray(v, dtype=np.float64).reshape(-1)


def latent_blocks(classifier: ClassifierLike, spec: ModelSpec) -> tuple:
    """(beta1, beta2) of beta = S^T v"""
    v = weight_vector(classifier)
    if v.shape != (spec.d,):
        raise DimensionMismatch(f"classifier has length {v.shape[0]}, model has d={spec.d}")
    beta = spec.S.T @ v
    return beta[: spec.r], beta[spec.r :]


def standard_normal_cdf(t):
    """
    Phi(t) via scipy.special.ndtr.

    ndtr evaluates through erf/erfc (Cephes) and keeps full relative precision in both
    tails, well within 1e-12 absolute error.
    """
    result = ndtr(np.asarray(t, dtype=np.float64))
    return float(result) if np.ndim(result) == 0 else result


def margin(classifier: ClassifierLike, spec: ModelSpec, env: EnvParams) -> float:
    """Argument of Phi in the accuracy formula; nan when v sees no variance"""
    beta1, beta2 = latent_blocks(classifier, spec)
    numerator = float(beta1 @ spec.mu1 + env.spurious_sign * (beta2 @ env.mu2))
    variance = float(beta1 @ spec.sigma1 @ beta1 + beta2 @ env.sigma2 @ beta2)
    if not variance > 0.0:
        return float("nan")
    return numerator / np.sqrt(variance)


def zero_one_accuracy(classifier: ClassifierLike, spec: ModelSpec, env: EnvParams) -> float:
    t = margin(classifier, spec, env)
    if np.isnan(t):
        return 0.5
    return standard_normal_cdf(t)


def zero_one_risk(classifier: ClassifierLike, spec: ModelSpec, env: EnvParams) -> float:
    return 1.0 - zero_one_accuracy(classifier, spec, env)


def empirical_accuracy(classifier: ClassifierLike, dataset: Dataset) -> float:
    """Fraction with sign(v.x) = y; a zero score counts as an error"""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    v = weight_vector(classifier)
    if v.shape[0] != dataset.dim:
        raise DimensionMismatch(f"classifier has length {v.shape[0]}, data has dimension {dataset.dim}")
    predictions = np.sign(dataset.X @ v)
    return float(np.mean(predictions == dataset.y))


def monte_carlo_accuracy(
    classifier: ClassifierLike,
    spec: ModelSpec,
    env: EnvParams,
    n: int,
    rng: Optional[np.random.Generator] = None,
) -> float:
    return empirical_accuracy(classifier, sample_dataset(spec, env, n, rng=rng))


def estimate_moments(dataset: Dataset) -> MomentSet:
    """Per-class empirical mean and uncentered second moment"""
    if len(dataset) == 0:
        raise EmptyDataset("cannot estimate moments of an empty dataset")
    positives = dataset.X[dataset.y > 0]
    negatives = dataset.X[dataset.y < 0]
    if len(positives) == 0 or len(negatives) == 0:
        raise MissingClass(f"environment {dataset.env_index} lacks samples of one label")
    return MomentSet(
        mean_pos=frozen(positives.mean(axis=0)),
        second_pos=frozen(symmetrize(positives.T @ positives / len(positives))),
        mean_neg=frozen(negatives.mean(axis=0)),
        second_neg=frozen(symmetrize(negatives.T @ negatives / len(negatives))),
        source=MomentSource.ESTIMATED,
        n=len(dataset),
        env_index=dataset.env_index,
    )
