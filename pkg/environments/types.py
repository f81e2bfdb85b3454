"""
Domain types of the smoothed-covariance Gaussian model.

Latent Z = (Z1, Z2) with Z1 | Y ~ N(Y mu1, Sigma1) invariant across environments and
Z2 | Y ~ N(+-Y mu2_e, Sigma2_e) spurious; observations are X = S Z. All arrays held by
these records are read-only float64 copies.
"""

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from core.linalg import frozen, symmetrize


@dataclass(frozen=True, eq=False)
class ModelSpec:
    r: int
    d_s: int
    mu1: np.ndarray
    sigma1: np.ndarray
    S: np.ndarray
    D: float
    seed: int

    @property
    def d(self) -> int:
        return self.r + self.d_s

    @property
    def invariant_block(self) -> np.ndarray:
        """Left r columns of S"""
        return self.S[:, : self.r]

    @property
    def spurious_block(self) -> np.ndarray:
        return self.S[:, self.r :]


@dataclass(frozen=True, eq=False)
class EnvParams:
    index: int
    mu2: np.ndarray
    sigma2_bar: np.ndarray
    G: np.ndarray
    sigma2: np.ndarray
    flipped: bool = False

    @property
    def spurious_sign(self) -> float:
        return -1.0 if self.flipped else 1.0

    @property
    def label(self) -> str:
        return f"{'test' if self.flipped else 'train'}[{self.index}]"


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples of one environment stored column-wise; iterates as LabeledSample"""

    X: np.ndarray
    y: np.ndarray
    env_index: int = -1
    flipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "X", frozen(np.atleast_2d(self.X)))
        object.__setattr__(self, "y", frozen(np.asarray(self.y).reshape(-1)))
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} observations but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def __iter__(self) -> Iterator[LabeledSample]:
        for x, y in zip(self.X, self.y):
            yield LabeledSample(x=x, y=int(y))

    @property
    def dim(self) -> int:
        return int(self.X.shape[1])

    @classmethod
    def from_samples(cls, samples, env_index: int = -1, flipped: bool = False) -> "Dataset":
        samples = list(samples)
        X = np.array([s.x for s in samples], dtype=np.float64)
        y = np.array([s.y for s in samples], dtype=np.float64)
        return cls(X=X, y=y, env_index=env_index, flipped=flipped)


class MomentSource:
    ANALYTIC = "analytic"
    ESTIMATED = "estimated"


@dataclass(frozen=True, eq=False)
class MomentSet:
    mean_pos: np.ndarray
    second_pos: np.ndarray
    mean_neg: np.ndarray
    second_neg: np.ndarray
    source: str = MomentSource.ANALYTIC
    n: Optional[int] = None
    env_index: int = -1

    @property
    def dim(self) -> int:
        return int(self.mean_pos.shape[0])

    @property
    def is_analytic(self) -> bool:
        return self.source == MomentSource.ANALYTIC

    @property
    def cov_pos(self) -> np.ndarray:
        return self.second_pos - np.outer(self.mean_pos, self.mean_pos)

    @property
    def cov_neg(self) -> np.ndarray:
        return self.second_neg - np.outer(self.mean_neg, self.mean_neg)

    def project(self, V: np.ndarray) -> "MomentSet":
        """Moments of V X for a k x d matrix V"""
        return MomentSet(
            mean_pos=frozen(V @ self.mean_pos),
            second_pos=frozen(symmetrize(V @ self.second_pos @ V.T)),
            mean_neg=frozen(V @ self.mean_neg),
            second_neg=frozen(symmetrize(V @ self.second_neg @ V.T)),
            source=self.source,
            n=self.n,
            env_index=self.env_index,
        )
