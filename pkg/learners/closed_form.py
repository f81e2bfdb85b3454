"""
Closed-form predictors: the two-environment covariance-difference algorithm and the
invariant optimum w* computed from the model itself.
"""

import logging

import numpy as np
import scipy.linalg

from core.exceptions import DegenerateDifference, DimensionMismatch, InvalidParameter
from core.linalg import symmetrize
from core.monitoring import monitor_fit
from environments.types import ModelSpec, MomentSet

from .types import Algorithm, TrainedPredictor

logger = logging.getLogger(__name__)


@monitor_fit(Algorithm.SIMPLE)
def simple_algo(
    moments_e: MomentSet,
    moments_e_prime: MomentSet,
    d_s: int,
    rank_tol: float = 1e-9,
) -> TrainedPredictor:
    """
    Projects out the top-d_s singular subspace Q of Cov_e[X|Y=1] - Cov_e'[X|Y=1] and
    returns pinv(P Cov_e P) P E_e[X|Y=1] with P = I - Q Q^T.
    """
    if moments_e.dim != moments_e_prime.dim:
        raise DimensionMismatch("the two environments have different dimensions")
    d = moments_e.dim
    if not 1 <= d_s < d:
        raise InvalidParameter(f"d_s must lie in [1, {d - 1}], got {d_s}")

    difference = symmetrize(moments_e.cov_pos - moments_e_prime.cov_pos)
    left, singular, _ = scipy.linalg.svd(difference)
    top = singular[0] if singular.size else 0.0
    if top == 0.0 or singular[d_s - 1] <= rank_tol * top:
        raise DegenerateDifference(
            f"covariance difference has rank below d_s={d_s} (singular values {singular[: d_s + 1]})"
        )
    Q = left[:, :d_s]
    P = np.eye(d) - Q @ Q.T
    mean = P @ moments_e.mean_pos
    cov = symmetrize(P @ moments_e.cov_pos @ P)
    w = scipy.linalg.pinv(cov, rtol=rank_tol) @ mean
    logger.debug(f"Closed-form fit: gap {singular[d_s - 1]:.3e} / {top:.3e}")
    return TrainedPredictor.from_vector(
        w,
        Algorithm.SIMPLE,
        diagnostics={"singular_values": singular.tolist(), "d_s": d_s},
    )


@monitor_fit(Algorithm.ORACLE)
def oracle_w_star(spec: ModelSpec) -> TrainedPredictor:
    """
    Invariant optimum: solves A^T w = Sigma1^{-1} mu1 with B^T w = 0, where A and B
    are the left r and right d_s columns of S.
    """
    rhs = np.concatenate([scipy.linalg.solve(spec.sigma1, spec.mu1, assume_a="pos"), np.zeros(spec.d_s)])
    w, *_ = scipy.linalg.lstsq(spec.S.T, rhs)
    return TrainedPredictor.from_vector(w, Algorithm.ORACLE)
