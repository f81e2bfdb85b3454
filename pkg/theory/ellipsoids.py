"""
Nontrivial common roots of ellipsoid systems.

For environments with spurious covariances A_e and means b_e, a direction u != 0 with
u' A_e u = b_e' u for every e makes the scalar (u' A_e u)^{-1} u' b_e the same in all
environments, so a predictor relying on u alone satisfies the invariance constraint
while using only spurious features. Each equation describes an ellipsoid through the
origin; the solver looks for a second intersection point.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import DimensionMismatch, InvalidParameter, RankDeficient, TheoremNotApplicable
from core.linalg import require_spd, symmetrize
from core.monitoring import track_theory_check
from environments.types import EnvParams

logger = logging.getLogger(__name__)

MAX_DIM = 8


class RootSearchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    multistarts: int = Field(default=64, ge=1)
    max_newton_iters: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    min_norm: float = Field(default=1e-4, gt=0)
    max_backtracks: int = Field(default=40, ge=1)


@dataclass(frozen=True, eq=False)
class EllipsoidSystem:
    A_list: tuple
    b_list: tuple

    def __post_init__(self):
        A_list = tuple(symmetrize(np.atleast_2d(np.asarray(A, dtype=np.float64))) for A in self.A_list)
        b_list = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.b_list)
        if not A_list or len(A_list) != len(b_list):
            raise InvalidParameter("need the same positive number of matrices and vectors")
        dim = b_list[0].shape[0]
        for e, (A, b) in enumerate(zip(A_list, b_list)):
            if A.shape != (dim, dim) or b.shape != (dim,):
                raise DimensionMismatch(f"equation {e} does not have dimension {dim}")
            require_spd(A, f"A[{e}]")
        if len(A_list) > dim:
            raise TheoremNotApplicable(f"{len(A_list)} equations exceed dimension {dim}")
        if np.linalg.matrix_rank(np.vstack(b_list)) < len(b_list):
            raise RankDeficient("the vectors b_e are linearly dependent")
        object.__setattr__(self, "A_list", A_list)
        object.__setattr__(self, "b_list", b_list)

    @property
    def dim(self) -> int:
        return int(self.b_list[0].shape[0])

    @property
    def count(self) -> int:
        return len(self.A_list)

    def values(self, u: np.ndarray) -> np.ndarray:
        return np.array([u @ A @ u - b @ u for A, b in zip(self.A_list, self.b_list)])

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        return np.vstack([2.0 * A @ u - b for A, b in zip(self.A_list, self.b_list)])

    @classmethod
    def from_environments(cls, envs: Sequence[EnvParams]) -> "EllipsoidSystem":
        return cls(A_list=tuple(env.sigma2 for env in envs), b_list=tuple(env.mu2 for env in envs))


def random_system(dim: int, rng: np.random.Generator, count: int = None) -> EllipsoidSystem:
    """A_e = G G^T with Gaussian G, b_e standard Gaussian; count defaults to dim"""
    count = dim if count is None else count
    A_list = []
    for _ in range(count):
        G = rng.standard_normal((dim, dim))
        A_list.append(G @ G.T)
    b_list = [rng.standard_normal(dim) for _ in range(count)]
    return EllipsoidSystem(A_list=tuple(A_list), b_list=tuple(b_list))


@dataclass
class EllipsoidRoot:
    u: List[float]
    residual: float
    success: bool
    isolated: bool
    starts_used: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.u))

    def to_dict(self) -> dict:
        return {
            "u": list(self.u),
            "residual": self.residual,
            "success": self.success,
            "isolated": self.isolated,
            "starts_used": self.starts_used,
        }


def ellipsoid_point(A: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Point of {x : x'Ax = b'x} for a unit vector c:
    x = A^{-1}b/2 + (sqrt(b'A^{-1}b)/2) sum_i c_i v_i / sqrt(lambda_i)
    """
    eigenvalues, vectors = scipy.linalg.eigh(A)
    center = scipy.linalg.solve(A, b, assume_a="pos") / 2.0
    radius = np.sqrt(max(float(b @ center) * 2.0, 0.0)) / 2.0
    return center + radius * vectors @ (c / np.sqrt(eigenvalues))


def _newton(system: EllipsoidSystem, u: np.ndarray, config: RootSearchConfig) -> np.ndarray:
    for _ in range(config.max_newton_iters):
        f = system.values(u)
        norm_f = float(np.linalg.norm(f))
        if np.max(np.abs(f)) <= config.tol:
            break
        step = -scipy.linalg.pinv(system.jacobian(u)) @ f
        t = 1.0
        for _ in range(config.max_backtracks):
            candidate = u + t * step
            if np.linalg.norm(system.values(candidate)) < (1.0 - 1e-4 * t) * norm_f:
                break
            t /= 2.0
        else:
            return u
        u = candidate
    return u


def irm_spurious_solution_find(
    system: EllipsoidSystem,
    config: RootSearchConfig = RootSearchConfig(),
    rng: np.random.Generator = None,
) -> EllipsoidRoot:
    """
    Newton's method (pseudo-inverse steps, backtracking) from multistart points on the
    first ellipsoid. Returns the first root with ||u|| >= min_norm, or the best attempt
    with success=False.
    """
    if system.dim > MAX_DIM:
        raise InvalidParameter(f"root search is limited to dimension {MAX_DIM}, got {system.dim}")
    rng = rng if rng is not None else np.random.default_rng(0)
    A0, b0 = system.A_list[0], system.b_list[0]

    best_u, best_residual = None, np.inf
    for start in range(1, config.multistarts + 1):
        c = rng.standard_normal(system.dim)
        c /= np.linalg.norm(c)
        u = _newton(system, ellipsoid_point(A0, b0, c), config)
        if np.linalg.norm(u) < config.min_norm:
            continue
        residual = float(np.max(np.abs(system.values(u))))
        if residual < best_residual:
            best_u, best_residual = u, residual
        if residual <= config.tol:
            break

    if best_u is None:
        track_theory_check("irm", "not_found")
        return EllipsoidRoot(
            u=[0.0] * system.dim, residual=float("inf"), success=False, isolated=False, starts_used=start
        )

    success = best_residual <= config.tol
    # the equations are inhomogeneous, so 2u must fail them
    isolated = bool(np.max(np.abs(system.values(2.0 * best_u))) > 1e3 * config.tol)
    track_theory_check("irm", "found" if success else "not_found")
    return EllipsoidRoot(
        u=best_u.tolist(), residual=best_residual, success=bool(success), isolated=isolated, starts_used=start
    )


def invariant_coefficients(system: EllipsoidSystem, u) -> np.ndarray:
    """(u' A_e u)^{-1} u' b_e for every equation"""
    u = np.asarray(u, dtype=np.float64)
    return np.array([(u @ b) / (u @ A @ u) for A, b in zip(system.A_list, system.b_list)])
