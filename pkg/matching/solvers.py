"""
Maximum-dimension subspace matching

Finds an orthonormal projection U under which the class-conditional means and
second moments of a batch of environments coincide:
- moment_differences: pairwise differences of class covariances (and rank-one mean terms)
- spectral_match: common null space of the differences (exact moments)
- penalty_match: gradient descent on lambda_coral * L_coral + lambda_on * L_on (torch)
- max_dim_match: largest feasible dimension by binary or linear search
"""

import logging
from typing import List, Sequence

import numpy as np
import scipy.linalg
import torch

from core.exceptions import DimensionMismatch, InfeasibleFloor, InvalidParameter, TooFewEnvironments
from core.linalg import polar_orthonormalize, symmetrize
from core.monitoring import track_matcher_probe
from core.seeding import Stream, derive_rng, seed_from_rng
from environments.types import MomentSet

from .types import MatcherConfig, Pairing, ProjectionStep, SearchStrategy, SolverMethod

logger = logging.getLogger(__name__)


def moment_pairs(count: int, pairing: str = Pairing.CHAIN) -> List[tuple]:
    """Index pairs compared by the matcher: chain (0,1),(1,2),... or disjoint (0,1),(2,3),..."""
    if count < 2:
        raise TooFewEnvironments(f"matching needs at least 2 environments, got {count}")
    if pairing == Pairing.CHAIN:
        return [(i, i + 1) for i in range(count - 1)]
    if pairing == Pairing.DISJOINT:
        return [(i, i + 1) for i in range(0, count - 1, 2)]
    raise InvalidParameter(f"unknown pairing {pairing!r}")


def _check_dims(moments: Sequence[MomentSet]) -> int:
    dims = {m.dim for m in moments}
    if len(dims) != 1:
        raise DimensionMismatch(f"moment sets have different dimensions {sorted(dims)}")
    return dims.pop()


def _pair_differences(a: MomentSet, b: MomentSet, include_means: bool) -> List[np.ndarray]:
    # covariances, not E[XX^T]: the invariant block must lie in the common null space
    diffs = [symmetrize(a.cov_pos - b.cov_pos), symmetrize(a.cov_neg - b.cov_neg)]
    if include_means:
        for delta in (a.mean_pos - b.mean_pos, a.mean_neg - b.mean_neg):
            diffs.append(np.outer(delta, delta))
    return diffs


def grouped_differences(
    moments: Sequence[MomentSet],
    pairing: str = Pairing.CHAIN,
    include_means: bool = True,
) -> List[List[np.ndarray]]:
    _check_dims(moments)
    return [
        _pair_differences(moments[i], moments[j], include_means) for i, j in moment_pairs(len(moments), pairing)
    ]


def moment_differences(
    moments: Sequence[MomentSet],
    pairing: str = Pairing.CHAIN,
    include_means: bool = True,
) -> List[np.ndarray]:
    """
    Symmetric d x d matrices whose common null space is the matched subspace.

    Per compared pair: the change in Cov[X | Y=+1] and in Cov[X | Y=-1], and with
    include_means the rank-one terms dm dm^T of both class-mean differences. Matching
    both under U is the same as matching the means and E[XX^T | Y] under U.
    """
    return [diff for group in grouped_differences(moments, pairing, include_means) for diff in group]


def difference_scale(diffs: Sequence[np.ndarray]) -> float:
    return max((float(np.linalg.norm(diff, "fro")) for diff in diffs), default=0.0)


def projected_residual(U: np.ndarray, diffs: Sequence[np.ndarray]) -> float:
    """max ||U D U^T||_F over the differences"""
    return max((float(np.linalg.norm(U @ diff @ U.T, "fro")) for diff in diffs), default=0.0)


def _spectrum(diffs: Sequence[np.ndarray]) -> tuple:
    """Eigenvalues (ascending) and eigenvectors (rows) of M = sum D^T D"""
    stacked = np.vstack(diffs)
    _, singular, vt = scipy.linalg.svd(stacked, full_matrices=True)
    eig = np.zeros(vt.shape[0])
    eig[: singular.shape[0]] = singular**2
    order = np.argsort(eig, kind="stable")
    return eig[order], vt[order]


def spectral_match(
    diffs: Sequence[np.ndarray],
    config: MatcherConfig = MatcherConfig(),
    groups: Sequence[Sequence[np.ndarray]] = (),
) -> ProjectionStep:
    if not diffs:
        raise InvalidParameter("spectral_match needs at least one difference matrix")
    dim = diffs[0].shape[0]
    if any(diff.shape != (dim, dim) for diff in diffs):
        raise DimensionMismatch("difference matrices have inconsistent shapes")

    eig, vectors = _spectrum(diffs)
    trace = float(eig.sum())
    scale = difference_scale(diffs)
    if trace == 0.0:
        return ProjectionStep(
            U=np.eye(dim), r_in=dim, r_out=dim, residual=0.0, method=SolverMethod.SPECTRAL, spectrum=eig
        )

    threshold = config.tol_rel * trace / dim
    count = int(np.sum(eig <= threshold))
    floor = min(config.floor_dim, dim)
    flagged = count < floor
    U = vectors[: max(count, floor)]

    residual = projected_residual(U, diffs)
    feasible = residual <= config.tol_rel * scale
    if flagged:
        logger.warning(f"Spectral matcher floored at {floor} (only {count} null directions), residual {residual:.3e}")
    return ProjectionStep(
        U=U,
        r_in=dim,
        r_out=U.shape[0],
        residual=residual,
        method=SolverMethod.SPECTRAL,
        feasible=bool(feasible),
        flagged=bool(flagged or not feasible),
        scale=scale,
        spectrum=eig,
        pair_residuals=tuple(projected_residual(U, group) for group in groups),
    )


# =============================================================================
# PENALTY SOLVER
# =============================================================================


def _torch_moments(moments: Sequence[MomentSet]) -> tuple:
    """Class means and covariances normalized by the average per-coordinate second moment"""
    dim = moments[0].dim
    normalizer = float(np.mean([np.trace(m.second_pos) for m in moments])) / dim
    normalizer = normalizer if normalizer > 0 else 1.0
    means, covs = [], []
    for m in moments:
        means.append([torch.tensor(mean / np.sqrt(normalizer)) for mean in (m.mean_pos, m.mean_neg)])
        covs.append([torch.tensor(cov / normalizer) for cov in (m.cov_pos, m.cov_neg)])
    return means, covs


def _orthonormal_start(dim: int, target_dim: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, target_dim)))
    return q.T


def _descend(U0: np.ndarray, objective, config: MatcherConfig) -> np.ndarray:
    U = torch.tensor(U0, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.SGD([U], lr=config.step_size)
    for _ in range(config.max_iters):
        optimizer.zero_grad()
        loss = objective(U)
        if not torch.isfinite(loss):
            break
        loss.backward()
        torch.nn.utils.clip_grad_norm_([U], config.grad_clip)
        optimizer.step()
    return U.detach().numpy()


def penalty_match(
    moments: Sequence[MomentSet],
    target_dim: int,
    config: MatcherConfig = MatcherConfig(),
    rng: np.random.Generator = None,
) -> ProjectionStep:
    """
    Projection of fixed dimension found by minimizing the matching penalty.

    Restart i starts from an orthonormal matrix drawn from derived stream i; with
    warm_start an extra start uses the bottom of the difference spectrum. The best run
    (smallest residual) is re-orthonormalized and returned; an infeasible result is
    flagged, not raised.
    """
    if len(moments) < 2:
        raise TooFewEnvironments(f"matching needs at least 2 environments, got {len(moments)}")
    dim = _check_dims(moments)
    target_dim = int(target_dim)
    if not 1 <= target_dim <= dim:
        raise InvalidParameter(f"target_dim must be in [1, {dim}], got {target_dim}")
    rng = rng if rng is not None else np.random.default_rng(0)

    groups = grouped_differences(moments, config.pairing, config.include_means)
    diffs = [diff for group in groups for diff in group]
    scale = difference_scale(diffs)
    pairs = moment_pairs(len(moments), config.pairing)
    means, covs = _torch_moments(moments)
    eye = torch.eye(target_dim, dtype=torch.float64)

    def objective(U):
        coral = torch.zeros((), dtype=torch.float64)
        for a, b in pairs:
            for cls in (0, 1):
                if config.include_means:
                    coral = coral + torch.sum((U @ (means[a][cls] - means[b][cls])) ** 2)
                coral = coral + torch.sum((U @ (covs[a][cls] - covs[b][cls]) @ U.T) ** 2)
        coral = coral / (2 * len(pairs))
        orthonormality = torch.sum((U @ U.T - eye) ** 2)
        return config.lambda_coral * coral + config.lambda_on * orthonormality

    base_seed = seed_from_rng(rng)
    starts = []
    if config.warm_start:
        _, vectors = _spectrum(diffs)
        starts.append(vectors[:target_dim])
    for i in range(config.restarts):
        starts.append(_orthonormal_start(dim, target_dim, derive_rng(base_seed, Stream.RESTART, i)))

    best_U, best_residual = None, np.inf
    for U0 in starts:
        U = polar_orthonormalize(_descend(U0, objective, config))
        residual = projected_residual(U, diffs)
        if residual < best_residual:
            best_U, best_residual = U, residual

    feasible = bool(best_residual <= config.tol_rel * scale)
    logger.debug(f"Penalty match dim={target_dim}/{dim}: residual {best_residual:.3e} (scale {scale:.3e})")
    return ProjectionStep(
        U=best_U,
        r_in=dim,
        r_out=target_dim,
        residual=float(best_residual),
        method=SolverMethod.PENALTY,
        feasible=feasible,
        flagged=not feasible,
        scale=scale,
        pair_residuals=tuple(projected_residual(best_U, group) for group in groups),
    )


# =============================================================================
# MAXIMUM DIMENSION SEARCH
# =============================================================================


def resolve_method(moments: Sequence[MomentSet], method: str) -> str:
    if method == SolverMethod.AUTO:
        return SolverMethod.SPECTRAL if all(m.is_analytic for m in moments) else SolverMethod.PENALTY
    return method


def _common_moment(U: np.ndarray, moments: Sequence[MomentSet]) -> np.ndarray:
    return symmetrize(np.mean([U @ m.second_pos @ U.T for m in moments], axis=0))


def max_dim_match(
    moments: Sequence[MomentSet],
    config: MatcherConfig = MatcherConfig(),
    rng: np.random.Generator = None,
) -> ProjectionStep:
    """
    Feasible projection of maximum dimension, never below config.floor_dim.

    Feasibility is monotone in the dimension (deleting rows of a feasible U keeps it
    feasible), which is what makes the binary search valid.
    """
    if len(moments) < 2:
        raise TooFewEnvironments(f"matching needs at least 2 environments, got {len(moments)}")
    dim = _check_dims(moments)
    method = resolve_method(moments, config.method)
    envs = [m.env_index for m in moments]

    if method == SolverMethod.SPECTRAL:
        groups = grouped_differences(moments, config.pairing, config.include_means)
        step = spectral_match([diff for group in groups for diff in group], config, groups)
        track_matcher_probe(method, step.feasible)
        if not step.feasible:
            raise InfeasibleFloor(
                f"spectral residual {step.residual:.3e} exceeds tolerance at dimension {step.r_out}"
            )
        return step.with_context(_common_moment(step.U, moments), envs)

    rng = rng if rng is not None else np.random.default_rng(0)
    base_seed = seed_from_rng(rng)
    floor = min(config.floor_dim, dim)
    probes = {}

    def probe(k: int) -> ProjectionStep:
        if k not in probes:
            probes[k] = penalty_match(moments, k, config, derive_rng(base_seed, Stream.PROBE, k))
            track_matcher_probe(method, probes[k].feasible)
        return probes[k]

    if not probe(floor).feasible:
        raise InfeasibleFloor(
            f"no {floor}-dimensional projection matches within tol_rel={config.tol_rel:g} "
            f"(best residual {probes[floor].residual:.3e})"
        )

    if config.search == SearchStrategy.LINEAR:
        best = next(k for k in range(dim, floor - 1, -1) if probe(k).feasible)
    else:
        lo, hi = floor, dim
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if probe(mid).feasible:
                lo = mid
            else:
                hi = mid - 1
        best = lo

    step = probes[best]
    logger.info(f"Matched {best}/{dim} dimensions with {len(probes)} probes (residual {step.residual:.3e})")
    return step.with_context(_common_moment(step.U, moments), envs)
