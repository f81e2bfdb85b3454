"""
Small linear-algebra helpers shared across apps.
"""

import numpy as np
import scipy.linalg

from .exceptions import DimensionMismatch, NotSPD, NotSymmetric

SYMMETRY_RTOL = 1e-9


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0


def frozen(array) -> np.ndarray:
    """Float64 copy marked read-only"""
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def require_shape(array: np.ndarray, shape: tuple, name: str) -> None:
    if array.shape != shape:
        raise DimensionMismatch(f"{name} has shape {array.shape}, expected {shape}")


def require_symmetric(matrix: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 1.0)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_RTOL * scale):
        raise NotSymmetric(f"{name} is not symmetric")


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(symmetrize(matrix))[0])


def require_spd(matrix: np.ndarray, name: str) -> None:
    require_symmetric(matrix, name)
    if min_eigenvalue(matrix) <= 0.0:
        raise NotSPD(f"{name} is not positive definite")


def require_psd(matrix: np.ndarray, name: str, atol: float = 1e-10) -> None:
    require_symmetric(matrix, name)
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 1.0)
    if min_eigenvalue(matrix) < -atol * scale:
        raise NotSPD(f"{name} is not positive semi-definite")


def orthonormality_error(U: np.ndarray) -> float:
    """||U U^T - I||_F for a row-orthonormal candidate"""
    return float(np.linalg.norm(U @ U.T - np.eye(U.shape[0]), "fro"))


def polar_orthonormalize(U: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal rows spanning the same row space"""
    left, _, right = scipy.linalg.svd(U, full_matrices=False)
    return left @ right


def max_principal_angle(U: np.ndarray, V: np.ndarray) -> float:
    """Largest principal angle between the row spaces of U and V"""
    angles = scipy.linalg.subspace_angles(U.T, V.T)
    return float(np.max(angles)) if angles.size else 0.0


def angular_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in radians between two nonzero vectors"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cos = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    # arccos loses precision near 1, use the sine form there
    sin = float(np.linalg.norm(u / np.linalg.norm(u) - cos * v / np.linalg.norm(v)))
    return float(np.arctan2(sin, cos))
