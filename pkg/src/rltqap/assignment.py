"""Linear assignment (Hungarian method) with dual potentials and residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import NegativeEntry, NegativeSourceCoefficient, NonFiniteEntry, PotentialMismatch

EPS = 1e-9


@dataclass(frozen=True)
class AssignmentResult:
    value: float
    row_potentials: np.ndarray
    col_potentials: np.ndarray
    matching: np.ndarray


class Workspace:
    """Scratch buffers for repeated solves of the same size."""

    def __init__(self, m: int):
        self.m = m
        self.u = np.empty(m + 1)
        self.v = np.empty(m + 1)
        self.minv = np.empty(m + 1)
        self.p = np.empty(m + 1, dtype=np.int64)
        self.way = np.empty(m + 1, dtype=np.int64)
        self.used = np.empty(m + 1, dtype=np.bool_)
        self.match = np.empty(m, dtype=np.int64)


def _check_matrix(M) -> np.ndarray:
    a = np.asarray(M, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteEntry("matrix has non-finite entries")
    if np.any(a < 0):
        raise NegativeEntry("matrix has negative entries")
    return np.ascontiguousarray(a)


def solve_assignment(M, workspace: Workspace | None = None) -> AssignmentResult:
    a = _check_matrix(M)
    m = a.shape[0]
    ws = workspace if workspace is not None and workspace.m == m else Workspace(m)
    K.hungarian_core(a, m, ws.u, ws.v, ws.p, ws.way, ws.minv, ws.used, ws.match)
    matching = ws.match.copy()
    value = float(a[np.arange(m), matching].sum())
    return AssignmentResult(value, ws.u[1:].copy(), ws.v[1:].copy(), matching)


def extract_residual(M, res: AssignmentResult, eps: float = EPS) -> np.ndarray:
    """Reduced costs ``max(0, M - u - v)``; zero on the matching."""
    a = _check_matrix(M)
    m = a.shape[0]
    if res.row_potentials.shape != (m,) or res.col_potentials.shape != (m,):
        raise PotentialMismatch("potential vectors do not match the matrix size")
    reduced = a - res.row_potentials[:, None] - res.col_potentials[None, :]
    tol = eps * max(1.0, float(np.abs(a).max()))
    if reduced.min() < -tol:
        raise PotentialMismatch(f"dual infeasible: min reduced cost {reduced.min():.3g}")
    rows = np.arange(m)
    if np.any(reduced[rows, res.matching] > tol):
        raise PotentialMismatch("complementary slackness violated on the matching")
    if abs(res.row_potentials.sum() + res.col_potentials.sum() - res.value) > tol * m:
        raise PotentialMismatch("potentials do not sum to the assignment value")
    out = np.maximum(reduced, 0.0)
    out[rows, res.matching] = 0.0
    return out


def concentrate_many(mats: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Concentrate a stack of square matrices in place.

    ``mats`` has shape (..., m, m) and is overwritten with residuals; the
    returned array (shape ``mats.shape[:-2]``) holds the assignment values.
    """
    lead = mats.shape[:-2]
    m = mats.shape[-1]
    flat = mats.reshape(-1, m, m)
    if not np.shares_memory(flat, mats):
        raise ValueError("concentrate_many needs a contiguous array")
    values = np.empty(flat.shape[0], dtype=np.float64)
    status, where = K.concentrate_batch(flat, values, eps)
    if status == K.ERR_NEGATIVE:
        raise NegativeSourceCoefficient(f"negative coefficient in submatrix {where}")
    if status == K.ERR_POTENTIAL:
        raise PotentialMismatch(f"dual infeasible potentials in submatrix {where}")
    return values.reshape(lead)
