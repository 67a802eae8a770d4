"""Geometry of the manifold of symmetric positive-definite matrices.

Points live in the full SPD cone; the unit-determinant slice is reached
through :func:`project_unit_det`.  The metric is the trace form
``tr(G^-1 X G^-1 Y)`` and the connection is the symmetric bilinear map
``Gamma(X, Y) = -1/2 (X G^-1 Y + Y G^-1 X)``, which makes
``G(u) = G0^{1/2} exp(u G0^{-1/2} X G0^{-1/2}) G0^{1/2}`` a geodesic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYM_RTOL = 1e-14
TRACE_FREE_TOL = 1e-12


class SPDError(ValueError):
    """Raised when a matrix fails the symmetric positive-definite checks."""


class DimensionMismatchError(ValueError):
    """Raised when operands of an operation have different sizes."""


def _as_square(entries) -> np.ndarray:
    arr = np.array(entries, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise SPDError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def _check_symmetric(arr: np.ndarray, what: str) -> np.ndarray:
    scale = max(np.abs(arr).max(), 1.0)
    if np.abs(arr - arr.T).max() > 1e3 * SYM_RTOL * scale:
        raise SPDError(f"{what} is not symmetric")
    return 0.5 * (arr + arr.T)


@dataclass(frozen=True)
class SPDMatrix:
    """A symmetric positive-definite matrix; symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _check_symmetric(_as_square(self.entries), "SPD matrix")
        try:
            np.linalg.cholesky(arr)
        except np.linalg.LinAlgError:
            raise SPDError("matrix is not positive definite") from None
        object.__setattr__(self, "entries", arr)
        self.entries.setflags(write=False)

    @property
    def n_dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class TangentVector:
    """A symmetric matrix viewed as a tangent vector at some base point.

    When ``trace_free_wrt`` is given, membership in the unit-determinant
    slice at that base point (``tr(G^-1 X) = 0``) is enforced.
    """

    entries: np.ndarray
    trace_free_wrt: SPDMatrix | None = field(default=None)

    def __post_init__(self):
        arr = _check_symmetric(_as_square(self.entries), "tangent vector")
        object.__setattr__(self, "entries", arr)
        self.entries.setflags(write=False)
        base = self.trace_free_wrt
        if base is not None:
            if base.n_dim != self.n_dim:
                raise DimensionMismatchError(
                    f"base point is {base.n_dim}x{base.n_dim}, "
                    f"vector is {self.n_dim}x{self.n_dim}"
                )
            t = np.trace(np.linalg.solve(base.entries, arr))
            scale = max(np.abs(arr).max(), 1.0)
            if abs(t) > TRACE_FREE_TOL * scale:
                raise SPDError(f"tangent vector is not trace-free: tr = {t:.3e}")

    @property
    def n_dim(self) -> int:
        return self.entries.shape[0]


def _check_dims(G: SPDMatrix, *vectors: TangentVector):
    for X in vectors:
        if X.n_dim != G.n_dim:
            raise DimensionMismatchError(
                f"base point is {G.n_dim}x{G.n_dim}, operand is {X.n_dim}x{X.n_dim}"
            )


def metric_at(G: SPDMatrix, X: TangentVector, Y: TangentVector) -> float:
    """Trace-form inner product tr(G^-1 X G^-1 Y) at base point G."""
    _check_dims(G, X, Y)
    GX = np.linalg.solve(G.entries, X.entries)
    GY = np.linalg.solve(G.entries, Y.entries)
    return float(np.trace(GX @ GY))


def christoffel(G: SPDMatrix, X: TangentVector, Y: TangentVector) -> TangentVector:
    """Connection bilinear form -1/2 (X G^-1 Y + Y G^-1 X) at base point G."""
    _check_dims(G, X, Y)
    XGY = X.entries @ np.linalg.solve(G.entries, Y.entries)
    return TangentVector(-0.5 * (XGY + XGY.T))


def project_unit_det(G: SPDMatrix) -> SPDMatrix:
    """Rescale G to the unit-determinant slice, G / det(G)^{1/N}."""
    sign, logdet = np.linalg.slogdet(G.entries)
    n = G.n_dim
    return SPDMatrix(G.entries * np.exp(-logdet / n))


def random_spd(seed: int, N: int, cond_max: float = 10.0) -> SPDMatrix:
    """Deterministic random SPD matrix with condition number <= cond_max."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if cond_max < 1:
        raise ValueError(f"cond_max must be >= 1, got {cond_max}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    # eigenvalues in [1, cond_max); ratio of extremes stays below cond_max
    lam = 1.0 + (cond_max - 1.0) * rng.random(N)
    return SPDMatrix((q * lam) @ q.T)
