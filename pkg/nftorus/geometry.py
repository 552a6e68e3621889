"""Flat-torus geometry: lattice basis, metric, inner products and brackets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nftorus.errors import NFTorusValidationError

LOGGER = logging.getLogger(__name__)

# Relative determinant threshold below which a basis counts as dependent.
_DEGENERACY_TOL = 1e-12

# Integer covector in Z^d. Midpoints xi + k/2 are carried as float arrays
# whose entries are exact half-integers.
Covector = NDArray[np.int64]


@dataclass(frozen=True)
class LatticeBasis:
    """Basis e_1..e_d of the periodicity lattice, one vector per row."""

    vectors: NDArray[np.float64]

    def __post_init__(self) -> None:
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if vectors.ndim != 2 or vectors.shape[0] != vectors.shape[1]:
            raise NFTorusValidationError(
                f"Lattice basis must be d vectors of length d, got shape {vectors.shape}"
            )
        object.__setattr__(self, "vectors", vectors)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[0])


@dataclass(frozen=True)
class MetricTensor:
    """Flat metric g_AB and its inverse g^AB acting on covectors."""

    g: NDArray[np.float64]
    g_inv: NDArray[np.float64]

    @property
    def dimension(self) -> int:
        return int(self.g.shape[0])

    def fingerprint(self) -> bytes:
        """Stable byte string identifying the metric (cache keys)."""
        return np.round(self.g_inv, 14).astype("<f8").tobytes()


def metric_from_basis(basis: LatticeBasis) -> MetricTensor:
    """Return g_AB = e_A . e_B and its inverse."""
    vectors = basis.vectors
    g = vectors @ vectors.T
    scale = max(float(np.max(np.abs(vectors))), 1.0) ** basis.dimension
    if abs(np.linalg.det(vectors)) <= _DEGENERACY_TOL * scale:
        raise NFTorusValidationError("degenerate lattice")
    g_inv = np.linalg.inv(g)
    # Both matrices are symmetric by construction; remove inversion asymmetry.
    g_inv = 0.5 * (g_inv + g_inv.T)
    return MetricTensor(g=g, g_inv=g_inv)


def identity_metric(d: int) -> MetricTensor:
    eye = np.eye(d)
    return MetricTensor(g=eye, g_inv=eye.copy())


def _as_vector(xi: ArrayLike, m: MetricTensor) -> NDArray[np.float64]:
    vector = np.asarray(xi, dtype=float)
    if vector.shape[-1] != m.dimension:
        raise NFTorusValidationError(
            f"Covector of dimension {vector.shape[-1]} used with a {m.dimension}-d metric"
        )
    return vector


def inner(xi: ArrayLike, eta: ArrayLike, m: MetricTensor) -> float | NDArray[np.float64]:
    """Metric scalar product sum_AB g^AB xi_A eta_B (broadcasts over leading axes)."""
    left = _as_vector(xi, m)
    right = _as_vector(eta, m)
    value = np.einsum("...a,ab,...b->...", left, m.g_inv, right)
    if left.ndim == 1 and right.ndim == 1:
        return float(value)
    return value


def norm(xi: ArrayLike, m: MetricTensor) -> float | NDArray[np.float64]:
    return np.sqrt(np.maximum(inner(xi, xi, m), 0.0))


def jap_bracket(xi: ArrayLike, m: MetricTensor) -> float | NDArray[np.float64]:
    """<xi> = (1 + ||xi||^2)^(1/2) with the metric norm."""
    return np.sqrt(1.0 + np.maximum(inner(xi, xi, m), 0.0))
