"""Truncated Weyl quantization and the dense operator algebra built on it."""

from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import MetricTensor, inner
from nftorus.policies import NumericalPolicy, resolve_policy
from nftorus.symbols import Mode, SymbolSpec, fiber_coefficients

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class FiberGeometry:
    """Pairwise fiber data of a mode set, entry (row xi', col xi) with k = xi' - xi.

    ``eta_dot_k`` is inner(eta, k) at the Weyl midpoint eta = xi + k/2, which
    equals (||xi'||^2 - ||xi||^2) / 2, i.e. half the Laplacian commutator factor.
    """

    k_norm: NDArray[np.float64]
    eta_bracket: NDArray[np.float64]
    eta_dot_k: NDArray[np.float64]
    off_diagonal: NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Fourier modes xi in Z^d with <xi> <= cutoff, in lexicographic order."""

    cutoff: float
    metric: MetricTensor
    modes: NDArray[np.int64]
    index: Mapping[Mode, int]
    squared_norms: NDArray[np.float64]
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _pairs: dict[Mode, tuple[NDArray[np.intp], NDArray[np.intp]]] = field(
        default_factory=dict, repr=False
    )
    _geometry: list[FiberGeometry] = field(default_factory=list, repr=False)

    @classmethod
    def build(cls, cutoff: float, metric: MetricTensor) -> ModeSet:
        if cutoff < 1.0:
            raise NFTorusValidationError(f"Cutoff {cutoff} excludes every mode (<0> = 1)")
        radius2 = cutoff**2 - 1.0
        smallest = float(np.min(np.linalg.eigvalsh(metric.g_inv)))
        bound = int(math.floor(math.sqrt(radius2 / smallest))) + 1
        axis = range(-bound, bound + 1)
        candidates = np.array(list(itertools.product(axis, repeat=metric.dimension)), dtype=np.int64)
        squared = np.asarray(inner(candidates, candidates, metric), dtype=float)
        keep = squared <= radius2 * (1.0 + 1e-12) + 1e-12
        modes = candidates[keep]
        index = {tuple(int(v) for v in row): i for i, row in enumerate(modes)}
        LOGGER.debug("Mode set at cutoff %.4g has %d modes", cutoff, len(modes))
        return cls(
            cutoff=float(cutoff),
            metric=metric,
            modes=modes,
            index=index,
            squared_norms=squared[keep],
        )

    @property
    def size(self) -> int:
        return int(self.modes.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.modes.shape[1])

    @property
    def brackets(self) -> NDArray[np.float64]:
        return np.sqrt(1.0 + self.squared_norms)

    def inner_cutoff(self, buffer: float) -> float:
        return self.cutoff * (1.0 - buffer)

    def inner_mask(self, buffer: float) -> NDArray[np.bool_]:
        """Modes of the inner annulus <xi> <= cutoff * (1 - buffer)."""
        return self.brackets <= self.inner_cutoff(buffer) * (1.0 + 1e-12)

    def same_as(self, other: ModeSet) -> bool:
        """Same modes in the same order under the same metric."""
        if other is self:
            return True
        return (
            self.modes.shape == other.modes.shape
            and bool(np.array_equal(self.modes, other.modes))
            and self.metric.fingerprint() == other.metric.fingerprint()
        )

    def position(self, xi: ArrayLike) -> int:
        key = tuple(int(v) for v in np.asarray(xi).ravel())
        try:
            return self.index[key]
        except KeyError as exc:
            raise NFTorusValidationError(f"Mode {key} is outside the mode set") from exc

    def shift_pairs(self, k: ArrayLike) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
        """Index arrays (rows, cols) with modes[rows] = modes[cols] + k."""
        key = tuple(int(v) for v in np.asarray(k).ravel())
        if len(key) != self.dimension:
            raise NFTorusValidationError(
                f"Fourier mode {key} does not match the {self.dimension}-d mode set"
            )
        with self._lock:
            cached = self._pairs.get(key)
            if cached is not None:
                return cached
            rows, cols = [], []
            for col, xi in enumerate(self.modes):
                row = self.index.get(tuple(int(a + b) for a, b in zip(xi, key)))
                if row is not None:
                    rows.append(row)
                    cols.append(col)
            pairs = (np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))
            self._pairs[key] = pairs
            return pairs

    def geometry(self) -> FiberGeometry:
        with self._lock:
            if self._geometry:
                return self._geometry[0]
            diff = self.modes[:, None, :] - self.modes[None, :, :]
            total = self.modes[:, None, :] + self.modes[None, :, :]
            g_inv = self.metric.g_inv
            k_norm2 = np.einsum("ija,ab,ijb->ij", diff, g_inv, diff)
            eta_norm2 = np.einsum("ija,ab,ijb->ij", total, g_inv, total) / 4.0
            geometry = FiberGeometry(
                k_norm=np.sqrt(np.maximum(k_norm2, 0.0)),
                eta_bracket=np.sqrt(1.0 + np.maximum(eta_norm2, 0.0)),
                eta_dot_k=0.5 * (self.squared_norms[:, None] - self.squared_norms[None, :]),
                off_diagonal=~np.eye(self.size, dtype=bool),
            )
            self._geometry.append(geometry)
            return geometry


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense operator on a mode set; entry (xi', xi) carries the k = xi' - xi fiber."""

    modes: ModeSet
    entries: NDArray[np.complex128]

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=complex)
        n = self.modes.size
        if entries.shape != (n, n):
            raise NFTorusValidationError(
                f"Operator of shape {entries.shape} does not match {n} modes"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def zeros(cls, modes: ModeSet) -> OperatorMatrix:
        return cls(modes, np.zeros((modes.size, modes.size), dtype=complex))

    @classmethod
    def identity(cls, modes: ModeSet) -> OperatorMatrix:
        return cls(modes, np.eye(modes.size, dtype=complex))

    @classmethod
    def diagonal(cls, modes: ModeSet, values: ArrayLike) -> OperatorMatrix:
        return cls(modes, np.diag(np.asarray(values, dtype=complex)))

    def _check_same(self, other: OperatorMatrix) -> None:
        if not self.modes.same_as(other.modes):
            raise NFTorusValidationError("Operators live on different mode sets")

    def __add__(self, other: OperatorMatrix) -> OperatorMatrix:
        self._check_same(other)
        return OperatorMatrix(self.modes, self.entries + other.entries)

    def __sub__(self, other: OperatorMatrix) -> OperatorMatrix:
        self._check_same(other)
        return OperatorMatrix(self.modes, self.entries - other.entries)

    def __neg__(self) -> OperatorMatrix:
        return OperatorMatrix(self.modes, -self.entries)

    def __mul__(self, factor: complex) -> OperatorMatrix:
        return OperatorMatrix(self.modes, self.entries * factor)

    __rmul__ = __mul__

    def __matmul__(self, other: OperatorMatrix) -> OperatorMatrix:
        self._check_same(other)
        return OperatorMatrix(self.modes, self.entries @ other.entries)

    def adjoint(self) -> OperatorMatrix:
        return OperatorMatrix(self.modes, self.entries.conj().T)

    def hermitian_part(self) -> OperatorMatrix:
        return OperatorMatrix(self.modes, 0.5 * (self.entries + self.entries.conj().T))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.entries))) if self.entries.size else 0.0

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries))

    def hermiticity_defect(self) -> float:
        """max |A - A^dagger| relative to max(1, max |A|)."""
        defect = float(np.max(np.abs(self.entries - self.entries.conj().T)))
        return defect / max(1.0, self.max_abs())

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.hermiticity_defect() <= tol

    def entry(self, row_mode: ArrayLike, col_mode: ArrayLike) -> complex:
        return complex(self.entries[self.modes.position(row_mode), self.modes.position(col_mode)])


def quantize(spec: SymbolSpec, t: float, modes: ModeSet) -> OperatorMatrix:
    """Weyl quantization: entry(xi + k, xi) = v_k(t, xi + k/2), dropped outside the modes."""
    entries = np.zeros((modes.size, modes.size), dtype=complex)
    for k, contributions in fiber_coefficients(spec, t).items():
        rows, cols = modes.shift_pairs(k)
        if rows.size == 0:
            continue
        doubled_eta = modes.modes[rows] + modes.modes[cols]
        bracket = np.sqrt(1.0 + np.asarray(inner(doubled_eta, doubled_eta, modes.metric)) / 4.0)
        values = np.zeros(rows.size, dtype=complex)
        for coefficient, order in contributions:
            values += coefficient * bracket**order
        entries[rows, cols] += values
    return OperatorMatrix(modes, entries)


def laplacian_matrix(modes: ModeSet, m: MetricTensor) -> OperatorMatrix:
    """-Delta_g on the mode set: diagonal with entries ||xi||^2."""
    return OperatorMatrix.diagonal(modes, inner(modes.modes, modes.modes, m))


def dequantize(A: OperatorMatrix, k: ArrayLike) -> dict[tuple[float, ...], complex]:  # noqa: N803
    """Read off the k-fiber {eta = xi + k/2 -> entry(xi + k, xi)}."""
    modes = A.modes
    k_vec = np.asarray(k, dtype=np.int64).ravel()
    rows, cols = modes.shift_pairs(k_vec)
    midpoints = modes.modes[cols] + k_vec / 2.0
    return {
        tuple(float(v) for v in eta): complex(A.entries[row, col])
        for eta, row, col in zip(midpoints, rows, cols)
    }


def from_fibers(
    fibers: Mapping[Mode, Mapping[tuple[float, ...], complex]],
    modes: ModeSet,
) -> OperatorMatrix:
    """Assemble an operator from fibers k -> {eta -> value}; inverse of dequantize."""
    entries = np.zeros((modes.size, modes.size), dtype=complex)
    for k, fiber in fibers.items():
        k_vec = np.asarray(k, dtype=float)
        for eta, value in fiber.items():
            xi = np.rint(np.asarray(eta, dtype=float) - k_vec / 2.0).astype(np.int64)
            col = modes.index.get(tuple(int(v) for v in xi))
            row = modes.index.get(tuple(int(v) for v in xi + k_vec.astype(np.int64)))
            if row is None or col is None:
                continue
            entries[row, col] = value
    return OperatorMatrix(modes, entries)


def commutator(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:  # noqa: N803
    return OperatorMatrix(A.modes, A.entries @ B.entries - B.entries @ A.entries)


@dataclass(frozen=True)
class HermitianEigensystem:
    """Eigendecomposition G = V diag(lam) V^dagger reused for exponentials."""

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.complex128]

    @classmethod
    def of(cls, G: OperatorMatrix, policy: NumericalPolicy | None = None) -> HermitianEigensystem:  # noqa: N803
        policy = resolve_policy(policy)
        defect = G.hermiticity_defect()
        if defect > policy.hermitian_tol:
            raise NFTorusValidationError(
                f"Generator is not Hermitian (relative defect {defect:.3e})"
            )
        eigenvalues, eigenvectors = scipy.linalg.eigh(G.hermitian_part().entries)
        return cls(eigenvalues, eigenvectors)

    def in_basis(self, A: NDArray[np.complex128]) -> NDArray[np.complex128]:  # noqa: N803
        return self.eigenvectors.conj().T @ A @ self.eigenvectors

    def from_basis(self, A: NDArray[np.complex128]) -> NDArray[np.complex128]:  # noqa: N803
        return self.eigenvectors @ A @ self.eigenvectors.conj().T

    def phases(self, tau: float) -> NDArray[np.complex128]:
        return np.exp(1j * tau * self.eigenvalues)

    def exp(self, tau: float) -> NDArray[np.complex128]:
        """e^{i tau G}."""
        return (self.eigenvectors * self.phases(tau)) @ self.eigenvectors.conj().T

    def conjugate(self, A: NDArray[np.complex128], tau: float) -> NDArray[np.complex128]:  # noqa: N803
        """e^{i tau G} A e^{-i tau G}."""
        phase = self.phases(tau)
        return self.from_basis(phase[:, None] * self.in_basis(A) * phase.conj()[None, :])

    def averaged_conjugate(
        self,
        A: NDArray[np.complex128],  # noqa: N803
        taus: Sequence[float],
        weights: Sequence[float],
    ) -> NDArray[np.complex128]:
        """sum_q w_q e^{i tau_q G} A e^{-i tau_q G}, one change of basis for all nodes."""
        gaps = self.eigenvalues[:, None] - self.eigenvalues[None, :]
        kernel = np.zeros_like(gaps, dtype=complex)
        for tau, weight in zip(taus, weights):
            kernel += weight * np.exp(1j * tau * gaps)
        return self.from_basis(kernel * self.in_basis(A))


def conjugate_exact(
    A: OperatorMatrix,  # noqa: N803
    G: OperatorMatrix,  # noqa: N803
    tau: float,
    policy: NumericalPolicy | None = None,
) -> OperatorMatrix:
    """e^{i tau G} A e^{-i tau G} through the eigendecomposition of G."""
    if not np.any(G.entries):
        return OperatorMatrix(A.modes, A.entries.copy())
    system = HermitianEigensystem.of(G, policy)
    return OperatorMatrix(A.modes, system.conjugate(A.entries, tau))


def lie_series(
    A: OperatorMatrix,  # noqa: N803
    G: OperatorMatrix,  # noqa: N803
    tau: float,
    N: int,  # noqa: N803
) -> OperatorMatrix:
    """sum_{j=0}^{N} (i tau)^j Ad_G^j(A) / j! with Ad_G(B) = [G, B]."""
    term = A.entries.copy()
    total = term.copy()
    for j in range(1, N + 1):
        term = (1j * tau / j) * (G.entries @ term - term @ G.entries)
        total += term
    return OperatorMatrix(A.modes, total)


def hermitian_expm(H: OperatorMatrix, dt: float, policy: NumericalPolicy | None = None) -> OperatorMatrix:  # noqa: N803
    """e^{-i dt H} for Hermitian H."""
    system = HermitianEigensystem.of(H, policy)
    return OperatorMatrix(H.modes, system.exp(-dt))


def sobolev_opnorm(
    A: OperatorMatrix,  # noqa: N803
    sigma1: float,
    sigma2: float,
    *,
    method: str = "power",
    policy: NumericalPolicy | None = None,
) -> float:
    """||A||_{sigma1 -> sigma2}: top singular value of D^sigma2 A D^-sigma1, D = diag(<xi>)."""
    policy = resolve_policy(policy)
    brackets = A.modes.brackets
    weighted = (brackets**sigma2)[:, None] * A.entries * (brackets ** (-sigma1))[None, :]
    if not np.any(weighted):
        return 0.0
    if method == "svd":
        return float(scipy.linalg.svdvals(weighted)[0])
    if method != "power":
        raise NFTorusValidationError(f"Unknown operator norm method {method!r}")

    rng = np.random.default_rng(0)
    x = rng.standard_normal(A.modes.size) + 1j * rng.standard_normal(A.modes.size)
    x /= np.linalg.norm(x)
    ratio_old = math.inf
    ratio = 0.0
    for iteration in range(policy.power_max_iter):
        y = weighted @ x
        ratio = float(np.linalg.norm(y))
        if ratio == 0.0:
            return 0.0
        if abs(ratio - ratio_old) / ratio < policy.power_tol:
            LOGGER.debug("Power iteration converged after %d iterations", iteration + 1)
            return ratio
        ratio_old = ratio
        x = weighted.conj().T @ y
        x /= np.linalg.norm(x)
    LOGGER.warning(
        "Power iteration did not reach tolerance %.1e in %d iterations",
        policy.power_tol,
        policy.power_max_iter,
    )
    return ratio
