"""Time-dependent symbols v(t, x, xi) in a closed trigonometric family."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import MetricTensor, identity_metric, jap_bracket
from nftorus.policies import NumericalPolicy, resolve_policy

if TYPE_CHECKING:
    from nftorus.resonance import NFParams

LOGGER = logging.getLogger(__name__)

PROFILE_KINDS = ("constant", "cosine", "sine")

Mode = tuple[int, ...]


@dataclass(frozen=True)
class TimeProfile:
    """Scalar time factor: a, a cos(omega t) or a sin(omega t)."""

    kind: str = "constant"
    omega: float = 0.0
    amp: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in PROFILE_KINDS:
            raise NFTorusValidationError(
                f"Unsupported time profile kind {self.kind!r}; expected one of {PROFILE_KINDS}"
            )

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.amp
        if self.kind == "cosine":
            return self.amp * math.cos(self.omega * t)
        return self.amp * math.sin(self.omega * t)

    def derivative(self) -> TimeProfile | None:
        """Exact d/dt inside the family; None stands for the zero profile."""
        if self.kind == "constant":
            return None
        if self.kind == "cosine":
            return TimeProfile("sine", self.omega, -self.amp * self.omega)
        return TimeProfile("cosine", self.omega, self.amp * self.omega)


@dataclass(frozen=True)
class SymbolTerm:
    """profile(t) * sum_k c_k e^{ik.x} * <xi>^order."""

    profile: TimeProfile
    coeffs: Mapping[Mode, complex]
    order: float = 0.0

    def __post_init__(self) -> None:
        normalized: dict[Mode, complex] = {}
        for k, value in dict(self.coeffs).items():
            key = tuple(int(component) for component in k)
            normalized[key] = normalized.get(key, 0j) + complex(value)
        dims = {len(k) for k in normalized}
        if len(dims) > 1:
            raise NFTorusValidationError(f"Mixed Fourier dimensions in symbol term: {sorted(dims)}")
        object.__setattr__(self, "coeffs", normalized)


@dataclass(frozen=True)
class SymbolSpec:
    """Finite sum of symbol terms with a declared order >= every term order."""

    terms: tuple[SymbolTerm, ...] = ()
    declared_order: float | None = field(default=None)

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        top = max((term.order for term in terms), default=0.0)
        if self.declared_order is None:
            object.__setattr__(self, "declared_order", float(top))
        elif self.declared_order < top:
            raise NFTorusValidationError(
                f"Declared order {self.declared_order} below term order {top}"
            )

    @property
    def order(self) -> float:
        return float(self.declared_order or 0.0)

    def support(self) -> list[Mode]:
        """Union of the Fourier supports, sorted."""
        return sorted({k for term in self.terms for k in term.coeffs})

    def is_zero(self) -> bool:
        return all(
            term.profile.amp == 0 or all(c == 0 for c in term.coeffs.values())
            for term in self.terms
        )

    def scaled(self, factor: float) -> SymbolSpec:
        terms = tuple(
            replace(term, profile=replace(term.profile, amp=term.profile.amp * factor))
            for term in self.terms
        )
        return SymbolSpec(terms, self.declared_order)

    def __add__(self, other: SymbolSpec) -> SymbolSpec:
        return SymbolSpec(self.terms + other.terms, max(self.order, other.order))


def fiber_coefficients(spec: SymbolSpec, t: float) -> dict[Mode, list[tuple[complex, float]]]:
    """Group the symbol terms by Fourier mode: k -> [(profile(t) * c_k, order), ...]."""
    fibers: dict[Mode, list[tuple[complex, float]]] = {}
    for term in spec.terms:
        weight = term.profile.value(t)
        if weight == 0:
            continue
        for k, c in term.coeffs.items():
            if c == 0:
                continue
            fibers.setdefault(k, []).append((weight * c, term.order))
    return fibers


def evaluate_coefficient(
    spec: SymbolSpec,
    t: float,
    k: ArrayLike,
    xi: ArrayLike,
    m: MetricTensor | None = None,
) -> complex:
    """Return v_k(t, xi) = sum over terms of profile(t) * c_k * <xi>^order."""
    xi_vec = np.asarray(xi, dtype=float)
    metric = m or identity_metric(xi_vec.shape[-1])
    key = tuple(int(component) for component in np.asarray(k).ravel())
    bracket = float(jap_bracket(xi_vec, metric))
    value = 0j
    for term in spec.terms:
        c = term.coeffs.get(key)
        if c is None:
            continue
        value += term.profile.value(t) * c * bracket**term.order
    return complex(value)


def is_real_valued(spec: SymbolSpec) -> bool:
    """True iff conj(c_{-k}) == c_k for every term and every k."""
    for term in spec.terms:
        for k, c in term.coeffs.items():
            mirror = term.coeffs.get(tuple(-component for component in k), 0j)
            if np.conj(mirror) != c:
                return False
    return True


def _coefficient_vector(
    spec: SymbolSpec,
    t: float,
    support: Sequence[Mode],
    xi: NDArray[np.float64],
    m: MetricTensor,
) -> NDArray[np.complex128]:
    return np.array([evaluate_coefficient(spec, t, k, xi, m) for k in support], dtype=complex)


def _difference_weights(order: int, step: float) -> list[tuple[float, float]]:
    """Central difference of the given order: [(offset, weight), ...]."""
    return [
        ((order / 2.0 - j) * step, (-1) ** j * math.comb(order, j) / step**order)
        for j in range(order + 1)
    ]


def estimate_seminorm(
    spec: SymbolSpec,
    N1: int,  # noqa: N803
    N2: int,  # noqa: N803
    params: NFParams,
    grid: Iterable[ArrayLike],
    *,
    t: float = 0.0,
    m: MetricTensor | None = None,
    policy: NumericalPolicy | None = None,
) -> float:
    """Lower bound on sup |d_x^N1 d_xi^N2 v| / <xi>^(m - delta N2) over sampled (x, xi).

    x-derivatives are exact on the Fourier support; xi-derivatives are central
    differences with step ``policy.xi_step``. Both are maximized over the
    coordinate directions.
    """
    policy = resolve_policy(policy)
    points = [np.asarray(xi, dtype=float) for xi in grid]
    if not points:
        raise NFTorusValidationError("estimate_seminorm needs a nonempty xi grid")
    if N1 < 0 or N2 < 0:
        raise NFTorusValidationError("Derivative orders must be nonnegative")
    d = points[0].shape[-1]
    metric = m or identity_metric(d)
    support = spec.support()
    if not support:
        return 0.0
    ks = np.array(support, dtype=float)

    axis = 2.0 * np.pi * np.arange(policy.x_samples) / policy.x_samples
    xs = np.array(list(itertools.product(axis, repeat=d)))
    phases = np.exp(1j * xs @ ks.T)

    if N1 == 0:
        x_factors = [np.ones(len(support), dtype=complex)]
    else:
        x_factors = [(1j * ks[:, a]) ** N1 for a in range(d)]
    if N2 == 0:
        xi_stencils: list[list[tuple[NDArray[np.float64], float]]] = [[(np.zeros(d), 1.0)]]
    else:
        xi_stencils = []
        for a in range(d):
            unit = np.zeros(d)
            unit[a] = 1.0
            xi_stencils.append(
                [(offset * unit, weight) for offset, weight in _difference_weights(N2, policy.xi_step)]
            )

    exponent = spec.order - params.delta * N2
    best = 0.0
    for xi in points:
        cache: dict[tuple[float, ...], NDArray[np.complex128]] = {}
        for stencil in xi_stencils:
            combined = np.zeros(len(support), dtype=complex)
            for shift, weight in stencil:
                shifted = xi + shift
                key = tuple(shifted.tolist())
                if key not in cache:
                    cache[key] = _coefficient_vector(spec, t, support, shifted, metric)
                combined += weight * cache[key]
            for factor in x_factors:
                values = phases @ (combined * factor)
                best = max(best, float(np.max(np.abs(values))) / float(jap_bracket(xi, metric)) ** exponent)
    LOGGER.debug("Seminorm C_(%d,%d) >= %.6g over %d xi points", N1, N2, best, len(points))
    return best


def time_derivative(spec: SymbolSpec) -> SymbolSpec:
    """Exact d/dt: constants drop, cosine and sine swap with the chain-rule factor."""
    terms = []
    for term in spec.terms:
        profile = term.profile.derivative()
        if profile is None:
            continue
        terms.append(replace(term, profile=profile))
    return SymbolSpec(tuple(terms), spec.declared_order)
