"""Normal-form parameters, smooth cutoffs and the four-way operator decomposition."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import MetricTensor, inner, jap_bracket, norm
from nftorus.weyl import ModeSet, OperatorMatrix

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class NFParams:
    delta: float
    epsilon: float
    tau: float
    m: float
    d: int

    @property
    def delta_star(self) -> float:
        return self.delta + self.d * (self.d + self.tau + 1) * self.epsilon

    def require_valid(self) -> NFParams:
        violations = validate_params(self)
        if violations:
            raise NFTorusValidationError("; ".join(violations), violations)
        return self


def validate_params(p: NFParams) -> list[str]:
    """Names of the violated parameter inequalities; an empty list means ok."""
    violations = []
    if p.d < 1:
        violations.append("d < 1")
    if not p.epsilon * (p.tau + 1) > 0:
        violations.append("ε(τ+1) ≤ 0")
    if not p.epsilon * (p.tau + 1) < p.delta:
        violations.append("ε(τ+1) ≥ δ")
    if not p.delta < 1:
        violations.append("δ ≥ 1")
    if not p.tau >= p.d - 1:
        violations.append("τ < d−1")
    if not p.delta_star < 1:
        violations.append("δ* = δ + d(d+τ+1)ε ≥ 1")
    if not p.m < 2 * p.delta:
        violations.append("m ≥ 2δ")
    if not p.m < 2:
        violations.append("m ≥ 2")
    return violations


def _bump(s: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.zeros_like(s)
    positive = s > 0
    out[positive] = np.exp(-1.0 / s[positive])
    return out


def chi(y: ArrayLike) -> float | NDArray[np.float64]:
    """Even cutoff: 1 on |y| <= 1/2, 0 on |y| >= 1, exp-based blend in between."""
    magnitude = np.abs(np.asarray(y, dtype=float))
    out = np.where(magnitude <= 0.5, 1.0, 0.0)
    blend = (magnitude > 0.5) & (magnitude < 1.0)
    if np.any(blend):
        inner_part = _bump(2.0 * (1.0 - magnitude[blend]))
        outer_part = _bump(2.0 * (magnitude[blend] - 0.5))
        out[blend] = inner_part / (inner_part + outer_part)
    if out.ndim == 0:
        return float(out)
    return out


def _check_k(k: ArrayLike) -> NDArray[np.float64]:
    k_vec = np.asarray(k, dtype=float)
    if not np.any(k_vec):
        raise NFTorusValidationError("Cutoffs chi_k are undefined for k = 0")
    return k_vec


def chi_k(eta: ArrayLike, k: ArrayLike, p: NFParams, m: MetricTensor) -> float:
    """chi(2 ||k||^tau inner(eta, k) / <eta>^delta)."""
    k_vec = _check_k(k)
    argument = 2.0 * norm(k_vec, m) ** p.tau * inner(eta, k_vec, m) / jap_bracket(eta, m) ** p.delta
    return float(chi(argument))


def tilde_chi_k(eta: ArrayLike, k: ArrayLike, p: NFParams, m: MetricTensor) -> float:
    """chi(||k|| / <eta>^epsilon)."""
    k_vec = _check_k(k)
    return float(chi(norm(k_vec, m) / jap_bracket(eta, m) ** p.epsilon))


@dataclass(frozen=True)
class MaskWeights:
    """Per-entry cutoff values at the Weyl midpoints (off-diagonal entries only)."""

    chi: NDArray[np.float64]
    tilde_chi: NDArray[np.float64]
    support: NDArray[np.bool_]


@functools.lru_cache(maxsize=8)
def mask_weights(modes: ModeSet, p: NFParams) -> MaskWeights:
    """chi_k, tilde chi_k and the normal-form support predicate on every entry."""
    geometry = modes.geometry()
    off = geometry.off_diagonal
    k_pow = np.where(off, geometry.k_norm, 1.0) ** p.tau
    y_res = 2.0 * k_pow * geometry.eta_dot_k / geometry.eta_bracket**p.delta
    y_short = geometry.k_norm / geometry.eta_bracket**p.epsilon
    support = (
        off
        & (np.abs(geometry.eta_dot_k) * k_pow <= geometry.eta_bracket**p.delta)
        & (geometry.k_norm <= geometry.eta_bracket**p.epsilon)
    )
    weights = MaskWeights(
        chi=np.where(off, chi(y_res), 0.0),
        tilde_chi=np.where(off, chi(y_short), 0.0),
        support=support,
    )
    LOGGER.debug(
        "Mask weights on %d modes: %d entries in the normal-form support",
        modes.size,
        int(np.count_nonzero(support)),
    )
    return weights


def check_metric(modes: ModeSet, m: MetricTensor) -> None:
    if m is not modes.metric and m.fingerprint() != modes.metric.fingerprint():
        raise NFTorusValidationError("Metric differs from the metric of the mode set")


@dataclass(frozen=True)
class Decomposition:
    avg: OperatorMatrix
    res: OperatorMatrix
    nr: OperatorMatrix
    smooth: OperatorMatrix

    def total(self) -> OperatorMatrix:
        return self.avg + self.res + self.nr + self.smooth


def decompose(A: OperatorMatrix, p: NFParams, m: MetricTensor) -> Decomposition:  # noqa: N803
    """Split A into average, resonant, nonresonant and smoothing parts fiber by fiber."""
    modes = A.modes
    check_metric(modes, m)
    weights = mask_weights(modes, p)
    diagonal = np.diag(np.diag(A.entries))
    off = A.entries - diagonal
    res = off * (weights.chi * weights.tilde_chi)
    nr = off * ((1.0 - weights.chi) * weights.tilde_chi)
    smooth = off * (1.0 - weights.tilde_chi)
    return Decomposition(
        avg=OperatorMatrix(modes, diagonal),
        res=OperatorMatrix(modes, res),
        nr=OperatorMatrix(modes, nr),
        smooth=OperatorMatrix(modes, smooth),
    )


def normal_form_defect(A: OperatorMatrix, p: NFParams, m: MetricTensor) -> float:  # noqa: N803
    """Largest |entry| of A outside the normal-form support (diagonal excluded)."""
    check_metric(A.modes, m)
    weights = mask_weights(A.modes, p)
    outside = A.modes.geometry().off_diagonal & ~weights.support
    if not np.any(outside):
        return 0.0
    return float(np.max(np.abs(A.entries[outside])))


def is_normal_form(A: OperatorMatrix, p: NFParams, m: MetricTensor, tol: float = 0.0) -> bool:  # noqa: N803
    """True iff every nonzero off-diagonal entry lies in the normal-form support."""
    return normal_form_defect(A, p, m) <= tol
