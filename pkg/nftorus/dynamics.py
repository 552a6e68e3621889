"""Unitary evolution, Sobolev norm traces and growth fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from nftorus.clusters import Partition, block_invariance_defect
from nftorus.errors import NFTorusNumericalError, NFTorusValidationError
from nftorus.geometry import MetricTensor, jap_bracket
from nftorus.normal_form import NFResult, SampledFamily
from nftorus.policies import NumericalPolicy, parallel_map, resolve_policy
from nftorus.symbols import SymbolSpec
from nftorus.weyl import (
    ModeSet,
    OperatorMatrix,
    laplacian_matrix,
    quantize,
    sobolev_opnorm,
)

LOGGER = logging.getLogger(__name__)

HamiltonianBuilder = Union[Callable[[float], OperatorMatrix], OperatorMatrix]
_DenseBuilder = Union[Callable[[float], NDArray[np.complex128]], NDArray[np.complex128]]


@dataclass(frozen=True, eq=False)
class StateVector:
    """Fourier coefficients psi_xi on a mode set."""

    modes: ModeSet
    coefficients: NDArray[np.complex128]

    def __post_init__(self) -> None:
        coefficients = np.asarray(self.coefficients, dtype=complex)
        if coefficients.shape != (self.modes.size,):
            raise NFTorusValidationError(
                f"State of shape {coefficients.shape} does not match {self.modes.size} modes"
            )
        if not np.all(np.isfinite(coefficients)):
            raise NFTorusValidationError("State has non-finite coefficients")
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def plane_wave(cls, modes: ModeSet, xi: ArrayLike) -> StateVector:
        coefficients = np.zeros(modes.size, dtype=complex)
        coefficients[modes.position(xi)] = 1.0
        return cls(modes, coefficients)

    @classmethod
    def random(cls, modes: ModeSet, seed: int, decay: float = 1.0) -> StateVector:
        """Unit state with Gaussian coefficients damped by <xi>^-decay."""
        rng = np.random.Generator(np.random.Philox(seed))
        raw = rng.standard_normal(modes.size) + 1j * rng.standard_normal(modes.size)
        coefficients = raw * modes.brackets ** (-decay)
        return cls(modes, coefficients / np.linalg.norm(coefficients))

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def support(self) -> NDArray[np.intp]:
        return np.flatnonzero(self.coefficients)


def sobolev_norm(psi: StateVector, sigma: float, m: MetricTensor) -> float:
    """(sum <xi>^(2 sigma) |psi_xi|^2)^(1/2)."""
    brackets = np.asarray(jap_bracket(psi.modes.modes, m), dtype=float)
    return float(np.linalg.norm(brackets**sigma * psi.coefficients))


@dataclass(frozen=True)
class NormTrace:
    times: NDArray[np.float64]
    norms: Mapping[float, NDArray[np.float64]]

    def __post_init__(self) -> None:
        for sigma, values in self.norms.items():
            if len(values) != len(self.times):
                raise NFTorusValidationError(f"Trace for sigma = {sigma} has the wrong length")

    @property
    def sigmas(self) -> list[float]:
        return sorted(self.norms)

    def sup_ratio(self, sigma: float) -> float:
        """sup_t ||psi(t)||_sigma / ||psi(s)||_sigma."""
        values = self.norms[sigma]
        return float(np.max(values) / values[0])

    def rows(self) -> list[list[float]]:
        return [
            [float(t)] + [float(self.norms[sigma][i]) for sigma in self.sigmas]
            for i, t in enumerate(self.times)
        ]


@dataclass(frozen=True, eq=False)
class Evolution:
    trace: NormTrace
    state: StateVector
    l2_drift: float


@dataclass(frozen=True)
class GrowthFit:
    exponent: float
    constant: float
    window: tuple[float, float]
    residual: float
    sigma: float = 2.0

    def to_dict(self) -> dict[str, object]:
        return {
            "sigma": self.sigma,
            "exponent": self.exponent,
            "constant": self.constant,
            "window": list(self.window),
            "residual": self.residual,
        }


def _step_count(s: float, t_end: float, h: float) -> tuple[int, float]:
    if not h > 0:
        raise NFTorusValidationError(f"Time step must be positive, got {h}")
    if t_end < s:
        raise NFTorusValidationError(f"t_end = {t_end} lies before s = {s}")
    steps = math.ceil((t_end - s) / h - 1e-9)
    if steps == 0:
        return 0, h
    return steps, (t_end - s) / steps


def _hermitian_system(
    H: NDArray[np.complex128],  # noqa: N803
    t: float,
    policy: NumericalPolicy,
) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
    defect = float(np.max(np.abs(H - H.conj().T))) / max(1.0, float(np.max(np.abs(H))))
    if defect > policy.hermitian_tol:
        raise NFTorusNumericalError(
            "non-Hermitian Hamiltonian sample", {"time": t, "relative_defect": defect}
        )
    try:
        return scipy.linalg.eigh(0.5 * (H + H.conj().T))
    except scipy.linalg.LinAlgError as exc:
        raise NFTorusNumericalError("eigendecomposition failed", {"time": t}) from exc


@dataclass
class _Propagation:
    times: list[float] = field(default_factory=list)
    squared: dict[float, list[float]] = field(default_factory=dict)
    state: NDArray[np.complex128] = field(default_factory=lambda: np.zeros(0, dtype=complex))


def _propagate(
    builder: _DenseBuilder,
    psi: NDArray[np.complex128],
    s: float,
    t_end: float,
    h: float,
    weights: Mapping[float, NDArray[np.float64]],
    policy: NumericalPolicy,
) -> _Propagation:
    """Exponential midpoint steps psi <- exp(-i h H(t + h/2)) psi.

    Records sum_xi w_sigma(xi) |psi_xi|^2 for every weight vector after each step.
    """
    steps, dt = _step_count(s, t_end, h)
    out = _Propagation(squared={sigma: [] for sigma in weights})
    state = np.array(psi, dtype=complex)

    def record(t: float) -> None:
        out.times.append(t)
        magnitude = np.abs(state) ** 2
        for sigma, weight in weights.items():
            out.squared[sigma].append(float(weight @ magnitude))

    record(s)
    if callable(builder):
        for n in range(steps):
            t = s + n * dt
            eigenvalues, vectors = _hermitian_system(np.asarray(builder(t + dt / 2.0)), t + dt / 2.0, policy)
            phases = np.exp(-1j * dt * eigenvalues).reshape((-1,) + (1,) * (state.ndim - 1))
            state = vectors @ (phases * (vectors.conj().T @ state))
            record(s + (n + 1) * dt)
    elif steps:
        eigenvalues, vectors = _hermitian_system(np.asarray(builder), s, policy)
        one_step = (vectors * np.exp(-1j * dt * eigenvalues)) @ vectors.conj().T
        for n in range(steps):
            state = one_step @ state
            record(s + (n + 1) * dt)
    out.state = state
    return out


def _dense(builder: HamiltonianBuilder) -> _DenseBuilder:
    if isinstance(builder, OperatorMatrix):
        return builder.entries
    if isinstance(builder, SampledFamily):
        return builder.at
    return lambda t: builder(t).entries


def _bracket_weights(modes: ModeSet, sigmas: Sequence[float]) -> dict[float, NDArray[np.float64]]:
    brackets = modes.brackets
    return {float(sigma): brackets ** (2.0 * sigma) for sigma in sigmas}


def evolve(
    H_builder: HamiltonianBuilder,  # noqa: N803
    psi0: StateVector,
    s: float,
    t_end: float,
    h: float,
    sigmas: Sequence[float] = (0.0, 1.0, 2.0),
    *,
    policy: NumericalPolicy | None = None,
) -> Evolution:
    """Evolve i d/dt psi = H(t) psi from s to t_end, landing exactly on t_end.

    A fixed OperatorMatrix is evolved with a single eigendecomposition.
    """
    policy = resolve_policy(policy)
    weights = _bracket_weights(psi0.modes, set(sigmas) | {0.0})
    run = _propagate(_dense(H_builder), psi0.coefficients, s, t_end, h, weights, policy)
    norms = {sigma: np.sqrt(np.asarray(values)) for sigma, values in run.squared.items()}
    drift = float(np.max(np.abs(norms[0.0] - norms[0.0][0])))
    trace = NormTrace(
        times=np.asarray(run.times),
        norms={float(sigma): norms[float(sigma)] for sigma in sigmas},
    )
    LOGGER.info("Evolved %d steps on %d modes, L2 drift %.2e", len(run.times) - 1, psi0.modes.size, drift)
    return Evolution(trace=trace, state=StateVector(psi0.modes, run.state), l2_drift=drift)


def propagator(
    H_builder: HamiltonianBuilder,  # noqa: N803
    modes: ModeSet,
    s: float,
    t: float,
    h: float,
    *,
    policy: NumericalPolicy | None = None,
) -> OperatorMatrix:
    """U(t, s) as a dense matrix, stepped like ``evolve``."""
    policy = resolve_policy(policy)
    run = _propagate(_dense(H_builder), np.eye(modes.size, dtype=complex), s, t, h, {}, policy)
    return OperatorMatrix(modes, run.state)


class FullHamiltonian:
    """t -> -Delta_g + quantize(V, t) on a mode set."""

    def __init__(self, spec: SymbolSpec, modes: ModeSet, metric: MetricTensor | None = None) -> None:
        self.spec = spec
        self.modes = modes
        self.laplacian = laplacian_matrix(modes, metric or modes.metric)

    def __call__(self, t: float) -> OperatorMatrix:
        return self.laplacian + quantize(self.spec, t, self.modes)


def _check_block_invariance(nf: NFResult, part: Partition) -> None:
    for j, Z in enumerate(nf.normal_forms):  # noqa: N806
        defect = block_invariance_defect(Z, part)
        if defect != 0.0:
            raise NFTorusNumericalError(
                "block invariance violated",
                {"sample": j, "time": float(nf.grid.times[j]), "max_cross_block_entry": defect},
            )


def evolve_blocks(
    nf: NFResult,
    part: Partition,
    psi0: StateVector,
    s: float,
    t_end: float,
    h: float,
    sigmas: Sequence[float] = (0.0, 1.0, 2.0),
    *,
    policy: NumericalPolicy | None = None,
) -> Evolution:
    """Evolve H~ = -Delta_g + Z_N block by block and merge the traces."""
    policy = resolve_policy(policy)
    if part.modes.size != nf.modes.size:
        raise NFTorusValidationError("Partition and normal form live on different mode sets")
    _check_block_invariance(nf, part)
    family = nf.normal_form_family()
    all_sigmas = sorted(set(float(sigma) for sigma in sigmas) | {0.0})
    brackets = psi0.modes.brackets
    steps, _ = _step_count(s, t_end, h)
    final = psi0.coefficients.copy()
    occupied = [block for block in part.blocks if np.any(psi0.coefficients[list(block.indices)])]

    def run_block(block_indices: tuple[int, ...]) -> _Propagation:
        indices = list(block_indices)
        weights = {sigma: brackets[indices] ** (2.0 * sigma) for sigma in all_sigmas}
        local = psi0.coefficients[indices]
        if len(indices) == 1:
            # 1x1 blocks only pick up a phase.
            single = family.restrict(indices)
            out = _Propagation(squared={sigma: [] for sigma in all_sigmas})
            phase = 0.0
            _, dt = _step_count(s, t_end, h)
            for n in range(steps + 1):
                out.times.append(s + n * dt)
                for sigma in all_sigmas:
                    out.squared[sigma].append(float(weights[sigma][0] * abs(local[0]) ** 2))
                if n < steps:
                    phase += dt * float(single.at(s + (n + 0.5) * dt)[0, 0].real)
            out.state = local * np.exp(-1j * phase)
            return out
        return _propagate(family.restrict(indices).at, local, s, t_end, h, weights, policy)

    runs = parallel_map(run_block, [block.indices for block in occupied], policy)
    times = np.asarray(runs[0].times) if runs else np.linspace(s, t_end, steps + 1)
    totals = {sigma: np.zeros(len(times)) for sigma in all_sigmas}
    block_drift = 0.0
    for block, run in zip(occupied, runs):
        for sigma in all_sigmas:
            totals[sigma] += np.asarray(run.squared[sigma])
        mass = np.sqrt(np.asarray(run.squared[0.0]))
        block_drift = max(block_drift, float(np.max(np.abs(mass - mass[0]))))
        final[list(block.indices)] = run.state
    norms = {sigma: np.sqrt(values) for sigma, values in totals.items()}
    LOGGER.info(
        "Block evolution over %d occupied blocks, worst per-block L2 drift %.2e", len(occupied), block_drift
    )
    trace = NormTrace(times=times, norms={float(sigma): norms[float(sigma)] for sigma in sigmas})
    return Evolution(trace=trace, state=StateVector(psi0.modes, final), l2_drift=block_drift)


@dataclass(frozen=True)
class DuhamelReport:
    k_prime: float
    k_prime_doubled: float
    sigma: float
    passed: bool

    def to_dict(self) -> dict[str, object]:
        return {
            "sigma": self.sigma,
            "k_prime": self.k_prime,
            "k_prime_doubled": self.k_prime_doubled,
            "pass": self.passed,
        }


def duhamel_bound_check(
    nf: NFResult,
    psi0: StateVector,
    s: float,
    t_end: float,
    h: float,
    sigma: float = 1.0,
    *,
    stability: float = 0.2,
    policy: NumericalPolicy | None = None,
) -> DuhamelReport:
    """Smallest K' with ||psi(t)||_sigma <= K' <t - s> ||psi0||_sigma under H~ + R.

    The flow is run to twice the horizon once; the check passes when K' over
    the doubled horizon stays within ``stability`` of K' over the first.
    """
    run = evolve(nf.full_family(), psi0, s, s + 2.0 * (t_end - s), h, (sigma,), policy=policy)
    values = run.trace.norms[float(sigma)]
    elapsed = run.trace.times - s
    ratios = values / (np.sqrt(1.0 + elapsed**2) * values[0])
    first = elapsed <= (t_end - s) * (1.0 + 1e-12)
    k_prime = float(np.max(ratios[first]))
    k_prime_doubled = float(np.max(ratios))
    passed = bool(np.isfinite(k_prime_doubled) and k_prime_doubled <= (1.0 + stability) * k_prime)
    LOGGER.info("Duhamel envelope K' = %.4g (doubled horizon %.4g)", k_prime, k_prime_doubled)
    return DuhamelReport(k_prime=k_prime, k_prime_doubled=k_prime_doubled, sigma=float(sigma), passed=passed)


def fit_growth(
    trace: NormTrace,
    sigma: float,
    window: tuple[float, float] | None = None,
) -> GrowthFit:
    """Least-squares fit log ||psi(t)||_sigma = log K + eps log <t - s> on the window."""
    if float(sigma) not in trace.norms:
        raise NFTorusValidationError(f"Trace has no sigma = {sigma} column")
    s = float(trace.times[0])
    t_a, t_b = window if window is not None else (s + 1.0, float(trace.times[-1]))
    selected = (trace.times >= t_a - 1e-12) & (trace.times <= t_b + 1e-12)
    if not t_b > t_a or np.count_nonzero(selected) < 2:
        raise NFTorusValidationError(f"degenerate window [{t_a}, {t_b}]")
    values = trace.norms[float(sigma)][selected]
    if np.any(values <= 0):
        raise NFTorusValidationError("Growth fit needs positive norms")
    x = 0.5 * np.log1p((trace.times[selected] - s) ** 2)
    y = np.log(values)
    if np.ptp(x) == 0:
        raise NFTorusValidationError(f"degenerate window [{t_a}, {t_b}]")
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return GrowthFit(
        exponent=float(slope),
        constant=float(np.exp(intercept)),
        window=(float(t_a), float(t_b)),
        residual=residual,
        sigma=float(sigma),
    )


@dataclass(frozen=True)
class InterpolationReport:
    lhs: float
    rhs: float
    passed: bool


def interpolation_check(
    U: OperatorMatrix,  # noqa: N803
    sigma: float,
    N: float,  # noqa: N803
    *,
    method: str = "svd",
    rtol: float = 1e-6,
    policy: NumericalPolicy | None = None,
) -> InterpolationReport:
    """||U||_{sigma,sigma} <= ||U||_{N,N}^theta ||U||_{0,0}^(1-theta), theta = sigma / N."""
    if not 0 < sigma < N:
        raise NFTorusValidationError(f"Interpolation needs 0 < sigma < N, got sigma = {sigma}, N = {N}")
    theta = sigma / N
    lhs = sobolev_opnorm(U, sigma, sigma, method=method, policy=policy)
    top = sobolev_opnorm(U, N, N, method=method, policy=policy)
    base = sobolev_opnorm(U, 0.0, 0.0, method=method, policy=policy)
    rhs = top**theta * base ** (1.0 - theta)
    return InterpolationReport(lhs=lhs, rhs=rhs, passed=bool(lhs <= rhs * (1.0 + rtol)))


@dataclass(frozen=True)
class ConsistencyReport:
    times: tuple[float, ...]
    errors: tuple[float, ...]

    @property
    def max_error(self) -> float:
        return max(self.errors, default=0.0)


def conjugation_consistency(
    V: SymbolSpec,  # noqa: N803
    nf: NFResult,
    psi0: StateVector,
    times: Sequence[float],
    h: float,
    *,
    policy: NumericalPolicy | None = None,
) -> ConsistencyReport:
    """L2 distance between the full flow and the transported H~ + R flow at sample times.

    Both flows start at the first grid time; phi(t0) = U_N(t0) psi0. Requested
    times are moved to the nearest sample time, where U_N is known.
    """
    policy = resolve_policy(policy)
    grid = nf.grid
    s = float(grid.t0)
    requested = sorted(float(t) for t in times)
    if requested and requested[0] < s:
        raise NFTorusValidationError(f"Comparison time {requested[0]} lies before t0 = {s}")
    stops = [grid.nearest_sample(t) for t in requested]
    for t, snapped in zip(requested, stops):
        if abs(t - snapped) > 1e-9:
            LOGGER.debug("Comparison time %.6g moved to sample time %.6g", t, snapped)
    indices = [grid.index_of(t) for t in stops]
    full = _dense(FullHamiltonian(V, nf.modes))
    reduced = _dense(nf.full_family())
    psi = psi0.coefficients.copy()
    phi = nf.conjugators[0] @ psi
    errors = []
    previous = s
    for t, j in zip(stops, indices):
        psi = _propagate(full, psi, previous, t, h, {}, policy).state
        phi = _propagate(reduced, phi, previous, t, h, {}, policy).state
        errors.append(float(np.linalg.norm(nf.transport(phi, j) - psi)))
        previous = t
    LOGGER.info("Conjugation consistency: max L2 error %.3e", max(errors, default=0.0))
    return ConsistencyReport(times=tuple(stops), errors=tuple(errors))
