"""Iterated normal-form driver on a uniform time grid.

Each step works sample by sample: the remainder is decomposed, the
homological equation is solved for the generator G, the averaged and
resonant parts are absorbed into Z, and the Hamiltonian is conjugated by
e^{iG} with the Duhamel correction for the time dependence of G. The
generators of all samples are computed before any conjugation starts, because
the time derivative of G reads neighbouring samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.interpolate
import scipy.linalg
from numpy.typing import NDArray

from nftorus.errors import NFTorusNumericalError, NFTorusValidationError
from nftorus.homological import solve_homological
from nftorus.policies import NumericalPolicy, parallel_map, resolve_policy
from nftorus.resonance import NFParams, decompose
from nftorus.symbols import SymbolSpec, is_real_valued, time_derivative
from nftorus.weyl import (
    HermitianEigensystem,
    ModeSet,
    OperatorMatrix,
    laplacian_matrix,
    lie_series,
    quantize,
)

LOGGER = logging.getLogger(__name__)

DERIVATIVE_METHODS = ("fd4", "spectral")
CONJUGATION_METHODS = ("exact", "lie")

# Number of neighbouring samples used for interpolation on non-periodic grids.
_INTERPOLATION_STENCIL = 6

_FD4_CENTRAL = (1.0, -8.0, 0.0, 8.0, -1.0)
_FD4_LEFT = ((-25.0, 48.0, -36.0, 16.0, -3.0), (-3.0, -10.0, 18.0, -6.0, 1.0))


@dataclass(frozen=True)
class TimeGrid:
    """M uniform samples on [t0, t1]; periodic grids leave out t1 (= t0 + period)."""

    t0: float
    t1: float
    samples: int
    periodic: bool = False

    def __post_init__(self) -> None:
        if not self.t1 > self.t0:
            raise NFTorusValidationError(f"Time grid needs t1 > t0, got [{self.t0}, {self.t1}]")
        if self.samples < 5:
            raise NFTorusValidationError(
                f"Time grid needs at least 5 samples for 4th-order differences, got {self.samples}"
            )

    @property
    def period(self) -> float:
        return self.t1 - self.t0

    @property
    def step(self) -> float:
        if self.periodic:
            return self.period / self.samples
        return self.period / (self.samples - 1)

    @property
    def times(self) -> NDArray[np.float64]:
        return self.t0 + self.step * np.arange(self.samples)

    def index_of(self, t: float) -> int:
        """Sample index at time t; raises unless t is a grid time."""
        position = (t - self.t0) / self.step
        j = int(round(position))
        if self.periodic:
            j %= self.samples
        if abs(position - round(position)) > 1e-9 or not 0 <= j < self.samples:
            raise NFTorusValidationError(f"t = {t} is not a sample time of the grid")
        return j

    def nearest_sample(self, t: float) -> float:
        """Grid time closest to t; periodic grids keep the winding, closed grids clip to [t0, t1]."""
        position = round((t - self.t0) / self.step)
        if not self.periodic:
            position = min(max(position, 0), self.samples - 1)
        return self.t0 + self.step * position


def derivative_weights(grid: TimeGrid, method: str = "fd4") -> NDArray[np.float64]:
    """Matrix D with (d/dt f)(t_j) ~ sum_l D[j, l] f(t_l)."""
    if method not in DERIVATIVE_METHODS:
        raise NFTorusValidationError(
            f"Unknown derivative method {method!r}; expected one of {DERIVATIVE_METHODS}"
        )
    M = grid.samples  # noqa: N806
    weights = np.zeros((M, M))
    if method == "spectral":
        if not grid.periodic:
            raise NFTorusValidationError("Spectral time derivatives need a periodic grid")
        offsets = np.subtract.outer(np.arange(M), np.arange(M))
        off = offsets != 0
        angle = np.pi * offsets[off] / M
        sign = np.where(offsets[off] % 2 == 0, 1.0, -1.0)
        kernel = 1.0 / np.tan(angle) if M % 2 == 0 else 1.0 / np.sin(angle)
        weights[off] = (np.pi / grid.period) * sign * kernel
        return weights

    scale = 1.0 / (12.0 * grid.step)
    for j in range(M):
        if grid.periodic or 2 <= j <= M - 3:
            for offset, w in zip(range(-2, 3), _FD4_CENTRAL):
                weights[j, (j + offset) % M] += w * scale
        elif j < 2:
            weights[j, :5] = np.asarray(_FD4_LEFT[j]) * scale
        else:
            mirrored = _FD4_LEFT[M - 1 - j]
            weights[j, M - 5 :] = -np.asarray(mirrored[::-1]) * scale
    return weights


def interpolation_weights(grid: TimeGrid, t: float) -> NDArray[np.float64]:
    """Weights w with f(t) ~ sum_j w[j] f(t_j).

    Periodic grids use the band-limited (periodic sinc) interpolant; other grids
    use barycentric interpolation on the six samples closest to t.
    """
    M = grid.samples  # noqa: N806
    h = grid.step
    if grid.periodic:
        x = 2.0 * np.pi * (t - grid.times) / grid.period
        x = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
        weights = np.ones(M)
        moving = np.abs(x) > 1e-14
        half = x[moving] / 2.0
        denominator = M * (np.tan(half) if M % 2 == 0 else np.sin(half))
        weights[moving] = np.sin(M * half) / denominator
        return weights

    if not grid.t0 - 1e-12 <= t <= grid.t1 + 1e-12:
        raise NFTorusValidationError(f"t = {t} lies outside the grid [{grid.t0}, {grid.t1}]")
    width = min(_INTERPOLATION_STENCIL, M)
    start = int(np.clip(math.floor((t - grid.t0) / h) - width // 2 + 1, 0, M - width))
    window = grid.times[start : start + width]
    weights = np.zeros(M)
    interpolant = scipy.interpolate.BarycentricInterpolator(window, np.eye(width), axis=0)
    weights[start : start + width] = interpolant(t)
    return weights


def gauss_legendre(nodes: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if nodes < 1:
        raise NFTorusValidationError("Quadrature needs at least one node")
    x, w = np.polynomial.legendre.leggauss(nodes)
    return (x + 1.0) / 2.0, w / 2.0


def _combine(arrays: Sequence[NDArray[np.complex128]], weights: NDArray[np.float64]) -> NDArray[np.complex128]:
    total = np.zeros_like(arrays[0])
    for array, weight in zip(arrays, weights):
        if weight != 0.0:
            total += weight * array
    return total


class SampledFamily:
    """Time-continuous operator family reconstructed from grid samples."""

    def __init__(
        self,
        grid: TimeGrid,
        samples: Sequence[NDArray[np.complex128]],
        modes: ModeSet | None = None,
    ) -> None:
        if len(samples) != grid.samples:
            raise NFTorusValidationError(
                f"{len(samples)} samples given for a grid of {grid.samples}"
            )
        self.grid = grid
        self.samples = list(samples)
        self.modes = modes

    @property
    def size(self) -> int:
        return int(self.samples[0].shape[0])

    def at(self, t: float) -> NDArray[np.complex128]:
        return _combine(self.samples, interpolation_weights(self.grid, t))

    def __call__(self, t: float) -> OperatorMatrix:
        if self.modes is None:
            raise NFTorusValidationError("Family without a mode set; use at(t)")
        return OperatorMatrix(self.modes, self.at(t))

    def restrict(self, indices: Sequence[int]) -> SampledFamily:
        """Family of the principal submatrices on the given mode indices."""
        selector = np.ix_(indices, indices)
        return SampledFamily(self.grid, [sample[selector] for sample in self.samples])


@dataclass(frozen=True)
class NFOptions:
    quadrature_nodes: int = 8
    derivative: str = "fd4"
    conjugation: str = "exact"
    lie_order: int = 8
    keep_history: bool = True
    spectral_check: bool = False

    def __post_init__(self) -> None:
        if self.derivative not in DERIVATIVE_METHODS:
            raise NFTorusValidationError(f"Unknown derivative method {self.derivative!r}")
        if self.conjugation not in CONJUGATION_METHODS:
            raise NFTorusValidationError(f"Unknown conjugation method {self.conjugation!r}")
        if self.quadrature_nodes < 1 or self.lie_order < 1:
            raise NFTorusValidationError("quadrature_nodes and lie_order must be positive")


@dataclass(frozen=True)
class OrderFit:
    order: float
    residual: float
    points: int

    @property
    def is_zero(self) -> bool:
        return self.order == -math.inf

    def to_dict(self) -> dict[str, object]:
        return {
            "order": "-inf" if self.is_zero else self.order,
            "residual": None if math.isnan(self.residual) else self.residual,
            "points": self.points,
        }


ZERO_ORDER = OrderFit(order=-math.inf, residual=math.nan, points=0)


def _binned_maxima(
    magnitude: NDArray[np.float64],
    modes: ModeSet,
    buffer: float,
    bins: int = 10,
) -> list[tuple[float, float]]:
    """(<eta>, |entry|) of the largest entry in each <eta>-decile of the inner annulus."""
    inner = modes.inner_mask(buffer)
    pairs = inner[:, None] & inner[None, :]
    values = magnitude[pairs]
    brackets = modes.geometry().eta_bracket[pairs]
    keep = values > 0.0
    values, brackets = values[keep], brackets[keep]
    if values.size == 0:
        return []
    edges = np.quantile(brackets, np.linspace(0.0, 1.0, bins + 1))
    labels = np.clip(np.searchsorted(edges, brackets, side="right") - 1, 0, bins - 1)
    points = []
    for label in range(bins):
        members = np.flatnonzero(labels == label)
        if members.size == 0:
            continue
        top = members[np.argmax(values[members])]
        points.append((float(brackets[top]), float(values[top])))
    return points


def _fit_points(points: list[tuple[float, float]]) -> OrderFit:
    if len({eta for eta, _ in points}) < 2:
        return ZERO_ORDER
    x = np.log([eta for eta, _ in points])
    y = np.log([value for _, value in points])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return OrderFit(order=float(slope), residual=residual, points=len(points))


def order_report(
    R_samples: Sequence[OperatorMatrix],  # noqa: N803
    modes: ModeSet,
    p: NFParams,
    *,
    buffer: float | None = None,
    policy: NumericalPolicy | None = None,
) -> OrderFit:
    """Fit m in max |R(eta)| ~ <eta>^m over <eta>-deciles of the inner annulus.

    The maximum runs over samples and fibers; an all-zero remainder gives the
    -inf sentinel ``ZERO_ORDER``.
    """
    policy = resolve_policy(policy)
    if modes.dimension != p.d:
        raise NFTorusValidationError(f"{modes.dimension}-d mode set used with d = {p.d}")
    magnitude = np.zeros((modes.size, modes.size))
    for sample in R_samples:
        np.maximum(magnitude, np.abs(sample.entries), out=magnitude)
    points = _binned_maxima(magnitude, modes, policy.buffer if buffer is None else buffer)
    fit = _fit_points(points)
    if fit.is_zero:
        LOGGER.debug("Remainder vanishes on the inner annulus; order reported as -inf")
    return fit


@dataclass(frozen=True)
class SmoothingReport:
    max_entry: float
    decay: OrderFit
    points: tuple[tuple[float, float], ...]


def smoothing_report(
    R: OperatorMatrix,  # noqa: N803
    p: NFParams,
    *,
    buffer: float | None = None,
    policy: NumericalPolicy | None = None,
) -> SmoothingReport:
    """Size of the smoothing (long-wavelength) part of R on the inner annulus."""
    policy = resolve_policy(policy)
    smooth = decompose(R, p, R.modes.metric).smooth
    points = _binned_maxima(np.abs(smooth.entries), R.modes, policy.buffer if buffer is None else buffer)
    return SmoothingReport(
        max_entry=max((value for _, value in points), default=0.0),
        decay=_fit_points(points),
        points=tuple(points),
    )


def smooth_share(
    R_samples: Sequence[OperatorMatrix],  # noqa: N803
    p: NFParams,
    *,
    buffer: float | None = None,
    policy: NumericalPolicy | None = None,
) -> float:
    """max |smooth(R)| / max |R| over samples and inner-annulus pairs.

    Near 1 the remainder is carried over almost whole by the next step, so
    its fitted order cannot drop at this cutoff.
    """
    policy = resolve_policy(policy)
    if not R_samples:
        return 0.0
    modes = R_samples[0].modes
    inner = modes.inner_mask(policy.buffer if buffer is None else buffer)
    pairs = inner[:, None] & inner[None, :]

    def tops(R: OperatorMatrix) -> tuple[float, float]:  # noqa: N803
        smooth = decompose(R, p, modes.metric).smooth
        return float(np.max(np.abs(smooth.entries[pairs]), initial=0.0)), float(
            np.max(np.abs(R.entries[pairs]), initial=0.0)
        )

    measured = parallel_map(tops, R_samples, policy)
    top = max(whole for _, whole in measured)
    return max(part for part, _ in measured) / top if top > 0.0 else 0.0


@dataclass(frozen=True)
class NFSamples:
    """Per-sample state of the driver: -Delta_g, Z_N(t_j) and R_N(t_j)."""

    laplacian: OperatorMatrix
    normal_forms: tuple[OperatorMatrix, ...]
    remainders: tuple[OperatorMatrix, ...]
    step: int = 0


@dataclass(frozen=True)
class NFStepRecord:
    """Step N: Z_N, R_N and the generators G_{N-1} that produced them (None at N = 0)."""

    step: int
    fitted_order: OrderFit
    generators: tuple[OperatorMatrix, ...] | None
    normal_forms: tuple[OperatorMatrix, ...] | None
    remainders: tuple[OperatorMatrix, ...] | None
    homological_residual: float = 0.0
    hermiticity_drift: float = 0.0
    spectral_defect: float | None = None
    unitarity_defect: float = 0.0
    smooth_share: float = 0.0

    def to_report(self) -> dict[str, object]:
        fit = self.fitted_order.to_dict()
        return {
            "step": self.step,
            "fitted_order": fit["order"],
            "order_residual": fit["residual"],
            "smooth_share": self.smooth_share,
            "residuals": {
                "homological": self.homological_residual,
                "hermiticity_drift": self.hermiticity_drift,
                "spectral": self.spectral_defect,
            },
            "unitarity_defect": self.unitarity_defect,
        }

    def forget_operators(self) -> NFStepRecord:
        return replace(self, generators=None, normal_forms=None, remainders=None)


@dataclass(frozen=True)
class NFStepOutput:
    samples: NFSamples
    record: NFStepRecord
    step_unitaries: tuple[NDArray[np.complex128], ...]


def _check_hermitian_samples(samples: NFSamples, policy: NumericalPolicy) -> None:
    for j, R in enumerate(samples.remainders):  # noqa: N806
        defect = R.hermiticity_defect()
        if defect > policy.hermitian_tol:
            raise NFTorusValidationError(
                f"Remainder at sample {j} is not Hermitian (relative defect {defect:.3e})"
            )


def nf_step(
    samples: NFSamples,
    p: NFParams,
    grid: TimeGrid,
    *,
    derivative_samples: Sequence[OperatorMatrix] | None = None,
    options: NFOptions | None = None,
    policy: NumericalPolicy | None = None,
) -> NFStepOutput:
    """One normal-form step on every grid sample.

    ``derivative_samples`` carries d/dt R at the samples when it is known
    exactly (the first step); otherwise d/dt G comes from the grid stencil.
    """
    options = options or NFOptions()
    policy = resolve_policy(policy)
    if len(samples.remainders) != grid.samples or len(samples.normal_forms) != grid.samples:
        raise NFTorusValidationError("Sample families do not match the time grid")
    _check_hermitian_samples(samples, policy)
    laplacian = samples.laplacian
    metric = laplacian.modes.metric

    def solve(j: int) -> tuple[OperatorMatrix, OperatorMatrix, float]:
        parts = decompose(samples.remainders[j], p, metric)
        solution = solve_homological(parts.nr, metric, policy)
        scale = parts.nr.frobenius()
        relative = solution.residual_norm / scale if scale > 0 else solution.residual_norm
        return parts.avg + parts.res, solution.G, relative

    solved = parallel_map(solve, range(grid.samples), policy)
    increments = [item[0] for item in solved]
    generators = [item[1] for item in solved]
    homological_residual = max(item[2] for item in solved)

    if derivative_samples is not None:
        def exact_derivative(j: int) -> NDArray[np.complex128]:
            nr = decompose(derivative_samples[j], p, metric).nr
            return solve_homological(nr, metric, policy).G.entries

        derivatives = parallel_map(exact_derivative, range(grid.samples), policy)
    else:
        stencil = derivative_weights(grid, options.derivative)
        arrays = [G.entries for G in generators]
        derivatives = parallel_map(lambda j: _combine(arrays, stencil[j]), range(grid.samples), policy)

    taus, weights = gauss_legendre(options.quadrature_nodes)

    def conjugate(j: int) -> tuple[OperatorMatrix, OperatorMatrix, NDArray[np.complex128], float, float | None]:
        G = generators[j]  # noqa: N806
        dG = derivatives[j]  # noqa: N806
        Z_next = samples.normal_forms[j] + increments[j]  # noqa: N806
        H = laplacian + samples.normal_forms[j] + samples.remainders[j]  # noqa: N806
        if not np.any(G.entries):
            # e^{iG} = I: keep R - avg - res free of Laplacian cancellation roundoff.
            conjugated = H.entries
            unitary = np.eye(laplacian.modes.size, dtype=complex)
            R_next = samples.remainders[j] - increments[j] - OperatorMatrix(G.modes, dG)  # noqa: N806
        else:
            system = HermitianEigensystem.of(G, policy)
            unitary = system.exp(1.0)
            if options.conjugation == "exact":
                conjugated = system.conjugate(H.entries, 1.0)
                correction = system.averaged_conjugate(dG, taus, weights)
            else:
                conjugated = lie_series(H, G, 1.0, options.lie_order).entries
                dG_op = OperatorMatrix(G.modes, dG)  # noqa: N806
                correction = sum(
                    (w * lie_series(dG_op, G, tau, options.lie_order).entries for tau, w in zip(taus, weights)),
                    np.zeros_like(dG),
                )
            R_next = OperatorMatrix(laplacian.modes, conjugated - correction) - laplacian - Z_next  # noqa: N806
        drift = R_next.hermiticity_defect()
        if drift > policy.hermiticity_abort:
            raise NFTorusNumericalError(
                "hermiticity lost",
                {"step": samples.step + 1, "sample": j, "time": float(grid.times[j]), "drift": drift},
            )
        spectral = None
        if options.spectral_check:
            before = scipy.linalg.eigvalsh(H.hermitian_part().entries)
            after = scipy.linalg.eigvalsh(0.5 * (conjugated + conjugated.conj().T))
            spectral = float(np.max(np.abs(before - after))) / max(1.0, float(np.max(np.abs(before))))
        return Z_next, R_next.hermitian_part(), unitary, drift, spectral

    results = parallel_map(conjugate, range(grid.samples), policy)
    normal_forms = tuple(item[0] for item in results)
    remainders = tuple(item[1] for item in results)
    spectral_values = [item[4] for item in results if item[4] is not None]
    next_samples = NFSamples(laplacian, normal_forms, remainders, samples.step + 1)
    record = NFStepRecord(
        step=next_samples.step,
        fitted_order=order_report(remainders, laplacian.modes, p, policy=policy),
        generators=tuple(generators),
        normal_forms=normal_forms,
        remainders=remainders,
        homological_residual=homological_residual,
        hermiticity_drift=max(item[3] for item in results),
        spectral_defect=max(spectral_values) if spectral_values else None,
        smooth_share=smooth_share(remainders, p, policy=policy),
    )
    return NFStepOutput(next_samples, record, tuple(item[2] for item in results))


@dataclass(frozen=True)
class NFResult:
    """Records of every step plus the final samples of Z_N, R_N and U_N.

    U_N = e^{iG_{N-1}} ... e^{iG_0} maps the original state to normal-form
    variables, phi = U_N psi; ``transport`` applies the inverse.
    """

    params: NFParams
    grid: TimeGrid
    laplacian: OperatorMatrix
    records: tuple[NFStepRecord, ...]
    normal_forms: tuple[OperatorMatrix, ...]
    remainders: tuple[OperatorMatrix, ...]
    conjugators: tuple[NDArray[np.complex128], ...]

    @property
    def modes(self) -> ModeSet:
        return self.laplacian.modes

    @property
    def depth(self) -> int:
        return self.records[-1].step

    def hamiltonians(self) -> list[OperatorMatrix]:
        """H~ = -Delta_g + Z_N per sample."""
        return [self.laplacian + Z for Z in self.normal_forms]

    def normal_form_family(self) -> SampledFamily:
        return SampledFamily(self.grid, [H.entries for H in self.hamiltonians()], self.modes)

    def full_family(self) -> SampledFamily:
        samples = [(self.laplacian + Z + R).entries for Z, R in zip(self.normal_forms, self.remainders)]
        return SampledFamily(self.grid, samples, self.modes)

    def transport(self, phi: NDArray[np.complex128], j: int) -> NDArray[np.complex128]:
        """psi = U_N(t_j)^dagger phi."""
        return self.conjugators[j].conj().T @ np.asarray(phi, dtype=complex)

    def unitarity_defect(self) -> float:
        return _unitarity_defect(self.conjugators)

    def report(self) -> list[dict[str, object]]:
        return [record.to_report() for record in self.records]


def _unitarity_defect(unitaries: Sequence[NDArray[np.complex128]]) -> float:
    defect = 0.0
    for U in unitaries:  # noqa: N806
        defect = max(defect, float(np.linalg.norm(U @ U.conj().T - np.eye(U.shape[0]))))
    return defect


def _inner_remainder(remainders: Sequence[OperatorMatrix], modes: ModeSet, buffer: float) -> float:
    inner = modes.inner_mask(buffer)
    selector = np.ix_(inner, inner)
    return max(float(np.max(np.abs(R.entries[selector]), initial=0.0)) for R in remainders)


def _warn_smooth_share(record: NFStepRecord, policy: NumericalPolicy) -> None:
    if record.smooth_share > policy.smooth_share_warning:
        LOGGER.warning(
            "Step %d remainder is %.0f%% smoothing part; the smoothing cutoff scale <eta>^epsilon "
            "is below the Fourier support at this cutoff, so the next step keeps the order",
            record.step,
            100.0 * record.smooth_share,
        )


def run_normal_form(
    V: SymbolSpec,  # noqa: N803
    p: NFParams,
    modes: ModeSet,
    grid: TimeGrid,
    N: int,  # noqa: N803
    *,
    options: NFOptions | None = None,
    policy: NumericalPolicy | None = None,
) -> NFResult:
    """Run N normal-form steps from Z_0 = 0, R_0 = quantize(V) on every sample."""
    options = options or NFOptions()
    policy = resolve_policy(policy)
    p.require_valid()
    if N < 0:
        raise NFTorusValidationError(f"Normal-form depth must be nonnegative, got {N}")
    if not is_real_valued(V):
        raise NFTorusValidationError("V is not real-valued (conj(c_-k) != c_k)")
    if modes.dimension != p.d:
        raise NFTorusValidationError(f"{modes.dimension}-d mode set used with d = {p.d}")

    times = grid.times
    laplacian = laplacian_matrix(modes, modes.metric)
    remainders = tuple(parallel_map(lambda t: quantize(V, float(t), modes), times, policy))
    dV = time_derivative(V)  # noqa: N806
    derivative_samples = parallel_map(lambda t: quantize(dV, float(t), modes), times, policy) if N else []
    zero = OperatorMatrix.zeros(modes)
    samples = NFSamples(laplacian, tuple(zero for _ in times), remainders, 0)
    conjugators = [np.eye(modes.size, dtype=complex) for _ in times]

    records = [
        NFStepRecord(
            step=0,
            fitted_order=order_report(remainders, modes, p, policy=policy),
            generators=None,
            normal_forms=samples.normal_forms,
            remainders=remainders,
            smooth_share=smooth_share(remainders, p, policy=policy) if N else 0.0,
        )
    ]
    LOGGER.info("Normal form on %d modes, %d samples: initial order %.4g", modes.size, grid.samples, records[0].fitted_order.order)
    if N:
        _warn_smooth_share(records[0], policy)

    for _ in range(N):
        floor = _inner_remainder(samples.remainders, modes, policy.buffer)
        if floor < policy.remainder_floor:
            LOGGER.warning(
                "Remainder %.3e below the numerical floor after %d steps; stopping early",
                floor,
                samples.step,
            )
            break
        output = nf_step(
            samples,
            p,
            grid,
            derivative_samples=derivative_samples if samples.step == 0 else None,
            options=options,
            policy=policy,
        )
        conjugators = [E @ U for E, U in zip(output.step_unitaries, conjugators)]  # noqa: N806
        record = replace(output.record, unitarity_defect=_unitarity_defect(conjugators))
        if not options.keep_history:
            records[-1] = records[-1].forget_operators()
        records.append(record)
        samples = output.samples
        LOGGER.info(
            "Normal-form step %d: fitted order %.4g, homological residual %.2e, unitarity defect %.2e",
            record.step,
            record.fitted_order.order,
            record.homological_residual,
            record.unitarity_defect,
        )
        if len(records) <= N:
            _warn_smooth_share(record, policy)

    return NFResult(
        params=p,
        grid=grid,
        laplacian=laplacian,
        records=tuple(records),
        normal_forms=samples.normal_forms,
        remainders=samples.remainders,
        conjugators=tuple(conjugators),
    )
