from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from nftorus.clusters import block_invariance_defect, partition, verify_partition
from nftorus.config import ExperimentConfig
from nftorus.dynamics import (
    FullHamiltonian,
    StateVector,
    conjugation_consistency,
    duhamel_bound_check,
    evolve,
    evolve_blocks,
    fit_growth,
    interpolation_check,
    propagator,
)
from nftorus.geometry import identity_metric
from nftorus.homological import residual, solve_homological
from nftorus.normal_form import NFResult, TimeGrid, run_normal_form, smoothing_report
from nftorus.presets import get_preset
from nftorus.resonance import NFParams, decompose
from nftorus.symbols import SymbolSpec, SymbolTerm, TimeProfile
from nftorus.weyl import ModeSet, OperatorMatrix, conjugate_exact, lie_series, quantize, sobolev_opnorm


@pytest.fixture(scope="module")
def reference() -> ExperimentConfig:
    return get_preset("reference").config()


@pytest.fixture(scope="module")
def reference_modes(reference: ExperimentConfig) -> ModeSet:
    return reference.modes()


@pytest.mark.acceptance
def test_decomposition_reproduces_the_reference_operator(reference: ExperimentConfig, reference_modes: ModeSet) -> None:
    A = quantize(reference.symbol, 0.0, reference_modes)  # noqa: N806

    parts = decompose(A, reference.params, reference.metric)

    error = np.max(np.abs(parts.total().entries - A.entries))
    assert error <= 1e-14 * A.max_abs()


@pytest.mark.acceptance
def test_homological_residual_is_at_roundoff(reference: ExperimentConfig, reference_modes: ModeSet) -> None:
    nr = decompose(quantize(reference.symbol, 0.0, reference_modes), reference.params, reference.metric).nr
    assert nr.frobenius() > 0.0

    solution = solve_homological(nr, reference.metric)

    assert solution.residual_norm <= 1e-12 * nr.frobenius()


@pytest.mark.acceptance
def test_homological_residual_on_random_hermitian_input(reference: ExperimentConfig) -> None:
    modes = ModeSet.build(12.0, reference.metric)
    rng = np.random.default_rng(2024)
    for _ in range(100):
        raw = rng.standard_normal((modes.size, modes.size)) + 1j * rng.standard_normal((modes.size, modes.size))
        nr = decompose(OperatorMatrix(modes, raw + raw.conj().T), reference.params, reference.metric).nr
        G = solve_homological(nr, reference.metric).G  # noqa: N806
        assert residual(G, nr, reference.metric) <= 1e-12 * nr.frobenius()


@pytest.mark.acceptance
def test_reference_partition_is_flat_along_blocks(reference: ExperimentConfig, reference_modes: ModeSet) -> None:
    part = partition(reference_modes, reference.params, reference.metric)

    report = verify_partition(part, reference.params, reference.metric, reference.verification_sigmas)

    assert report.p3_spread <= 1e-9
    assert report.nontrivial_blocks > 0
    assert sum(size * count for size, count in report.histogram.items()) == reference_modes.size


@pytest.mark.acceptance
def test_normal_form_stays_block_diagonal_and_unitary(reference: ExperimentConfig) -> None:
    modes = ModeSet.build(12.0, reference.metric)
    grid = TimeGrid(0.0, 2.0 * math.pi, 16, periodic=True)

    nf = run_normal_form(reference.symbol, reference.params, modes, grid, 2)
    part = partition(modes, reference.params, reference.metric)

    assert nf.depth == 2
    assert nf.unitarity_defect() <= 1e-9
    for Z in nf.normal_forms:  # noqa: N806
        assert block_invariance_defect(Z, part) == 0.0
        assert Z.is_hermitian(1e-10)


@pytest.mark.acceptance
def test_truncated_lie_series_converges_to_exact_conjugation(reference: ExperimentConfig) -> None:
    modes = ModeSet.build(12.0, reference.metric)
    A = quantize(reference.symbol, 0.0, modes)  # noqa: N806
    G = solve_homological(decompose(A, reference.params, reference.metric).nr, reference.metric).G  # noqa: N806
    G = OperatorMatrix(modes, G.entries * (0.25 / G.frobenius()))  # noqa: N806

    exact = conjugate_exact(A, G, 1.0)
    errors = [np.linalg.norm(exact.entries - lie_series(A, G, 1.0, order).entries) for order in range(9)]

    assert all(later <= earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] <= 1e-6 * A.frobenius()


@pytest.fixture(scope="module")
def small_modes(reference: ExperimentConfig) -> ModeSet:
    return ModeSet.build(8.0, reference.metric)


@pytest.fixture(scope="module")
def small_nf(reference: ExperimentConfig, small_modes: ModeSet) -> NFResult:
    grid = TimeGrid(0.0, 2.0 * math.pi, 16, periodic=True)
    return run_normal_form(reference.symbol, reference.params, small_modes, grid, 3)


@pytest.mark.acceptance
def test_reference_remainder_is_carried_by_the_smoothing_part(
    reference: ExperimentConfig, caplog: pytest.LogCaptureFixture
) -> None:
    modes = ModeSet.build(16.0, reference.metric)
    grid = TimeGrid(0.0, 2.0 * math.pi, 16, periodic=True)

    with caplog.at_level(logging.WARNING, logger="nftorus.normal_form"):
        nf = run_normal_form(reference.symbol, reference.params, modes, grid, 3)

    orders = [record.fitted_order.order for record in nf.records]
    assert nf.depth == 3
    assert orders[0] == pytest.approx(1.0, abs=1e-6)
    assert all(abs(order - orders[0]) <= 0.1 for order in orders)
    assert all(record.smooth_share >= 0.8 for record in nf.records)
    assert all("smooth_share" in row for row in nf.report())
    assert "smoothing part" in caplog.text


@pytest.mark.acceptance
def test_block_constant_does_not_grow_with_the_cutoff(reference: ExperimentConfig) -> None:
    k_hats = []
    for cutoff in (12.0, 16.0, 24.0):
        modes = ModeSet.build(cutoff, reference.metric)
        part = partition(modes, reference.params, reference.metric)
        k_hats.append(verify_partition(part, reference.params, reference.metric).k_hat)

    assert k_hats[0] > 0.0
    assert all(later <= earlier * (1.0 + 1e-9) for earlier, later in zip(k_hats, k_hats[1:]))


@pytest.mark.acceptance
def test_normal_form_flow_stays_within_the_block_constant(
    reference: ExperimentConfig, small_modes: ModeSet, small_nf: NFResult
) -> None:
    part = partition(small_modes, reference.params, reference.metric)
    k_sigma = verify_partition(part, reference.params, reference.metric, (1.0, 2.0)).k_sigma

    for seed in range(10):
        run = evolve_blocks(small_nf, part, StateVector.random(small_modes, seed), 0.0, 20.0, 0.1, (1.0, 2.0))
        assert run.l2_drift <= 1e-8
        for sigma in (1.0, 2.0):
            assert run.trace.sup_ratio(sigma) <= k_sigma[sigma] * (1.0 + 1e-8)


@pytest.mark.acceptance
def test_duhamel_envelope_is_stable_when_the_horizon_doubles(small_modes: ModeSet, small_nf: NFResult) -> None:
    report = duhamel_bound_check(small_nf, StateVector.random(small_modes, 3), 0.0, 20.0, 0.05, 1.0)

    assert report.k_prime >= 1.0
    assert report.passed


@pytest.mark.acceptance
def test_conjugated_flow_converges_at_second_order(reference: ExperimentConfig, small_modes: ModeSet) -> None:
    nf = run_normal_form(reference.symbol, reference.params, small_modes, reference.normal_form.grid, 2)
    psi0 = StateVector.random(small_modes, 1)

    coarse = conjugation_consistency(reference.symbol, nf, psi0, [10.0], 0.005)
    fine = conjugation_consistency(reference.symbol, nf, psi0, [10.0], 0.0025)

    assert coarse.times == fine.times
    assert coarse.times[0] == pytest.approx(10.0, abs=reference.normal_form.grid.step / 2.0)
    assert coarse.max_error <= 1e-6
    assert fine.max_error <= 2.5e-7
    assert fine.max_error <= 0.3 * coarse.max_error


@pytest.mark.acceptance
def test_full_system_growth_exponent_is_small(reference: ExperimentConfig, small_modes: ModeSet) -> None:
    full = FullHamiltonian(reference.symbol, small_modes)
    run = evolve(full, StateVector.random(small_modes, 0), 0.0, 200.0, 0.05, (2.0,))

    growth = fit_growth(run.trace, 2.0, (1.0, 200.0))

    assert run.l2_drift <= 1e-8
    assert growth.exponent <= 0.1


@pytest.mark.acceptance
def test_interpolation_inequality_on_propagator_snapshots(reference: ExperimentConfig, small_modes: ModeSet) -> None:
    H = FullHamiltonian(reference.symbol, small_modes)  # noqa: N806

    for n in range(1, 21):
        U = propagator(H, small_modes, 0.0, 0.25 * n, 0.05)  # noqa: N806
        report = interpolation_check(U, 1.0, 2.0, rtol=1e-6)
        assert report.passed, (n, report.lhs, report.rhs)


LINE_PARAMS = NFParams(delta=0.45, epsilon=0.25, tau=0.0, m=0.5, d=1)
LINE_POTENTIAL = SymbolSpec((SymbolTerm(TimeProfile("constant"), {(1,): 1.0, (-1,): 1.0}, 0.5),))


@pytest.mark.acceptance
def test_generator_gains_over_the_potential_as_the_cutoff_grows() -> None:
    generator_norms, potential_norms = [], []
    for cutoff in (16.0, 32.0, 64.0):
        modes = ModeSet.build(cutoff, identity_metric(1))
        A = quantize(LINE_POTENTIAL, 0.0, modes)  # noqa: N806
        G = solve_homological(decompose(A, LINE_PARAMS, modes.metric).nr, modes.metric).G  # noqa: N806
        gain = LINE_PARAMS.m - LINE_PARAMS.delta
        generator_norms.append(sobolev_opnorm(G, 1.0, 1.0 - gain, method="svd"))
        potential_norms.append(sobolev_opnorm(A, 1.0, 1.0, method="svd"))

    assert min(generator_norms) > 0.0
    assert max(generator_norms) <= 1.1 * min(generator_norms)
    assert potential_norms[-1] >= 1.5 * potential_norms[0]


@pytest.mark.acceptance
def test_smoothing_part_vanishes_at_large_frequency() -> None:
    modes = ModeSet.build(64.0, identity_metric(1))
    A = quantize(LINE_POTENTIAL, 0.0, modes)  # noqa: N806

    smooth = decompose(A, LINE_PARAMS, modes.metric).smooth
    report = smoothing_report(A, LINE_PARAMS, buffer=0.0)

    far = modes.geometry().eta_bracket >= 16.0
    assert np.max(np.abs(smooth.entries[~far])) > 0.0
    assert np.all(smooth.entries[far] == 0.0)
    assert report.max_entry > 0.0
    assert all(eta < 16.0 for eta, _ in report.points)
