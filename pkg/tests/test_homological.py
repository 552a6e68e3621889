from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nftorus.errors import NFTorusNumericalError
from nftorus.geometry import identity_metric
from nftorus.homological import residual, small_divisor_floor, solve_homological
from nftorus.resonance import NFParams, decompose
from nftorus.weyl import ModeSet, OperatorMatrix, commutator, laplacian_matrix

PARAMS = NFParams(delta=0.6, epsilon=0.04, tau=1.0, m=1.0, d=2)
METRIC = identity_metric(2)


@pytest.fixture(scope="module")
def modes() -> ModeSet:
    return ModeSet.build(6.0, METRIC)


def _random_nr(modes: ModeSet, state: int) -> OperatorMatrix:
    rng = np.random.default_rng(state)
    raw = rng.standard_normal((modes.size, modes.size)) + 1j * rng.standard_normal((modes.size, modes.size))
    return decompose(OperatorMatrix(modes, raw + raw.conj().T), PARAMS, METRIC).nr


@pytest.mark.unit
def test_zero_input_gives_zero_generator(modes: ModeSet) -> None:
    solution = solve_homological(OperatorMatrix.zeros(modes), METRIC)

    assert not np.any(solution.G.entries)
    assert solution.residual_norm == 0.0


@pytest.mark.unit
def test_single_entry_divides_by_twice_inner(modes: ModeSet) -> None:
    nr = OperatorMatrix.zeros(modes)
    row, col = modes.position((1, 0)), modes.position((0, 0))
    c = 0.3 + 0.2j
    nr.entries[row, col] = c

    solution = solve_homological(nr, METRIC)

    assert solution.G.entries[row, col] == pytest.approx(-1j * c)
    assert np.count_nonzero(solution.G.entries) == 1


@pytest.mark.unit
def test_conjugate_pair_gives_hermitian_generator(modes: ModeSet) -> None:
    nr = OperatorMatrix.zeros(modes)
    row, col = modes.position((2, 1)), modes.position((0, 0))
    c = 1.5 - 0.5j
    nr.entries[row, col] = c
    nr.entries[col, row] = np.conj(c)

    G = solve_homological(nr, METRIC).G

    assert G.is_hermitian(1e-15)
    assert G.entries[row, col] == pytest.approx(-1j * c / 5.0)


@pytest.mark.unit
def test_leaked_resonant_entry_aborts(modes: ModeSet) -> None:
    nr = OperatorMatrix.zeros(modes)
    nr.entries[modes.position((0, 1)), modes.position((1, 0))] = 1.0

    with pytest.raises(NFTorusNumericalError, match="resonant entry leaked into nr") as info:
        solve_homological(nr, METRIC)

    assert info.value.diagnostics["entries"] == 1


@pytest.mark.unit
def test_residual_of_zero_generator_is_input_norm(modes: ModeSet) -> None:
    nr = _random_nr(modes, 1)

    assert residual(OperatorMatrix.zeros(modes), nr, METRIC) == pytest.approx(nr.frobenius())


@pytest.mark.unit
def test_inverse_construction_has_zero_residual(modes: ModeSet) -> None:
    rng = np.random.default_rng(9)
    raw = rng.standard_normal((modes.size, modes.size))
    G = OperatorMatrix(modes, raw + raw.T)
    nr = 1j * commutator(laplacian_matrix(modes, METRIC), G)

    assert residual(G, nr, METRIC) <= 1e-12 * nr.frobenius()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_is_exact_hermitian_and_supported_on_input(state: int) -> None:
    modes = ModeSet.build(6.0, METRIC)
    nr = _random_nr(modes, state)
    solution = solve_homological(nr, METRIC)

    assert solution.residual_norm <= 1e-12 * nr.frobenius()
    assert solution.G.is_hermitian(1e-12)
    np.testing.assert_array_equal(solution.G.entries != 0, nr.entries != 0)


@pytest.mark.unit
def test_small_divisor_floor_respects_cutoff_construction(modes: ModeSet) -> None:
    nr = _random_nr(modes, 4)

    assert small_divisor_floor(nr, PARAMS, METRIC) >= 0.25
    assert small_divisor_floor(OperatorMatrix.zeros(modes), PARAMS, METRIC) == float("inf")
