import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from czgrape.model import build_decomposition, DeviceParams
from czgrape.statespace import MODES, Basis, BasisState, enumerate_basis


def test_default_basis_has_ten_states():
    assert len(enumerate_basis(2, 3)) == 10


def test_vacuum_only_at_zero_excitations():
    assert enumerate_basis(0, 3) == [BasisState(0, 0, 0)]


def test_single_excitation_basis():
    assert enumerate_basis(1, 3) == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]


def test_documented_ordering():
    labels = [s.label for s in enumerate_basis()]
    assert labels == ["000", "001", "002", "010", "011", "020", "100", "101", "110", "200"]


@given(st.integers(0, 4), st.integers(1, 4))
def test_enumeration_is_sorted_complete_and_truncated(n_max, levels):
    states = enumerate_basis(n_max, levels)
    assert states == sorted(states)
    expected = [s for s in itertools.product(range(levels), repeat=3) if sum(s) <= n_max]
    assert [tuple(s) for s in states] == expected


def test_enumeration_rejects_bad_arguments():
    with pytest.raises(ValueError):
        enumerate_basis(-1, 3)
    with pytest.raises(ValueError):
        enumerate_basis(2, 0)


def test_ordering_stable_across_instances():
    a, b = Basis(), Basis()
    assert [tuple(s) for s in a.states] == [tuple(s) for s in b.states]
    assert a.index == b.index


def _brute_force_lowering(basis, m):
    """Matrix element <i|a|j> = sqrt(n_j) if state i is state j with one quantum removed."""
    op = np.zeros((basis.dim, basis.dim))
    for i, si in enumerate(basis.states):
        for j, sj in enumerate(basis.states):
            expect = list(sj)
            expect[m] -= 1
            if expect[m] >= 0 and tuple(si) == tuple(expect):
                op[i, j] = np.sqrt(sj[m])
    return op


@pytest.mark.parametrize("m, mode", list(enumerate(MODES)))
def test_lowering_matches_exhaustive_oracle(m, mode):
    basis = Basis()
    np.testing.assert_array_equal(basis.lowering_operator(mode), _brute_force_lowering(basis, m))


def test_lowering_elements():
    b = Basis()
    a = b.lowering_operator("bus")
    assert a[b.state_index(0, 0, 1), b.state_index(0, 0, 2)] == pytest.approx(np.sqrt(2))
    s1 = b.lowering_operator("q1")
    assert s1[b.state_index(0, 0, 0), b.state_index(1, 0, 0)] == 1


def test_one_nonzero_per_column_with_predecessor():
    b = Basis()
    for mode in MODES:
        op = b.lowering_operator(mode)
        m = MODES.index(mode)
        for col, s in enumerate(b.states):
            assert np.count_nonzero(op[:, col]) == (1 if s[m] > 0 else 0)


def test_raising_is_exact_adjoint():
    b = Basis()
    for mode in MODES:
        assert np.array_equal(b.raising_operator(mode), b.lowering_operator(mode).conj().T)


def test_operators_are_read_only():
    b = Basis()
    with pytest.raises(ValueError):
        b.lowering_operator("q1")[0, 0] = 1.0


def test_number_and_level2_projectors():
    b = Basis()
    assert np.trace(b.computational_projector()).real == 4
    assert b.number_operator("q2")[b.state_index(1, 1, 0), b.state_index(1, 1, 0)] == 1
    assert np.trace(b.projector_level2("bus")).real == 1
    for mode in MODES:
        np.testing.assert_allclose(
            b.number_operator(mode), b.raising_operator(mode) @ b.lowering_operator(mode), atol=0
        )


def test_computational_projector_support():
    b = Basis()
    support = {b.states[i] for i in np.flatnonzero(np.diag(b.computational_projector()).real)}
    assert support == {(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)}


def test_sector_sizes():
    assert [len(s) for s in Basis().sectors()] == [1, 3, 6]


def test_drift_is_block_diagonal_over_sectors():
    b = Basis()
    h = build_decomposition(DeviceParams.dimensionless(), basis=b).drift
    n = np.diag(b.excitation_number()).real
    assert np.all(h[n[:, None] != n[None, :]] == 0)
    np.testing.assert_allclose(h @ b.excitation_number(), b.excitation_number() @ h, atol=0)
