import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from periodlattice import builtin_system, lattice, maslov
from periodlattice.exceptions import (
    CycleNotClosed,
    DependentGenerators,
    InvalidParameters,
    NotLagrangian,
    PhaseStepTooLarge,
)
from periodlattice.flow import flow_batch

TWO_PI = 2 * np.pi

HAMILTONIAN_FIBERS = [
    ("iso-oscillator", [0.5, 0.3]),
    ("aniso-oscillator", [0.4, 0.7]),
    ("champagne-bottle", [0.5, 0.8]),
    ("champagne-bottle", [-0.1, 0.05]),
    ("oscillator-1d", [0.5]),
]


def _basis(name, value):
    system = builtin_system(name)
    return system, lattice.detect_lattice_basis(system, system.point_on_fiber(value))


@pytest.fixture(scope="module")
def champagne_basis():
    return _basis("champagne-bottle", [0.5, 0.8])


# structure and frames -----------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
def test_symplectic_structure_invariants(n):
    S = maslov.SymplecticStructure(n)
    assert np.allclose(S.J @ S.J, -np.eye(2 * n))
    g = S.metric()
    assert np.allclose(g, g.T)
    assert np.all(np.linalg.eigvalsh(g) > 0)
    V = np.vstack([np.zeros((n, n)), np.eye(n)])
    assert np.allclose(V.T @ S.omega @ V, 0)
    E = S.reference_frame()
    assert np.allclose(E.conj().T @ E, np.eye(n))


def test_frame_vertical_and_horizontal_lines():
    S = maslov.SymplecticStructure(1)
    Zv = maslov.frame_from_vectors(np.array([[0.0], [1.0]]), S)
    Zh = maslov.frame_from_vectors(np.array([[1.0], [0.0]]), S)
    assert abs(abs(Zv[0, 0]) - 1) < 1e-12 and abs(Zv[0, 0].real) < 1e-12
    assert abs(abs(Zh[0, 0]) - 1) < 1e-12 and abs(Zh[0, 0].imag) < 1e-12


def test_frame_errors():
    S = maslov.SymplecticStructure(2)
    with pytest.raises(DependentGenerators):
        maslov.frame_from_vectors(np.array([[1.0, 2.0], [0, 0], [0, 0], [0, 0]]), S)
    with pytest.raises(NotLagrangian):
        maslov.frame_from_vectors(np.array([[1.0, 0], [0, 0], [0, 1.0], [0, 0]]), S)
    with pytest.raises(ValueError):
        maslov.frame_from_vectors(np.ones((4, 1)), S)


def test_champagne_frame_is_unitary(champagne, rng):
    for value in ([0.5, 0.8], [0.1, 0.3], [1.0, -0.5]):
        p = champagne.point_on_fiber(value)
        pts = flow_batch(champagne, p, rng.uniform(0, 6, size=(5, 2)))
        for x in pts:
            Z = maslov.lagrangian_frame(champagne, x)
            assert np.linalg.norm(Z.conj().T @ Z - np.eye(2)) < 1e-8


# indices ------------------------------------------------------------------------


def test_zero_cycle_has_index_zero(champagne):
    p = champagne.point_on_fiber([0.5, 0.8])
    assert maslov.maslov_index(champagne, p, [0.0, 0.0]) == 0


def test_one_dof_circle_has_index_two():
    system = builtin_system("oscillator-1d")
    p = system.point_on_fiber([0.5])
    assert maslov.maslov_index(system, p, [TWO_PI]) == 2
    assert maslov.maslov_index(system, p, [-TWO_PI]) == -2
    cyc = maslov.maslov_cycle(system, p, [TWO_PI])
    assert abs(cyc.phase[-1] - cyc.phase[0] - 4 * np.pi) < 1e-3


def test_iso_vector_is_two_two():
    system, lb = _basis("iso-oscillator", [0.5, 0.5])
    assert np.allclose(lb.basis, TWO_PI * np.eye(2), atol=1e-8)
    mv = maslov.maslov_vector(system, lb)
    assert mv.as_row() == [2, 2]
    assert np.all(mv.winding_residuals < 0.05)


def test_rotation_cycle_matches_tangency_count(champagne):
    p = champagne.point_on_fiber([0.5, 0.8])
    T = np.array([0.0, TWO_PI])
    assert maslov.maslov_index(champagne, p, T) == oracles.signed_crossings(champagne, p, T)


def test_champagne_vector_matches_tangency_count(champagne_basis):
    system, lb = champagne_basis
    mv = maslov.maslov_vector(system, lb)
    expected = [oracles.signed_crossings(system, lb.anchor, lb.basis[:, i]) for i in range(2)]
    assert mv.as_row() == expected
    assert np.gcd.reduce(np.abs(mv.indices)) == 2


@pytest.mark.parametrize("name,value", HAMILTONIAN_FIBERS)
def test_homotopy_robustness(name, value):
    system, lb = _basis(name, value)
    base = maslov.maslov_vector(system, lb).as_row()
    assert maslov.maslov_vector(system, lb, samples=128).as_row() == base
    for shift in (0.31, 0.77):
        moved = flow_batch(system, lb.anchor, shift * lb.basis.sum(axis=1)[None, :])[0]
        shifted = lattice.LatticeBasis(moved, lb.value, lb.basis, lb.residuals)
        assert maslov.maslov_vector(system, shifted).as_row() == base


_CACHE = {}


def _champagne_cached():
    if "basis" not in _CACHE:
        _CACHE["basis"] = _basis("champagne-bottle", [0.5, 0.8])
    return _CACHE["basis"]


def _champagne_vector():
    if "vector" not in _CACHE:
        system, lb = _champagne_cached()
        _CACHE["vector"] = maslov.maslov_vector(system, lb).as_row()
    return _CACHE["vector"]


@given(st.integers(-2, 2), st.integers(-2, 2))
def test_linearity_on_the_lattice(a, b):
    system, lb = _champagne_cached()
    k = _champagne_vector()
    T = lb.basis @ np.array([a, b], dtype=float)
    assert maslov.maslov_index(system, lb.anchor, T) == a * k[0] + b * k[1]


# monodromy compatibility --------------------------------------------------------


def test_eigenvector_identity(champagne, champagne_start, champagne_monodromy):
    k = np.array(maslov.maslov_vector(champagne, champagne_start).as_row(), dtype=object)
    M = champagne_monodromy.entries
    assert list(k.dot(M)) == list(k)


def test_transport_invariance(champagne, champagne_start, champagne_monodromy):
    k0 = np.array(maslov.maslov_vector(champagne, champagne_start).as_row(), dtype=object)
    end = champagne_monodromy.trajectory.bases[-1]
    k1 = maslov.maslov_vector(champagne, end).as_row()
    assert k1 == list(k0.dot(champagne_monodromy.entries))


# errors -------------------------------------------------------------------------


def test_cycle_not_closed(champagne):
    p = champagne.point_on_fiber([0.5, 0.8])
    with pytest.raises(CycleNotClosed):
        maslov.maslov_index(champagne, p, [1.0, 0.5])


def test_phase_step_too_large():
    system = builtin_system("oscillator-1d")
    p = system.point_on_fiber([0.5])
    with pytest.raises(PhaseStepTooLarge):
        maslov.maslov_index(system, p, [5 * TWO_PI], samples=4, max_samples=8)


def test_non_hamiltonian_is_rejected():
    system = builtin_system("synthetic-twist")
    lb = lattice.detect_lattice_basis(system, system.point_on_fiber([0.5, 0.5]))
    with pytest.raises(InvalidParameters):
        maslov.maslov_vector(system, lb)
