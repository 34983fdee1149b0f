import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from diracsearch.bloch import find_dirac_points
from diracsearch.dynamics import (
    PropagationError,
    SearchInstance,
    amplification_rounds,
    enumerate_starting_states,
    evolve,
    gamma_state,
    marked_state,
    oracle_hamiltonian,
    run_search,
    search_hamiltonian,
    success_probability,
    true_starting_state,
)
from diracsearch.lattice import assemble_dense, assemble_sparse, builtin, vertex_index
from diracsearch.resolvent import OracleKind, lattice_moments, predict


def test_projector_oracle_against_hand_assembly():
    spec = builtin("staggered-hypercubic-2")
    l = 4
    inst = SearchInstance(spec, l, ((1, 2), 3), OracleKind.PROJECTOR)
    H0 = assemble_dense(spec, l)
    v = inst.vertex
    V = np.zeros_like(H0)
    for u in range(len(H0)):
        V[u, v] -= H0[u, v]
        V[v, u] -= H0[v, u]
    assert np.abs(oracle_hamiltonian(inst).toarray() - V).max() == 0
    H = search_hamiltonian(inst).toarray()
    # the marked vertex is cut off, neighbours keep zero diagonal
    assert np.all(H[:, v] == 0) and np.all(H[v, :] == 0)
    nbrs = np.nonzero(H0[:, v])[0]
    assert np.all(np.diag(H)[nbrs] == 0)
    assert np.allclose(H, H.conj().T)


def test_onsite_oracle_kagome():
    spec = builtin("kagome")
    inst = SearchInstance(spec, 6, ((2, 3), 1), OracleKind.ONSITE)
    V = oracle_hamiltonian(inst)
    assert V.nnz == 1
    assert V[inst.vertex, inst.vertex] == pytest.approx(9.0)
    assert inst.i1 == pytest.approx(-1 / 9)


def test_onsite_oracle_rejects_zero_I1():
    inst = SearchInstance(builtin("staggered-hypercubic-2"), 4, ((0, 0), 0), OracleKind.ONSITE, i1=0.0)
    with pytest.raises(ValueError):
        oracle_hamiltonian(inst)


def test_projector_oracle_needs_zero_diagonal():
    inst = SearchInstance(builtin("kagome"), 6, ((0, 0), 0), OracleKind.PROJECTOR)
    with pytest.raises(ValueError):
        oracle_hamiltonian(inst)


@pytest.mark.parametrize("name,count,amp", [("staggered-hypercubic-2", 4, 0.5), ("honeycomb", 3, 1 / math.sqrt(3)), ("staggered-hypercubic-3", 6, 1 / math.sqrt(6))])
def test_gamma_state_support(name, count, amp):
    inst = SearchInstance(builtin(name), 6, ((0,) * builtin(name).d, 0))
    g = gamma_state(inst)
    nz = np.abs(g) > 1e-14
    assert nz.sum() == count
    assert np.allclose(np.abs(g[nz]), amp)


def test_gamma_state_kagome_includes_onsite_term():
    spec = builtin("kagome")
    inst = SearchInstance(spec, 6, ((0, 0), 0), OracleKind.ONSITE)
    g = gamma_state(inst)
    # H0|w> = -|w> + four unit hops, normalised by sqrt(5)
    assert np.linalg.norm(g) == pytest.approx(1)
    assert g[inst.vertex] == pytest.approx(-1 / math.sqrt(5))
    assert (np.abs(g) > 1e-14).sum() == 5


def test_isolated_vertex_rejected():
    from diracsearch.lattice import LatticeSpec

    spec = LatticeSpec(1, 2, {((1,), 0, 0): 1.0, ((-1,), 0, 0): 1.0})
    with pytest.raises(ValueError, match="isolated"):
        gamma_state(SearchInstance(spec, 4, ((0,), 1)))


def test_staggered_2d_start_states_are_uniform():
    spec = builtin("staggered-hypercubic-2")
    states = enumerate_starting_states(spec, 6)
    assert len(states) == 4
    assert sorted(a for a, _, _ in states) == [0, 1, 2, 3]
    for a, _, s in states:
        on = np.abs(s) > 1e-12
        assert np.all(np.arange(len(s))[on] % 4 == a)
        assert np.allclose(np.abs(s[on]), 1 / 6)


@pytest.mark.parametrize("name,l,bound", [("honeycomb", 6, 18), ("kagome", 6, 27), ("decoupled-square", 4, 16), ("staggered-hypercubic-3", 4, 8)])
def test_start_states_are_normalised_kernel_vectors(name, l, bound):
    spec = builtin(name)
    states = enumerate_starting_states(spec, l)
    assert 0 < len(states) <= bound
    H0 = assemble_sparse(spec, l)
    for _, _, s in states:
        assert np.linalg.norm(s) == pytest.approx(1, abs=1e-12)
        assert np.linalg.norm(H0 @ s) < 1e-10
    # pairwise distinct up to phase
    S = np.array([s for _, _, s in states])
    G = np.abs(S.conj() @ S.T) ** 2
    np.fill_diagonal(G, 0)
    assert G.max() < 1 - 1e-10


def test_honeycomb_phase_residues():
    states = enumerate_starting_states(builtin("honeycomb"), 6)
    # three phase classes for each of the two sublattices
    assert sorted(a for a, _, _ in states) == [0, 0, 0, 1, 1, 1]


@pytest.mark.parametrize("name,l", [("honeycomb", 6), ("kagome", 6), ("staggered-hypercubic-2", 4)])
def test_true_start_is_enumerated(name, l):
    spec = builtin(name)
    diracs = find_dirac_points(spec)
    inst = SearchInstance(spec, l, ((2,) * spec.d, 1), diracs=diracs)
    s = true_starting_state(inst)
    states = enumerate_starting_states(spec, l, diracs)
    assert max(abs(np.vdot(t, s)) ** 2 for _, _, t in states) == pytest.approx(1, abs=1e-10)


def test_start_cap():
    with pytest.raises(ValueError, match="starting states"):
        enumerate_starting_states(builtin("kagome"), 6, cap=2)


def test_off_grid_dirac_point_rejected():
    with pytest.raises(ValueError, match="grid"):
        enumerate_starting_states(builtin("honeycomb"), 4)


def test_kernel_state_is_stationary_without_oracle():
    spec = builtin("honeycomb")
    _, _, s = enumerate_starting_states(spec, 6)[0]
    H0 = assemble_sparse(spec, 6)
    tr = evolve(H0, s, np.linspace(0, 20, 11), target=s)
    assert np.allclose(tr.overlap_sq, 1, atol=1e-12)


def _instance(name, l, w=None, alpha=0):
    spec = builtin(name)
    kind = "onsite" if name == "kagome" else "projector"
    return SearchInstance(spec, l, (w or (1,) * spec.d, alpha), kind)


@pytest.mark.parametrize("name,l", [("staggered-hypercubic-2", 8), ("honeycomb", 9), ("kagome", 6), ("staggered-hypercubic-3", 4)])
def test_dense_and_krylov_agree(name, l):
    inst = _instance(name, l)
    H = search_hamiltonian(inst)
    s = true_starting_state(inst)
    target = gamma_state(inst) if inst.oracle is OracleKind.PROJECTOR else marked_state(inst)
    times = np.linspace(0, 30, 61)
    a = evolve(H, s, times, target, inst, method="dense", record_energy=True)
    b = evolve(H, s, times, target, inst, method="krylov", record_energy=True)
    assert np.abs(a.overlap_sq - b.overlap_sq).max() < 1e-7
    assert np.abs(a.success_prob - b.success_prob).max() < 1e-7
    for tr in (a, b):
        assert np.abs(tr.norms - 1).max() < 1e-9
        assert np.ptp(tr.energies) < 1e-8
        assert np.all((tr.overlap_sq >= 0) & (tr.overlap_sq <= 1 + 1e-12))


def test_krylov_small_dimension_still_accurate():
    inst = _instance("staggered-hypercubic-2", 8)
    H = search_hamiltonian(inst)
    s = true_starting_state(inst)
    times = np.linspace(0, 25, 26)
    a = evolve(H, s, times, gamma_state(inst), inst, method="dense")
    b = evolve(H, s, times, gamma_state(inst), inst, method="krylov", krylov_dim=8)
    assert np.abs(a.overlap_sq - b.overlap_sq).max() < 1e-7


def test_evolve_rejects_bad_input():
    inst = _instance("staggered-hypercubic-2", 4)
    H = search_hamiltonian(inst)
    s = true_starting_state(inst)
    with pytest.raises(ValueError):
        evolve(H, 2 * s, [0, 1])
    with pytest.raises(ValueError):
        evolve(H, s, [1, 0])


def test_translation_symmetry_of_traces():
    spec = builtin("staggered-hypercubic-2")
    times = np.linspace(0, 20, 41)
    traces = []
    for w in ((0, 0), (3, 5)):
        inst = SearchInstance(spec, 8, (w, 2))
        H = search_hamiltonian(inst)
        traces.append(evolve(H, true_starting_state(inst), times, gamma_state(inst), inst))
    assert np.abs(traces[0].overlap_sq - traces[1].overlap_sq).max() < 1e-9
    assert np.abs(traces[0].success_prob - traces[1].success_prob).max() < 1e-9


def test_two_level_reduction():
    spec = builtin("staggered-hypercubic-2")
    l = 8  # N = 256
    inst = SearchInstance(spec, l, ((0, 0), 0))
    p = predict(spec, l, 0)
    H = search_hamiltonian(inst).toarray().real
    lam, V = np.linalg.eigh(H)
    pair = [int(np.argmin(np.abs(lam - E))) for E in (p.E_minus, p.E_plus)]
    s = true_starting_state(inst)
    c = V.T @ s
    times = np.linspace(0, 2 * p.run_time, 50)
    for t in times:
        psi_c = np.exp(-1j * lam * t) * c
        outside = 1 - np.sum(np.abs(psi_c[pair]) ** 2)
        assert outside < 0.1


def test_success_probability_examples():
    spec = builtin("staggered-hypercubic-2")
    inst = SearchInstance(spec, 6, ((2, 2), 1))
    assert success_probability(marked_state(inst), inst) == pytest.approx(1)
    assert success_probability(gamma_state(inst), inst) == pytest.approx(0.25)
    N = inst.N
    uniform = np.ones(N) / math.sqrt(N)
    # direct hit 1/N plus 4 neighbours each weighted 1/(4N)
    assert success_probability(uniform, inst) == pytest.approx(2 / N)


@given(st.integers(0, 3), st.integers(0, 5), st.integers(0, 5))
def test_success_probability_is_probability(alpha, x, y):
    spec = builtin("staggered-hypercubic-2")
    inst = SearchInstance(spec, 6, ((x, y), alpha))
    rng = np.random.default_rng(alpha + 4 * x + 24 * y)
    psi = rng.normal(size=inst.N) + 1j * rng.normal(size=inst.N)
    psi /= np.linalg.norm(psi)
    assert 0 <= success_probability(psi, inst) <= 1


def test_run_search_staggered_2d_counts_and_recovers():
    spec = builtin("staggered-hypercubic-2")
    l = 8
    trace, rep = run_search(spec, l, ((5, 2), 3))
    assert rep.n_runs == 4
    assert rep.best_alpha == 3
    # the largest measured weight sits in the neighbourhood of the marked vertex
    inst = SearchInstance(spec, l, ((5, 2), 3))
    H = search_hamiltonian(inst)
    s = true_starting_state(inst)
    tr = evolve(H, s, [rep.best_time], gamma_state(inst), inst)
    lam, V = np.linalg.eigh(H.toarray().real)
    psi = V @ (np.exp(-1j * lam * rep.best_time) * (V.T @ s))
    top = int(np.argmax(np.abs(psi) ** 2))
    A = assemble_sparse(spec, l)
    hood = set(A[:, [inst.vertex]].nonzero()[0]) | {inst.vertex}
    assert top in hood
    assert tr.success_prob[0] == pytest.approx(rep.best_success)


def test_run_search_d3_matches_prediction():
    spec = builtin("staggered-hypercubic-3")
    trace, rep = run_search(spec, 4, ((0, 0, 0), 0), starts="true")
    # success = overlap with the neighbour shell divided by the degree
    predicted = rep.prediction.success_amplitude**2 / 6
    assert rep.best_success == pytest.approx(predicted, rel=0.2)


def test_amplification_rounds():
    assert amplification_rounds(0.6) == 1
    assert amplification_rounds(0.25) == 2
    assert amplification_rounds(0.01) == math.ceil(math.pi / (4 * math.asin(0.1)))
