import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from diracsearch.lattice import (
    LatticeError,
    LatticeSpec,
    assemble_dense,
    assemble_sparse,
    builtin,
    connected_components,
    load_spec,
    neighbors,
    spec_from_dict,
    vertex_coords,
    vertex_index,
)

BUILTINS = ["staggered-hypercubic-1", "staggered-hypercubic-2", "staggered-hypercubic-3", "honeycomb", "kagome", "dirac-square", "decoupled-square"]


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_is_hermitian(name):
    spec = builtin(name)
    H = assemble_sparse(spec, 6)
    assert abs(H - H.conj().T).max() < 1e-14


def test_staggered_sizes():
    for d in (1, 2, 3, 4):
        spec = builtin(f"staggered-hypercubic-{d}")
        assert spec.r == 2**d
        # every vertex has 2d unit hops
        H = assemble_sparse(spec, 4)
        deg = np.asarray((abs(H) > 0).sum(axis=0)).ravel()
        assert set(deg) == {2 * d}
        assert set(np.round(np.abs(H.data), 12)) == {1.0}


def _as_graph(spec, l):
    H = assemble_sparse(spec, l)
    A = (abs(H) > 0).astype(int)
    A.setdiag(0)
    A.eliminate_zeros()
    return nx.from_scipy_sparse_array(A)


def test_staggered_2d_is_square_torus():
    # 2x2 cells of size l give the 2l x 2l periodic square grid
    l = 4
    G = _as_graph(builtin("staggered-hypercubic-2"), l)
    T = nx.grid_2d_graph(2 * l, 2 * l, periodic=True)
    assert nx.is_isomorphic(G, T)


def test_staggered_3d_is_cubic_torus():
    l = 3
    G = _as_graph(builtin("staggered-hypercubic-3"), l)
    T = nx.grid_graph(dim=[2 * l] * 3, periodic=True)
    assert nx.is_isomorphic(G, T)


def test_honeycomb_graph():
    G = _as_graph(builtin("honeycomb"), 6)
    assert nx.is_bipartite(G)
    assert {d for _, d in G.degree()} == {3}
    assert G.number_of_nodes() == 72


def test_kagome_graph():
    spec = builtin("kagome")
    G = _as_graph(spec, 6)
    assert {d for _, d in G.degree()} == {4}
    # every vertex sits in exactly two triangles
    assert set(nx.triangles(G).values()) == {2}
    H = assemble_dense(spec, 6)
    assert np.allclose(np.diag(H), -1)


def test_dirac_square_disconnects_at_zero_gamma():
    assert connected_components(builtin("dirac-square"), 6) == 1
    assert connected_components(builtin("dirac-square", gamma=0), 6) == 2


@given(
    d=st.integers(1, 4),
    l=st.integers(3, 7),
    r=st.integers(1, 4),
    data=st.data(),
)
def test_vertex_index_roundtrip(d, l, r, data):
    x = tuple(data.draw(st.integers(0, l - 1)) for _ in range(d))
    s = data.draw(st.integers(0, r - 1))
    v = vertex_index(x, s, l, r)
    assert 0 <= v < r * l**d
    assert vertex_coords(v, l, d, r) == (x, s)


def test_vertex_index_wraps():
    assert vertex_index((-1, 5), 1, 4, 2) == vertex_index((3, 1), 1, 4, 2)


def test_spec_from_dict_completes_partners():
    data = {"d": 1, "r": 1, "name": "chain", "hopping": [{"delta": [1], "sigma": 0, "sigma_prime": 0, "re": 1.0}]}
    spec = spec_from_dict(data)
    assert spec.hoppings[((-1,), 0, 0)] == 1.0
    with pytest.raises(LatticeError):
        spec_from_dict(data, strict=True)


def test_non_hermitian_table_rejected():
    with pytest.raises(LatticeError):
        LatticeSpec(1, 1, {((1,), 0, 0): 1.0, ((-1,), 0, 0): 2.0})
    with pytest.raises(LatticeError):
        LatticeSpec(1, 1, {((0,), 0, 0): 1j})


def test_load_spec_toml(tmp_path):
    p = tmp_path / "chain.toml"
    p.write_text(
        'd = 1\nr = 2\nname = "ssh"\n'
        "[[hopping]]\ndelta = [0]\nsigma = 0\nsigma_prime = 1\nre = 1.0\n"
        "[[hopping]]\ndelta = [1]\nsigma = 1\nsigma_prime = 0\nre = 1.0\n"
    )
    spec = load_spec(p)
    assert spec.name == "ssh" and spec.r == 2
    H = assemble_dense(spec, 5)
    assert np.allclose(H, H.conj().T)
    # equal hops: a plain ring of 10 sites
    ring = 2 * np.cos(2 * np.pi * np.arange(10) / 10)
    assert np.allclose(np.linalg.eigvalsh(H), np.sort(ring))


def test_small_torus_needs_alias_opt_in():
    spec = builtin("staggered-hypercubic-2")
    with pytest.raises(LatticeError):
        assemble_sparse(spec, 2)
    H = assemble_sparse(spec, 2, sum_aliases=True)
    assert isinstance(H, sp.csr_matrix)


def test_assembly_convention():
    # amplitude h from (x, s) to (x + delta, t) lands at row (x+delta, t), column (x, s)
    spec = LatticeSpec(1, 1, {((1,), 0, 0): 2j, ((-1,), 0, 0): -2j})
    H = assemble_dense(spec, 5)
    assert H[1, 0] == 2j and H[0, 1] == -2j


def test_neighbors_excludes_self():
    spec = builtin("kagome")
    nb = neighbors(spec, 6, 0)
    assert len(nb) == 4
    assert all(u != 0 for u, _ in nb)
