"""Crystal lattices as cells-with-basis hopping tables.

A lattice Hamiltonian on ``n = l**d`` cells of ``r`` sites acts as

    H0 |x, s> = sum_{delta, t} h[delta, s, t] |x + delta, t>

with periodic boundaries.  Vertices are flattened as
``v = s + r * (x_1 + l * x_2 + ... )`` so that every cell is a contiguous
block of ``r`` indices.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
import scipy.sparse as sp

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "LatticeSpec",
    "LatticeError",
    "build_staggered_hypercubic",
    "build_honeycomb",
    "build_kagome",
    "build_dirac_square",
    "build_decoupled_component",
    "builtin",
    "BUILTIN_NAMES",
    "load_spec",
    "spec_from_dict",
    "cell_coords",
    "vertex_index",
    "vertex_coords",
    "assemble_sparse",
    "assemble_dense",
    "neighbors",
    "onsite_energy",
    "connected_components",
]

HERMITIAN_TOL = 1e-12

Key = tuple  # (delta: tuple[int, ...], s: int, t: int)


class LatticeError(ValueError):
    """Invalid hopping table or lattice size."""


@dataclass(frozen=True)
class LatticeSpec:
    """Immutable hopping table ``h[(delta, s, t)]`` on a d-dimensional crystal with r sites per cell."""

    d: int
    r: int
    hoppings: Mapping[Key, complex]
    name: str = "custom"
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.r < 1:
            raise LatticeError(f"need d >= 1 and r >= 1, got d={self.d}, r={self.r}")
        clean = {}
        for (delta, s, t), h in self.hoppings.items():
            delta = tuple(int(c) for c in delta)
            if len(delta) != self.d:
                raise LatticeError(f"offset {delta} does not have {self.d} components")
            if not (0 <= s < self.r and 0 <= t < self.r):
                raise LatticeError(f"site index out of range in entry {(delta, s, t)}")
            h = complex(h)
            if h != 0:
                clean[(delta, int(s), int(t))] = clean.get((delta, int(s), int(t)), 0) + h
        for (delta, s, t), h in clean.items():
            partner = clean.get((tuple(-c for c in delta), t, s))
            if partner is None or abs(partner - h.conjugate()) > HERMITIAN_TOL * max(1.0, abs(h)):
                raise LatticeError(
                    f"entry {(delta, s, t)}={h} lacks a Hermitian partner at {(tuple(-c for c in delta), t, s)}"
                )
        keys = sorted(clean)
        deltas = np.array([k[0] for k in keys], dtype=np.int64).reshape(len(keys), self.d)
        src = np.array([k[1] for k in keys], dtype=np.int64)
        dst = np.array([k[2] for k in keys], dtype=np.int64)
        amps = np.array([clean[k] for k in keys], dtype=np.complex128)
        object.__setattr__(self, "hoppings", MappingProxyType(clean))
        object.__setattr__(self, "_arrays", (deltas, src, dst, amps))

    @property
    def entries(self):
        """Sorted ``(deltas, src, dst, amps)`` arrays of the nonzero hoppings."""
        return self._arrays

    @property
    def offsets(self) -> list[tuple[int, ...]]:
        return sorted({k[0] for k in self.hoppings})

    @property
    def max_offset(self) -> int:
        deltas = self._arrays[0]
        return int(np.abs(deltas).max()) if deltas.size else 0

    def shifted(self, energy: float) -> "LatticeSpec":
        """Copy with ``energy`` subtracted from every on-site term."""
        if energy == 0:
            return self
        table = dict(self.hoppings)
        zero = (0,) * self.d
        for s in range(self.r):
            table[(zero, s, s)] = table.get((zero, s, s), 0) - energy
        return LatticeSpec(self.d, self.r, table, name=self.name)

    def __hash__(self):
        return hash((self.d, self.r, self.name, tuple(sorted(self.hoppings.items(), key=lambda kv: kv[0]))))

    def __eq__(self, other):
        if not isinstance(other, LatticeSpec):
            return NotImplemented
        return (self.d, self.r, dict(self.hoppings)) == (other.d, other.r, dict(other.hoppings))


# ---------------------------------------------------------------------------
# built-in lattices
# ---------------------------------------------------------------------------

def _unit(d, i, sign=1):
    e = [0] * d
    e[i] = sign
    return tuple(e)


def build_staggered_hypercubic(d: int) -> LatticeSpec:
    """Hypercubic lattice with staggered signs, cells of 2**d vertices.

    Site labels are bit vectors sigma in Z_2^d, encoded as
    ``s = sigma_1 + 2 sigma_2 + ...``.
    """
    if d < 1:
        raise LatticeError("dimension must be >= 1")
    zero = (0,) * d
    table: dict = {}
    for s in range(2**d):
        bits = [(s >> i) & 1 for i in range(d)]
        for i in range(d):
            sign = (-1) ** sum(bits[:i])
            t = s ^ (1 << i)
            table[(zero, s, t)] = float(sign)
            if bits[i] == 1:
                table[(_unit(d, i, +1), s, t)] = float(-sign)
            else:
                table[(_unit(d, i, -1), s, t)] = float(-sign)
    return LatticeSpec(d, 2**d, table, name=f"staggered-hypercubic-{d}")


def build_honeycomb() -> LatticeSpec:
    """Honeycomb lattice drawn as a bipartite square lattice with two sites per cell."""
    table = {}
    for delta in [(0, 0), (1, 0), (1, 1)]:
        table[(delta, 1, 0)] = 1.0
        table[(tuple(-c for c in delta), 0, 1)] = 1.0
    return LatticeSpec(2, 2, table, name="honeycomb")


def build_kagome() -> LatticeSpec:
    """Kagome adjacency matrix minus the identity, three sites per cell.

    Bloch block entries are ``g(q) = 1 + exp(i q)`` with
    ``B01 = g(ky)``, ``B02 = g(ky - kx)``, ``B12 = g(-kx)``.
    """
    table = {((0, 0), s, s): -1.0 for s in range(3)}
    # g(q) with q = -k.delta0  ->  offsets 0 and delta0
    for s, t, delta in [(0, 1, (0, -1)), (0, 2, (1, -1)), (1, 2, (1, 0))]:
        table[((0, 0), s, t)] = 1.0
        table[(delta, s, t)] = 1.0
        table[((0, 0), t, s)] = 1.0
        table[(tuple(-c for c in delta), t, s)] = 1.0
    return LatticeSpec(2, 3, table, name="kagome")


def build_dirac_square(gamma: float = 1.0, omega: float = 1.0) -> LatticeSpec:
    """Two-site square lattice with block [[g c, w s*], [w s, -g c]].

    ``s(k) = sin kx - i sin ky`` and ``c(k) = 2 - cos kx - cos ky``.
    """
    ex, ey = (1, 0), (0, 1)
    mx, my = (-1, 0), (0, -1)
    table: dict = {}
    if gamma != 0:
        for s, sign in [(0, 1.0), (1, -1.0)]:
            table[((0, 0), s, s)] = 2.0 * gamma * sign
            for delta in (ex, ey, mx, my):
                table[(delta, s, s)] = -0.5 * gamma * sign
    if omega != 0:
        lower = {ex: 0.5j * omega, mx: -0.5j * omega, ey: 0.5 * omega, my: -0.5 * omega}
        for delta, h in lower.items():
            table[(delta, 1, 0)] = h
            table[(tuple(-c for c in delta), 0, 1)] = np.conj(h)
    return LatticeSpec(2, 2, table, name="dirac-square")


def build_decoupled_component() -> LatticeSpec:
    """One connected component of the gamma=0 Dirac square lattice.

    Square lattice with ``H0|v> = i(-1)^y (|v+ex> - |v-ex>) + (-1)^y (|v+ey> - |v-ey>)``;
    cells stack the two vertices y = 2Y and y = 2Y + 1.
    """
    table = {
        ((1, 0), 0, 0): 1j,
        ((-1, 0), 0, 0): -1j,
        ((1, 0), 1, 1): -1j,
        ((-1, 0), 1, 1): 1j,
        ((0, 0), 0, 1): 1.0,
        ((0, 0), 1, 0): 1.0,
        ((0, -1), 0, 1): -1.0,
        ((0, 1), 1, 0): -1.0,
    }
    return LatticeSpec(2, 2, table, name="decoupled-square")


BUILTIN_NAMES = ("staggered-hypercubic-<d>", "honeycomb", "kagome", "dirac-square", "decoupled-square")


def builtin(name: str, **params) -> LatticeSpec:
    """Look up a built-in lattice by its canonical name."""
    m = re.fullmatch(r"staggered-hypercubic-(\d+)", name)
    if m:
        return build_staggered_hypercubic(int(m.group(1)))
    if name == "honeycomb":
        return build_honeycomb()
    if name == "kagome":
        return build_kagome()
    if name == "dirac-square":
        return build_dirac_square(float(params.get("gamma", 1.0)), float(params.get("omega", 1.0)))
    if name == "decoupled-square":
        return build_decoupled_component()
    raise LatticeError(f"unknown lattice {name!r}; built-ins are {', '.join(BUILTIN_NAMES)}")


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------

def spec_from_dict(data: Mapping, strict: bool = False) -> LatticeSpec:
    """Build a spec from ``{d, r, name?, hopping = [{delta, sigma, sigma_prime, re, im}]}``.

    Hermitian partners are filled in unless ``strict`` is set, in which case
    they must be present and consistent.
    """
    try:
        d = int(data["d"])
        r = int(data["r"])
        rows = data.get("hopping", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeError(f"malformed lattice spec: {exc}") from exc
    table: dict = {}
    for row in rows:
        try:
            key = (tuple(int(c) for c in row["delta"]), int(row["sigma"]), int(row["sigma_prime"]))
            h = complex(float(row.get("re", 0.0)), float(row.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise LatticeError(f"malformed hopping entry {row!r}") from exc
        if key in table:
            raise LatticeError(f"duplicate hopping entry {key}")
        table[key] = h
    if not strict:
        for (delta, s, t), h in list(table.items()):
            partner = (tuple(-c for c in delta), t, s)
            if partner not in table:
                table[partner] = h.conjugate()
    return LatticeSpec(d, r, table, name=str(data.get("name", "custom")))


def load_spec(path: str | Path, strict: bool = False) -> LatticeSpec:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise LatticeError(f"{path}: {exc}") from exc
    return spec_from_dict(data, strict=strict)


# ---------------------------------------------------------------------------
# indexing and assembly
# ---------------------------------------------------------------------------

def cell_coords(d: int, l: int) -> np.ndarray:
    """All cells as an (l**d, d) array in flat order (first coordinate fastest)."""
    grids = np.indices((l,) * d).reshape(d, -1)[::-1].T
    return np.ascontiguousarray(grids)


def _cell_flat(x, l):
    x = np.mod(np.asarray(x, dtype=np.int64), l)
    return x @ (l ** np.arange(x.shape[-1], dtype=np.int64))


def vertex_index(x, s: int, l: int, r: int) -> int:
    return int(s + r * _cell_flat(np.asarray(x)[None, :], l)[0])


def vertex_coords(v: int, l: int, d: int, r: int) -> tuple[tuple[int, ...], int]:
    s = v % r
    c = v // r
    x = []
    for _ in range(d):
        x.append(c % l)
        c //= l
    return tuple(x), s


def _check_size(spec: LatticeSpec, l: int, sum_aliases: bool):
    if l < 1:
        raise LatticeError("l must be positive")
    need = 3 * spec.max_offset
    if l < need and not sum_aliases:
        raise LatticeError(
            f"l={l} is too small for hopping offsets up to {spec.max_offset} (need l >= {need}); "
            "pass sum_aliases=True to sum wrapped entries"
        )


def assemble_sparse(spec: LatticeSpec, l: int, sum_aliases: bool = False) -> sp.csr_matrix:
    """Real-space H0 on the periodic ``l**d`` torus as a CSR matrix."""
    _check_size(spec, l, sum_aliases)
    X = cell_coords(spec.d, l)
    base = _cell_flat(X, l)
    deltas, src, dst, amps = spec.entries
    rows, cols, vals = [], [], []
    for delta, s, t, h in zip(deltas, src, dst, amps):
        rows.append(t + spec.r * _cell_flat(X + delta, l))
        cols.append(s + spec.r * base)
        vals.append(np.full(base.shape, h))
    N = spec.r * l**spec.d
    if not rows:
        return sp.csr_matrix((N, N), dtype=np.complex128)
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return M


def assemble_dense(spec: LatticeSpec, l: int, sum_aliases: bool = False) -> np.ndarray:
    return assemble_sparse(spec, l, sum_aliases=sum_aliases).toarray()


def neighbors(spec: LatticeSpec, l: int, v: int, H0=None) -> list[tuple[int, complex]]:
    """Vertices u != v with nonzero <u|H0|v>, with those amplitudes."""
    M = assemble_sparse(spec, l) if H0 is None else sp.csc_matrix(H0)
    col = sp.csc_matrix(M)[:, v]
    out = [(int(u), complex(a)) for u, a in zip(col.indices, col.data) if u != v and a != 0]
    return sorted(out)


def onsite_energy(spec: LatticeSpec, l: int, v: int, H0=None) -> complex:
    M = assemble_sparse(spec, l) if H0 is None else H0
    return complex(M[v, v])


def connected_components(spec: LatticeSpec, l: int) -> int:
    """Number of connected components of the graph underlying H0 at size l."""
    from scipy.sparse.csgraph import connected_components as cc

    M = assemble_sparse(spec, l)
    ncomp, _ = cc(abs(M) > 0, directed=False)
    return int(ncomp)
