"""Small-instance consistency checks against dense linear algebra.

Each check returns a :class:`CheckResult`; the ``verify`` command and the
test-suite both use them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .bloch import bloch_blocks, find_dirac_points, momentum_grid
from .dynamics import SearchInstance, dense_spectrum, search_hamiltonian, marked_state
from .lattice import LatticeSpec, assemble_dense, builtin, cell_coords, vertex_index
from .resolvent import F_of_E, OracleKind, choose_oracle, find_roots, spectral_measure


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3g} (tol {self.tolerance:.0e}) {self.detail}".rstrip()


def fourier_matrix(d: int, l: int, r: int) -> np.ndarray:
    """Unitary with columns |k, s> = n^-1/2 sum_x e^{ik.x} |x, s>, ordered (k, s)."""
    X = cell_coords(d, l)
    K = momentum_grid(d, l)
    n = l**d
    phase = np.exp(1j * X @ K.T) / np.sqrt(n)  # (x, k)
    return np.kron(phase, np.eye(r))


def block_structure_error(spec: LatticeSpec, l: int) -> float:
    """max |U^dag H0 U - diag_k conj(B(k))|; the Fourier basis sees the transposed blocks."""
    H = assemble_dense(spec, l)
    U = fourier_matrix(spec.d, l, spec.r)
    Hk = U.conj().T @ H @ U
    B = bloch_blocks(spec, momentum_grid(spec.d, l))
    expect = sla.block_diag(*[b.T for b in B])
    return float(np.max(np.abs(Hk - expect)))


def dense_resolvent_element(spec: LatticeSpec, l: int, alpha: int, E: float, gamma: float = 1.0, w=None) -> complex:
    H = gamma * assemble_dense(spec, l)
    v = vertex_index(w if w is not None else (0,) * spec.d, alpha, l, spec.r)
    e = np.zeros(H.shape[0])
    e[v] = 1.0
    return complex(np.linalg.solve(H - E * np.eye(H.shape[0]), e)[v])


def resolvent_error(spec: LatticeSpec, l: int, alpha: int, E: float, gamma: float = 1.0, w=None) -> float:
    exact = dense_resolvent_element(spec, l, alpha, E, gamma, w)
    return abs(F_of_E(spec, l, (w, alpha), E, gamma) - exact)


def root_errors(spec: LatticeSpec, l: int, alpha: int, w=None, oracle="auto"):
    """Distance of each root to the dense spectrum of H, and |H|w>| (case 1)."""
    kind = choose_oracle(spec, l, alpha) if oracle == "auto" else OracleKind.parse(oracle)
    inst = SearchInstance(spec, l, (w if w is not None else (0,) * spec.d, alpha), kind)
    H = search_hamiltonian(inst)
    lam, _ = dense_spectrum(H)
    roots = find_roots(spec, l, alpha, kind, i1=inst.i1)
    dist = [float(np.min(np.abs(lam - E))) for E in roots]
    zero = float(np.linalg.norm(H @ marked_state(inst))) if kind is OracleKind.PROJECTOR else None
    return roots, dist, zero


def default_suite() -> list[CheckResult]:
    results = []
    small = [
        (builtin("staggered-hypercubic-1"), 4),
        (builtin("staggered-hypercubic-2"), 4),
        (builtin("staggered-hypercubic-3"), 3),
        (builtin("honeycomb"), 6),
        (builtin("kagome"), 6),
        (builtin("dirac-square"), 4),
        (builtin("decoupled-square"), 4),
    ]
    rng = np.random.default_rng(7)
    worst = 0.0
    for spec, l in small:
        for _ in range(3):
            alpha = int(rng.integers(spec.r))
            E = float(rng.uniform(-2.5, 2.5))
            mu = spectral_measure(spec, l, alpha)
            if np.min(np.abs(mu.energies - E)) < 1e-3:
                E += 2e-3
            worst = max(worst, resolvent_error(spec, l, alpha, E))
    results.append(CheckResult("resolvent vs dense solve", worst <= 1e-10, worst, 1e-10))

    worst = max(block_structure_error(spec, l) for spec, l in small)
    results.append(CheckResult("Fourier block diagonalisation", worst <= 1e-10, worst, 1e-10))

    worst_root = 0.0
    worst_zero = 0.0
    for spec, l in small:
        _, dist, zero = root_errors(spec, l, 0)
        worst_root = max(worst_root, *dist)
        if zero is not None:
            worst_zero = max(worst_zero, zero)
    results.append(CheckResult("roots are eigenvalues of dense H", worst_root <= 1e-9, worst_root, 1e-9))
    results.append(CheckResult("projector oracle annihilates |w>", worst_zero <= 1e-12, worst_zero, 1e-12))

    ok = len(find_dirac_points(builtin("honeycomb"))) == 2
    results.append(CheckResult("honeycomb has two Dirac points", ok, float(ok), 0.0))
    return results
