"""Search Hamiltonian, starting states and exact time evolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bloch import DiracPoint, find_dirac_points, kernel_projector, on_grid
from .lattice import LatticeSpec, assemble_sparse, cell_coords, vertex_index
from .resolvent import OracleKind, lattice_moments, predict

__all__ = [
    "PropagationError",
    "SearchInstance",
    "EvolutionTrace",
    "SearchReport",
    "oracle_hamiltonian",
    "search_hamiltonian",
    "gamma_state",
    "marked_state",
    "enumerate_starting_states",
    "evolve",
    "success_probability",
    "true_starting_state",
    "dense_spectrum",
    "amplification_rounds",
    "run_search",
]

DENSE_BUDGET = 4096
KRYLOV_DIM = 30
STEP_TOL = 1e-10
NORM_ABORT = 1e-8
MAX_STARTS = 256


class PropagationError(ArithmeticError):
    """Norm drift beyond tolerance during time evolution."""


@dataclass
class SearchInstance:
    spec: LatticeSpec
    l: int
    marked: tuple  # (w: cell vector, alpha: site index)
    oracle: OracleKind = OracleKind.PROJECTOR
    gamma: float = 1.0
    i1: float | None = None
    diracs: list | None = None
    _H0: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w, a = self.marked
        w = tuple(int(c) % self.l for c in np.atleast_1d(w))
        if len(w) != self.spec.d:
            raise ValueError(f"marked cell {w} has wrong dimension for d={self.spec.d}")
        if not 0 <= int(a) < self.spec.r:
            raise ValueError(f"site index {a} out of range for r={self.spec.r}")
        self.marked = (w, int(a))
        self.oracle = OracleKind.parse(self.oracle)
        if self.oracle is OracleKind.ONSITE and self.i1 is None:
            self.i1 = lattice_moments(self.spec, self.l, self.alpha, m_max=1).moments[1]

    @property
    def alpha(self) -> int:
        return self.marked[1]

    @property
    def N(self) -> int:
        return self.spec.r * self.l**self.spec.d

    @property
    def vertex(self) -> int:
        return vertex_index(self.marked[0], self.marked[1], self.l, self.spec.r)

    @property
    def H0(self) -> sp.csr_matrix:
        if self._H0 is None:
            self._H0 = assemble_sparse(self.spec, self.l)
        return self._H0


def marked_state(inst: SearchInstance) -> np.ndarray:
    e = np.zeros(inst.N, dtype=np.complex128)
    e[inst.vertex] = 1.0
    return e


def oracle_hamiltonian(inst: SearchInstance) -> sp.csr_matrix:
    """The marking perturbation, to be added to gamma*H0."""
    N, v = inst.N, inst.vertex
    if inst.oracle is OracleKind.ONSITE:
        if inst.i1 is None or not np.isfinite(inst.i1) or inst.i1 == 0:
            raise ValueError("on-site oracle needs a finite nonzero I1")
        return sp.csr_matrix(([-1.0 / inst.i1], ([v], [v])), shape=(N, N), dtype=np.complex128)
    h = inst.H0[:, [v]].toarray().ravel()
    if abs(h[v]) > 1e-12:
        raise ValueError(f"projector oracle needs <w|H0|w> = 0, got {h[v]:.3g}")
    ew = sp.csr_matrix(([1.0], ([v], [0])), shape=(N, 1), dtype=np.complex128)
    hs = sp.csr_matrix(h.reshape(-1, 1))
    V = -(hs @ ew.conj().T + ew @ hs.conj().T)
    return sp.csr_matrix(V)


def search_hamiltonian(inst: SearchInstance) -> sp.csr_matrix:
    H = inst.gamma * inst.H0 + oracle_hamiltonian(inst)
    H = sp.csr_matrix(H)
    H.eliminate_zeros()
    return H


def gamma_state(inst: SearchInstance) -> np.ndarray:
    """H0|w,a> normalised; lives on the neighbours of the marked vertex."""
    g = inst.H0 @ marked_state(inst)
    nrm = np.linalg.norm(g)
    if nrm == 0:
        raise ValueError("marked vertex is isolated: H0|w,a> = 0")
    return g / nrm


# ---------------------------------------------------------------------------
# starting states
# ---------------------------------------------------------------------------

def _kernel_columns(spec: LatticeSpec, l: int, diracs):
    """Per Dirac point, the real-space kernel vectors P|k, a> for every a (as an (N, r) array)."""
    X = cell_coords(spec.d, l)
    n = l**spec.d
    cols = []
    for dp in diracs:
        if not on_grid(dp.k, l):
            raise ValueError(f"Dirac momentum {np.round(dp.k / np.pi, 6)}*pi is not on the l={l} grid")
        P = kernel_projector(spec, dp.k, dp.band_indices)
        phase = np.exp(1j * (X @ np.asarray(dp.k))) / math.sqrt(n)
        # amplitude at (x, s') is phase(x) * P[s', a]
        cols.append(np.einsum("x,sa->xsa", phase, P).reshape(n * spec.r, spec.r))
    return cols


def _phase_residues(diracs, d: int) -> list[np.ndarray]:
    """Distinct relative phase tuples exp(-i (k_j - k_0).w) as w ranges over Z^d."""
    if len(diracs) <= 1:
        return [np.ones(len(diracs), dtype=np.complex128)]
    k0 = np.asarray(diracs[0].k)
    period = 1
    for dp in diracs[1:]:
        for c in (np.asarray(dp.k) - k0) / (2 * np.pi):
            f = Fraction(float(c)).limit_denominator(1000)
            period = math.lcm(period, f.denominator)
    if period**d > 1 << 20:
        raise ValueError(f"phase period {period} in d={d} is too large to enumerate")
    delta = np.array([np.asarray(dp.k) - k0 for dp in diracs])
    seen = {}
    for w in np.ndindex(*(period,) * d):
        ph = np.exp(-1j * (delta @ np.asarray(w, dtype=float)))
        key = tuple(np.round(np.concatenate([ph.real, ph.imag]), 8))
        seen.setdefault(key, ph)
    return list(seen.values())


def enumerate_starting_states(
    spec: LatticeSpec,
    l: int,
    diracs=None,
    alphas=None,
    cap: int = MAX_STARTS,
    fidelity_tol: float = 1e-10,
):
    """All candidate starting states that can be built without knowing the marked cell.

    Returns a list of ``(alpha, phases, state)``.  For every site index with
    nonzero kernel weight and every reachable tuple of relative phases the
    state is the weighted superposition of the kernel vectors at the Dirac
    points; states equal up to a global phase are merged.
    """
    if diracs is None:
        diracs = find_dirac_points(spec)
    diracs = list(diracs)
    cols = _kernel_columns(spec, l, diracs)
    phases = _phase_residues(diracs, spec.d)
    alphas = range(spec.r) if alphas is None else alphas
    out = []
    for a in alphas:
        vecs = [c[:, a] for c in cols]
        chi = sum(np.vdot(v, v).real for v in vecs) * l**spec.d
        if chi < 1e-12:
            continue
        for ph in phases:
            s = sum(p * v for p, v in zip(ph, vecs))
            s = s / np.linalg.norm(s)
            if any(b == a and abs(np.vdot(t, s)) ** 2 > 1 - fidelity_tol for b, _, t in out):
                continue
            out.append((a, ph, s))
            if len(out) > cap:
                raise ValueError(
                    f"more than {cap} starting states ({len(diracs)} Dirac points, {len(phases)} phase tuples, r={spec.r})"
                )
    return out


def true_starting_state(inst: SearchInstance, diracs=None) -> np.ndarray:
    """The starting state matched to the marked cell (the one the analysis assumes)."""
    diracs = inst.diracs if diracs is None else diracs
    if diracs is None:
        diracs = find_dirac_points(inst.spec)
    cols = _kernel_columns(inst.spec, inst.l, diracs)
    w = np.asarray(inst.marked[0], dtype=float)
    s = sum(np.exp(-1j * np.dot(dp.k, w)) * c[:, inst.alpha] for dp, c in zip(diracs, cols))
    return s / np.linalg.norm(s)


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

@dataclass
class EvolutionTrace:
    times: np.ndarray
    overlap_sq: np.ndarray
    success_prob: np.ndarray
    norms: np.ndarray
    target: str
    energies: np.ndarray | None = None
    method: str = "dense"

    @property
    def first_max(self) -> tuple[float, float]:
        """(time, value) of the first local maximum of overlap_sq."""
        y = self.overlap_sq
        for i in range(1, len(y) - 1):
            if y[i] >= y[i - 1] and y[i] > y[i + 1]:
                return float(self.times[i]), float(y[i])
        i = int(np.argmax(y))
        return float(self.times[i]), float(y[i])

    @property
    def best(self) -> tuple[float, float]:
        i = int(np.argmax(self.success_prob))
        return float(self.times[i]), float(self.success_prob[i])


class _Recorder:
    def __init__(self, H, target, rule, record_energy):
        self.H = H
        self.target = None if target is None else np.asarray(target).conj()
        self.rule = rule
        self.record_energy = record_energy
        self.ov, self.sp, self.nm, self.en = [], [], [], []

    def __call__(self, psi):  # psi: (N, k) block of states
        self.nm.append(np.linalg.norm(psi, axis=0))
        self.ov.append(np.abs(self.target @ psi) ** 2 if self.target is not None else np.zeros(psi.shape[1]))
        if self.rule is not None:
            idx, wts = self.rule
            self.sp.append(wts @ (np.abs(psi[idx]) ** 2))
        else:
            self.sp.append(np.zeros(psi.shape[1]))
        if self.record_energy:
            self.en.append(np.real(np.sum(psi.conj() * (self.H @ psi), axis=0)))

    def cat(self, name):
        lst = getattr(self, name)
        return np.concatenate(lst) if lst else np.zeros(0)


def _is_real(H) -> bool:
    data = H.data if sp.issparse(H) else np.asarray(H)
    return not np.iscomplexobj(data) or not np.any(np.imag(data))


def dense_spectrum(H):
    """Full eigendecomposition of H, real arithmetic when H is real."""
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    if _is_real(Hd):
        Hd = np.real(Hd)
    return sla.eigh(Hd, check_finite=False)


def _dense_evolve(H, psi0, times, rec, spectrum=None, chunk=64):
    lam, V = dense_spectrum(H) if spectrum is None else spectrum
    c = V.conj().T @ psi0
    for i in range(0, len(times), chunk):
        t = times[i : i + chunk]
        rec(V @ (np.exp(-1j * np.outer(lam, t)) * c[:, None]))


def _lanczos(H, v, m):
    N = v.shape[0]
    beta0 = np.linalg.norm(v)
    Q = np.zeros((N, m + 1), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    Q[:, 0] = v / beta0
    for j in range(m):
        w = H @ Q[:, j]
        alpha[j] = np.vdot(Q[:, j], w).real
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].conj().T @ w)  # full reorthogonalisation
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-12 * max(1.0, abs(alpha[j])):
            return Q[:, : j + 1], alpha[: j + 1], beta[: j + 1], beta0, True
        Q[:, j + 1] = w / beta[j]
    return Q[:, :m], alpha, beta, beta0, False


def _krylov_evolve(H, psi0, times, rec, m=KRYLOV_DIM, tol=STEP_TOL):
    psi = psi0.astype(np.complex128)
    t_now = 0.0
    j = 0
    t_end = float(times[-1])
    while j < len(times) and times[j] <= t_now:
        rec(psi[:, None])
        j += 1
    while j < len(times):
        Q, a, b, beta0, exact = _lanczos(H, psi, m)
        k = len(a)
        theta, S = sla.eigh_tridiagonal(a, b[: k - 1])
        e1 = S[0].conj()

        def coeffs(tau):
            return S @ (np.exp(-1j * theta * tau) * e1)

        def err(tau):
            return 0.0 if exact else beta0 * b[k - 1] * abs(coeffs(tau)[-1])

        tau = t_end - t_now
        while err(tau) > tol:
            tau *= 0.5
            if tau < 1e-14 * max(1.0, t_end):
                raise PropagationError("Krylov step size underflow")
        t_next = t_now + tau
        block = []
        while j < len(times) and times[j] <= t_next + 1e-15 * max(1.0, t_end):
            block.append(beta0 * (Q @ coeffs(times[j] - t_now)))
            j += 1
        if block:
            rec(np.column_stack(block))
        psi = beta0 * (Q @ coeffs(tau))
        t_now = t_next
        if abs(np.linalg.norm(psi) - 1) > NORM_ABORT:
            raise PropagationError(f"norm drifted to {np.linalg.norm(psi):.12f} at t={t_now:.6g}")


def _success_rule(inst: SearchInstance):
    """Indices and weights so that success = weights . |psi[indices]|^2."""
    H0 = sp.csr_matrix(inst.H0)
    A = abs(H0) > 0
    A.setdiag(False)
    A.eliminate_zeros()
    deg = np.asarray(A.sum(axis=0)).ravel()
    v = inst.vertex
    nbrs = A[:, [v]].nonzero()[0]
    nbrs = nbrs[nbrs != v]
    idx = np.concatenate([[v], nbrs]).astype(np.int64)
    wts = np.concatenate([[1.0], 1.0 / deg[nbrs]])
    return idx, wts


def success_probability(psi, inst: SearchInstance) -> float:
    """Probability of naming the marked vertex after one vertex-basis measurement.

    A hit on the marked vertex counts directly; a hit on a neighbour u is
    followed by guessing one of u's deg(u) neighbours uniformly.
    """
    idx, wts = _success_rule(inst)
    return float(wts @ (np.abs(np.asarray(psi)[idx]) ** 2))


def evolve(
    H,
    psi0,
    times,
    target=None,
    inst: SearchInstance | None = None,
    method: str = "auto",
    dense_budget: int = DENSE_BUDGET,
    krylov_dim: int = KRYLOV_DIM,
    tol: float = STEP_TOL,
    record_energy: bool = False,
    spectrum=None,
) -> EvolutionTrace:
    """exp(-iHt) psi0 on a sorted time grid, recording overlaps and success probability.

    ``spectrum`` may carry a precomputed ``dense_spectrum(H)`` to share one
    diagonalisation between several initial states.
    """
    psi0 = np.asarray(psi0, dtype=np.complex128)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be sorted and non-negative")
    if abs(np.linalg.norm(psi0) - 1) > 1e-9:
        raise ValueError("initial state must have unit norm")
    N = psi0.shape[0]
    if method == "auto":
        method = "dense" if N <= dense_budget else "krylov"
    H = sp.csr_matrix(H)
    if _is_real(H):
        H = sp.csr_matrix(H.real)
    rec = _Recorder(H, target, _success_rule(inst) if inst is not None else None, record_energy)
    if method == "dense":
        _dense_evolve(H, psi0, times, rec, spectrum)
    elif method == "krylov":
        _krylov_evolve(H, psi0, times, rec, m=krylov_dim, tol=tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    norms = rec.cat("nm")
    if np.max(np.abs(norms - 1)) > NORM_ABORT:
        raise PropagationError(f"norm drift {np.max(np.abs(norms - 1)):.3g}")
    if inst is None:
        tname = "custom"
    else:
        tname = "gamma" if inst.oracle is OracleKind.PROJECTOR else "marked"
    return EvolutionTrace(
        times=times,
        overlap_sq=rec.cat("ov"),
        success_prob=rec.cat("sp"),
        norms=norms,
        target=tname,
        energies=rec.cat("en") if record_energy else None,
        method=method,
    )


# ---------------------------------------------------------------------------
# the full search
# ---------------------------------------------------------------------------

@dataclass
class SearchReport:
    prediction: object
    n_runs: int
    best_run: int
    best_alpha: int
    best_time: float
    best_success: float
    best_overlap_sq: float
    run_time: float
    repetitions: int
    total_time: float
    runs: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "best_run": self.best_run,
            "best_alpha": self.best_alpha,
            "best_time": self.best_time,
            "best_success": self.best_success,
            "best_overlap_sq": self.best_overlap_sq,
            "run_time": self.run_time,
            "repetitions": self.repetitions,
            "total_time": self.total_time,
            "predicted_success_amplitude": self.prediction.success_amplitude,
        }


def amplification_rounds(p: float) -> int:
    """Rounds of amplitude amplification needed to lift success p to a constant."""
    if p <= 0:
        return 0
    if p >= 0.5:
        return 1
    return int(math.ceil(math.pi / (4 * math.asin(math.sqrt(p)))))


def run_search(
    spec: LatticeSpec,
    l: int,
    marked,
    oracle_kind="auto",
    gamma: float = 1.0,
    n_times: int = 200,
    run_time: float | None = None,
    starts: str = "all",
    method: str = "auto",
    diracs=None,
) -> tuple[EvolutionTrace, SearchReport]:
    """Evolve every candidate starting state and keep the best measurement.

    ``run_time`` defaults to the predicted T at this gamma; the grid covers
    [0, 2T].  ``starts="true"`` evolves only the state matched to the marked
    cell, which is what the analysis describes.
    """
    w, a = marked
    pred = predict(spec, l, a, oracle_kind, gamma)
    diracs = find_dirac_points(spec) if diracs is None else diracs
    inst = SearchInstance(spec, l, (w, a), pred.oracle, gamma, pred.I1 if pred.oracle is OracleKind.ONSITE else None, diracs)
    H = search_hamiltonian(inst)
    target = gamma_state(inst) if inst.oracle is OracleKind.PROJECTOR else marked_state(inst)
    T = pred.run_time if run_time is None else float(run_time)
    times = np.linspace(0.0, 2 * T, n_times)
    if starts == "true":
        states = [(a, None, true_starting_state(inst))]
    else:
        states = enumerate_starting_states(spec, l, diracs)
    if method == "auto":
        method = "dense" if inst.N <= DENSE_BUDGET else "krylov"
    spectrum = dense_spectrum(H) if method == "dense" else None
    traces = [evolve(H, s, times, target, inst, method, spectrum=spectrum) for _, _, s in states]
    best = max(range(len(traces)), key=lambda i: traces[i].best[1])
    bt, bp = traces[best].best
    reps = amplification_rounds(bp)
    report = SearchReport(
        prediction=pred,
        n_runs=len(traces),
        best_run=best,
        best_alpha=states[best][0],
        best_time=bt,
        best_success=bp,
        best_overlap_sq=float(traces[best].overlap_sq.max()),
        run_time=T,
        repetitions=reps,
        total_time=len(traces) * reps * T,
        runs=traces,
    )
    return traces[best], report
