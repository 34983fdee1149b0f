"""Momentum-space blocks, band structures, Dirac points and the crystal assumptions.

Blocks follow the index convention ``B(k)[s, t] = sum_delta h[delta, s, t] exp(-i k.delta)``.
In the Fourier basis ``|k, s> = n**-0.5 sum_x exp(i k.x) |x, s>`` the matrix of
H0 restricted to momentum k is ``B(k).T`` (equivalently ``conj(B(k))``), so
eigenvector amplitudes on ``|k, s>`` are the complex conjugates of the
eigenvectors of ``B(k)``.  Projector diagonals and eigenvalues are the same
in both conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import optimize

from . import _accel
from .lattice import LatticeSpec, cell_coords, connected_components

__all__ = [
    "BlochBlock",
    "DiracPoint",
    "AssumptionReport",
    "DiracSearchError",
    "NoDiracPointError",
    "NonlinearTouchingError",
    "canonical_momentum",
    "momentum_grid",
    "bloch_blocks",
    "block_matrix",
    "band_energies",
    "is_chiral",
    "iter_spectral_weights",
    "spectral_weights",
    "kernel_projector",
    "find_dirac_points",
    "verify_assumptions",
    "rationalize",
    "on_grid",
]

DEGENERACY_TOL = 1e-9
CHUNK_ELEMENTS = 1 << 22  # complex entries per batched block array


class DiracSearchError(RuntimeError):
    pass


class NoDiracPointError(DiracSearchError):
    """No band reaches the Dirac energy anywhere in the Brillouin zone."""


class NonlinearTouchingError(DiracSearchError):
    """A band touches the Dirac energy without linear growth (quadratic or flat)."""


@dataclass(frozen=True)
class BlochBlock:
    k: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def projector(self, band_indices) -> np.ndarray:
        u = self.eigenvectors[:, list(band_indices)]
        return u @ u.conj().T


@dataclass
class DiracPoint:
    k: np.ndarray
    band_indices: tuple[int, ...]
    linearity: float
    chi: np.ndarray
    energy: float = 0.0

    @property
    def m(self) -> int:
        return len(self.band_indices)

    def as_dict(self) -> dict:
        return {
            "k": [float(c) for c in self.k],
            "band_indices": list(self.band_indices),
            "linearity": float(self.linearity),
            "chi": [float(c) for c in self.chi],
            "energy": float(self.energy),
        }


@dataclass
class AssumptionReport:
    passed: dict
    evidence: dict
    D: int
    m: int
    energy_shift: float = 0.0
    components: int | None = None
    fractions: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {
            "passed": {str(k): bool(v) for k, v in self.passed.items()},
            "evidence": {str(k): v for k, v in self.evidence.items()},
            "D": self.D,
            "m": self.m,
            "energy_shift": self.energy_shift,
            "components": self.components,
            "fractions": [[str(f) for f in row] for row in self.fractions],
        }


# ---------------------------------------------------------------------------
# momenta and blocks
# ---------------------------------------------------------------------------

def canonical_momentum(k):
    """Map momenta into (-pi, pi]."""
    k = np.asarray(k, dtype=np.float64)
    out = np.mod(k + np.pi, 2 * np.pi) - np.pi
    return np.where(np.isclose(out, -np.pi, atol=1e-14, rtol=0), np.pi, out)


def momentum_grid(d: int, l: int) -> np.ndarray:
    """The l**d grid momenta 2 pi m / l as an (l**d, d) array, in cell order."""
    if l < 1:
        raise ValueError("l must be positive")
    return canonical_momentum(2 * np.pi * cell_coords(d, l) / l)


def bloch_blocks(spec: LatticeSpec, ks) -> np.ndarray:
    ks = np.atleast_2d(np.asarray(ks, dtype=np.float64))
    deltas, src, dst, amps = spec.entries
    return _accel.fill_blocks(ks, deltas, src, dst, amps, spec.r)


def block_matrix(spec: LatticeSpec, k) -> BlochBlock:
    k = np.asarray(k, dtype=np.float64).reshape(spec.d)
    B = bloch_blocks(spec, k[None, :])[0]
    B = 0.5 * (B + B.conj().T)
    vals, vecs = np.linalg.eigh(B)
    return BlochBlock(k=k, matrix=B, eigenvalues=vals, eigenvectors=vecs)


def _chunks(total: int, r: int):
    size = max(1, CHUNK_ELEMENTS // (r * r))
    for start in range(0, total, size):
        yield start, min(total, start + size)


def band_energies(spec: LatticeSpec, ks) -> np.ndarray:
    """Sorted band energies, shape (K, r)."""
    ks = np.atleast_2d(np.asarray(ks, dtype=np.float64))
    out = np.empty((ks.shape[0], spec.r))
    for a, b in _chunks(ks.shape[0], spec.r):
        out[a:b] = np.linalg.eigvalsh(bloch_blocks(spec, ks[a:b]))
    return out


@lru_cache(maxsize=64)
def is_chiral(spec: LatticeSpec, samples: int = 16, tol: float = 1e-12) -> bool:
    """True when B(k)^2 is a multiple of the identity at every sampled k.

    Such blocks have eigenvalues +-sqrt(tr B^2 / r) with projectors
    (1 +- B/E)/2, which lets lattice sums skip the eigensolver.
    """
    rng = np.random.default_rng(12345)
    ks = rng.uniform(-np.pi, np.pi, size=(samples, spec.d))
    B = bloch_blocks(spec, ks)
    B2 = B @ B
    scale = np.einsum("kii->k", B2).real / spec.r
    resid = np.abs(B2 - scale[:, None, None] * np.eye(spec.r)).max()
    return bool(resid <= tol * max(1.0, float(np.abs(scale).max())))


def _chiral_chunk(spec, ks, alpha):
    deltas, src, dst, amps = spec.entries
    frob, diag = _accel.chiral_invariants(ks, deltas, src, dst, amps, spec.r)
    E = np.sqrt(np.maximum(frob, 0.0) / spec.r)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(E > 0, diag[:, alpha] / np.where(E > 0, E, 1.0), 0.0)
    energies = np.stack([E, -E], axis=1)
    weights = np.stack([0.5 * (1 + ratio), 0.5 * (1 - ratio)], axis=1)
    zero = E <= DEGENERACY_TOL
    # whole block vanishes: all weight sits at energy 0
    weights[zero, 0] = 1.0
    weights[zero, 1] = 0.0
    return energies, weights


def iter_spectral_weights(spec: LatticeSpec, l: int, alpha: int, method: str = "auto"):
    """Yield chunks ``(energies, weights)`` of H0's spectral measure at |x, alpha>.

    ``weights`` are |<x, alpha|k, i>|^2 = |u_alpha|^2 / n for every grid
    momentum k and band i.  Chunks cover the grid in cell order.
    """
    n = l**spec.d
    ks = momentum_grid(spec.d, l)
    chiral = method == "chiral" or (method == "auto" and is_chiral(spec))
    for a, b in _chunks(ks.shape[0], spec.r):
        if chiral:
            e, w = _chiral_chunk(spec, ks[a:b], alpha)
        else:
            B = bloch_blocks(spec, ks[a:b])
            e, U = np.linalg.eigh(B)
            w = np.abs(U[:, alpha, :]) ** 2
        yield e, w / n


def spectral_weights(spec: LatticeSpec, l: int, alpha: int, method: str = "auto"):
    """Full spectral measure as flat ``(energies, weights)`` arrays."""
    parts = list(iter_spectral_weights(spec, l, alpha, method=method))
    e = np.concatenate([p[0] for p in parts], axis=0)
    w = np.concatenate([p[1] for p in parts], axis=0)
    return e.ravel(), w.ravel()


def kernel_projector(spec: LatticeSpec, k, band_indices, fourier: bool = True) -> np.ndarray:
    """Projector onto the bands ``band_indices`` at k.

    With ``fourier`` (default) the projector acts on amplitudes in the
    |k, s> basis; otherwise on the block's own index convention.
    """
    P = block_matrix(spec, k).projector(band_indices)
    return P.conj() if fourier else P


def on_grid(k, l: int, tol: float = 1e-9) -> bool:
    m = np.asarray(k) * l / (2 * np.pi)
    return bool(np.all(np.abs(m - np.round(m)) <= tol))


def rationalize(x: float, max_den: int, tol: float) -> Fraction | None:
    f = Fraction(x).limit_denominator(max_den)
    return f if abs(float(f) - x) <= tol else None


# ---------------------------------------------------------------------------
# Dirac points
# ---------------------------------------------------------------------------

def _gap_to(spec, ks, energy):
    ks = np.atleast_2d(ks)
    if energy == 0 and is_chiral(spec):
        deltas, src, dst, amps = spec.entries
        frob, _ = _accel.chiral_invariants(ks, deltas, src, dst, amps, spec.r)
        return np.sqrt(np.maximum(frob, 0.0) / spec.r)
    return np.abs(band_energies(spec, ks) - energy).min(axis=1)


def _default_resolution(d: int) -> int:
    return int(max(4, min(64, math.floor((1 << 18) ** (1.0 / d)))))


def _lipschitz(spec) -> float:
    deltas, _, _, amps = spec.entries
    if not amps.size:
        return 0.0
    return float(np.sum(np.abs(amps) * np.linalg.norm(deltas, axis=1)))


def _local_minima(values: np.ndarray, res: int, d: int) -> np.ndarray:
    grid = values.reshape((res,) * d)
    mask = np.ones_like(grid, dtype=bool)
    # cell order has the first coordinate fastest, i.e. the last numpy axis
    for ax in range(d):
        for sh in (1, -1):
            mask &= grid <= np.roll(grid, sh, axis=ax)
    return np.flatnonzero(mask.ravel())


def _snap(k, max_den=24, tol=1e-6):
    out = np.array(k, dtype=float)
    for i, c in enumerate(out):
        f = rationalize(c / np.pi, max_den, tol)
        if f is not None:
            out[i] = float(f) * np.pi
    return canonical_momentum(out)


def _same_k(a, b, tol=1e-5):
    diff = canonical_momentum(np.asarray(a) - np.asarray(b))
    return float(np.abs(diff).max()) <= tol


def _locate_zeros(spec, energy, resolution, offset, zero_tol, max_seeds=64):
    d = spec.d
    h = 2 * np.pi / resolution
    ks = canonical_momentum(2 * np.pi * (cell_coords(d, resolution) + offset) / resolution)
    g = _gap_to(spec, ks, energy)
    thresh = _lipschitz(spec) * h * math.sqrt(d) + zero_tol
    idx = _local_minima(g, resolution, d)
    idx = idx[g[idx] <= thresh]
    idx = idx[np.argsort(g[idx], kind="stable")][:max_seeds]

    def objective(k):
        return float(_gap_to(spec, k[None, :], energy)[0] ** 2)

    found: list[np.ndarray] = []
    for i in idx:
        k0 = ks[i]
        simplex = np.vstack([k0] + [k0 + 0.5 * h * np.eye(d)[j] for j in range(d)])
        res = optimize.minimize(
            objective,
            k0,
            method="Nelder-Mead",
            options={"xatol": 1e-13, "fatol": 1e-30, "maxiter": 4000 * d, "initial_simplex": simplex},
        )
        k = canonical_momentum(res.x)
        snapped = _snap(k)
        if _gap_to(spec, snapped[None, :], energy)[0] <= max(zero_tol, _gap_to(spec, k[None, :], energy)[0]):
            k = snapped
        if _gap_to(spec, k[None, :], energy)[0] > zero_tol:
            continue
        if not any(_same_k(k, q) for q in found):
            found.append(k)
    return found, float(g.min())


def _linearity(spec, k, energy, rng, d):
    rays = [np.eye(d)[i] * s for i in range(d) for s in (1, -1)]
    for v in rng.normal(size=(8, d)):
        rays.append(v / np.linalg.norm(v))
    rays = np.array(rays)
    ratios = {}
    for step in (1e-2, 1e-3):
        g = _gap_to(spec, k[None, :] + step * rays, energy)
        ratios[step] = float(g.min() / step)
    return ratios


def find_dirac_points(
    spec: LatticeSpec,
    resolution: int | None = None,
    tol: float = 1e-8,
    energy: float = 0.0,
    linear_threshold: float = 0.1,
    seed: int = 0,
) -> list[DiracPoint]:
    """Locate every momentum where a band reaches ``energy`` with linear growth.

    Coarse scan, Nelder-Mead refinement of ``min_i (E_i(k) - energy)**2``,
    snapping to rational multiples of pi, then a ray test of
    ``|E(k + delta) - energy| / |delta|`` at ``|delta| = 1e-3``.
    """
    d = spec.d
    res = resolution or _default_resolution(d)
    zeros, gmin = _locate_zeros(spec, energy, res, 0.0, tol)
    if not zeros:
        raise NoDiracPointError(
            f"{spec.name}: no band reaches E={energy} (smallest |E - {energy}| on the scan is {gmin:.3g})"
        )
    rng = np.random.default_rng(seed)
    out = []
    for k in sorted(zeros, key=lambda q: tuple(np.round(q, 9))):
        ratios = _linearity(spec, k, energy, rng, d)
        c = ratios[1e-3]
        if c < linear_threshold:
            raise NonlinearTouchingError(
                f"{spec.name}: touching at k={np.round(k, 6).tolist()} is not linear "
                f"(|dE|/|dk| = {c:.3g} at |dk|=1e-3, {ratios[1e-2]:.3g} at 1e-2)"
            )
        blk = block_matrix(spec, k)
        bands = tuple(int(i) for i in np.flatnonzero(np.abs(blk.eigenvalues - energy) <= max(1e-6, 10 * tol)))
        chi = np.real(np.diag(blk.projector(bands)))
        out.append(DiracPoint(k=k, band_indices=bands, linearity=c, chi=chi, energy=energy))
    return out


def verify_assumptions(
    spec: LatticeSpec,
    diracs: list[DiracPoint],
    resolution: int | None = None,
    tol: float = 1e-8,
    gap: float = 1e-2,
    max_den: int = 24,
    chi_tol: float = 1e-8,
    energy_shift: float = 0.0,
) -> AssumptionReport:
    """Check the five crystal assumptions numerically; failures are reported, not raised."""
    d = spec.d
    res = resolution or _default_resolution(d)
    passed, evidence = {}, {}

    ms = sorted({p.m for p in diracs})
    max_e = max((float(np.abs(block_matrix(spec, p.k).eigenvalues[list(p.band_indices)]).max()) for p in diracs), default=math.inf)
    passed[1] = bool(diracs) and len(ms) == 1 and max_e <= max(1e-6, 10 * tol)
    evidence[1] = {"max_abs_energy": max_e, "m_values": ms}

    try:
        extra, _ = _locate_zeros(spec, 0.0, res, 0.5, tol)
    except Exception:  # pragma: no cover - defensive
        extra = []
    stray = [q for q in extra if not any(_same_k(q, p.k) for p in diracs)]
    passed[2] = not stray
    evidence[2] = {"extra_zeros": [np.round(q, 9).tolist() for q in stray]}

    dirac_bands = sorted({i for p in diracs for i in p.band_indices})
    others = [i for i in range(spec.r) if i not in dirac_bands]
    if others:
        ks = canonical_momentum(2 * np.pi * cell_coords(d, res) / res)
        E = band_energies(spec, ks)[:, others]
        min_other = float(np.abs(E).min())
    else:
        min_other = math.inf
    passed[3] = min_other > gap
    evidence[3] = {"other_bands": others, "min_abs_energy": min_other}

    fractions, residues = [], []
    for p in diracs:
        row = []
        for c in p.k:
            f = rationalize(float(c) / np.pi, max_den, 1e-9)
            row.append(f)
            residues.append(abs(float(c) / np.pi - float(f)) if f is not None else math.inf)
        fractions.append(row)
    passed[4] = all(f is not None for row in fractions for f in row)
    evidence[4] = {"max_denominator": max_den, "max_residue": max(residues, default=0.0)}

    min_chi = min((float(p.chi.min()) for p in diracs), default=0.0)
    passed[5] = min_chi > chi_tol
    evidence[5] = {"min_chi": min_chi}

    l0 = max(4, 3 * spec.max_offset)
    return AssumptionReport(
        passed=passed,
        evidence=evidence,
        D=len(diracs),
        m=ms[0] if len(ms) == 1 else -1,
        energy_shift=energy_shift,
        components=connected_components(spec, l0),
        fractions=[row for row in fractions if all(f is not None for f in row)],
    )
