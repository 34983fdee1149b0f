"""Resolvent analysis of the perturbed search Hamiltonian.

Everything here is computed exactly for a finite lattice from the Bloch
eigendecompositions: the diagonal resolvent element

    F(E) = <w, a| (gamma H0 - E)^-1 |w, a> = sum_{k, i} p_{k,i} / (gamma E_i(k) - E)

with ``p_{k,i} = |<w, a|k, i>|^2``, the moments of the non-kernel part of
the spectrum, and the two roots of the eigenvalue condition closest to the
kernel pole at E = 0.  Continuum limits come only from extrapolating the
finite-lattice sums.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from . import _accel
from .bloch import DEGENERACY_TOL, iter_spectral_weights, spectral_weights
from .lattice import LatticeSpec

__all__ = [
    "OracleKind",
    "PoleError",
    "RootError",
    "SpectralMeasure",
    "LatticeSums",
    "LimitIntegrals",
    "SpectralPrediction",
    "GammaTuning",
    "spectral_measure",
    "F_of_E",
    "lattice_moments",
    "richardson",
    "limit_integrals",
    "default_ladder",
    "choose_oracle",
    "find_roots",
    "predict",
    "fine_tuning_f",
    "gamma_analysis",
]

CASE1_TOL = 1e-6


class OracleKind(str, enum.Enum):
    PROJECTOR = "projector"  # case 1: -H0|w><w| - |w><w|H0
    ONSITE = "onsite"  # case 2: -(1/I1)|w><w|

    @classmethod
    def parse(cls, value) -> "OracleKind":
        if isinstance(value, cls):
            return value
        aliases = {"1": cls.PROJECTOR, "case1": cls.PROJECTOR, "2": cls.ONSITE, "case2": cls.ONSITE}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class PoleError(ArithmeticError):
    """Evaluation point coincides with an eigenvalue of gamma*H0."""


class RootError(RuntimeError):
    """No sign change of the eigenvalue condition inside a bracket."""


@dataclass(frozen=True)
class SpectralMeasure:
    """Spectral measure of H0 at a vertex |w, a>: energies with weights summing to 1."""

    energies: np.ndarray
    weights: np.ndarray
    n: int
    kernel_tol: float = DEGENERACY_TOL

    @property
    def kernel_weight(self) -> float:
        """Total weight at energy 0, i.e. chi_alpha / n."""
        return float(np.sum(self.weights[np.abs(self.energies) <= self.kernel_tol]))

    @property
    def chi(self) -> float:
        return self.kernel_weight * self.n

    def poles(self, gamma: float = 1.0, wtol: float | None = None) -> np.ndarray:
        wtol = 1e-14 / self.n if wtol is None else wtol
        return np.unique(gamma * self.energies[self.weights > wtol])

    def nearest_poles(self, gamma: float = 1.0) -> tuple[float, float]:
        """Closest nonzero poles below and above zero."""
        p = self.poles(gamma)
        scale = self.kernel_tol * max(1.0, abs(gamma))
        neg = p[p < -scale]
        pos = p[p > scale]
        return (float(neg.max()) if neg.size else -math.inf, float(pos.min()) if pos.size else math.inf)

    def resolvent(self, E: float, gamma: float = 1.0) -> tuple[float, float]:
        """Return ``(F(E), F'(E))`` for the scaled Hamiltonian gamma*H0."""
        wtol = 1e-14 / self.n
        live = self.weights > wtol
        scaled = gamma * self.energies[live]
        gap = np.abs(scaled - E)
        i = int(np.argmin(gap))
        scale = max(1.0, float(np.abs(scaled).max()))
        if gap[i] <= 1e-12 * scale:
            raise PoleError(f"E={E!r} hits the eigenvalue {scaled[i]!r} of gamma*H0")
        return _accel.resolvent_sums(scaled, self.weights[live], E)


@lru_cache(maxsize=16)
def _cached_measure(spec: LatticeSpec, l: int, alpha: int) -> SpectralMeasure:
    e, w = spectral_weights(spec, l, alpha)
    return SpectralMeasure(e, w, l**spec.d)


def spectral_measure(spec: LatticeSpec, l: int, alpha: int) -> SpectralMeasure:
    return _cached_measure(spec, int(l), int(alpha))


def _alpha(marked) -> int:
    return int(marked[1]) if isinstance(marked, (tuple, list)) else int(marked)


def F_of_E(spec: LatticeSpec, l: int, marked, E: float, gamma: float = 1.0) -> float:
    """Exact <w,a|(gamma H0 - E)^-1|w,a> on the l-lattice; ``marked = (w, a)``."""
    return spectral_measure(spec, l, _alpha(marked)).resolvent(E, gamma)[0]


# ---------------------------------------------------------------------------
# moments and limits
# ---------------------------------------------------------------------------

@dataclass
class LatticeSums:
    l: int
    n: int
    N: int
    moments: dict
    min_nonzero_energy: float
    kernel_weight: float

    @property
    def chi(self) -> float:
        return self.kernel_weight * self.n


def lattice_moments(spec: LatticeSpec, l: int, marked=0, m_max: int = 2) -> LatticeSums:
    """Moments <w~|H~0^-m|w~> for m = 1..m_max with the kernel removed exactly.

    Streams over the momentum grid so that large ladders fit in memory.
    """
    alpha = _alpha(marked)
    partial = [[] for _ in range(m_max)]
    emin = math.inf
    kernel = []
    for e, w in iter_spectral_weights(spec, l, alpha):
        e = e.ravel()
        w = w.ravel()
        sums = _accel.moment_sums(e, w, m_max, DEGENERACY_TOL)
        for m in range(m_max):
            partial[m].append(float(sums[m]))
        nz = np.abs(e) > DEGENERACY_TOL
        if nz.any():
            emin = min(emin, float(np.abs(e[nz]).min()))
        kernel.append(float(np.sum(w[~nz])))
    n = l**spec.d
    return LatticeSums(
        l=l,
        n=n,
        N=n * spec.r,
        moments={m + 1: math.fsum(partial[m]) for m in range(m_max)},
        min_nonzero_energy=emin,
        kernel_weight=math.fsum(kernel),
    )


def richardson(values, ls, exponents):
    """Richardson extrapolants for ``v(l) = v + sum_j c_j l**-p_j``.

    Returns the list ``[R_0, R_1, ...]`` where ``R_j`` eliminates the first j
    error terms using the last j+1 ladder entries.
    """
    values = np.asarray(values, dtype=float)
    h = 1.0 / np.asarray(ls, dtype=float)
    out = [float(values[-1])]
    for j in range(1, len(values)):
        sel = slice(len(values) - j - 1, None)
        A = np.column_stack([np.ones(j + 1)] + [h[sel] ** p for p in exponents[:j]])
        out.append(float(np.linalg.solve(A, values[sel])[0]))
    return out


@dataclass
class LimitIntegrals:
    I1: float
    I1_err: float
    I2: float | None
    I2_err: float | None
    log_fit: tuple[float, float] | None  # (slope, intercept) of moment(2) vs log N, d = 2
    ladder: list
    sums: list = field(repr=False, default_factory=list)

    def moments_rows(self):
        for s in self.sums:
            for m, v in sorted(s.moments.items()):
                yield s.l, m, v


def default_ladder(d: int, multiple: int = 1) -> list[int]:
    base = {1: 64, 2: 16, 3: 16, 4: 8, 5: 4}.get(d, 4)
    count = {1: 4, 2: 4, 3: 3, 4: 3, 5: 3}.get(d, 2)
    return [base * multiple * 2**j for j in range(count)]


def limit_integrals(
    spec: LatticeSpec,
    ladder=None,
    marked=0,
    tol: float = 5e-4,
    grid_multiple: int = 1,
) -> LimitIntegrals:
    """Extrapolate moments 1 and 2 to the infinite lattice.

    The finite-size error of moment m behaves like ``l**-(d-m)``, then
    ``l**-(d-m+2)`` and so on; Richardson extrapolation removes those terms
    and the spread of the last two extrapolants is the reported uncertainty.
    In d = 2 moment 2 diverges and a least-squares fit against log N is
    returned instead.
    """
    d = spec.d
    ladder = list(ladder or default_ladder(d, grid_multiple))
    sums = [lattice_moments(spec, l, marked, m_max=2) for l in ladder]

    def extrapolate(m):
        vals = [s.moments[m] for s in sums]
        ex = richardson(vals, ladder, [d - m + 2 * j for j in range(len(ladder))])
        err = abs(ex[-1] - ex[-2]) if len(ex) > 1 else math.inf
        return ex[-1], err

    I1, I1_err = extrapolate(1)
    I2 = I2_err = None
    log_fit = None
    if d > 2:
        I2, I2_err = extrapolate(2)
    elif d == 2:
        logN = np.log([s.N for s in sums])
        slope, intercept = np.polyfit(logN, [s.moments[2] for s in sums], 1)
        log_fit = (float(slope), float(intercept))
    if I1_err > tol or (I2_err is not None and I2_err > tol):
        raise ArithmeticError(
            f"ladder {ladder} did not converge: I1 +- {I1_err:.3g}, I2 +- {I2_err if I2_err is not None else float('nan'):.3g}"
        )
    return LimitIntegrals(I1, I1_err, I2, I2_err, log_fit, ladder, sums)


# ---------------------------------------------------------------------------
# roots and predictions
# ---------------------------------------------------------------------------

def fine_tuning_f(gamma: float) -> float:
    if abs(2 * gamma - 1) < 1e-15:
        raise ValueError("gamma = 1/2 is a pole of f(gamma)")
    return (gamma - 1) ** 2 / (2 * gamma - 1)


def choose_oracle(spec: LatticeSpec, l: int, marked=0) -> OracleKind:
    """Projector oracle when moment 1 vanishes, on-site potential otherwise."""
    m1 = lattice_moments(spec, l, marked, m_max=1).moments[1]
    return OracleKind.PROJECTOR if abs(m1) < CASE1_TOL else OracleKind.ONSITE


def _target(kind: OracleKind, gamma: float, i1: float | None):
    if kind is OracleKind.PROJECTOR:
        f = fine_tuning_f(gamma)
        return lambda E: f / E
    if i1 is None or i1 == 0:
        raise ValueError("on-site oracle needs a nonzero I1")
    return lambda E: i1


def find_roots(
    spec: LatticeSpec,
    l: int,
    marked=0,
    oracle_kind="auto",
    gamma: float = 1.0,
    i1: float | None = None,
    rtol: float = 1e-12,
) -> tuple[float, float]:
    """The two eigenvalues of the perturbed Hamiltonian adjacent to E = 0.

    Each root is bracketed between the kernel pole at 0 and the nearest
    nonzero pole of F on that side (shrunk by a 1e-9 relative margin), where
    ``F(E) - target(E)`` is monotone.  ``i1`` defaults to the finite-lattice
    moment 1 for the on-site oracle.
    """
    alpha = _alpha(marked)
    kind = choose_oracle(spec, l, alpha) if oracle_kind == "auto" else OracleKind.parse(oracle_kind)
    if kind is OracleKind.ONSITE and i1 is None:
        i1 = lattice_moments(spec, l, alpha, m_max=1).moments[1]
    mu = spectral_measure(spec, l, alpha)
    target = _target(kind, gamma, i1)

    def g(E):
        return mu.resolvent(E, gamma)[0] - target(E)

    lo_pole, hi_pole = mu.nearest_poles(gamma)
    roots = []
    for a, b in ((lo_pole * (1 - 1e-9), lo_pole * 1e-9), (hi_pole * 1e-9, hi_pole * (1 - 1e-9))):
        if not np.isfinite(a) or not np.isfinite(b):
            raise RootError(f"{spec.name}, l={l}: no pole on one side of E=0")
        ga, gb = g(a), g(b)
        if np.sign(ga) == np.sign(gb):
            raise RootError(
                f"{spec.name}, l={l}: no sign change of F - target on [{a:.6g}, {b:.6g}] "
                f"({ga:.3g}, {gb:.3g}); assumptions may be violated"
            )
        roots.append(optimize.brentq(g, a, b, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=500))
    return float(roots[0]), float(roots[1])


@dataclass
class SpectralPrediction:
    """Closed-form predictions at a finite lattice size.

    ``I1`` and ``I2`` are the finite-lattice moments 1 and 2 at this l.
    """

    lattice: str
    d: int
    l: int
    n: int
    N: int
    oracle: OracleKind
    gamma: float
    I1: float
    I2: float
    chi: float
    E_minus: float
    E_plus: float
    Fprime: tuple[float, float]
    overlap_start: tuple[float, float]
    run_time: float
    run_time_caption: float
    success_amplitude: float
    gamma_norm2: float

    @property
    def success_overlap_sq(self) -> float:
        return self.success_amplitude**2

    def csv_row(self) -> dict:
        return {
            "lattice": self.lattice,
            "d": self.d,
            "l": self.l,
            "n": self.n,
            "N": self.N,
            "oracle": self.oracle.value,
            "gamma": self.gamma,
            "I1": self.I1,
            "I2": self.I2,
            "Eminus": self.E_minus,
            "Eplus": self.E_plus,
            "Fprime": self.Fprime[1],
            "T": self.run_time,
            "overlapStart": self.overlap_start[1],
            "successAmplitude": self.success_amplitude,
        }


def _marked_h0_norm2(spec: LatticeSpec, alpha: int) -> float:
    """<w,a|H0^2|w,a> from the hopping table (independent of l once l >= 3 max|delta|)."""
    amps: dict = {}
    for (delta, s, t), h in spec.hoppings.items():
        if s == alpha:
            amps[(delta, t)] = amps.get((delta, t), 0) + h
    return float(sum(abs(v) ** 2 for v in amps.values()))


def _caption_time(d: int, N: int, I2: float) -> float:
    if d == 2:
        return math.sqrt(math.pi / 64 * N * math.log(N))
    return math.pi / 2 * math.sqrt(I2 * N)


def predict(spec: LatticeSpec, l: int, marked=0, oracle_kind="auto", gamma: float = 1.0, i1=None) -> SpectralPrediction:
    """Eigenvalues, normalisations and measurement time for one search instance."""
    alpha = _alpha(marked)
    sums = lattice_moments(spec, l, alpha, m_max=2)
    kind = (
        (OracleKind.PROJECTOR if abs(sums.moments[1]) < CASE1_TOL else OracleKind.ONSITE)
        if oracle_kind == "auto"
        else OracleKind.parse(oracle_kind)
    )
    if kind is OracleKind.ONSITE and i1 is None:
        i1 = sums.moments[1]
    Em, Ep = find_roots(spec, l, alpha, kind, gamma, i1=i1)
    mu = spectral_measure(spec, l, alpha)
    Fp_m = mu.resolvent(Em, gamma)[1]
    Fp_p = mu.resolvent(Ep, gamma)[1]
    chi = sums.chi
    n = sums.n
    ov = tuple(math.sqrt(chi) / (abs(E) * math.sqrt(n * Fp)) for E, Fp in ((Em, Fp_m), (Ep, Fp_p)))
    norm2 = _marked_h0_norm2(spec, alpha)
    inv = 1 / math.sqrt(Fp_m) + 1 / math.sqrt(Fp_p)
    if kind is OracleKind.PROJECTOR:
        amp = inv / math.sqrt(2 * norm2)
    else:
        amp = abs(i1) * inv / math.sqrt(2)
    return SpectralPrediction(
        lattice=spec.name,
        d=spec.d,
        l=l,
        n=n,
        N=sums.N,
        oracle=kind,
        gamma=gamma,
        I1=sums.moments[1] if i1 is None else float(i1),
        I2=sums.moments[2],
        chi=chi,
        E_minus=Em,
        E_plus=Ep,
        Fprime=(Fp_m, Fp_p),
        overlap_start=ov,
        run_time=math.pi / (Ep - Em),
        run_time_caption=_caption_time(spec.d, sums.N, sums.moments[2]),
        success_amplitude=amp,
        gamma_norm2=norm2,
    )


@dataclass
class GammaTuning:
    gamma: float
    f: float
    predicted_roots: tuple[float, float]
    bisection_roots: tuple[float, float] | None

    @property
    def relative_error(self) -> float | None:
        if self.bisection_roots is None:
            return None
        return max(abs(p - b) / abs(b) for p, b in zip(self.predicted_roots, self.bisection_roots))


def gamma_analysis(spec: LatticeSpec, l: int, marked=0, gamma: float = 1.0) -> GammaTuning:
    """Closed-form roots for the detuned Hamiltonian gamma*H0 + H_oracle (projector oracle).

    ``E = +-sqrt(gamma^2 (1 + n f) / (n I2))`` with I2 the finite-lattice
    moment 2, cross-checked against bisection of ``F(E) = f / E``.
    """
    f = fine_tuning_f(gamma)
    sums = lattice_moments(spec, l, marked, m_max=2)
    n = sums.n
    chi = sums.chi
    e = math.sqrt(gamma**2 * (chi + n * f) / (n * sums.moments[2]))
    try:
        roots = find_roots(spec, l, marked, OracleKind.PROJECTOR, gamma)
    except RootError:
        roots = None
    return GammaTuning(gamma=gamma, f=f, predicted_roots=(-e, e), bisection_roots=roots)
