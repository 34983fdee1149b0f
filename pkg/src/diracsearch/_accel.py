"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DIRACSEARCH_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are
always importable so they can be compared against each other; the public
names at the bottom of the module point at whichever one is active.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DIRACSEARCH_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

# numba probes TBB first and warns when it is too old; the workqueue layer is always present
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy reference kernels
# ---------------------------------------------------------------------------

def fill_blocks_numpy(ks, deltas, src, dst, amps, r):
    """Bloch blocks ``B[k, s, t] = sum_e amps[e] exp(-i k.delta[e])`` over entries e with (src, dst) = (s, t)."""
    ks = np.asarray(ks, dtype=np.float64)
    phases = np.exp(-1j * (ks @ np.asarray(deltas, dtype=np.float64).T))
    out = np.zeros((ks.shape[0], r, r), dtype=np.complex128)
    for e in range(len(amps)):
        out[:, src[e], dst[e]] += amps[e] * phases[:, e]
    return out


def chiral_invariants_numpy(ks, deltas, src, dst, amps, r):
    """Per-momentum squared Frobenius norm and diagonal of the Bloch block."""
    blocks = fill_blocks_numpy(ks, deltas, src, dst, amps, r)
    frob = np.einsum("kij,kij->k", blocks.real, blocks.real) + np.einsum("kij,kij->k", blocks.imag, blocks.imag)
    diag = np.real(np.einsum("kii->ki", blocks))
    return frob, diag


def resolvent_sums_numpy(energies, weights, z):
    """Return (sum w/(E-z), sum w/(E-z)^2) with numpy's pairwise summation."""
    inv = 1.0 / (energies - z)
    t1 = weights * inv
    return float(np.sum(t1)), float(np.sum(t1 * inv))


def moment_sums_numpy(energies, weights, m_max, kernel_tol):
    """Sums of w / E^m for m = 1..m_max over entries with |E| > kernel_tol."""
    mask = np.abs(energies) > kernel_tol
    e = energies[mask]
    w = weights[mask]
    out = np.empty(m_max)
    inv = 1.0 / e
    term = w.copy()
    for m in range(m_max):
        term = term * inv
        out[m] = np.sum(term)
    return out


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def fill_blocks_numba(ks, deltas, src, dst, amps, r):
        nk = ks.shape[0]
        ne = amps.shape[0]
        d = ks.shape[1]
        out = np.zeros((nk, r, r), dtype=np.complex128)
        for q in prange(nk):
            for e in range(ne):
                phase = 0.0
                for a in range(d):
                    phase += ks[q, a] * deltas[e, a]
                out[q, src[e], dst[e]] += amps[e] * (np.cos(phase) - 1j * np.sin(phase))
        return out

    @njit(cache=True, parallel=True)
    def chiral_invariants_numba(ks, deltas, src, dst, amps, r):
        nk = ks.shape[0]
        ne = amps.shape[0]
        d = ks.shape[1]
        frob = np.empty(nk)
        diag = np.empty((nk, r))
        for q in prange(nk):
            block = np.zeros((r, r), dtype=np.complex128)
            for e in range(ne):
                phase = 0.0
                for a in range(d):
                    phase += ks[q, a] * deltas[e, a]
                block[src[e], dst[e]] += amps[e] * (np.cos(phase) - 1j * np.sin(phase))
            acc = 0.0
            for s in range(r):
                for t in range(r):
                    v = block[s, t]
                    acc += v.real * v.real + v.imag * v.imag
                diag[q, s] = block[s, s].real
            frob[q] = acc
        return frob, diag

    @njit(cache=True)
    def resolvent_sums_numba(energies, weights, z):
        # Kahan-compensated, fixed index order
        s1 = 0.0
        c1 = 0.0
        s2 = 0.0
        c2 = 0.0
        for i in range(energies.shape[0]):
            inv = 1.0 / (energies[i] - z)
            t = weights[i] * inv
            y = t - c1
            tmp = s1 + y
            c1 = (tmp - s1) - y
            s1 = tmp
            y = t * inv - c2
            tmp = s2 + y
            c2 = (tmp - s2) - y
            s2 = tmp
        return s1, s2

    @njit(cache=True)
    def moment_sums_numba(energies, weights, m_max, kernel_tol):
        sums = np.zeros(m_max)
        comp = np.zeros(m_max)
        for i in range(energies.shape[0]):
            e = energies[i]
            if abs(e) <= kernel_tol:
                continue
            inv = 1.0 / e
            term = weights[i]
            for m in range(m_max):
                term *= inv
                y = term - comp[m]
                tmp = sums[m] + y
                comp[m] = (tmp - sums[m]) - y
                sums[m] = tmp
        return sums


def _prep_entries(deltas, src, dst, amps):
    return (
        np.ascontiguousarray(deltas, dtype=np.float64),
        np.ascontiguousarray(src, dtype=np.int64),
        np.ascontiguousarray(dst, dtype=np.int64),
        np.ascontiguousarray(amps, dtype=np.complex128),
    )


def fill_blocks(ks, deltas, src, dst, amps, r):
    ks = np.ascontiguousarray(ks, dtype=np.float64)
    if USE_NUMBA:
        return fill_blocks_numba(ks, *_prep_entries(deltas, src, dst, amps), r)
    return fill_blocks_numpy(ks, deltas, src, dst, amps, r)


def chiral_invariants(ks, deltas, src, dst, amps, r):
    ks = np.ascontiguousarray(ks, dtype=np.float64)
    if USE_NUMBA:
        return chiral_invariants_numba(ks, *_prep_entries(deltas, src, dst, amps), r)
    return chiral_invariants_numpy(ks, deltas, src, dst, amps, r)


def resolvent_sums(energies, weights, z):
    if USE_NUMBA:
        s1, s2 = resolvent_sums_numba(
            np.ascontiguousarray(energies, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
            float(z),
        )
        return float(s1), float(s2)
    return resolvent_sums_numpy(energies, weights, z)


def moment_sums(energies, weights, m_max, kernel_tol):
    if USE_NUMBA:
        return moment_sums_numba(
            np.ascontiguousarray(energies, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
            int(m_max),
            float(kernel_tol),
        )
    return moment_sums_numpy(energies, weights, m_max, kernel_tol)


def set_threads(n: int | None) -> None:
    """Bound the numba worker pool (no-op on the numpy path)."""
    if n and USE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
