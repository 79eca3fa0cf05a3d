"""numpy implementations of the orbit kernels.

Each kernel advances many independent difference tables in lockstep, so the
Python loop runs over time steps while numpy vectorizes across lanes.  Callers
should therefore split long orbits into about sqrt(N) re-seeded blocks.

Fixed-point words are 128-bit torus elements stored as (hi, lo) uint64 pairs;
only the hi word is returned since it already carries 64 bits of the angle.
"""
from __future__ import annotations

import numpy as np

PREFERRED_BLOCK = 1024


def advance_mod(table: np.ndarray, q: int, L: int) -> np.ndarray:
    """table: int64 (P, D) forward differences mod q.  Returns (P, L) values."""
    t = np.ascontiguousarray(np.asarray(table, dtype=np.int64).T).copy()
    D, P = t.shape
    q = np.int64(q)
    out = np.empty((L, P), dtype=np.int64)
    for step in range(L):
        out[step] = t[0]
        for i in range(D - 1):
            row = t[i]
            row += t[i + 1]
            np.subtract(row, q, out=row, where=row >= q)
    return np.ascontiguousarray(out.T)


def _step_fx(H: np.ndarray, Lo: np.ndarray) -> None:
    D = H.shape[0]
    for i in range(D - 1):
        nlo = Lo[i] + Lo[i + 1]
        carry = (nlo < Lo[i]).astype(np.uint64)
        H[i] += H[i + 1]
        H[i] += carry
        Lo[i] = nlo


def advance_fx(hi: np.ndarray, lo: np.ndarray, L: int) -> np.ndarray:
    """hi, lo: uint64 (P, D) fixed-point difference tables.  Returns (P, L) hi words."""
    H = np.ascontiguousarray(np.asarray(hi, dtype=np.uint64).T).copy()
    Lo = np.ascontiguousarray(np.asarray(lo, dtype=np.uint64).T).copy()
    P = H.shape[1]
    out = np.empty((L, P), dtype=np.uint64)
    for step in range(L):
        out[step] = H[0]
        _step_fx(H, Lo)
    return np.ascontiguousarray(out.T)


def product_average_fx(
    hi: np.ndarray,
    lo: np.ndarray,
    arc_lo: np.ndarray,
    arc_len: np.ndarray,
    full: np.ndarray,
    c0: np.ndarray,
    c1: np.ndarray,
    N: int,
) -> np.ndarray:
    """Average over N steps of prod_j (c0[j] + c1[j] * [x_gj in arc_j]).

    hi, lo: uint64 (G, J, D).  Arc j is [arc_lo[j], arc_lo[j] + arc_len[j]) on
    the 64-bit circle, or everything when full[j].  Returns (G,) float64.
    """
    hi = np.asarray(hi, dtype=np.uint64)
    G, J, D = hi.shape
    H = np.ascontiguousarray(hi.reshape(G * J, D).T).copy()
    Lo = np.ascontiguousarray(np.asarray(lo, dtype=np.uint64).reshape(G * J, D).T).copy()
    a_lo = np.asarray(arc_lo, dtype=np.uint64)
    a_len = np.asarray(arc_len, dtype=np.uint64)
    fl = np.asarray(full, dtype=bool)
    c0 = np.asarray(c0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    acc = np.zeros(G, dtype=np.float64)
    for _ in range(N):
        x = H[0].reshape(G, J)
        ind = ((x - a_lo) < a_len) | fl
        acc += np.prod(c0 + c1 * ind, axis=1)
        _step_fx(H, Lo)
    return acc / N
