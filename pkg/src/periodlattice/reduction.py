"""Floating point reduction of real lattice bases (columns are basis vectors)."""

from __future__ import annotations

import itertools

import numpy as np


def gauss_reduce(B: np.ndarray) -> np.ndarray:
    """Lagrange-Gauss reduction of a 2x2 basis; returns a new array."""
    u = np.array(B[:, 0], dtype=float)
    v = np.array(B[:, 1], dtype=float)
    if u @ u > v @ v:
        u, v = v, u
    for _ in range(200):
        mu = round(float(u @ v) / float(u @ u))
        v = v - mu * u
        if v @ v >= u @ u:
            break
        u, v = v, u
    return np.column_stack([u, v])


def lll_reduce(B: np.ndarray, delta: float = 0.75) -> np.ndarray:
    """Textbook LLL on the columns of ``B`` (small n only)."""
    B = np.array(B, dtype=float)
    n = B.shape[1]

    def gso(B):
        Bs = np.zeros_like(B)
        mu = np.zeros((n, n))
        for i in range(n):
            Bs[:, i] = B[:, i]
            for j in range(i):
                mu[i, j] = (B[:, i] @ Bs[:, j]) / (Bs[:, j] @ Bs[:, j])
                Bs[:, i] -= mu[i, j] * Bs[:, j]
        return Bs, mu

    Bs, mu = gso(B)
    k = 1
    guard = 0
    while k < n and guard < 10000:
        guard += 1
        for j in range(k - 1, -1, -1):
            q = round(mu[k, j])
            if q:
                B[:, k] -= q * B[:, j]
                Bs, mu = gso(B)
        if Bs[:, k] @ Bs[:, k] >= (delta - mu[k, k - 1] ** 2) * (Bs[:, k - 1] @ Bs[:, k - 1]):
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            Bs, mu = gso(B)
            k = max(k - 1, 1)
    return B


def _order_ties(B: np.ndarray, rel: float = 1e-6) -> np.ndarray:
    """Among columns of equal length, put the one whose dominant component comes first."""
    norms = np.linalg.norm(B, axis=0)
    order = list(np.argsort(norms, kind="stable"))
    out, i = [], 0
    while i < len(order):
        j = i + 1
        while j < len(order) and norms[order[j]] - norms[order[i]] <= rel * norms[order[i]]:
            j += 1
        out += sorted(order[i:j], key=lambda c: int(np.argmax(np.abs(B[:, c]))))
        i = j
    return B[:, out]


def normalize_orientation(B: np.ndarray) -> np.ndarray:
    """Ties in length ordered by dominant component; first column's leading entry positive; det > 0."""
    B = np.array(B, dtype=float)
    if B.shape[1] > 1:
        B = _order_ties(B)
    scale = np.max(np.abs(B)) if B.size else 1.0
    first = B[:, 0]
    nz = np.flatnonzero(np.abs(first) > 1e-12 * scale)
    if nz.size and first[nz[0]] < 0:
        B[:, 0] = -B[:, 0]
    if B.shape[1] > 1 and np.linalg.det(B) < 0:
        B[:, -1] = -B[:, -1]
    return B


def reduce_basis(B: np.ndarray) -> np.ndarray:
    """Reduced basis with the deterministic orientation convention."""
    B = np.asarray(B, dtype=float)
    n = B.shape[1]
    if n == 1:
        R = B.copy()
    elif n == 2:
        R = gauss_reduce(B)
    else:
        R = lll_reduce(B)
    return normalize_orientation(R)


def lattice_gap(B: np.ndarray) -> float:
    """Norm of the shortest vector of the reduced basis."""
    R = reduce_basis(B)
    return float(np.min(np.linalg.norm(R, axis=0)))


def closest_lattice_vector(B: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Integer coefficients z minimizing |v - B z| (exact for reduced B)."""
    R = reduce_basis(B)
    U = np.rint(np.linalg.solve(B, R))
    c = np.linalg.solve(R, v)
    base = np.rint(c)
    best, best_norm = base, np.inf
    for off in itertools.product((-1, 0, 1), repeat=R.shape[1]):
        z = base + np.array(off)
        r = np.linalg.norm(v - R @ z)
        if r < best_norm:
            best, best_norm = z, r
    return np.rint(U @ best).astype(int)
