"""Exact integer matrix algorithms on ``dtype=object`` arrays of Python ints."""

from __future__ import annotations

from math import gcd
from typing import Tuple

import numpy as np


def as_int_matrix(A) -> np.ndarray:
    """Copy ``A`` into a 2-d object array of Python ints (rejects non-integers)."""
    arr = np.array(A, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        iv = int(v)
        if iv != v:
            raise ValueError(f"non-integer entry {v!r}")
        out[idx] = iv
    return out


def identity(n: int) -> np.ndarray:
    I = np.zeros((n, n), dtype=object)
    for i in range(n):
        I[i, i] = 1
    return I


def det(A) -> int:
    """Bareiss fraction-free determinant."""
    M = [list(map(int, row)) for row in as_int_matrix(A)]
    n = len(M)
    if n == 0:
        return 1
    if any(len(r) != n for r in M):
        raise ValueError("determinant of a non-square matrix")
    sign = 1
    prev = 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for i in range(k + 1, n):
                if M[i][k] != 0:
                    M[k], M[i] = M[i], M[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def matmul(A, B) -> np.ndarray:
    A = as_int_matrix(A)
    B = as_int_matrix(B)
    out = np.empty((A.shape[0], B.shape[1]), dtype=object)
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            out[i, j] = sum((int(A[i, k]) * int(B[k, j]) for k in range(A.shape[1])), 0)
    return out


def smith_normal_form(A, return_inverses: bool = False) -> Tuple[np.ndarray, ...]:
    """Smith normal form ``D = U @ A @ V`` with unimodular ``U``, ``V``.

    The diagonal of ``D`` is nonnegative with ``d_1 | d_2 | ...``.  Pivots are
    chosen deterministically (smallest nonzero magnitude, first in row-major
    order).  With ``return_inverses`` the tuple is ``(U, D, V, Uinv, Vinv)``.
    """
    D = as_int_matrix(A)
    m, n = D.shape
    U, V = identity(m), identity(n)
    Ui, Vi = identity(m), identity(n)

    def swap_rows(i, j):
        if i != j:
            D[[i, j]] = D[[j, i]]
            U[[i, j]] = U[[j, i]]
            Ui[:, [i, j]] = Ui[:, [j, i]]

    def swap_cols(i, j):
        if i != j:
            D[:, [i, j]] = D[:, [j, i]]
            V[:, [i, j]] = V[:, [j, i]]
            Vi[[i, j]] = Vi[[j, i]]

    def add_row(dst, src, q):
        # row_dst += q * row_src
        D[dst] = D[dst] + q * D[src]
        U[dst] = U[dst] + q * U[src]
        Ui[:, src] = Ui[:, src] - q * Ui[:, dst]

    def add_col(dst, src, q):
        D[:, dst] = D[:, dst] + q * D[:, src]
        V[:, dst] = V[:, dst] + q * V[:, src]
        Vi[src] = Vi[src] - q * Vi[dst]

    for t in range(min(m, n)):
        while True:
            best = None
            for i in range(t, m):
                for j in range(t, n):
                    v = abs(D[i, j])
                    if v and (best is None or v < best[0]):
                        best = (v, i, j)
            if best is None:
                break
            _, i, j = best
            swap_rows(t, i)
            swap_cols(t, j)
            p = D[t, t]
            clean = True
            for i in range(t + 1, m):
                q = D[i, t] // p
                if q:
                    add_row(i, t, -q)
                clean &= D[i, t] == 0
            for j in range(t + 1, n):
                q = D[t, j] // p
                if q:
                    add_col(j, t, -q)
                clean &= D[t, j] == 0
            if not clean:
                continue
            bad = next(
                (i for i in range(t + 1, m) for j in range(t + 1, n) if D[i, j] % p != 0),
                None,
            )
            if bad is None:
                break
            add_row(t, bad, 1)
        if D[t, t] < 0:
            D[t] = -D[t]
            U[t] = -U[t]
            Ui[:, t] = -Ui[:, t]
    if return_inverses:
        return U, D, V, Ui, Vi
    return U, D, V


def rank(A) -> int:
    _, D, _ = smith_normal_form(A)
    return sum(1 for i in range(min(D.shape)) if D[i, i] != 0)


def integer_kernel(A) -> np.ndarray:
    """Saturated basis (columns) of {x in Z^n : A x = 0}."""
    A = as_int_matrix(A)
    _, D, V = smith_normal_form(A)
    r = sum(1 for i in range(min(D.shape)) if D[i, i] != 0)
    return V[:, r:]


def lattice_basis(G) -> np.ndarray:
    """Basis (columns) of the lattice generated by the columns of ``G``."""
    G = as_int_matrix(G)
    _, D, _, Ui, _ = smith_normal_form(G, return_inverses=True)
    r = sum(1 for i in range(min(D.shape)) if D[i, i] != 0)
    out = Ui[:, :r].copy()
    for i in range(r):
        out[:, i] = out[:, i] * D[i, i]
    return out


def unimodular_completion(C) -> np.ndarray:
    """Column ``w`` such that ``[C | w]`` is unimodular (``C`` saturated, n x (n-1))."""
    C = as_int_matrix(C)
    n = C.shape[0]
    if C.shape[1] != n - 1:
        raise ValueError("completion expects an n x (n-1) matrix")
    _, D, _, Ui, _ = smith_normal_form(C, return_inverses=True)
    if any(D[i, i] != 1 for i in range(n - 1)):
        raise ValueError("columns do not span a saturated sublattice")
    return Ui[:, n - 1].copy()


def normalize_sign(v) -> np.ndarray:
    """Flip ``v`` so its first nonzero entry is positive."""
    v = np.array([int(x) for x in np.ravel(v)], dtype=object)
    for x in v:
        if x != 0:
            return -v if x < 0 else v
    return v


def content(v) -> int:
    g = 0
    for x in np.ravel(v):
        g = gcd(g, int(x))
    return g


def left_inverse(K) -> np.ndarray:
    """Integer ``L`` with ``L @ K = I`` for a saturated full-column-rank ``K``."""
    K = as_int_matrix(K)
    m, r = K.shape
    U, D, V = smith_normal_form(K)
    if any(D[i, i] != 1 for i in range(r)):
        raise ValueError("columns do not span a saturated sublattice")
    return matmul(V, U[:r, :]) if r else np.zeros((0, m), dtype=object)
