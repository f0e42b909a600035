"""Exact integer lattice constructions on period-lattice fibers.

Functionals, kernels and splittings are exact (Python ints in object
arrays).  Only :func:`free_circle_action` touches floating point, since it
verifies the circle action by integrating flows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Optional, Sequence

import numpy as np

from . import intmat
from .exceptions import (
    ClosureFailed,
    IdentificationMismatch,
    NonUnimodular,
    NotFree,
    NotPrimitive,
    RankDeficientRho,
    ZeroSection,
)
from .flow import DEFAULT_TOLERANCES, Tolerances, flow_batch
from .intmat import smith_normal_form  # noqa: F401  (public re-export)
from .lattice import BasisTrajectory, LatticeBasis, MonodromyMatrix
from .systems import IntegrableSystem


def _ints(A) -> list:
    return [[int(v) for v in row] for row in np.atleast_2d(A)]


@dataclass
class RhoFunctional:
    rows: np.ndarray
    basis_ref: Optional[LatticeBasis] = None

    def __post_init__(self):
        self.rows = intmat.as_int_matrix(self.rows)

    @property
    def l(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def from_maslov(cls, mv) -> "RhoFunctional":
        return cls(np.array([mv.as_row()], dtype=object), mv.basis_ref)


@dataclass
class SublatticeChain:
    kernels: list  # K^(i), n x (n - i) integer matrices, i = 1..l
    complements: list  # v^(i), integer n-vectors
    certificates: list  # det [C^(i) | w^(i)] in K^(i-1) coordinates

    @property
    def ranks(self) -> list:
        return [int(K.shape[1]) for K in self.kernels]

    def to_dict(self) -> dict:
        return {
            "levels": [
                {
                    "rank": int(K.shape[1]),
                    "kernel_basis": _ints(K.T) if K.shape[1] else [],
                    "complement": [int(v) for v in c],
                    "splitting_determinant": int(d),
                }
                for K, c, d in zip(self.kernels, self.complements, self.certificates)
            ]
        }


@dataclass
class CircleActionSection:
    vector: np.ndarray
    primitive: bool = field(init=False)
    minimal_period_checked: bool = False

    def __post_init__(self):
        self.vector = np.array([int(v) for v in np.ravel(self.vector)], dtype=object)
        if not any(self.vector):
            raise ZeroSection("a circle-action section must be nonzero")
        self.primitive = intmat.content(self.vector) == 1

    def to_dict(self) -> dict:
        return {
            "vector": [int(v) for v in self.vector],
            "primitive": self.primitive,
            "minimal_period_checked": self.minimal_period_checked,
        }


def kernel_chain(rho: RhoFunctional) -> SublatticeChain:
    """Saturated kernels of each prefix (rho_1..rho_i) with split complements."""
    n = rho.n
    prev = intmat.identity(n)
    kernels, comps, certs = [], [], []
    for i in range(1, rho.l + 1):
        prefix = rho.rows[:i]
        if intmat.rank(prefix) < i:
            raise RankDeficientRho(f"rows 1..{i} of rho are rationally dependent")
        K = intmat.integer_kernel(prefix)
        for j in range(K.shape[1]):
            K[:, j] = intmat.normalize_sign(K[:, j])
        C = intmat.matmul(intmat.left_inverse(prev), K) if K.shape[1] else np.zeros((prev.shape[1], 0), dtype=object)
        w = intmat.unimodular_completion(C)
        v = intmat.matmul(prev, w.reshape(-1, 1))[:, 0]
        if intmat.matmul(rho.rows[i - 1 : i], v.reshape(-1, 1))[0, 0] < 0:
            v, w = -v, -w
        cert = intmat.det(np.column_stack([C, w]) if C.shape[1] else w.reshape(-1, 1))
        kernels.append(K)
        comps.append(v)
        certs.append(cert)
        prev = K
    return SublatticeChain(kernels, comps, certs)


def saturation_index(K) -> int:
    """Product of the SNF diagonal of K; 1 exactly when K is saturated."""
    K = intmat.as_int_matrix(K)
    if K.shape[1] == 0:
        return 1
    _, D, _ = smith_normal_form(K)
    out = 1
    for i in range(min(D.shape)):
        out *= int(D[i, i])
    return out


@dataclass
class RhoInvarianceReport:
    passed: bool
    violated_rows: list
    residual_rows: list

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "violated_rows": self.violated_rows,
            "residual_rows": self.residual_rows,
        }


def verify_rho_invariance(rho: RhoFunctional, M) -> RhoInvarianceReport:
    """Check rows . M == rows exactly (row convention)."""
    entries = M.entries if isinstance(M, MonodromyMatrix) else intmat.as_int_matrix(M)
    diff = intmat.matmul(rho.rows, entries) - rho.rows
    resid = _ints(diff)
    bad = [i for i, row in enumerate(resid) if any(row)]
    return RhoInvarianceReport(not bad, bad, resid)


def primitive_section(v) -> CircleActionSection:
    vec = intmat.normalize_sign(v)
    if not any(vec):
        raise ZeroSection("cannot build a circle action from the zero section")
    g = intmat.content(vec)
    return CircleActionSection(np.array([x // g for x in vec], dtype=object))


def _fractions(max_den: int):
    for r in range(2, max_den + 1):
        for q in range(1, r):
            if gcd(q, r) == 1:
                yield q, r


@dataclass
class CircleActionReport:
    period: list
    fibers: int
    points_per_fiber: int
    max_closure_residual: float
    min_fraction_distance: float
    closure_tol: float
    passed: bool
    failure: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "period": self.period,
            "fibers": self.fibers,
            "points_per_fiber": self.points_per_fiber,
            "max_closure_residual": self.max_closure_residual,
            "min_fraction_distance": self.min_fraction_distance,
            "closure_tol": self.closure_tol,
            "failure": self.failure,
        }


def free_circle_action(
    system: IntegrableSystem,
    basis: LatticeBasis,
    section: CircleActionSection,
    rng: np.random.Generator,
    closure_tol: float = 1e-8,
    fibers: Optional[Sequence[LatticeBasis]] = None,
    points_per_fiber: int = 10,
    max_den: int = 5,
    tol: Tolerances = DEFAULT_TOLERANCES,
    strict: bool = True,
) -> CircleActionReport:
    """Verify that t -> Phi^{t B v} closes at t=1 and at no proper fraction q/r.

    ``fibers`` are additional lattice bases, each expressed so that the same
    section coordinates apply (e.g. continued along a path from ``basis``).
    """
    if not section.primitive:
        raise NotPrimitive(f"section {section.vector.tolist()} is not primitive; use primitive_section")
    vec = np.array([float(x) for x in section.vector])
    closure, margin = 0.0, np.inf
    bases = [basis] + list(fibers or [])
    for fb in bases:
        T = fb.basis @ vec
        # random torus points on this fiber
        angles = rng.random((points_per_fiber, fb.n))
        pts = flow_batch(system, fb.anchor, angles @ fb.basis.T, tol)
        ends = flow_batch(system, pts, np.repeat(T[None, :], points_per_fiber, axis=0), tol)
        closure = max(closure, float(np.max(np.linalg.norm(system.displacement(pts, ends), axis=1))))
        for q, r in _fractions(max_den):
            part = flow_batch(system, pts, np.repeat((q / r * T)[None, :], points_per_fiber, axis=0), tol)
            margin = min(margin, float(np.min(np.linalg.norm(system.displacement(pts, part), axis=1))))
    failure = None
    if closure >= closure_tol:
        failure = f"closure residual {closure:.3g} >= {closure_tol:.3g}"
    elif margin <= 100 * closure_tol:
        failure = f"a proper fraction of the period returns within {margin:.3g}"
    section.minimal_period_checked = failure is None
    report = CircleActionReport(
        period=(basis.basis @ vec).tolist(),
        fibers=len(bases),
        points_per_fiber=points_per_fiber,
        max_closure_residual=closure,
        min_fraction_distance=float(margin),
        closure_tol=closure_tol,
        passed=failure is None,
        failure=failure,
    )
    if strict and failure is not None:
        raise (ClosureFailed if closure >= closure_tol else NotFree)(failure)
    return report


@dataclass
class MappingTorusReport:
    samples: int
    max_identification_residual: float
    max_quotient_residual: float
    fresh_basis_change: Optional[list]
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "samples": self.samples,
            "max_identification_residual": self.max_identification_residual,
            "max_quotient_residual": self.max_quotient_residual,
            "fresh_basis_change": self.fresh_basis_change,
            "tol": self.tol,
        }


def _wrap(x):
    return x - np.rint(x)


def mapping_torus_check(
    M: MonodromyMatrix,
    traj: BasisTrajectory,
    samples: int,
    rng: np.random.Generator,
    tol: float = 1e-6,
    fresh: Optional[LatticeBasis] = None,
    strict: bool = True,
) -> MappingTorusReport:
    """Check the gluing {0} x T ~ {1} x M^-1 T of the torus bundle over the loop."""
    Mi = M.as_int()
    if intmat.det(Mi) != 1:
        raise NonUnimodular("mapping torus needs det M = 1")
    Mf = np.array(Mi, dtype=float)
    # exact integer inverse of a unimodular matrix via SNF
    U, _, V = smith_normal_form(Mi)
    Minv = np.array(intmat.matmul(V, U), dtype=float)
    B0 = traj.bases[0].basis
    B1 = traj.bases[-1].basis
    T = rng.random((samples, B0.shape[1]))
    lhs = T @ B0.T
    rhs = (T @ Minv.T) @ B1.T
    coeff = np.linalg.solve(B0, (lhs - rhs).T).T
    resid = np.linalg.norm(_wrap(coeff) @ B0.T, axis=1) / np.linalg.norm(lhs, axis=1)
    ident = float(np.max(resid))
    # eta(T) = M^-1 T descends to the torus: shifting T by Z^n moves eta(T) by Z^n
    shifts = rng.integers(-3, 4, size=T.shape)
    a = _wrap((T + shifts) @ Minv.T)
    b = _wrap(T @ Minv.T)
    quot = float(np.max(np.abs(_wrap(a - b))))
    # eta-bar on the torus equals q o eta: exp(2 pi i M^-1 T) is well defined on classes
    z = np.exp(2j * np.pi * _wrap(T) @ Minv.T)
    w = np.exp(2j * np.pi * T @ Minv.T)
    quot = max(quot, float(np.max(np.abs(z - w))))
    change = None
    ok = ident < tol and quot < tol
    if fresh is not None:
        raw = np.linalg.solve(fresh.basis, B1)
        R = np.rint(raw)
        change = [[int(v) for v in row] for row in R]
        ok = ok and np.max(np.abs(raw - R)) < 1e-6 and abs(round(np.linalg.det(R))) == 1
    report = MappingTorusReport(samples, ident, quot, change, tol, bool(ok))
    if strict and not ok:
        raise IdentificationMismatch(f"identification residual {ident:.3g}, quotient residual {quot:.3g}")
    return report


def _signed_parabolic(D) -> int:
    """k with D J = -k u u^T for D = M - I (or M + I); sign fixed by SL(2,Z) conjugacy."""
    a, b, c, d = int(D[0, 0]), int(D[0, 1]), int(D[1, 0]), int(D[1, 1])
    # S = -D J with J = [[0, 1], [-1, 0]]
    S = [[b, -a], [d, -c]]
    g = gcd(gcd(S[0][0], S[0][1]), gcd(S[1][0], S[1][1]))
    tr = S[0][0] + S[1][1]
    return g if tr >= 0 else -g


def gl2z_conjugacy_invariant(M) -> dict:
    """Trace class of a 2x2 unimodular integer matrix plus a conjugacy invariant k."""
    M = intmat.as_int_matrix(M)
    if M.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    if intmat.det(M) != 1:
        raise NonUnimodular(f"det = {intmat.det(M)}")
    tr = int(M[0, 0] + M[1, 1])
    I = intmat.identity(2)
    if tr == 2:
        if all(M[i, j] == I[i, j] for i in range(2) for j in range(2)):
            return {"class": "identity", "k": 0}
        return {"class": "parabolic", "k": _signed_parabolic(M - I)}
    if tr == -2:
        if all(M[i, j] == -I[i, j] for i in range(2) for j in range(2)):
            return {"class": "minus-identity", "k": 0}
        return {"class": "negative-parabolic", "k": _signed_parabolic(M + I)}
    if abs(tr) > 2:
        return {"class": "hyperbolic", "k": tr}
    order = {0: 4, 1: 6, -1: 3}[tr]
    return {"class": f"elliptic-order-{order}", "k": tr}

