"""Maslov indices of torus cycles as windings of det(Z E^-1)^2.

Ambient coordinates are (q_1..q_n, p_1..p_n) with symplectic form
sum dq_i ^ dp_i.  The compatible complex structure is J(q, p) = (p, -q),
so that g(u, v) = omega(Ju, v) is the Euclidean product and R^2n is
identified with C^n through z = q - i p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    CycleNotClosed,
    DependentGenerators,
    InvalidParameters,
    NotLagrangian,
    PhaseStepTooLarge,
)
from .flow import DEFAULT_TOLERANCES, Tolerances, flow_batch
from .lattice import LatticeBasis
from .systems import IntegrableSystem


def _to_complex(V: np.ndarray) -> np.ndarray:
    """Columns of a real (2n, m) matrix as complex n-vectors z = q - i p."""
    n = V.shape[-2] // 2
    return V[..., :n, :] - 1j * V[..., n:, :]


@dataclass(frozen=True)
class SymplecticStructure:
    n: int
    reference_plane: Optional[np.ndarray] = None  # (2n, n) real spanning matrix, None = vertical

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def omega(self) -> np.ndarray:
        n = self.n
        return np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])

    @property
    def J(self) -> np.ndarray:
        n = self.n
        return np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])

    def pairing(self, u, v) -> float:
        return float(np.asarray(u) @ self.omega @ np.asarray(v))

    def metric(self) -> np.ndarray:
        """Matrix of g(u, v) = omega(Ju, v)."""
        return self.J.T @ self.omega

    def reference_frame(self) -> np.ndarray:
        """Unitary n x n matrix E of the reference plane."""
        if self.reference_plane is None:
            return -1j * np.eye(self.n)
        return frame_from_vectors(np.asarray(self.reference_plane, dtype=float), self)


def frame_from_vectors(V: np.ndarray, S: SymplecticStructure, tol: float = 1e-8) -> np.ndarray:
    """Unitary matrix of the Lagrangian plane spanned by the columns of ``V``."""
    V = np.asarray(V, dtype=float)
    if V.shape != (S.dim, S.n):
        raise ValueError(f"expected a {S.dim}x{S.n} spanning matrix, got {V.shape}")
    Q, R = np.linalg.qr(V)
    diag = np.abs(np.diag(R))
    if diag.min() <= tol * max(diag.max(), 1e-300):
        raise DependentGenerators("spanning vectors are linearly dependent")
    # Gram-Schmidt keeps the orientation of each successive vector
    Q = Q * np.sign(np.diag(R))
    w = Q.T @ S.omega @ Q
    if np.max(np.abs(w)) > tol:
        raise NotLagrangian(f"symplectic form on the span is {np.max(np.abs(w)):.3g}, not zero")
    Z = _to_complex(Q)
    if np.linalg.norm(Z.conj().T @ Z - np.eye(S.n)) >= tol:
        raise NotLagrangian("frame is not unitary")
    return Z


def lagrangian_frame(system: IntegrableSystem, p, S: Optional[SymplecticStructure] = None) -> np.ndarray:
    S = S or SymplecticStructure(system.n)
    if system.dim_ambient != 2 * system.n:
        raise InvalidParameters(f"{system.name}: Lagrangian frames need dim 2n, got {system.dim_ambient}")
    return frame_from_vectors(system.X(np.asarray(p, dtype=float)).T, S)


def _phases(system, points, S, Einv):
    Z = np.array([lagrangian_frame(system, x, S) for x in points])
    d = np.linalg.det(Z @ Einv)
    return np.angle(d * d)


@dataclass
class MaslovCycle:
    index: int
    winding: float
    residual: float
    s: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)

    @property
    def samples(self) -> int:
        return int(self.s.size)

    def to_dict(self) -> dict:
        return {"index": self.index, "winding_residual": self.residual, "samples": self.samples}


def maslov_cycle(
    system: IntegrableSystem,
    start,
    T,
    S: Optional[SymplecticStructure] = None,
    samples: int = 64,
    max_samples: int = 1 << 14,
    max_phase_step: float = np.pi / 4,
    tol: Tolerances = DEFAULT_TOLERANCES,
    closure_tol: float = 1e-6,
) -> MaslovCycle:
    """Unwrapped phase of det(Z E^-1)^2 along s -> Phi^{sT}(start), s in [0, 1]."""
    start = np.asarray(start, dtype=float)
    T = np.asarray(T, dtype=float).reshape(system.n)
    S = S or SymplecticStructure(system.n)
    Einv = np.linalg.inv(S.reference_frame())
    if not np.any(T):
        ph = _phases(system, start[None, :], S, Einv)
        return MaslovCycle(0, 0.0, 0.0, np.array([0.0, 1.0]), np.array([ph[0], ph[0]]))
    end = flow_batch(system, start, T[None, :], tol)[0]
    gap = np.linalg.norm(system.displacement(start, end))
    if gap > closure_tol:
        raise CycleNotClosed(f"Phi^T(start) misses start by {gap:.3g}; T is not a period")
    s = np.linspace(0.0, 1.0, samples + 1)
    ph = _phases(system, flow_batch(system, start, s[:, None] * T[None, :], tol), S, Einv)
    while True:
        dphi = np.angle(np.exp(1j * np.diff(ph)))
        bad = np.flatnonzero(np.abs(dphi) >= max_phase_step)
        if bad.size == 0:
            break
        if s.size + bad.size > max_samples:
            raise PhaseStepTooLarge(
                f"phase step {np.abs(dphi).max():.3g} >= {max_phase_step:.3g} with {s.size} samples"
            )
        mids = 0.5 * (s[bad] + s[bad + 1])
        mph = _phases(system, flow_batch(system, start, mids[:, None] * T[None, :], tol), S, Einv)
        s = np.insert(s, bad + 1, mids)
        ph = np.insert(ph, bad + 1, mph)
    dphi = np.angle(np.exp(1j * np.diff(ph)))
    unwrapped = ph[0] + np.concatenate([[0.0], np.cumsum(dphi)])
    winding = (unwrapped[-1] - unwrapped[0]) / (2 * np.pi)
    index = int(np.rint(winding))
    return MaslovCycle(index, float(winding), float(abs(winding - index)), s, unwrapped)


def maslov_index(system, start, T, S=None, residual_limit: float = 0.05, **sampling) -> int:
    cyc = maslov_cycle(system, start, T, S, **sampling)
    if cyc.residual >= residual_limit:
        raise PhaseStepTooLarge(f"winding {cyc.winding:.4f} is {cyc.residual:.3g} from an integer")
    return cyc.index


@dataclass
class MaslovVector:
    indices: np.ndarray
    basis_ref: LatticeBasis
    winding_residuals: np.ndarray
    cycles: list = field(default_factory=list, repr=False)

    def as_row(self) -> list:
        return [int(v) for v in self.indices]

    def to_dict(self) -> dict:
        return {
            "indices": self.as_row(),
            "winding_residuals": self.winding_residuals.tolist(),
            "samples": [c.samples for c in self.cycles],
        }


def maslov_vector(
    system: IntegrableSystem,
    basis: LatticeBasis,
    S: Optional[SymplecticStructure] = None,
    residual_limit: float = 0.05,
    **sampling,
) -> MaslovVector:
    """Maslov index of every basis cycle, anchored at ``basis.anchor``."""
    if not system.hamiltonian:
        raise InvalidParameters(f"{system.name} is not Hamiltonian; Maslov indices are undefined")
    cycles = [maslov_cycle(system, basis.anchor, basis.basis[:, i], S, **sampling) for i in range(basis.n)]
    res = np.array([c.residual for c in cycles])
    if np.any(res >= residual_limit):
        raise PhaseStepTooLarge(f"winding residuals {res.tolist()} exceed {residual_limit}")
    return MaslovVector(np.array([c.index for c in cycles], dtype=np.int64), basis, res, cycles)
