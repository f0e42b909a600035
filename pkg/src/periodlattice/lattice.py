"""Period lattices: detection on a fiber, continuation along value paths, monodromy.

Basis matrices hold lattice vectors as columns.  Monodromy uses the row
convention ``B_end = B_start @ M``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import intmat
from .exceptions import (
    DegenerateCandidates,
    NewtonDiverged,
    NonIntegerMonodromy,
    NonUnimodular,
    NoReturnFound,
    StepBisectionExhausted,
)
from .flow import DEFAULT_TOLERANCES, Tolerances, _state_flow, flow_batch, track_fiber_point
from .reduction import lattice_gap, reduce_basis
from .systems import IntegrableSystem

log = logging.getLogger(__name__)


@dataclass
class LatticeBasis:
    anchor: np.ndarray
    value: np.ndarray
    basis: np.ndarray
    residuals: np.ndarray

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    def with_basis(self, basis: np.ndarray, residuals=None) -> "LatticeBasis":
        res = self.residuals if residuals is None else residuals
        return LatticeBasis(self.anchor.copy(), self.value.copy(), np.array(basis, dtype=float), np.asarray(res))

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor.tolist(),
            "value": self.value.tolist(),
            "basis": self.basis.tolist(),
            "residuals": self.residuals.tolist(),
        }


@dataclass
class LoopPath:
    """Polyline in value space; ``samples[0] == samples[-1]`` for loops."""

    samples: np.ndarray
    min_critical_distance: float = 0.0

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 2:
            raise ValueError("a path needs at least two samples")

    @property
    def closed(self) -> bool:
        return bool(np.array_equal(self.samples[0], self.samples[-1]))

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.samples.shape[0])

    def reversed(self) -> "LoopPath":
        return LoopPath(self.samples[::-1].copy(), self.min_critical_distance)

    def then(self, other: "LoopPath") -> "LoopPath":
        """Concatenation: traverse ``self`` and then ``other``."""
        if not np.array_equal(self.samples[-1], other.samples[0]):
            raise ValueError("paths do not join")
        return LoopPath(
            np.vstack([self.samples, other.samples[1:]]),
            min(self.min_critical_distance, other.min_critical_distance),
        )

    def validate(self, system: IntegrableSystem, max_step: Optional[float] = None) -> None:
        """Raise ``ValueError`` when samples are too close to critical values or too far apart."""
        if max_step is not None:
            gaps = np.linalg.norm(np.diff(self.samples, axis=0), axis=1)
            if np.any(gaps >= max_step):
                raise ValueError(f"consecutive samples differ by {gaps.max():.3g} >= max_step {max_step}")
        floor = max(self.min_critical_distance, system.critical_radius if system.critical_values else 0.0)
        for c in system.critical_values:
            dist = np.linalg.norm(self.samples - np.asarray(c, dtype=float), axis=1)
            if np.any(dist <= floor):
                raise ValueError(f"path comes within {dist.min():.3g} of critical value {c}")

    def to_dict(self) -> dict:
        return {"samples": self.samples.tolist(), "min_critical_distance": self.min_critical_distance}

    @classmethod
    def from_dict(cls, data: dict) -> "LoopPath":
        return cls(np.asarray(data["samples"], dtype=float), float(data.get("min_critical_distance", 0.0)))


def circle_loop(center, radius: float, samples: int = 64, start_angle: float = 0.0, turns: int = 1) -> LoopPath:
    """Closed circle polyline, counterclockwise for ``turns > 0``."""
    center = np.asarray(center, dtype=float)
    count = samples * abs(turns)
    ang = start_angle + np.sign(turns) * 2 * np.pi * abs(turns) * np.arange(count + 1) / count
    pts = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    pts[-1] = pts[0]
    return LoopPath(pts, min_critical_distance=0.0)


@dataclass
class BasisTrajectory:
    s: np.ndarray
    bases: list
    refined: np.ndarray
    bisections: int = 0

    @property
    def anchors(self) -> np.ndarray:
        return np.array([b.anchor for b in self.bases])

    @property
    def values(self) -> np.ndarray:
        return np.array([b.value for b in self.bases])

    @property
    def matrices(self) -> np.ndarray:
        return np.array([b.basis for b in self.bases])

    def max_residual(self) -> float:
        return float(max(np.max(b.residuals) for b in self.bases))

    def diagnostics(self) -> dict:
        steps = np.diff(self.matrices, axis=0)
        return {
            "samples": int(len(self.bases)),
            "refined_samples": int(np.count_nonzero(self.refined)),
            "bisections": int(self.bisections),
            "max_residual": self.max_residual(),
            "max_basis_step": float(np.max(np.abs(steps))) if len(steps) else 0.0,
        }


@dataclass
class MonodromyMatrix:
    entries: np.ndarray
    pre_round_residual: float
    basis_ref: LatticeBasis
    trajectory: Optional[BasisTrajectory] = field(default=None, repr=False)

    def as_int(self) -> np.ndarray:
        return intmat.as_int_matrix(self.entries)

    def to_dict(self) -> dict:
        out = {
            "entries": [[int(v) for v in row] for row in self.entries],
            "pre_round_residual": self.pre_round_residual,
            "determinant": int(intmat.det(self.entries)),
        }
        if self.trajectory is not None:
            out["trajectory"] = self.trajectory.diagnostics()
        return out


# ---------------------------------------------------------------------------
# Newton refinement of return times


def refine_periods(system: IntegrableSystem, p, times, tol: Tolerances = DEFAULT_TOLERANCES):
    """Gauss-Newton on G(T) = Phi^T(p) - p for a stack of time vectors.

    Returns ``(times, residual_norms)``; members that fail keep their last
    iterate, callers decide what counts as converged.
    """
    p = np.asarray(p, dtype=float)
    T = np.atleast_2d(np.array(times, dtype=float))
    starts = np.repeat(p[None, :], T.shape[0], axis=0)
    # keep integration noise an order below the Newton tolerance
    flow_tol = tol.tightened(10.0)

    def residual(T):
        ends, _, _, _ = _state_flow(system, starts, T, flow_tol, check_domain=False)
        G = system.displacement(p, ends)
        return ends, G, np.linalg.norm(G, axis=1)

    def step(T, ends, G, mask):
        J = np.swapaxes(system.X(ends), -1, -2)
        T = T.copy()
        for j in np.flatnonzero(mask):
            dT, *_ = np.linalg.lstsq(J[j], G[j], rcond=None)
            T[j] -= dT
        return T

    ends, G, res = residual(T)
    for _ in range(tol.max_newton_iters):
        if np.all(res < tol.newton_tol):
            break
        T = step(T, ends, G, (res >= tol.newton_tol) & np.isfinite(res))
        ends, G, res = residual(T)
    if np.all(res < tol.newton_tol):
        # one polishing step; keep it only where it helps
        T2 = step(T, ends, G, np.ones(T.shape[0], dtype=bool))
        _, _, res2 = residual(T2)
        better = res2 < res
        T[better] = T2[better]
        res[better] = res2[better]
    return T, res


def _return_residuals(system, p, times, tol):
    times = np.atleast_2d(np.asarray(times, dtype=float))
    if not np.any(times):
        return np.zeros(times.shape[0])
    starts = np.repeat(p[None, :], times.shape[0], axis=0)
    ends, _, _, _ = _state_flow(system, starts, times, tol.tightened(10.0), check_domain=False)
    return np.linalg.norm(system.displacement(p, ends), axis=1)


# ---------------------------------------------------------------------------
# brute-force seeding


def near_return_scan(
    system: IntegrableSystem,
    p,
    t_max: float = 15.0,
    step: float = 0.05,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Local minima of |Phi^T(p) - p| over the grid on [0, t_max]^n.

    Returns candidate time vectors (rows), the origin's own basin excluded.
    """
    p = np.asarray(p, dtype=float)
    n, d = system.n, system.dim_ambient
    count = int(round(t_max / step)) + 1
    pts = p[None, :]
    for i in range(n):
        unit = np.zeros(n)
        unit[i] = step
        layers = [pts]
        cur = pts
        times = np.repeat(unit[None, :], cur.shape[0], axis=0)
        h = None
        for _ in range(count - 1):
            cur, _, _, h = _state_flow(system, cur, times, tol, h0=h, check_domain=False)
            layers.append(cur)
        pts = np.stack(layers, axis=0).reshape(-1, d)
    # pts is ordered with generator n-1 slowest; reshape to grid (t_{n-1}, ..., t_0)
    grid = np.linalg.norm(system.displacement(p, pts), axis=1).reshape((count,) * n)
    grid = np.transpose(grid, axes=list(range(n))[::-1])
    speed = np.max(np.linalg.svd(system.X(pts[:: max(1, pts.shape[0] // 512)]), compute_uv=False))
    thresh = 2.0 * step * np.sqrt(n) * speed
    labels, nlab = ndimage.label(grid < thresh)
    origin_label = labels[(0,) * n]
    cands = []
    for lab in range(1, nlab + 1):
        if lab == origin_label:
            continue
        idx = np.argwhere(labels == lab)
        vals = grid[tuple(idx.T)]
        best = idx[np.argmin(vals)]
        cands.append(best * step)
    if not cands:
        return np.zeros((0, n))
    return np.array(cands)


def _independent_subset(vectors: np.ndarray, rtol: float = 1e-6) -> Optional[np.ndarray]:
    """Greedy pick of n independent vectors from rows sorted by norm."""
    n = vectors.shape[1]
    chosen = []
    for v in vectors[np.argsort(np.linalg.norm(vectors, axis=1))]:
        trial = np.array(chosen + [v])
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > rtol * s[0]:
            chosen.append(v)
            if len(chosen) == n:
                return np.array(chosen).T
    return None


def _merge_into_lattice(B: np.ndarray, v: np.ndarray, max_den: int = 64) -> Optional[np.ndarray]:
    """Basis of the lattice generated by columns of B and v, or None if v is already in it."""
    c = np.linalg.solve(B, v)
    if np.max(np.abs(c - np.rint(c))) < 1e-6:
        return None
    fr = [Fraction(float(x)).limit_denominator(max_den) for x in c]
    if max(abs(float(f) - x) for f, x in zip(fr, c)) > 1e-6:
        raise DegenerateCandidates(f"candidate coefficients {c} are not rational with small denominator")
    den = 1
    for f in fr:
        den = den * f.denominator // np.gcd(den, f.denominator)
    n = B.shape[1]
    gens = np.zeros((n, n + 1), dtype=object)
    for i in range(n):
        gens[i, i] = den
        gens[i, n] = int(fr[i] * den)
    coeffs = intmat.lattice_basis(gens)
    return B @ (np.array(coeffs, dtype=float) / den)


def _finer_returns(system, p, B, tol, max_den: int = 5) -> Optional[np.ndarray]:
    """A rational combination of the columns of B that also returns, if any."""
    n = B.shape[1]
    trials = []
    for r in range(2, max_den + 1):
        for c in itertools.product(range(r), repeat=n):
            if any(c) and np.gcd.reduce(list(c) + [r]) == 1:
                trials.append(np.array(c, dtype=float) / r)
    if not trials:
        return None
    times = np.array([B @ c for c in trials])
    res = _return_residuals(system, np.asarray(p, dtype=float), times, tol)
    scale = np.linalg.norm(system.X(p))
    hits = np.flatnonzero(res < 1e-3 * max(scale, 1.0))
    if hits.size == 0:
        return None
    return times[hits[0]]


def detect_lattice_basis(
    system: IntegrableSystem,
    p,
    hints: Optional[Sequence] = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
    t_max: float = 15.0,
    scan_step: float = 0.05,
) -> LatticeBasis:
    """Reduced, oriented basis of the period lattice of the orbit through ``p``."""
    p = np.asarray(p, dtype=float)
    n = system.n
    value = system.F(p)
    seeds = []
    if hints is not None:
        seeds.extend(np.atleast_2d(np.asarray(hints, dtype=float)))
    elif system.analytic_lattice is not None:
        seeds.extend(np.asarray(system.analytic_lattice(value), dtype=float).T)
    else:
        scanned = near_return_scan(system, p, t_max=t_max, step=scan_step, tol=tol)
        if scanned.shape[0] == 0:
            raise NoReturnFound(f"no near-return in [0, {t_max}]^{n}; increase t_max")
        seeds.extend(scanned)
    T, res = refine_periods(system, p, np.array(seeds), tol)
    good = T[(res < tol.newton_tol) & (np.linalg.norm(T, axis=1) > 1e-6)]
    if good.shape[0] == 0:
        raise NewtonDiverged("no candidate return time converged")
    B = _independent_subset(good)
    if B is None:
        if hints is not None or system.analytic_lattice is not None:
            raise DegenerateCandidates("seed vectors do not span R^n")
        raise NoReturnFound(f"scan over [0, {t_max}]^{n} found fewer than {n} independent returns; increase t_max")
    for v in good:
        merged = _merge_into_lattice(B, v)
        if merged is not None:
            B = merged
    for _ in range(8):
        finer = _finer_returns(system, p, B, tol)
        if finer is None:
            break
        merged = _merge_into_lattice(B, finer)
        if merged is None:
            break
        B = merged
    B = reduce_basis(B)
    Bt, res = refine_periods(system, p, B.T, tol)
    if np.any(res >= tol.newton_tol):
        raise NewtonDiverged(f"basis refinement residuals {res}")
    B = reduce_basis(Bt.T)
    res = _return_residuals(system, p, B.T, tol)
    scale = np.linalg.norm(B, axis=0).prod()
    if abs(np.linalg.det(B)) <= 1e-8 * scale:
        raise DegenerateCandidates("detected basis is singular")
    return LatticeBasis(anchor=p.copy(), value=value, basis=B, residuals=res)


def check_closure(system, lb: LatticeBasis, rng: np.random.Generator, trials: int = 10, max_coeff: int = 3, tol=DEFAULT_TOLERANCES) -> float:
    """Max return residual of random small integer combinations of the basis."""
    coeffs = rng.integers(-max_coeff, max_coeff + 1, size=(trials, lb.n))
    times = coeffs @ lb.basis.T
    # long combined flows: integrate well below the Newton tolerance
    return float(np.max(_return_residuals(system, lb.anchor, times, tol.tightened(10.0))))


# ---------------------------------------------------------------------------
# continuation


def _correct(system, anchor, predicted, tol):
    T, res = refine_periods(system, anchor, predicted.T, tol)
    return T.T, res


def continue_basis(
    system: IntegrableSystem,
    path: LoopPath,
    start: LatticeBasis,
    tol: Tolerances = DEFAULT_TOLERANCES,
    max_bisections: int = 12,
    jump_fraction: float = 0.4,
) -> BasisTrajectory:
    """Transport ``start`` along ``path`` by predictor-corrector steps."""
    path.validate(system)
    c0 = path.samples[0]
    if np.linalg.norm(start.value - c0) > 1e-8 * (1 + np.linalg.norm(c0)):
        raise ValueError(f"start basis sits at {start.value.tolist()}, path starts at {c0.tolist()}")
    s_grid = path.s
    out_s = [0.0]
    out_b = [start]
    refined = [False]
    bisections = 0
    cur = start
    prev_B = None
    prev_ds = None
    for j in range(1, path.samples.shape[0]):
        pending = [(s_grid[j], path.samples[j], 0, False)]
        c_from, s_from = cur.value, out_s[-1]
        seg_a, seg_b = path.samples[j - 1], path.samples[j]
        sa, sb = s_grid[j - 1], s_grid[j]
        while pending:
            s_to, c_to, depth, is_mid = pending[-1]
            ds = s_to - s_from
            B = cur.basis
            if prev_B is not None and prev_ds:
                pred = B + (B - prev_B) * (ds / prev_ds)
            else:
                pred = B
            gap = lattice_gap(B)
            try:
                anchor = track_fiber_point(system, cur.anchor, c_to, tol)
                newB, res = _correct(system, anchor, pred, tol)
                moved = np.max(np.linalg.norm(newB - B, axis=0))
                ok = np.all(res < tol.newton_tol) and moved <= jump_fraction * gap
            except NewtonDiverged:
                ok = False
            if not ok:
                if depth >= max_bisections:
                    raise StepBisectionExhausted(
                        f"continuation stalled between s={s_from:.9g} and s={s_to:.9g} after {depth} bisections"
                    )
                bisections += 1
                s_mid = 0.5 * (s_from + s_to)
                # midpoint on the polyline segment
                w = (s_mid - sa) / (sb - sa)
                c_mid = (1 - w) * seg_a + w * seg_b
                pending.append((s_mid, c_mid, depth + 1, True))
                continue
            pending.pop()
            prev_B, prev_ds = B, ds
            cur = LatticeBasis(anchor=anchor, value=np.array(c_to, dtype=float), basis=newB, residuals=res)
            out_s.append(s_to)
            out_b.append(cur)
            refined.append(is_mid)
            s_from = s_to
    return BasisTrajectory(np.array(out_s), out_b, np.array(refined), bisections)


def monodromy(
    system: IntegrableSystem,
    path: LoopPath,
    start: LatticeBasis,
    tol: Tolerances = DEFAULT_TOLERANCES,
    trajectory: Optional[BasisTrajectory] = None,
) -> MonodromyMatrix:
    """Integer matrix M with B_end = B_start @ M after transport around ``path``."""
    if not path.closed:
        raise ValueError("monodromy needs a closed path (first sample == last sample)")
    traj = trajectory if trajectory is not None else continue_basis(system, path, start, tol)
    B0 = traj.bases[0].basis
    B1 = traj.bases[-1].basis
    raw = np.linalg.solve(B0, B1)
    M = np.rint(raw)
    resid = float(np.max(np.abs(raw - M)))
    if resid >= 0.01:
        raise NonIntegerMonodromy(f"basis change {raw.tolist()} is {resid:.3g} from integral")
    if np.linalg.norm(B0 @ M - B1) >= 1e-6 * np.linalg.norm(B1):
        raise NonIntegerMonodromy("rounded basis change does not reproduce the end basis")
    Mi = intmat.as_int_matrix(M.astype(np.int64))
    dt = intmat.det(Mi)
    if dt != 1:
        raise NonUnimodular(f"monodromy determinant {dt}")
    return MonodromyMatrix(entries=Mi, pre_round_residual=resid, basis_ref=traj.bases[0], trajectory=traj)
