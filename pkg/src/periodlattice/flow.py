"""Composed flows of the generator fields, their Jacobians, and fiber tracking.

The composed flow at times ``t`` is integrated as the single autonomous field
``sum_i t_i X_i`` over unit time with an embedded Dormand-Prince 5(4) pair.
Integrations are batched: a stack of ``m`` points can be carried together,
each with its own time vector, under one step-size controller.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import LeftRegularDomain, NearCriticalValue, NewtonDiverged, StepFailure
from . import _kernels
from .systems import IntegrableSystem

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class Tolerances:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    newton_tol: float = 1e-9
    max_newton_iters: int = 25

    def __post_init__(self):
        if min(self.abs_tol, self.rel_tol, self.newton_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")

    def tightened(self, factor: float = 10.0) -> "Tolerances":
        return Tolerances(self.abs_tol / factor, self.rel_tol / factor, self.newton_tol, self.max_newton_iters)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_TOLERANCES = Tolerances()


@dataclass
class FlowResult:
    endpoint: np.ndarray
    jacobian: Optional[np.ndarray] = None
    t_jacobian: Optional[np.ndarray] = None
    est_error: float = 0.0
    steps: int = 0


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    atol: float,
    rtol: float,
    span: float = 1.0,
    h0: Optional[float] = None,
    check: Optional[Callable[[np.ndarray], None]] = None,
    max_steps: int = 200_000,
):
    """Integrate the autonomous batch ODE ``y' = rhs(y)`` from 0 to ``span``.

    ``y0`` has shape ``(m, D)``; the error norm is the RMS over components,
    maximized over the batch.  Returns ``(y, est_error, steps, last_h)`` where
    ``est_error`` sums the embedded error estimates of accepted steps.
    """
    y = np.array(y0, dtype=float)
    if span == 0.0:
        return y, 0.0, 0, h0
    k1 = rhs(y)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((k1 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, span)
    h = min(h0, span)
    t = 0.0
    est = 0.0
    steps = 0
    while t < span:
        if steps >= max_steps:
            raise StepFailure(f"step budget {max_steps} exhausted at t={t:.6g}")
        if span - t < h * (1 + 1e-12):
            h = span - t
        ks = [k1]
        for i in range(1, 6):
            yi = y + h * sum(a * kk for a, kk in zip(_A[i], ks))
            ks.append(rhs(yi))
        ynew = y + h * sum(b * kk for b, kk in zip(_B, ks) if b != 0.0)
        k7 = rhs(ynew)
        ks.append(k7)
        err = h * sum(e * kk for e, kk in zip(_E, ks) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        enorm = float(np.max(np.sqrt(np.mean((err / scale) ** 2, axis=-1))))
        if enorm <= 1.0:
            t = t + h if span - t > h else span
            y = ynew
            k1 = k7
            steps += 1
            est += float(np.max(np.linalg.norm(err, axis=-1)))
            if check is not None:
                check(y)
            fac = 5.0 if enorm == 0.0 else min(5.0, 0.9 * enorm ** -0.2)
        else:
            fac = max(0.2, 0.9 * enorm ** -0.2)
        h = h * fac
        if h < 1e-14 * span:
            raise StepFailure(f"step size underflow at t={t:.6g}")
    return y, est, steps, h


def _field(system: IntegrableSystem, times: np.ndarray):
    """Return rhs(y) for the stack of fields sum_i t_i X_i."""
    times = np.atleast_2d(np.asarray(times, dtype=float))

    def rhs(y):
        return np.einsum("mn,mnd->md", times, system.X(y))

    return rhs


def _state_flow(system, points, times, tol, span=1.0, h0=None, check_domain=True):
    """Batch state integration; compiled kernel when the system provides one."""
    d = system.dim_ambient
    if system.kernel is not None:
        field, params = system.kernel
        y, est, steps, h, status = _kernels.dopri(
            field,
            np.ascontiguousarray(points, dtype=float),
            np.ascontiguousarray(times, dtype=float),
            params,
            tol.abs_tol,
            tol.rel_tol,
            float(span),
            -1.0 if h0 is None else float(h0),
            200_000,
        )
        if status == 1:
            raise StepFailure(f"{system.name}: step size underflow")
        if status == 2:
            raise StepFailure(f"{system.name}: step budget exhausted")
        if check_domain:
            # fibers are invariant, so the endpoint check catches numerical drift
            _domain_check(system, d)(y)
        return y, est, steps, h
    check = _domain_check(system, d) if check_domain else None
    return integrate(_field(system, times), points, tol.abs_tol, tol.rel_tol, span=span, h0=h0, check=check)


def _domain_check(system: IntegrableSystem, d: int):
    def check(y):
        for row in y:
            if not system.in_regular_domain(row[:d]):
                raise LeftRegularDomain(f"{system.name}: trajectory left the regular domain at {row[:d]}")

    return check


def flow(
    system: IntegrableSystem,
    p,
    t,
    tol: Tolerances = DEFAULT_TOLERANCES,
    want_jacobian: bool = False,
    check_domain: bool = True,
) -> FlowResult:
    """Phi^t(p) and optionally its Jacobian via the variational equations."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float).reshape(system.n)
    d = system.dim_ambient
    if not np.any(t):
        jac = np.eye(d) if want_jacobian else None
        tj = system.X(p).T.copy() if want_jacobian else None
        return FlowResult(endpoint=p.copy(), jacobian=jac, t_jacobian=tj)
    if not want_jacobian:
        y, est, steps, _ = _state_flow(system, p[None, :], t[None, :], tol, check_domain=check_domain)
        return FlowResult(endpoint=y[0], est_error=est, steps=steps)
    check = _domain_check(system, d) if check_domain else None

    def rhs(y):
        x = y[:, :d]
        J = y[:, d:].reshape(-1, d, d)
        fx = np.einsum("n,mnd->md", t, system.X(x))
        A = np.einsum("n,mnij->mij", t, system.DX(x))
        return np.concatenate([fx, (A @ J).reshape(-1, d * d)], axis=1)

    y0 = np.concatenate([p, np.eye(d).ravel()])[None, :]
    y, est, steps, _ = integrate(rhs, y0, tol.abs_tol, tol.rel_tol, check=check)
    end = y[0, :d]
    return FlowResult(
        endpoint=end,
        jacobian=y[0, d:].reshape(d, d),
        t_jacobian=system.X(end).T.copy(),
        est_error=est,
        steps=steps,
    )


def flow_batch(
    system: IntegrableSystem,
    points,
    times,
    tol: Tolerances = DEFAULT_TOLERANCES,
    check_domain: bool = True,
) -> np.ndarray:
    """Endpoints Phi^{t_j}(p_j) for stacked points ``(m, d)`` and times ``(m, n)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.atleast_2d(np.asarray(times, dtype=float))
    if points.shape[0] == 1 and times.shape[0] > 1:
        points = np.repeat(points, times.shape[0], axis=0)
    if not np.any(times):
        return points.copy()
    y, _, _, _ = _state_flow(system, points, times, tol, check_domain=check_domain)
    return y


def flow_samples(
    system: IntegrableSystem,
    p,
    t,
    s_values,
    tol: Tolerances = DEFAULT_TOLERANCES,
    check_domain: bool = True,
) -> np.ndarray:
    """Points Phi^{s t}(p) at increasing ``s_values`` from one sequential sweep."""
    p = np.asarray(p, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    times = np.asarray(t, dtype=float).reshape(1, system.n)
    out = np.empty((s_values.size, p.size))
    y = p[None, :]
    s_prev = 0.0
    h = None
    for i, s in enumerate(s_values):
        if s < s_prev:
            raise ValueError("s_values must be nondecreasing and start at or after 0")
        if s > s_prev:
            y, _, _, h = _state_flow(system, y, times, tol, span=s - s_prev, h0=h, check_domain=check_domain)
        out[i] = y[0]
        s_prev = s
    return out


def track_fiber_point(
    system: IntegrableSystem,
    p,
    target,
    tol: Tolerances = DEFAULT_TOLERANCES,
    trust_radius: Optional[float] = None,
) -> np.ndarray:
    """Move ``p`` onto the fiber F = target by minimal-norm Gauss-Newton updates."""
    p = np.array(p, dtype=float)
    target = np.asarray(target, dtype=float)
    if system.near_critical(target):
        raise NearCriticalValue(f"target {target.tolist()} is within the critical exclusion zone")
    r = system.F(p) - target
    if trust_radius is not None and np.linalg.norm(r) > trust_radius:
        raise NewtonDiverged(f"target is {np.linalg.norm(r):.3g} away, beyond trust radius {trust_radius}")
    for it in range(tol.max_newton_iters + 1):
        if np.linalg.norm(r) < tol.newton_tol:
            return p
        if it == tol.max_newton_iters:
            break
        dp = np.linalg.pinv(system.DF(p)) @ r
        p = p - dp
        r_new = system.F(p) - target
        if not np.all(np.isfinite(r_new)) or np.linalg.norm(r_new) > 10 * np.linalg.norm(r) + 1.0:
            break
        r = r_new
    raise NewtonDiverged(
        f"fiber tracking to {target.tolist()} stalled with residual {np.linalg.norm(r):.3g}"
    )
