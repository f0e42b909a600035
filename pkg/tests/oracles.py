"""Reference computations that share no algorithms with the package.

Everything here uses fixed-step RK4, dense grids and brute force.  Only
the model equations (the system's ``X``, ``F`` and displacement) are taken
from the system object.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage


def rk4_unit(system, x, times, steps):
    """Integrate x' = sum_i t_i X_i(x) over unit time with ``steps`` RK4 steps.

    ``x`` is (m, d), ``times`` is (m, n).  Returns the (steps + 1, m, d) path.
    """
    x = np.array(x, dtype=float)
    times = np.asarray(times, dtype=float)

    def f(y):
        return np.einsum("mn,mnd->md", times, system.X(y))

    h = 1.0 / steps
    out = [x.copy()]
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x.copy())
    return np.array(out)


def rk4_end(system, x, times, h=0.005):
    """Endpoints only; the step count is set by the longest time vector."""
    times = np.atleast_2d(np.asarray(times, dtype=float))
    x = np.array(np.broadcast_to(np.atleast_2d(x), (times.shape[0], np.shape(x)[-1])), dtype=float)
    steps = max(1, int(np.ceil(np.max(np.linalg.norm(times, axis=1)) / h)))
    dt = 1.0 / steps

    def f(y):
        return np.einsum("mn,mnd->md", times, system.X(y))

    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def return_scan(system, p, t_max=40.0, step=0.01):
    """Local minima of |Phi^T(p) - p| on the grid step*Z^2 within [0, t_max]^2 (n = 2).

    Returns ``(minima, grid)``; the origin is excluded from the minima.
    """
    p = np.asarray(p, dtype=float)
    count = int(round(t_max / step)) + 1
    e2 = np.array([[0.0, step]])
    line = rk4_unit(system, p[None, :], np.array([[step * (count - 1), 0.0]]), count - 1)[:, 0, :]
    grid = np.empty((count, count), dtype=np.float32)
    cur = line.copy()
    times = np.repeat(e2, count, axis=0)
    for j in range(count):
        grid[:, j] = np.linalg.norm(system.displacement(p, cur), axis=1)
        if j + 1 < count:
            cur = rk4_unit(system, cur, times, 1)[-1]
    speed = float(np.max(np.linalg.norm(system.X(line), axis=-1)))
    thresh = 3.0 * step * speed
    is_min = (ndimage.minimum_filter(grid, size=3, mode="nearest") == grid) & (grid < thresh)
    is_min[0, 0] = False
    # collapse plateaus: keep one cell per connected cluster
    labels, nlab = ndimage.label(is_min)
    keep = []
    for lab in range(1, nlab + 1):
        cells = np.argwhere(labels == lab)
        vals = grid[tuple(cells.T)]
        keep.append(cells[np.argmin(vals)])
    minima = np.array(keep, dtype=float) * step if keep else np.zeros((0, 2))
    # drop the origin's own basin (cells adjacent to (0,0))
    minima = minima[np.linalg.norm(minima, axis=1) > 2.5 * step]
    return minima, grid


def same_lattice_as_scan(B, minima, t_max, step, coeff_tol=0.05):
    """True when every scan minimum is a lattice point of B and vice versa."""
    B = np.asarray(B, dtype=float)
    Binv = np.linalg.inv(B)
    coeffs = minima @ Binv.T
    if minima.shape[0] and np.max(np.abs(coeffs - np.rint(coeffs))) > coeff_tol:
        return False
    # every lattice point inside the box must be found
    bound = int(np.ceil(t_max * np.max(np.abs(Binv)) * 2)) + 1
    for z in itertools.product(range(-bound, bound + 1), repeat=2):
        if not any(z):
            continue
        t = B @ np.array(z, dtype=float)
        if np.all(t >= 0) and np.all(t <= t_max):
            if minima.shape[0] == 0:
                return False
            if np.min(np.linalg.norm(minima - t, axis=1)) > 2.5 * step:
                return False
    return True


def newton_period(system, p, T, h=0.005, iters=30, tol=1e-9):
    """Plain Newton on Phi^T(p) = p with RK4 flows and the [X_i(end)] Jacobian.

    ``T`` may be one time vector or a stack of rows refined together.
    """
    T = np.array(T, dtype=float)
    single = T.ndim == 1
    T = np.atleast_2d(T)
    for _ in range(iters):
        end = rk4_end(system, p, T, h)
        G = system.displacement(p, end)
        if np.max(np.linalg.norm(G, axis=1)) < tol:
            break
        J = np.swapaxes(system.X(end), -1, -2)
        for j in range(T.shape[0]):
            T[j] -= np.linalg.lstsq(J[j], G[j], rcond=None)[0]
    return T[0] if single else T


def newton_fiber(system, p, target, iters=30):
    p = np.array(p, dtype=float)
    for _ in range(iters):
        r = system.F(p) - target
        if np.linalg.norm(r) < 1e-13:
            break
        p = p - np.linalg.pinv(system.DF(p)) @ r
    return p


def action(system, p, T, steps=4000):
    """(1/2pi) * loop integral of p . dq along s -> Phi^{sT}(p), trapezoid on the closed cycle."""
    n = system.n
    path = rk4_unit(system, np.atleast_2d(p), np.atleast_2d(T), steps)[:, 0, :]
    vel = np.einsum("n,snd->sd", np.asarray(T, dtype=float), system.X(path))
    integrand = np.sum(path[:, n:] * vel[:, :n], axis=1)
    return float(np.mean(integrand[:-1]) / (2 * np.pi))


def transport_by_actions(system, values, W0, p0, h=0.01):
    """Carry two cycles around a loop of values and read the basis change off the actions.

    ``W0`` holds start cycles as columns.  Each sample re-solves the anchor
    and the periods by plain Newton from the previous sample.  The integer
    matrix is then chosen by brute force so that actions satisfy
    a_end = a_start . M.  Returns ``(M_from_actions, M_from_periods)``.
    """
    a0 = np.array([action(system, p0, W0[:, i]) for i in range(2)])
    p = np.array(p0, dtype=float)
    W = np.array(W0, dtype=float)
    for c in values[1:]:
        p = newton_fiber(system, p, np.asarray(c, dtype=float))
        W = newton_period(system, p, W.T, h, tol=1e-8).T
    a1 = np.array([action(system, p, W[:, i]) for i in range(2)])
    M = np.zeros((2, 2), dtype=int)
    for j in range(2):
        best = min(
            itertools.product(range(-4, 5), repeat=2),
            key=lambda ab: abs(a0[0] * ab[0] + a0[1] * ab[1] - a1[j]),
        )
        M[:, j] = best
    # the same endpoint cycles, compared with the start cycles on the same fiber
    p_start = newton_fiber(system, p, np.asarray(values[0], dtype=float))
    W_end = newton_period(system, p_start, W.T, h, tol=1e-8).T
    M_periods = np.rint(np.linalg.solve(W0, W_end)).astype(int)
    return M, M_periods, a0, a1


def signed_crossings(system, p, T, steps=8000):
    """Signed count of times the plane span{X_i} meets the vertical plane along the cycle.

    A crossing is a sign change of det Q, Q the q-block of the generator
    frame.  Its sign is that of a^T P^T dQ/ds a for the kernel vector a of Q.
    """
    n = system.n
    # start off any crossing that sits exactly at the anchor
    p = rk4_end(system, p, 0.137 * np.atleast_2d(T))[0]
    path = rk4_unit(system, np.atleast_2d(p), np.atleast_2d(T), steps)[:, 0, :]
    frames = np.swapaxes(system.X(path), -1, -2)  # (s, d, n)
    Q = frames[:, :n, :]
    P = frames[:, n:, :]
    dets = np.linalg.det(Q)
    total = 0
    ds = 1.0 / steps
    for k in range(steps):
        if np.sign(dets[k]) != np.sign(dets[k + 1]) and dets[k] != 0:
            j = k if abs(dets[k]) < abs(dets[k + 1]) else k + 1
            _, _, vh = np.linalg.svd(Q[j])
            a = vh[-1]
            dQ = (Q[k + 1] - Q[k]) / ds
            total += int(np.sign(a @ P[j].T @ dQ @ a))
    return total


def conjugator(M, target, bound=3):
    """Some U in SL(2,Z) with entries in [-bound, bound] and U^-1 M U = target, or None."""
    M = np.asarray(M, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    r = range(-bound, bound + 1)
    for a, b, c, d in itertools.product(r, r, r, r):
        if a * d - b * c != 1:
            continue
        U = np.array([[a, b], [c, d]])
        Ui = np.array([[d, -b], [-c, a]])
        if np.array_equal(Ui @ M @ U, target):
            return U
    return None


def snf_diagonal_by_minors(A):
    """Invariant factors from gcds of k x k minors (determinantal divisors)."""
    from math import gcd

    A = np.asarray(A, dtype=object)
    m, n = A.shape
    divisors = [1]
    for k in range(1, min(m, n) + 1):
        g = 0
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                sub = np.array(A[np.ix_(rows, cols)], dtype=float)
                g = gcd(g, int(round(np.linalg.det(sub))))
        divisors.append(g)
    out = []
    for k in range(1, len(divisors)):
        if divisors[k] == 0:
            out.append(0)
        else:
            out.append(divisors[k] // divisors[k - 1])
    return out


def ray_returns(system, p, T, steps=2000):
    """Parameters t in (0, 1) where t -> Phi^{tT}(p) has a near-return to p.

    A near-return is a local minimum of the distance to p on a uniform RK4
    grid that lies below a few grid steps' worth of motion.
    """
    p = np.asarray(p, dtype=float)
    path = rk4_unit(system, p[None, :], np.atleast_2d(T), steps)[:, 0, :]
    d = np.linalg.norm(system.displacement(p, path), axis=1)
    speed = np.linalg.norm(np.einsum("n,snd->sd", np.asarray(T, dtype=float), system.X(path)), axis=1)
    thresh = 3.0 * np.max(speed) / steps
    inner = np.arange(1, steps)
    is_min = (d[inner] <= d[inner - 1]) & (d[inner] <= d[inner + 1]) & (d[inner] < thresh)
    return inner[is_min] / steps, float(d[-1])
