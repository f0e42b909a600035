"""Integrable systems: an integral map plus commuting generator fields.

Every callable on :class:`IntegrableSystem` is vectorized over leading axes:
a point array of shape ``(..., d)`` maps to ``(..., k)`` for the integral map,
``(..., n, d)`` for the generators, and ``(..., n, d, d)`` / ``(..., k, d)``
for the Jacobians.  Builtin systems use coordinates ``(q_1..q_n, p_1..p_n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .exceptions import InvalidParameters, UnknownSystem
from . import _kernels
from .reduction import reduce_basis

Array = np.ndarray

BUILTIN_NAMES = (
    "iso-oscillator",
    "aniso-oscillator",
    "champagne-bottle",
    "synthetic-twist",
    "oscillator-1d",
)


def _fd_jacobian(fun: Callable[[Array], Array], x: Array) -> Array:
    """Central differences, step 1e-6 * (1 + |x|); derivative on the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = 1e-6 * (1.0 + np.linalg.norm(x, axis=-1))
    cols = []
    for j in range(d):
        step = np.zeros(x.shape)
        step[..., j] = h
        hb = np.reshape(h, h.shape + (1,) * (fun(x).ndim - x.ndim + 1))
        cols.append((fun(x + step) - fun(x - step)) / (2.0 * hb))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class IntegrableSystem:
    """An effective R^n action with compact orbits preserving the fibers of F.

    ``displacement(a, b)`` returns the ambient difference ``b - a``; systems
    whose fibers are quotients of the ambient chart (``synthetic-twist``)
    override it to reduce the difference modulo their identification lattice.
    """

    name: str
    k: int
    n: int
    integral_map: Callable[[Array], Array]
    generators: Callable[[Array], Array]
    integral_jacobian: Optional[Callable[[Array], Array]] = None
    generator_jacobians: Optional[Callable[[Array], Array]] = None
    regular_domain: Optional[Callable[[Array], bool]] = None
    critical_values: tuple = ()
    critical_radius: float = 1e-3
    hamiltonian: bool = False
    params: dict = field(default_factory=dict)
    analytic_lattice: Optional[Callable[[Array], Array]] = None
    prescribed_monodromy: Optional[tuple] = None
    seed_point: Optional[Callable[[Array], Array]] = None
    sample_box: float = 1.0
    displacement_fn: Optional[Callable[[Array, Array], Array]] = None
    # compiled (field, params) pair from ``_kernels``; numpy path when absent
    kernel: Optional[tuple] = None

    @property
    def dim_ambient(self) -> int:
        return self.k + self.n

    def F(self, x) -> Array:
        return self.integral_map(np.asarray(x, dtype=float))

    def DF(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.integral_jacobian is not None:
            return self.integral_jacobian(x)
        return _fd_jacobian(self.integral_map, x)

    def X(self, x) -> Array:
        return self.generators(np.asarray(x, dtype=float))

    def DX(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.generator_jacobians is not None:
            return self.generator_jacobians(x)
        return _fd_jacobian(self.generators, x)

    def displacement(self, a, b) -> Array:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.displacement_fn is None:
            return b - a
        return self.displacement_fn(a, b)

    def near_critical(self, value) -> bool:
        value = np.asarray(value, dtype=float)
        return any(
            np.linalg.norm(value - np.asarray(c, dtype=float)) <= self.critical_radius
            for c in self.critical_values
        )

    def in_regular_domain(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        if self.regular_domain is not None:
            return bool(self.regular_domain(x))
        return True

    def random_points(self, rng: np.random.Generator, count: int) -> Array:
        """Uniform samples from the regular part of ``[-box, box]^d``."""
        out = []
        while len(out) < count:
            x = rng.uniform(-self.sample_box, self.sample_box, self.dim_ambient)
            if not self.in_regular_domain(x):
                continue
            s = np.linalg.svd(self.DF(x), compute_uv=False)
            if s[-1] <= 1e-3 * s[0]:
                continue
            out.append(x)
        return np.array(out)

    def point_on_fiber(self, value) -> Array:
        if self.seed_point is None:
            raise NotImplementedError(f"{self.name} has no seed_point; pass an anchor point")
        return np.asarray(self.seed_point(np.asarray(value, dtype=float)), dtype=float)


def eval_integral_map(system: IntegrableSystem, p) -> Array:
    return system.F(p)


def eval_generators(system: IntegrableSystem, p) -> Array:
    """Generator values at ``p`` as an ``(n, d)`` array (rows are X_i)."""
    return system.X(p)


def lie_bracket(system: IntegrableSystem, x, i: int, j: int, h: float = 1e-5) -> Array:
    """[X_i, X_j](x) = DX_j X_i - DX_i X_j with DX by central differences."""
    x = np.asarray(x, dtype=float)
    Xi = system.X(x)[i]
    Xj = system.X(x)[j]
    dXj = (system.X(x + h * Xi)[j] - system.X(x - h * Xi)[j]) / (2 * h)
    dXi = (system.X(x + h * Xj)[i] - system.X(x - h * Xj)[i]) / (2 * h)
    return dXj - dXi


def check_invariants(system: IntegrableSystem, points: Array) -> dict:
    """Rank, independence, commutation and tangency diagnostics at ``points``."""
    rank_ratio = []
    indep_ratio = []
    bracket = []
    tangency = []
    for x in points:
        s = np.linalg.svd(system.DF(x), compute_uv=False)
        rank_ratio.append(s[-1] / s[0])
        X = system.X(x)
        sx = np.linalg.svd(X, compute_uv=False)
        indep_ratio.append(sx[-1] / sx[0])
        for i in range(system.n):
            for j in range(i + 1, system.n):
                bracket.append(np.linalg.norm(lie_bracket(system, x, i, j)))
        tangency.append(np.max(np.abs(system.DF(x) @ X.T)))
    return {
        "min_rank_ratio": float(min(rank_ratio)),
        "min_independence_ratio": float(min(indep_ratio)),
        "max_bracket": float(max(bracket)) if bracket else 0.0,
        "max_tangency": float(max(tangency)),
    }


# ---------------------------------------------------------------------------
# builtins


def _oscillator(name: str, omega) -> IntegrableSystem:
    w = np.asarray(omega, dtype=float).reshape(-1)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidParameters(f"frequencies must be positive, got {w.tolist()}")
    n = w.size
    w2 = w**2

    def F(x):
        q, p = x[..., :n], x[..., n:]
        return 0.5 * (p**2 + w2 * q**2)

    def DF(x):
        q, p = x[..., :n], x[..., n:]
        out = np.zeros(x.shape[:-1] + (n, 2 * n))
        for i in range(n):
            out[..., i, i] = w2[i] * q[..., i]
            out[..., i, n + i] = p[..., i]
        return out

    def X(x):
        q, p = x[..., :n], x[..., n:]
        out = np.zeros(x.shape[:-1] + (n, 2 * n))
        for i in range(n):
            out[..., i, i] = p[..., i]
            out[..., i, n + i] = -w2[i] * q[..., i]
        return out

    DXc = np.zeros((n, 2 * n, 2 * n))
    for i in range(n):
        DXc[i, i, n + i] = 1.0
        DXc[i, n + i, i] = -w2[i]

    def DX(x):
        return np.broadcast_to(DXc, x.shape[:-1] + DXc.shape).copy()

    def regular(x):
        return bool(np.all(F(x) > 1e-12))

    def lattice(value):
        return np.diag(2 * np.pi / w)

    def seed(value):
        value = np.asarray(value, dtype=float)
        if np.any(value <= 0):
            raise InvalidParameters(f"oscillator values must be positive, got {value.tolist()}")
        return np.concatenate([np.sqrt(2 * value) / w, np.zeros(n)])

    return IntegrableSystem(
        name=name,
        k=n,
        n=n,
        integral_map=F,
        integral_jacobian=DF,
        generators=X,
        generator_jacobians=DX,
        regular_domain=regular,
        hamiltonian=True,
        params={"omega": w.tolist()},
        analytic_lattice=lattice,
        seed_point=seed,
        kernel=(_kernels.oscillator_field, w2.copy()),
    )


def _champagne(params: dict) -> IntegrableSystem:
    exclusion = float(params.get("exclusion_radius", 1e-3))
    if exclusion <= 0:
        raise InvalidParameters("exclusion_radius must be positive")

    def F(x):
        q1, q2, p1, p2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        r2 = q1 * q1 + q2 * q2
        H = 0.5 * (p1 * p1 + p2 * p2) + r2 * r2 - r2
        L = q1 * p2 - q2 * p1
        return np.stack([H, L], axis=-1)

    def DF(x):
        q1, q2, p1, p2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        g = 4 * (q1 * q1 + q2 * q2) - 2
        dH = np.stack([q1 * g, q2 * g, p1, p2], axis=-1)
        dL = np.stack([p2, -p1, -q2, q1], axis=-1)
        return np.stack([dH, dL], axis=-2)

    def X(x):
        q1, q2, p1, p2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        g = 4 * (q1 * q1 + q2 * q2) - 2
        XH = np.stack([p1, p2, -q1 * g, -q2 * g], axis=-1)
        XL = np.stack([-q2, q1, -p2, p1], axis=-1)
        return np.stack([XH, XL], axis=-2)

    DXL = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)

    def DX(x):
        q1, q2 = x[..., 0], x[..., 1]
        g = 4 * (q1 * q1 + q2 * q2) - 2
        out = np.zeros(x.shape[:-1] + (2, 4, 4))
        out[..., 0, 0, 2] = 1.0
        out[..., 0, 1, 3] = 1.0
        out[..., 0, 2, 0] = -g - 8 * q1 * q1
        out[..., 0, 2, 1] = -8 * q1 * q2
        out[..., 0, 3, 0] = -8 * q1 * q2
        out[..., 0, 3, 1] = -g - 8 * q2 * q2
        out[..., 1, :, :] = DXL
        return out

    def regular(x):
        return bool(np.linalg.norm(F(x)) > exclusion)

    def seed(value):
        H, L = float(value[0]), float(value[1])

        def g(r):
            return L * L / (2 * r * r) + r**4 - r * r - H

        # outer turning point of the radial motion; px = 0 there
        if abs(L) > 0:
            # V_eff has a single minimum; bracket from it to infinity
            rmin = brentq(lambda r: -L * L / r**3 + 4 * r**3 - 2 * r, 1e-6, 10.0)
            if g(rmin) > 0:
                raise InvalidParameters(f"value {value} lies outside the image of F")
            r = brentq(g, rmin, 10.0)
        else:
            r = np.sqrt((1 + np.sqrt(1 + 4 * H)) / 2) if H >= -0.25 else np.nan
            if not np.isfinite(r):
                raise InvalidParameters(f"value {value} lies outside the image of F")
        return np.array([r, 0.0, 0.0, L / r])

    return IntegrableSystem(
        name="champagne-bottle",
        k=2,
        n=2,
        integral_map=F,
        integral_jacobian=DF,
        generators=X,
        generator_jacobians=DX,
        regular_domain=regular,
        critical_values=((0.0, 0.0),),
        critical_radius=exclusion,
        hamiltonian=True,
        params={"exclusion_radius": exclusion},
        seed_point=seed,
        kernel=(_kernels.champagne_field, np.zeros(1)),
    )


def _synthetic(params: dict) -> IntegrableSystem:
    m = params.get("m", 1)
    if int(m) != m:
        raise InvalidParameters(f"twist m must be an integer, got {m}")
    m = int(m)
    exclusion = float(params.get("exclusion_radius", 0.1))
    if exclusion <= 0:
        raise InvalidParameters("exclusion_radius must be positive")

    def lattice(value):
        theta = np.arctan2(value[1], value[0])
        return 2 * np.pi * np.array([[1.0, m * theta / (2 * np.pi)], [0.0, 1.0]])

    def F(x):
        return np.array(x[..., :2], dtype=float)

    def DF(x):
        out = np.zeros(x.shape[:-1] + (2, 4))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    Xc = np.array([[0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)

    def X(x):
        return np.broadcast_to(Xc, x.shape[:-1] + Xc.shape).copy()

    def DX(x):
        return np.zeros(x.shape[:-1] + (2, 4, 4))

    def regular(x):
        return bool(np.hypot(x[0], x[1]) > exclusion)

    def displacement(a, b):
        # reduce the angle difference into a fundamental domain of the
        # identification lattice at F(a); the domain contains a ball around 0
        d = np.array(b - a, dtype=float)
        theta = np.arctan2(a[..., 1], a[..., 0])
        shear = m * theta / (2 * np.pi)
        two_pi = 2 * np.pi
        z2 = np.rint(d[..., 3] / two_pi)
        d[..., 3] -= two_pi * z2
        d[..., 2] -= two_pi * shear * z2
        d[..., 2] -= two_pi * np.rint(d[..., 2] / two_pi)
        return d

    def seed(value):
        return np.array([value[0], value[1], 0.0, 0.0])

    return IntegrableSystem(
        name="synthetic-twist",
        k=2,
        n=2,
        integral_map=F,
        integral_jacobian=DF,
        generators=X,
        generator_jacobians=DX,
        regular_domain=regular,
        critical_values=((0.0, 0.0),),
        critical_radius=exclusion,
        hamiltonian=False,
        params={"m": m, "exclusion_radius": exclusion},
        analytic_lattice=lattice,
        prescribed_monodromy=((1, m), (0, 1)),
        seed_point=seed,
        sample_box=2.0,
        displacement_fn=displacement,
        kernel=(_kernels.translation_field, np.zeros(1)),
    )


def builtin_system(name: str, params: Optional[dict] = None) -> IntegrableSystem:
    """Instantiate a catalog system by name."""
    params = dict(params or {})
    if name == "iso-oscillator":
        omega = params.get("omega", 1.0)
        omega = np.asarray(omega, dtype=float).reshape(-1)
        if omega.size == 1:
            omega = np.repeat(omega, 2)
        if omega.size != 2 or omega[0] != omega[1]:
            raise InvalidParameters("iso-oscillator needs equal frequencies")
        return _oscillator(name, omega)
    if name == "aniso-oscillator":
        omega = params.get("omega", (1.0, 2.0))
        if np.asarray(omega).size != 2:
            raise InvalidParameters("aniso-oscillator needs two frequencies")
        return _oscillator(name, omega)
    if name == "oscillator-1d":
        return _oscillator(name, [params.get("omega", 1.0)])
    if name == "champagne-bottle":
        return _champagne(params)
    if name == "synthetic-twist":
        return _synthetic(params)
    raise UnknownSystem(name)


def analytic_reduced_lattice(system: IntegrableSystem, value) -> Optional[Array]:
    if system.analytic_lattice is None:
        return None
    return reduce_basis(system.analytic_lattice(np.asarray(value, dtype=float)))
