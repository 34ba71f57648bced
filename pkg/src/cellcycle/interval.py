"""Closed-form boundary perturbation on [0, 1].

The generator is ``A u = u'`` with boundary maps ``Psi0 u = u(1)`` and
``Psi u = int u dmu``.  Everything is explicit, which makes this a
high-precision oracle for the boundary machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .boundary import neumann_solve
from .errors import NotInvertible

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _gl_nodes(lo, hi):
    """Gauss-Legendre nodes and weights mapped to [lo, hi] (broadcasting)."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (_GL_X + 1.0), half * _GL_W


@dataclass(frozen=True)
class BoundaryMeasure:
    """Finite measure on [0, 1]: atoms plus a piecewise-linear density."""

    atoms: tuple = ()
    ac_x: tuple = ()
    ac_density: tuple = ()

    def __post_init__(self):
        for loc, w in self.atoms:
            if not 0 <= loc <= 1 or w <= 0:
                raise ValueError("atoms need locations in [0, 1] and positive weights")
        if len(self.ac_x) != len(self.ac_density):
            raise ValueError("density knots and values differ in length")
        if len(self.ac_x):
            x = np.asarray(self.ac_x)
            if x[0] < 0 or x[-1] > 1 or np.any(np.diff(x) <= 0):
                raise ValueError("density knots must increase inside [0, 1]")
            if np.any(np.asarray(self.ac_density) < 0):
                raise ValueError("density must be nonnegative")

    @classmethod
    def delta(cls, loc: float, weight: float = 1.0) -> "BoundaryMeasure":
        return cls(atoms=((float(loc), float(weight)),))

    @classmethod
    def uniform(cls) -> "BoundaryMeasure":
        return cls(ac_x=(0.0, 1.0), ac_density=(1.0, 1.0))

    @classmethod
    def from_config(cls, section: dict) -> "BoundaryMeasure":
        kind = section.get("kind")
        if kind == "delta":
            return cls.delta(section["at"], section.get("weight", 1.0))
        if kind == "uniform":
            return cls.uniform()
        if kind == "mixed":
            return cls(tuple((a["at"], a["weight"]) for a in section.get("atoms", [])),
                       tuple(section.get("x", ())), tuple(section.get("density", ())))
        raise ValueError("unknown measure kind %r" % kind)

    def integrate(self, fn) -> float:
        """int fn dmu for a vectorised callable ``fn``."""
        total = 0.0
        for loc, w in self.atoms:
            total += w * float(np.asarray(fn(np.array([loc])))[0])
        if len(self.ac_x):
            x = np.asarray(self.ac_x, dtype=float)
            d = np.asarray(self.ac_density, dtype=float)
            nodes, weights = _gl_nodes(x[:-1], x[1:])
            dens = np.interp(nodes, x, d)
            vals = np.asarray(fn(nodes.ravel())).reshape(nodes.shape)
            total += float((vals * dens * weights).sum())
        return total

    @property
    def total_mass(self) -> float:
        return self.integrate(lambda x: np.ones_like(x))

    def is_delta_one(self) -> bool:
        return not len(self.ac_x) and all(loc == 1.0 for loc, _ in self.atoms)


def interval_psi_lambda(f_boundary: float, lam: float, x):
    """lam-eigen solution e^{lam (x - 1)} f_boundary with value f_boundary at 1."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return f_boundary * np.exp(lam * (np.asarray(x, dtype=float) - 1.0))


def interval_psi_psi(mu: BoundaryMeasure, lam: float) -> float:
    """The scalar int e^{lam (x - 1)} mu(dx)."""
    return mu.integrate(lambda x: np.exp(lam * (x - 1.0)))


def _as_callable(f):
    if callable(f):
        return f
    x, y = f
    return CubicSpline(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


@dataclass
class IntervalResolvent:
    """u = R(lam, A_Psi) f, evaluable anywhere in [0, 1]."""

    f: object
    lam: float
    mu: BoundaryMeasure
    panels: int = 64
    psi_psi: float = field(init=False)
    boundary_value: float = field(init=False)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        self._f = _as_callable(self.f)
        self.psi_psi = interval_psi_psi(self.mu, self.lam)
        if self.psi_psi >= 1.0 - 1e-14:
            raise NotInvertible("1 - int e^{lam(x-1)} dmu = %.3g is not positive"
                                % (1.0 - self.psi_psi))
        y = self.mu.integrate(self.u0)
        # Neumann series of the scalar contraction
        scale, _ = neumann_solve(lambda v: self.psi_psi * v, 1.0, self.psi_psi, 1e-16, abs)
        self.boundary_value = y * scale

    def u0(self, x):
        """int_x^1 e^{lam (x - s)} f(s) ds by composite Gauss-Legendre."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        edges = x[:, None] + (1.0 - x[:, None]) * np.linspace(0, 1, self.panels + 1)[None, :]
        nodes, weights = _gl_nodes(edges[:, :-1], edges[:, 1:])
        vals = np.asarray(self._f(nodes.ravel())).reshape(nodes.shape)
        kern = np.exp(self.lam * (x[:, None, None] - nodes))
        return (vals * kern * weights).sum(axis=(1, 2))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.u0(x.ravel()).reshape(x.shape) + self.boundary_value * np.exp(
            self.lam * (x - 1.0))
        return float(out) if out.ndim == 0 else out

    def on_grid(self, x) -> np.ndarray:
        """Values on an increasing grid, with u0 by right-to-left recursion."""
        x = np.asarray(x, dtype=float)
        if x[-1] != 1.0:
            raise ValueError("grid must end at 1")
        nodes, weights = _gl_nodes(x[:-1], x[1:])
        vals = np.asarray(self._f(nodes.ravel())).reshape(nodes.shape)
        seg = (vals * np.exp(self.lam * (x[:-1, None] - nodes)) * weights).sum(axis=1)
        decay = np.exp(self.lam * (x[:-1] - x[1:]))
        u0 = np.zeros_like(x)
        for k in range(len(x) - 2, -1, -1):
            u0[k] = decay[k] * u0[k + 1] + seg[k]
        return u0 + self.boundary_value * np.exp(self.lam * (x - 1.0))


def interval_resolvent(f, lam: float, mu: BoundaryMeasure, x=None):
    """R(lam, A_Psi) f on the grid ``x`` (default 10^4 points)."""
    if x is None:
        x = np.linspace(0.0, 1.0, 10_000)
    return IntervalResolvent(f, lam, mu).on_grid(x)


def interval_residuals(f, lam: float, mu: BoundaryMeasure, n: int = 10_000) -> dict:
    """max |lam u - u' - f| on the grid and |u(1) - int u dmu|."""
    x = np.linspace(0.0, 1.0, n)
    res = IntervalResolvent(f, lam, mu)
    u = res.on_grid(x)
    du = CubicSpline(x, u)(x, 1)
    fx = np.asarray(_as_callable(f)(x))
    return {"equation": float(np.max(np.abs(lam * u - du - fx))),
            "boundary": float(abs(u[-1] - mu.integrate(res))),
            "psi_psi": res.psi_psi}


def scalar_neumann(q: float, tol: float = 1e-15) -> float:
    """(1 - q)^{-1} through the generic Neumann solver."""
    val, _ = neumann_solve(lambda v: q * v, 1.0, q, tol, abs)
    return val
