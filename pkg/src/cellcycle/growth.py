"""Deterministic size dynamics.

A cell of size ``x`` grows as ``dx/dt = g(x)``.  Everything else in the
package works in the accumulated-time coordinate ``s = Q(x)`` where

    Q(x) = integral from x_bar to x of dr / g(r),

so that the growth flow becomes a unit-speed translation ``s -> s + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .errors import DivergentIntegral, NonPositiveSize, OutOfRange

LN2 = math.log(2.0)


def _scalar_or_array(template, values):
    if np.ndim(template) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class FlowConvention:
    """How the flow treats the size-zero boundary.

    ``q_at_zero`` is the finite value Q(0) or ``-inf``.  Backward flow that
    would cross Q(0) is clamped to size 0.
    """

    q_at_zero: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.q_at_zero)


@dataclass(frozen=True)
class GrowthModel:
    """Growth law ``g`` together with the maps Q, Q^-1 and the flow.

    Use the constructors :meth:`constant`, :meth:`linear`, :meth:`generic`
    or :meth:`from_table`.  All methods accept scalars or numpy arrays.
    """

    kind: str
    k: float = 1.0
    x_bar: float = 0.0
    x_min: float | None = None
    x_max: float | None = None
    _g: Callable | None = field(default=None, repr=False, compare=False)
    _knots: np.ndarray | None = field(default=None, repr=False, compare=False)
    _qknots: np.ndarray | None = field(default=None, repr=False, compare=False)
    _spline: CubicHermiteSpline | None = field(default=None, repr=False, compare=False)

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, k: float = 1.0, x_bar: float = 0.0) -> "GrowthModel":
        if k <= 0:
            raise ValueError("growth rate k must be positive")
        if x_bar < 0:
            raise ValueError("x_bar must be nonnegative")
        return cls("constant", k=float(k), x_bar=float(x_bar))

    @classmethod
    def linear(cls, k: float = 1.0, x_bar: float = 1.0) -> "GrowthModel":
        if k <= 0:
            raise ValueError("growth rate k must be positive")
        if x_bar <= 0:
            # Q(0) = -inf, so the base size has to be strictly positive
            raise ValueError("linear growth needs x_bar > 0")
        return cls("linear", k=float(k), x_bar=float(x_bar))

    @classmethod
    def generic(cls, g: Callable, x_bar: float, x_min: float, x_max: float,
                n_knots: int = 2048) -> "GrowthModel":
        """Tabulate Q for an arbitrary positive growth law on [x_min, x_max].

        Q(0) is finite exactly when g(0) > 0 (g is Lipschitz, so g(0) = 0
        forces a logarithmic divergence).  In that case 0 is added as a
        knot and queries down to x = 0 are allowed.
        """
        if not 0 < x_min < x_max:
            raise ValueError("need 0 < x_min < x_max")
        probe = np.geomspace(x_min, x_max, 257)
        gv = np.asarray(g(probe), dtype=float)
        if np.any(~np.isfinite(gv)) or np.any(gv <= 0):
            raise ValueError("growth law must be positive on [x_min, x_max]")
        g0 = float(np.asarray(g(np.array([0.0])), dtype=float)[0])
        # log spacing resolves small sizes, uniform spacing the upper range
        knots = np.union1d(np.geomspace(x_min, x_max, n_knots),
                           np.linspace(x_min, x_max, n_knots))
        if g0 > 0:
            knots = np.concatenate([[0.0], knots])
        if not (knots[0] <= x_bar <= x_max):
            raise ValueError("x_bar must lie in the tabulation range")
        knots = np.union1d(knots, [x_bar])
        pieces = np.empty(len(knots) - 1)
        for i, (lo, hi) in enumerate(zip(knots[:-1], knots[1:])):
            val, err = integrate.quad(lambda r: 1.0 / float(g(np.array([r]))[0]), lo, hi,
                                      limit=200, epsabs=1e-14, epsrel=1e-12)
            if not math.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
                raise DivergentIntegral("quadrature of 1/g failed on [%g, %g]" % (lo, hi))
            pieces[i] = val
        qk = np.concatenate([[0.0], np.cumsum(pieces)])
        qk -= qk[np.searchsorted(knots, x_bar)]
        # Hermite data with the exact slope Q' = 1/g at every knot
        slopes = 1.0 / np.asarray(g(knots), dtype=float)
        spline = CubicHermiteSpline(knots, qk, slopes, extrapolate=False)
        return cls("generic", k=float("nan"), x_bar=float(x_bar), x_min=float(x_min),
                   x_max=float(x_max), _g=g, _knots=knots, _qknots=qk, _spline=spline)

    @classmethod
    def from_table(cls, path, x_bar: float | None = None) -> "GrowthModel":
        """Read a two-column CSV (x, g(x)) and interpolate g linearly."""
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if data.shape[1] < 2:
            raise ValueError("growth table needs two columns (x, g)")
        xs, gs = data[:, 0], data[:, 1]
        order = np.argsort(xs)
        xs, gs = xs[order], gs[order]
        if np.any(gs <= 0):
            raise ValueError("tabulated growth rates must be positive")

        def g(x):
            return np.interp(x, xs, gs)

        x_min = xs[xs > 0].min()
        if x_bar is None:
            x_bar = x_min
        return cls.generic(g, x_bar=x_bar, x_min=x_min, x_max=float(xs.max()))

    # -- basic maps -------------------------------------------------------

    @property
    def convention(self) -> FlowConvention:
        return FlowConvention(self.q_at_zero)

    @property
    def q_at_zero(self) -> float:
        if self.kind == "constant":
            return -self.x_bar / self.k
        if self.kind == "linear":
            return -math.inf
        if self._knots[0] == 0.0:
            return float(self._qknots[0])
        return -math.inf

    def _check_range(self, x):
        if self.kind != "generic":
            return
        lo = 0.0 if self._knots[0] == 0.0 else self.x_min
        if np.any(x < lo * (1 - 1e-12)) or np.any(x > self.x_max * (1 + 1e-12)):
            raise OutOfRange("size outside the tabulated range [%g, %g]" % (lo, self.x_max))

    def g(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            out = np.full_like(x, self.k)
        elif self.kind == "linear":
            out = self.k * x
        else:
            out = np.asarray(self._g(np.atleast_1d(x)), dtype=float).reshape(x.shape)
        return _scalar_or_array(x, out)

    def q(self, x):
        """Accumulated growth time Q(x) from the base size to ``x``."""
        xa = np.asarray(x, dtype=float)
        if np.any(xa <= 0):
            raise NonPositiveSize("Q is defined for x > 0 only")
        self._check_range(xa)
        if self.kind == "constant":
            out = (xa - self.x_bar) / self.k
        elif self.kind == "linear":
            out = np.log(xa / self.x_bar) / self.k
        else:
            out = self._spline(np.clip(xa, self._knots[0], self._knots[-1]))
        return _scalar_or_array(x, out)

    def q_inverse(self, t):
        ta = np.asarray(t, dtype=float)
        q0 = self.q_at_zero
        if math.isfinite(q0) and np.any(ta < q0 - 1e-12 * max(1.0, abs(q0))):
            raise OutOfRange("t below Q(0) = %g" % q0)
        if self.kind == "constant":
            out = self.x_bar + self.k * ta
        elif self.kind == "linear":
            out = self.x_bar * np.exp(self.k * ta)
        else:
            out = self._generic_inverse(ta)
        return _scalar_or_array(t, np.maximum(out, 0.0))

    def _generic_inverse(self, ta):
        qk, xk = self._qknots, self._knots
        if np.any(ta > qk[-1] * (1 + 1e-12) + 1e-12) or np.any(ta < qk[0] - 1e-12 * max(1, abs(qk[0]))):
            raise OutOfRange("t outside the tabulated range of Q")
        ta = np.clip(ta, qk[0], qk[-1])
        idx = np.clip(np.searchsorted(qk, ta) - 1, 0, len(qk) - 2)
        lo, hi = xk[idx].copy(), xk[idx + 1].copy()
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = self._spline(mid) < ta
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x = 0.5 * (lo + hi)
        # one Newton polish on the spline itself
        d = self._spline.derivative()(x)
        step = np.where(d > 0, (self._spline(x) - ta) / np.where(d > 0, d, 1.0), 0.0)
        xn = x - step
        ok = (xn >= xk[idx]) & (xn <= xk[idx + 1])
        return np.where(ok, xn, x)

    def flow(self, t, x0):
        """Size after growing for time ``t`` from ``x0`` (clamped at 0)."""
        x0a = np.asarray(x0, dtype=float)
        ta = np.asarray(t, dtype=float)
        if np.any(x0a < 0):
            raise NonPositiveSize("flow needs x0 >= 0")
        q0 = self.q_at_zero
        pos = x0a > 0
        safe = np.where(pos, x0a, 1.0)
        qx = np.where(pos, np.asarray(self.q(safe)), q0)
        target = qx + ta
        if math.isfinite(q0):
            alive = target > q0
        else:
            alive = pos & np.isfinite(target)
        out = np.zeros(np.broadcast(x0a, ta).shape)
        if np.any(alive):
            tb = np.broadcast_to(target, out.shape)[np.broadcast_to(alive, out.shape)]
            out[np.broadcast_to(alive, out.shape)] = self.q_inverse(tb)
        if out.ndim == 0:
            return float(out)
        return out

    def lambda_cut(self, T_B: float, x):
        """Birth size of the mother whose daughters are born with size ``x``.

        max{pi_{-T_B}(2x), 0}; zero when the backward flow hits size 0.
        """
        xa = np.asarray(x, dtype=float)
        if np.any(xa <= 0):
            raise NonPositiveSize("lambda is defined for x > 0")
        return self.flow(-T_B, 2.0 * xa)

    def lambda_derivative(self, T_B: float, x):
        xa = np.asarray(x, dtype=float)
        lam = np.asarray(self.lambda_cut(T_B, xa))
        # indicator first: no derivative formula on the clamped branch
        pos = lam > 0
        out = np.zeros_like(lam, dtype=float)
        if np.any(pos):
            num = np.asarray(self.g(np.where(pos, lam, 1.0)))
            den = np.asarray(self.g(2.0 * xa))
            out = np.where(pos, 2.0 * num / den, 0.0)
        return _scalar_or_array(x, out)

    # -- s-coordinate helpers --------------------------------------------

    def halve_s(self, s):
        """Division map in s coordinates: Q(Q^-1(s) / 2)."""
        sa = np.asarray(s, dtype=float)
        if self.kind == "constant":
            out = 0.5 * sa - 0.5 * self.x_bar / self.k
        elif self.kind == "linear":
            out = sa - LN2 / self.k
        else:
            x = np.asarray(self.q_inverse(sa)) * 0.5
            lo = 0.0 if self._knots[0] == 0.0 else self.x_min
            out = np.full_like(sa, -np.inf)
            ok = x >= lo
            if np.any(ok):
                q0 = self.q_at_zero
                xs = x[ok]
                vals = np.where(xs > 0, np.asarray(self.q(np.where(xs > 0, xs, 1.0))), q0)
                out[ok] = vals
        return _scalar_or_array(s, out)

    def size_of(self, s):
        """Physical size x = Q^-1(s)."""
        return self.q_inverse(s)

    def to_config(self) -> dict:
        if self.kind == "generic":
            return {"kind": "table", "x_bar": self.x_bar}
        return {"kind": self.kind, "k": self.k, "x_bar": self.x_bar}
