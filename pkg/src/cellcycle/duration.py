"""Phase-A duration law: density, survival, hazard, Laplace transform, sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import NegativeAge, SurvivalExhausted

HAZARD_FLOOR = 1e-12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _scalar_or_array(template, values):
    if np.ndim(template) == 0:
        return float(values)
    return values


def _one_minus_exp_times(x):
    """1 - e^{-x}(1 + x), accurate for small x."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs**2 / 2 - xs**3 / 3 + xs**4 / 8 - xs**5 / 30
    xl = np.where(small, 1.0, x)
    direct = -np.expm1(-xl) - xl * np.exp(-xl)
    return np.where(small, series, direct)


@dataclass(frozen=True)
class DurationModel:
    """Distribution of the phase-A duration T_A.

    Construct with :meth:`exponential`, :meth:`gamma`, :meth:`lognormal`,
    :meth:`uniform` or :meth:`tabulated`.  Atoms are not supported.
    """

    kind: str
    params: tuple = ()
    _dist: object = field(default=None, repr=False, compare=False)
    _a: np.ndarray | None = field(default=None, repr=False, compare=False)
    _psi: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cdf_k: np.ndarray | None = field(default=None, repr=False, compare=False)
    _sf_k: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def exponential(cls, p: float) -> "DurationModel":
        if p <= 0:
            raise ValueError("rate p must be positive")
        return cls("exponential", (float(p),), stats.expon(scale=1.0 / p))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "DurationModel":
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma shape and rate must be positive")
        return cls("gamma", (float(shape), float(rate)), stats.gamma(a=shape, scale=1.0 / rate))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "DurationModel":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return cls("lognormal", (float(mu), float(sigma)),
                   stats.lognorm(s=sigma, scale=math.exp(mu)))

    @classmethod
    def uniform(cls, a_lo: float, a_hi: float) -> "DurationModel":
        if not 0 <= a_lo < a_hi:
            raise ValueError("need 0 <= a_lo < a_hi")
        return cls("uniform", (float(a_lo), float(a_hi)),
                   stats.uniform(loc=a_lo, scale=a_hi - a_lo))

    @classmethod
    def tabulated(cls, a, psi) -> "DurationModel":
        """Piecewise-linear density through the knots, renormalised.

        Survival values at the knots are the exact tail sums of the
        trapezoid rule on the same knots, so psi = rho * survival holds at
        the discrete level.
        """
        a = np.asarray(a, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if a.ndim != 1 or a.shape != psi.shape or len(a) < 2:
            raise ValueError("need matching 1-d knot and density arrays")
        if np.any(np.diff(a) <= 0) or a[0] < 0:
            raise ValueError("knots must be increasing and nonnegative")
        if np.any(psi < 0):
            raise ValueError("density must be nonnegative")
        pieces = 0.5 * (psi[1:] + psi[:-1]) * np.diff(a)
        total = pieces.sum()
        if total <= 0:
            raise ValueError("density integrates to zero")
        psi = psi / total
        pieces = pieces / total
        cdf_k = np.concatenate([[0.0], np.cumsum(pieces)])
        sf_k = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
        return cls("tabulated", (), None, a, psi, cdf_k, sf_k)

    @classmethod
    def from_csv(cls, path) -> "DurationModel":
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls.tabulated(data[:, 0], data[:, 1])

    # -- pointwise functions ---------------------------------------------

    @property
    def support_upper(self) -> float:
        if self.kind == "uniform":
            return self.params[1]
        if self.kind == "tabulated":
            return float(self._a[-1])
        return math.inf

    @property
    def positive_tail(self) -> bool:
        """Whether psi(a) > 0 for all sufficiently large a (family property)."""
        return self.kind in ("exponential", "gamma", "lognormal")

    def _segment(self, a):
        idx = np.clip(np.searchsorted(self._a, a, side="right") - 1, 0, len(self._a) - 2)
        d = a - self._a[idx]
        width = self._a[idx + 1] - self._a[idx]
        slope = (self._psi[idx + 1] - self._psi[idx]) / width
        return idx, d, slope

    def pdf(self, a):
        aa = np.asarray(a, dtype=float)
        if self.kind == "tabulated":
            out = np.interp(aa, self._a, self._psi, left=0.0, right=0.0)
        else:
            out = self._dist.pdf(aa)
        return _scalar_or_array(a, out)

    def survival(self, a):
        """H(a) = P(T_A > a)."""
        aa = np.asarray(a, dtype=float)
        if np.any(aa < 0):
            raise NegativeAge("age must be nonnegative")
        if self.kind == "tabulated":
            inside = (aa >= self._a[0]) & (aa < self._a[-1])
            idx, d, slope = self._segment(aa)
            seg = self._sf_k[idx] - (self._psi[idx] * d + 0.5 * slope * d * d)
            out = np.where(aa < self._a[0], 1.0, np.where(inside, np.maximum(seg, 0.0), 0.0))
        else:
            out = self._dist.sf(aa)
        return _scalar_or_array(a, out)

    def cdf(self, a):
        return _scalar_or_array(a, 1.0 - np.asarray(self.survival(a)))

    def hazard_rate(self, a):
        """rho(a) = psi(a) / H(a); raises once survival is exhausted."""
        sf = np.asarray(self.survival(a))
        if np.any(sf <= HAZARD_FLOOR):
            raise SurvivalExhausted("survival below %g at requested age" % HAZARD_FLOOR)
        return _scalar_or_array(a, np.asarray(self.pdf(a)) / sf)

    def laplace(self, lam: float) -> float:
        """Integral of psi(a) exp(-lam a) over [0, inf)."""
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if lam == 0:
            return 1.0
        if self.kind == "exponential":
            p = self.params[0]
            return p / (p + lam)
        if self.kind == "gamma":
            shape, rate = self.params
            return (rate / (rate + lam)) ** shape
        if self.kind == "uniform":
            lo, hi = self.params
            w = lam * (hi - lo)
            return float(math.exp(-lam * lo) * -math.expm1(-w) / w)
        if self.kind == "tabulated":
            a, psi = self._a, self._psi
            width = np.diff(a)
            slope = np.diff(psi) / width
            x = lam * width
            seg = psi[:-1] * (-np.expm1(-x)) / lam + slope * _one_minus_exp_times(x) / lam**2
            return float(np.sum(np.exp(-lam * a[:-1]) * seg))
        # finite range: the mass beyond isf(1e-18) is below double precision
        upper = float(self._dist.isf(1e-18))
        val, _ = integrate.quad(lambda t: self._dist.pdf(t) * math.exp(-lam * t), 0, upper,
                                points=[float(self._dist.median())], limit=400,
                                epsabs=1e-14, epsrel=1e-12)
        return val

    def mean(self) -> float:
        """E(T_A) = integral of the survival function; ``inf`` if it diverges.

        Tabulated densities always have a finite mean on their truncated
        support; they are reported as ``inf`` when the survival integral
        keeps growing at a non-geometric rate across the last octaves of
        the support, the numerical signature of a divergent tail.
        """
        if self.kind != "tabulated":
            return float(self._dist.mean())
        a, psi = self._a, self._psi
        width = np.diff(a)
        slope = np.diff(psi) / width
        m = a[:-1] * (psi[:-1] * width + slope * width**2 / 2) + psi[:-1] * width**2 / 2 \
            + slope * width**3 / 3
        total = float(m.sum())
        upper = a[-1]
        if upper > 64 * max(a[1] - a[0], 1e-12):
            cuts = upper / np.array([16.0, 8.0, 4.0, 2.0])
            partial = [self._survival_integral(c) for c in cuts]
            inc = np.diff(partial)
            if inc[0] > 0 and inc[-1] >= 0.7 * inc[-2] and inc[-1] > 1e-3 * total:
                return math.inf
        return total

    def _survival_integral(self, upper: float) -> float:
        grid = self._a[self._a < upper]
        pts = np.concatenate([grid, [upper]])
        return float(integrate.trapezoid(self.survival(pts), pts)) if len(pts) > 1 else 0.0

    # -- sampling --------------------------------------------------------

    def quantile(self, u):
        """Inverse CDF F^{-1}(u)."""
        ua = np.asarray(u, dtype=float)
        if self.kind == "tabulated":
            idx = np.clip(np.searchsorted(self._cdf_k, ua, side="right") - 1, 0, len(self._a) - 2)
            r = ua - self._cdf_k[idx]
            width = self._a[idx + 1] - self._a[idx]
            slope = (self._psi[idx + 1] - self._psi[idx]) / width
            p0 = self._psi[idx]
            disc = np.sqrt(np.maximum(p0 * p0 + 2 * slope * r, 0.0))
            den = p0 + disc
            d = np.where(den > 0, 2 * r / np.where(den > 0, den, 1.0), 0.0)
            out = self._a[idx] + np.clip(d, 0.0, width)
        elif self.kind == "exponential":
            out = -np.log1p(-ua) / self.params[0]
        else:
            out = self._dist.ppf(ua)
        return _scalar_or_array(u, out)

    def inverse_survival(self, v):
        """H^{-1}(v): the age at which survival drops to ``v``."""
        va = np.asarray(v, dtype=float)
        if self.kind == "exponential":
            out = -np.log(va) / self.params[0]
        elif self.kind == "tabulated":
            out = np.asarray(self.quantile(1.0 - va))
        else:
            out = self._dist.isf(va)
        return _scalar_or_array(v, out)

    def sample(self, stream, size=None):
        """Draw T_A by inverse CDF from ``stream`` (anything with ``random``)."""
        return self.quantile(stream.random(size))

    def residual_given_age(self, age, u):
        """Remaining phase-A time for a cell already of ``age``.

        Uses T = H^{-1}((1 - u) H(age)), which reduces to F^{-1}(u) at age 0.
        """
        age = np.asarray(age, dtype=float)
        sf = np.asarray(self.survival(age))
        v = (1.0 - np.asarray(u, dtype=float)) * sf
        total = np.asarray(self.inverse_survival(np.maximum(v, 1e-300)))
        rest = np.maximum(total - age, 0.0)
        # survival exhausted: leave phase A immediately
        rest = np.where(sf <= HAZARD_FLOOR, 0.0, rest)
        return _scalar_or_array(u, rest)

    def generation_time_density(self, T_B: float, t):
        """Density of T_A + T_B."""
        ta = np.asarray(t, dtype=float)
        if np.any(ta < 0):
            raise NegativeAge("time must be nonnegative")
        shifted = ta - T_B
        out = np.where(shifted >= 0, np.asarray(self.pdf(np.maximum(shifted, 0.0))), 0.0)
        return _scalar_or_array(t, out)

    def generation_time_cdf(self, T_B: float, t):
        ta = np.asarray(t, dtype=float)
        shifted = ta - T_B
        out = np.where(shifted >= 0, np.asarray(self.cdf(np.maximum(shifted, 0.0))), 0.0)
        return _scalar_or_array(t, out)

    # -- binned integrals used by the grid operators ----------------------

    def binned_laplace(self, edges, lam: float) -> np.ndarray:
        """Integrals of psi(a) exp(-lam a) over consecutive bins.

        ``edges`` is increasing; the last entry may be ``inf``.
        """
        edges = np.asarray(edges, dtype=float)
        lo, hi = edges[:-1], edges[1:]
        if lam == 0:
            return np.asarray(self.survival(lo)) - np.asarray(self.survival(np.minimum(hi, 1e300)))
        if self.kind in ("exponential", "gamma"):
            shape, rate = (1.0, self.params[0]) if self.kind == "exponential" else self.params
            tilted = stats.gamma(a=shape, scale=1.0 / (rate + lam))
            scale = (rate / (rate + lam)) ** shape
            return scale * (tilted.sf(lo) - tilted.sf(hi))
        if self.kind == "uniform":
            a0, a1 = self.params
            l2, h2 = np.clip(lo, a0, a1), np.clip(hi, a0, a1)
            return (np.exp(-lam * l2) - np.exp(-lam * h2)) / (lam * (a1 - a0))
        finite_hi = np.where(np.isfinite(hi), hi, lo)
        mid = 0.5 * (lo + finite_hi)
        half = 0.5 * (finite_hi - lo)
        nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = np.asarray(self.pdf(nodes)) * np.exp(-lam * nodes)
        out = (vals * _GL_WEIGHTS[None, :]).sum(axis=1) * half
        if not np.isfinite(hi[-1]):
            tail, _ = integrate.quad(lambda t: float(self.pdf(t)) * math.exp(-lam * t), lo[-1],
                                     math.inf, limit=200)
            out[-1] = tail
        return np.maximum(out, 0.0)

    def to_config(self) -> dict:
        names = {"exponential": ("p",), "gamma": ("shape", "rate"),
                 "lognormal": ("mu", "sigma"), "uniform": ("a_lo", "a_hi")}
        if self.kind == "tabulated":
            return {"kind": "tabulated", "a": self._a.tolist(), "psi": self._psi.tolist()}
        return {"kind": self.kind, **dict(zip(names[self.kind], self.params))}
