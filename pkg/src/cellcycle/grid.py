"""Gridded densities in characteristic coordinates (a, s) with s = Q(x).

Interior cell (i, j) of a :class:`CharGrid` has its node at age
``a_i = (i + 1/2) h`` and ``s_j = s_min + (j + 1) h``.  Along the flow both
coordinates advance together, so the label ``s - a`` is invariant; the node
of cell (i, j) carries the label ``c_{j-i}`` where ``c_k = s_min + (k + 1/2) h``
are the label-cell centres.  Boundary densities live on the label cells.

Values are stored as ``f~ = g(x) f`` so that a density integrates to
``sum(f~) h^2`` and a boundary density to ``sum(b~) h``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import GridMismatch, OutOfRange
from .growth import GrowthModel


@dataclass(frozen=True)
class CharGrid:
    """Uniform grid in (age, s) with a common spacing ``h``.

    ``h`` is adjusted so that ``T_B / h`` is an integer; the requested value
    is kept in ``h_requested``.
    """

    growth: GrowthModel
    T_B: float
    h: float
    a_max: float
    s_min: float
    s_max: float
    h_requested: float = field(default=float("nan"), compare=False)

    @classmethod
    def build(cls, growth: GrowthModel, T_B: float, h: float, a_max: float,
              s_min: float, s_max: float) -> "CharGrid":
        if h <= 0 or T_B < 0 or a_max <= 0 or s_max <= s_min:
            raise ValueError("invalid grid extents")
        if T_B > 0:
            h_eff = T_B / max(1, round(T_B / h))
        else:
            h_eff = float(h)
        na = max(1, round(a_max / h_eff))
        ns = max(2, round((s_max - s_min) / h_eff))
        q0 = growth.q_at_zero
        if math.isfinite(q0) and s_min < q0 - 1e-12 * max(1.0, abs(q0)):
            raise OutOfRange("s_min lies below Q(0) = %g" % q0)
        return cls(growth, float(T_B), h_eff, na * h_eff, float(s_min), s_min + ns * h_eff,
                   float(h))

    @property
    def na(self) -> int:
        return int(round(self.a_max / self.h))

    @property
    def ns(self) -> int:
        return int(round((self.s_max - self.s_min) / self.h))

    @property
    def nb(self) -> int:
        return int(round(self.T_B / self.h))

    @property
    def ages(self) -> np.ndarray:
        return (np.arange(self.na) + 0.5) * self.h

    @property
    def s_nodes(self) -> np.ndarray:
        return self.s_min + (np.arange(self.ns) + 1.0) * self.h

    @property
    def labels(self) -> np.ndarray:
        return self.s_min + (np.arange(self.ns) + 0.5) * self.h

    def label_at(self, k) -> np.ndarray:
        return self.s_min + (np.asarray(k, dtype=float) + 0.5) * self.h

    def active(self, rows: int) -> np.ndarray:
        """Cells whose label lies inside the window (j >= i)."""
        return np.arange(self.ns)[None, :] >= np.arange(rows)[:, None]

    def same_as(self, other: "CharGrid") -> bool:
        return (self.h == other.h and self.na == other.na and self.ns == other.ns
                and self.nb == other.nb and self.s_min == other.s_min)

    def check_same(self, other: "CharGrid"):
        if not self.same_as(other):
            raise GridMismatch("densities live on different grids")

    def describe(self) -> dict:
        return {"h": self.h, "h_requested": self.h_requested, "a_max": self.a_max,
                "s_min": self.s_min, "s_max": self.s_max, "T_B": self.T_B,
                "na": self.na, "ns": self.ns, "nb": self.nb}


def _check_nonneg(name, arr, allow_negative):
    if not allow_negative and arr.size and arr.min() < 0:
        raise ValueError("%s has negative entries" % name)


@dataclass
class StateDensity:
    """Pair (f1, f2) of phase-A and phase-B densities on a grid.

    ``f1`` has shape (na, ns) and ``f2`` has shape (nb, ns).  Entries with
    j < i lie outside the label window and are kept at zero.
    """

    grid: CharGrid
    f1: np.ndarray
    f2: np.ndarray
    allow_negative: bool = False

    def __post_init__(self):
        g = self.grid
        self.f1 = np.asarray(self.f1, dtype=float)
        self.f2 = np.asarray(self.f2, dtype=float)
        if self.f1.shape != (g.na, g.ns) or self.f2.shape != (g.nb, g.ns):
            raise GridMismatch("array shapes do not match the grid")
        _check_nonneg("f1", self.f1, self.allow_negative)
        _check_nonneg("f2", self.f2, self.allow_negative)

    @classmethod
    def zeros(cls, grid: CharGrid) -> "StateDensity":
        return cls(grid, np.zeros((grid.na, grid.ns)), np.zeros((grid.nb, grid.ns)))

    def copy(self) -> "StateDensity":
        return StateDensity(self.grid, self.f1.copy(), self.f2.copy(), self.allow_negative)

    def l1_norm(self) -> float:
        h2 = self.grid.h**2
        return float((np.abs(self.f1).sum() + np.abs(self.f2).sum()) * h2)

    def phase_masses(self) -> tuple[float, float]:
        h2 = self.grid.h**2
        return float(self.f1.sum() * h2), float(self.f2.sum() * h2)

    def __sub__(self, other: "StateDensity") -> "StateDensity":
        self.grid.check_same(other.grid)
        return StateDensity(self.grid, self.f1 - other.f1, self.f2 - other.f2, True)

    def __add__(self, other: "StateDensity") -> "StateDensity":
        self.grid.check_same(other.grid)
        neg = self.allow_negative or other.allow_negative
        return StateDensity(self.grid, self.f1 + other.f1, self.f2 + other.f2, neg)

    def scaled(self, c: float) -> "StateDensity":
        return StateDensity(self.grid, self.f1 * c, self.f2 * c, self.allow_negative or c < 0)

    def size_marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Densities in s of each phase (integrated over age)."""
        h = self.grid.h
        return self.f1.sum(axis=0) * h, self.f2.sum(axis=0) * h

    def age_marginals(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.grid.h
        return self.f1.sum(axis=1) * h, self.f2.sum(axis=1) * h

    def label_moments(self) -> tuple[float, float]:
        """Mean and variance of the label s - a over the whole density."""
        g = self.grid
        lab1 = g.s_nodes[None, :] - g.ages[:, None]
        lab2 = lab1[: g.nb]
        w = np.concatenate([self.f1.ravel(), self.f2.ravel()])
        x = np.concatenate([lab1.ravel(), lab2.ravel()])
        tot = w.sum()
        if tot <= 0:
            return float("nan"), float("nan")
        mean = float((w * x).sum() / tot)
        return mean, float((w * (x - mean) ** 2).sum() / tot)


@dataclass
class BoundaryDensity:
    """Boundary pair (b1, b2) on the label cells, in s units."""

    grid: CharGrid
    b1: np.ndarray
    b2: np.ndarray
    allow_negative: bool = False

    def __post_init__(self):
        self.b1 = np.asarray(self.b1, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        n = self.grid.ns
        if self.b1.shape != (n,) or self.b2.shape != (n,):
            raise GridMismatch("boundary arrays must have length ns")
        _check_nonneg("b1", self.b1, self.allow_negative)
        _check_nonneg("b2", self.b2, self.allow_negative)

    @classmethod
    def zeros(cls, grid: CharGrid) -> "BoundaryDensity":
        return cls(grid, np.zeros(grid.ns), np.zeros(grid.ns))

    def l1_norm(self) -> float:
        return float((np.abs(self.b1).sum() + np.abs(self.b2).sum()) * self.grid.h)

    def __sub__(self, other: "BoundaryDensity") -> "BoundaryDensity":
        return BoundaryDensity(self.grid, self.b1 - other.b1, self.b2 - other.b2, True)

    def __add__(self, other: "BoundaryDensity") -> "BoundaryDensity":
        neg = self.allow_negative or other.allow_negative
        return BoundaryDensity(self.grid, self.b1 + other.b1, self.b2 + other.b2, neg)

    def scaled(self, c: float) -> "BoundaryDensity":
        return BoundaryDensity(self.grid, self.b1 * c, self.b2 * c, self.allow_negative or c < 0)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.b1, self.b2])


def l1_norm(f) -> float:
    """L1 norm of a :class:`StateDensity` or :class:`BoundaryDensity`."""
    return f.l1_norm()


def boundary_l1(grid: CharGrid, b: np.ndarray) -> float:
    return float(np.abs(b).sum() * grid.h)


# -- re-gridding ------------------------------------------------------------

def deposit_weights(grid: CharGrid, positions):
    """Cloud-in-cell weights of positions on the label cells.

    Returns ``(i0, w0, i1, w1, keep)``; positions outside [s_min, s_max]
    have ``keep`` False.  Positions between ``s_min`` and the first centre
    go wholly to the first cell, likewise at the top.
    """
    n = grid.ns
    pos = np.asarray(positions, dtype=float).ravel()
    keep = (pos >= grid.s_min) & (pos <= grid.s_max)
    u = np.clip((np.where(keep, pos, grid.s_min) - grid.s_min) / grid.h - 0.5, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
    frac = u - i0
    return i0, 1.0 - frac, i0 + 1, frac, keep


def deposit(grid: CharGrid, positions, values):
    """Conservative linear (cloud-in-cell) deposit onto the label cells.

    ``values`` are densities per unit s attached to positions.  Returns
    ``(out, lost_low, lost_high)`` with the lost amounts in the same units
    (multiply by ``h`` for mass).
    """
    n = grid.ns
    pos = np.asarray(positions, dtype=float).ravel()
    val = np.asarray(values, dtype=float).ravel()
    i0, w0, i1, w1, keep = deposit_weights(grid, pos)
    v = val[keep]
    out = np.bincount(i0[keep], weights=v * w0[keep], minlength=n)
    out += np.bincount(i1[keep], weights=v * w1[keep], minlength=n)
    lost_low = float(val[pos < grid.s_min].sum())
    lost_high = float(val[pos > grid.s_max].sum())
    return out, lost_low, lost_high


def halve_size_pushforward(grid: CharGrid, b, positions=None, return_lost: bool = False):
    """Push a boundary density forward under the division x -> x/2.

    ``b`` holds densities (per unit s) at ``positions`` (default: the label
    centres).  In s coordinates division is ``s -> Q(Q^-1(s)/2)``; the image
    is re-gridded with :func:`deposit`, which conserves mass.
    """
    b = np.asarray(b, dtype=float)
    if positions is None:
        positions = grid.labels
    positions = np.asarray(positions, dtype=float)
    nz = b != 0
    out, lo, hi = deposit(grid, grid.growth.halve_s(positions[nz]), b[nz])
    if return_lost:
        return out, lo, hi
    return out


# -- physical coordinates -----------------------------------------------------

def to_physical(f: StateDensity, a, x, phase: int = 1):
    """Physical density at age ``a`` and size ``x``.

    Bilinear interpolation of the stored values at (a, Q(x)) divided by g(x).
    """
    g = f.grid
    arr = f.f1 if phase == 1 else f.f2
    ages = g.ages[: arr.shape[0]]
    aa = np.asarray(a, dtype=float)
    xa = np.asarray(x, dtype=float)
    s = np.asarray(g.growth.q(xa))
    amax = g.a_max if phase == 1 else g.T_B
    if np.any(aa < 0) or np.any(aa > amax) or np.any(s < g.s_min) or np.any(s > g.s_max):
        raise OutOfRange("(a, x) outside the grid")
    interp = RegularGridInterpolator((ages, g.s_nodes), arr, method="linear",
                                     bounds_error=False, fill_value=None)
    aq = np.clip(aa, ages[0], ages[-1])
    sq = np.clip(s, g.s_nodes[0], g.s_nodes[-1])
    pts = np.stack(np.broadcast_arrays(aq, sq), axis=-1)
    vals = interp(pts) / np.asarray(g.growth.g(xa))
    if np.ndim(vals) == 0:
        return float(vals)
    return vals


def from_physical(grid: CharGrid, p1, p2=None) -> StateDensity:
    """Sample physical densities ``p(a, x)`` at the nodes, times g(x)."""
    a = grid.ages[:, None]
    s = grid.s_nodes[None, :]
    x = np.asarray(grid.growth.q_inverse(np.broadcast_to(s, (1, grid.ns))))
    gx = np.asarray(grid.growth.g(x))
    mask = grid.active(grid.na)
    f1 = np.where(mask, np.asarray(p1(a, x)) * gx, 0.0) if p1 is not None else np.zeros(mask.shape)
    f1 = np.broadcast_to(f1, (grid.na, grid.ns)).copy()
    if p2 is not None and grid.nb:
        f2 = np.where(mask[: grid.nb], np.asarray(p2(a[: grid.nb], x)) * gx, 0.0)
        f2 = np.broadcast_to(f2, (grid.nb, grid.ns)).copy()
    else:
        f2 = np.zeros((grid.nb, grid.ns))
    return StateDensity(grid, f1, f2)


def gaussian_bump(grid: CharGrid, a0: float, s0: float, sigma: float, phase: int = 1,
                  mass: float = 1.0) -> StateDensity:
    """Unit-mass (by default) Gaussian bump in (a, s) for one phase."""
    a = grid.ages[:, None]
    s = grid.s_nodes[None, :]
    rows = grid.na if phase == 1 else grid.nb
    bump = np.exp(-((a[:rows] - a0) ** 2 + (s - s0) ** 2) / (2 * sigma**2))
    bump = np.where(grid.active(rows), bump, 0.0)
    total = bump.sum() * grid.h**2
    if total <= 0:
        raise ValueError("bump lies outside the grid")
    bump *= mass / total
    zero1 = np.zeros((grid.na, grid.ns))
    zero2 = np.zeros((grid.nb, grid.ns))
    if phase == 1:
        return StateDensity(grid, bump, zero2)
    return StateDensity(grid, zero1, bump)


def boundary_bump(grid: CharGrid, s0: float, sigma: float, mass: float = 1.0,
                  component: int = 1) -> np.ndarray:
    """Gaussian boundary profile on the label cells with the given mass."""
    c = grid.labels
    b = np.exp(-((c - s0) ** 2) / (2 * sigma**2))
    total = b.sum() * grid.h
    if total <= 0:
        raise ValueError("bump lies outside the grid")
    return b * (mass / total)


# -- CSV ---------------------------------------------------------------------

STATE_HEADER = ["a", "s", "x", "f1", "f2"]


def write_state_csv(f: StateDensity, path) -> None:
    """Write nonzero cells as rows (a, s, x, f1, f2)."""
    g = f.grid
    f2full = np.zeros_like(f.f1)
    f2full[: g.nb] = f.f2
    ii, jj = np.nonzero((f.f1 != 0) | (f2full != 0))
    a = g.ages[ii]
    s = g.s_nodes[jj]
    x = np.asarray(g.growth.q_inverse(s)) if len(s) else s
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATE_HEADER)
        for row in zip(a, s, x, f.f1[ii, jj], f2full[ii, jj]):
            w.writerow(["%.17g" % v for v in row])


def read_state_csv(path, grid: CharGrid) -> StateDensity:
    """Read rows (a, s, x, f1, f2) onto ``grid`` (nodes must match)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != STATE_HEADER:
            raise ValueError("expected header %s" % ",".join(STATE_HEADER))
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
    f = StateDensity.zeros(grid)
    if rows.size == 0:
        return f
    i = np.rint(rows[:, 0] / grid.h - 0.5).astype(np.int64)
    j = np.rint((rows[:, 1] - grid.s_min) / grid.h - 1.0).astype(np.int64)
    if (np.any(i < 0) or np.any(i >= grid.na) or np.any(j < 0) or np.any(j >= grid.ns)
            or np.any(np.abs(grid.ages[np.clip(i, 0, grid.na - 1)] - rows[:, 0]) > 1e-6 * grid.h)):
        raise GridMismatch("CSV rows do not sit on the grid nodes")
    f.f1[i, j] = rows[:, 3]
    b = i < grid.nb
    if np.any(rows[~b, 4] != 0):
        raise GridMismatch("phase-B values beyond age T_B")
    f.f2[i[b], j[b]] = rows[b, 4]
    f.__post_init__()
    return f
