"""Boundary operators of the two-phase model on a characteristic grid.

The discrete operators are built so that they agree exactly with the
transport scheme: a phase-A cell of age index i survives one step with
probability ``r_i = H(a_{i+1}) / H(a_i)`` and otherwise moves into phase B,
and phase-B cells divide when they cross age ``T_B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .duration import HAZARD_FLOOR, DurationModel
from .errors import NoConvergence, PreconditionViolated
from .grid import (BoundaryDensity, CharGrid, StateDensity, deposit_weights,
                   halve_size_pushforward)
from .growth import LN2

VARIANTS = ("single_line", "bell_population")


def spread_diagonal(b: np.ndarray, rows: int) -> np.ndarray:
    """Matrix M with ``M[i, j] = b[j - i]`` for j >= i and 0 otherwise."""
    n = len(b)
    padded = np.concatenate([np.zeros(rows - 1), b])
    view = sliding_window_view(padded, n)[: rows][::-1]
    return view


def neumann_solve(apply, y, q: float, tol: float, norm):
    """Sum of the Neumann series ``sum_k K^k y`` for a contraction K.

    Stops once a term has norm below ``tol (1 - q)``, which bounds the
    neglected tail by ``tol``.  Returns ``(x, iterations)``.
    """
    if not q < 1:
        raise PreconditionViolated("contraction bound %g is not below 1" % q)
    target = tol * (1.0 - q)
    if q <= 0:
        cap = 10
    else:
        cap = max(10, 10 * math.ceil(math.log(target) / math.log(q)))
    term = y
    total = y
    for it in range(cap + 1):
        if norm(term) < target:
            return total, it
        term = apply(term)
        total = total + term
    raise NoConvergence("Neumann series did not converge in %d terms" % cap,
                        {"cap": cap, "last_norm": norm(term)})


class _Pair(tuple):
    """Pair of arrays with elementwise addition."""

    def __add__(self, other):
        return _Pair((self[0] + other[0], self[1] + other[1]))


@dataclass(frozen=True)
class ModelOperators:
    """Model data plus the grid-level boundary machinery.

    ``variant`` is ``single_line`` (one daughter followed, boundary factor 2
    in density) or ``bell_population`` (both daughters, factor 4).  In mass
    terms the division inflow is multiplied by 1 or 2.
    """

    grid: CharGrid
    duration: DurationModel
    variant: str = "single_line"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("variant must be one of %s" % (VARIANTS,))

    @property
    def growth(self):
        return self.grid.growth

    @property
    def T_B(self) -> float:
        return self.grid.T_B

    @property
    def mass_factor(self) -> float:
        return 1.0 if self.variant == "single_line" else 2.0

    @property
    def density_factor(self) -> float:
        return 2.0 * self.mass_factor

    @property
    def omega(self) -> float:
        if self.variant == "single_line":
            return 0.0
        return LN2 / self.T_B

    # -- cached per-grid tables ------------------------------------------

    @cached_property
    def survival_nodes(self) -> np.ndarray:
        """Survival to each age node as seen by the scheme (0 after cutoff)."""
        return np.concatenate([[self.survival_half], np.cumprod(self.step_survival)[:-1]
                               * self.survival_half])

    @cached_property
    def survival_half(self) -> float:
        return float(self.duration.survival(0.5 * self.grid.h))

    @cached_property
    def step_survival(self) -> np.ndarray:
        """r_i: probability of staying in phase A from node i to node i+1."""
        H = np.asarray(self.duration.survival(self.grid.ages), dtype=float)
        r = np.zeros_like(H)
        ok = H[:-1] > HAZARD_FLOOR
        r[:-1] = np.where(ok, H[1:] / np.where(ok, H[:-1], 1.0), 0.0)
        # forced transition on the last row and once survival is exhausted
        dead = np.cumsum(~np.concatenate([ok, [False]])) > 0
        r[dead] = 0.0
        return r

    @cached_property
    def step_exit(self) -> np.ndarray:
        return 1.0 - self.step_survival

    @cached_property
    def exit_weights(self) -> np.ndarray:
        """Probability of entering phase B with a label shift of m cells."""
        S = self.survival_nodes
        w = np.empty(len(S) + 1)
        w[0] = 1.0 - self.survival_half
        w[1:] = S * self.step_exit
        return w

    @cached_property
    def hazard_nodes(self) -> np.ndarray:
        ages = self.grid.ages
        H = np.asarray(self.duration.survival(ages))
        pdf = np.asarray(self.duration.pdf(ages))
        ok = (H > HAZARD_FLOOR) & (self.survival_nodes > 0)
        return np.where(ok, pdf / np.where(ok, H, 1.0), 0.0)

    @cached_property
    def division_positions(self) -> np.ndarray:
        """s positions c_1 .. c_ns at which the last phase-B row divides."""
        return self.grid.label_at(np.arange(1, self.grid.ns + 1))

    @cached_property
    def division_targets(self) -> np.ndarray:
        return np.asarray(self.growth.halve_s(self.division_positions))

    def laplace_weights(self, lam: float) -> np.ndarray:
        """Integrals of psi e^{-lam a} over the age bins of the exit shifts."""
        h = self.grid.h
        na = self.grid.na
        edges = np.concatenate([[0.0], (np.arange(na) + 0.5) * h, [np.inf]])
        return self.duration.binned_laplace(edges, lam)

    # -- traces -------------------------------------------------------------

    def apply_psi0(self, f: StateDensity) -> BoundaryDensity:
        """Age-zero trace of each phase (first node of the age axis)."""
        g = self.grid
        b2 = f.f2[0].copy() if g.nb else np.zeros(g.ns)
        return BoundaryDensity(g, f.f1[0].copy(), b2, f.allow_negative)

    def exit_trace(self, f: StateDensity) -> np.ndarray:
        """Phase-B density arriving at age T_B, attached to division_positions."""
        if self.grid.nb == 0:
            return np.zeros(self.grid.ns)
        return f.f2[-1].copy()

    def apply_psi(self, f: StateDensity) -> BoundaryDensity:
        """Boundary inflow produced by the interior density.

        Component 1 is the division inflow (age-T_B trace of phase B pushed
        through x -> x/2), component 2 the phase-A exit flux.
        """
        g = self.grid
        flux = self.step_exit @ f.f1
        b2 = np.zeros(g.ns)
        b2[1:] = flux[:-1]
        b2 += (1.0 / self.survival_half - 1.0) * f.f1[0]
        trace = self.exit_trace(f)
        b1 = self.mass_factor * halve_size_pushforward(g, trace, self.division_positions)
        return BoundaryDensity(g, b1, b2, f.allow_negative)

    # -- right inverse --------------------------------------------------------

    def apply_psi_lambda(self, b: BoundaryDensity, lam: float) -> StateDensity:
        """The lam-eigen solution of the interior equation with trace b."""
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        g = self.grid
        decay = np.exp(-lam * g.ages)
        c1 = decay * self.survival_nodes
        f1 = c1[:, None] * spread_diagonal(b.b1, g.na)
        nb = g.nb
        f2 = decay[:nb, None] * spread_diagonal(b.b2, nb) if nb else np.zeros((0, g.ns))
        return StateDensity(g, f1, f2, b.allow_negative)

    def apply_psi_psi_lambda(self, b: BoundaryDensity, lam: float) -> BoundaryDensity:
        """Composite Psi Psi(lam) from its direct kernel."""
        g = self.grid
        c1 = self._division_kernel(b.b2, math.exp(-lam * self.T_B))
        c2 = np.convolve(b.b1, self.laplace_weights(lam))[: g.ns]
        return BoundaryDensity(g, c1, c2, b.allow_negative)

    def apply_psi_psi_composed(self, b: BoundaryDensity, lam: float) -> BoundaryDensity:
        """Psi applied to Psi(lam) b, the two-step path."""
        return self.apply_psi(self.apply_psi_lambda(b, lam))

    def _division_source(self, b2: np.ndarray):
        """Phase-B boundary labels as (values, s positions at division)."""
        g = self.grid
        nb = g.nb
        if nb == 0:
            return b2, g.labels
        # label m divides at c_{m+nb}; the scheme drops m + nb > ns
        moved = np.zeros(g.ns)
        moved[nb - 1:] = b2[: g.ns - nb + 1]
        return moved, self.division_positions

    def _division_kernel(self, b2: np.ndarray, scale: float) -> np.ndarray:
        vals, pos = self._division_source(b2)
        return self.mass_factor * scale * halve_size_pushforward(self.grid, vals, pos)

    def psi_psi_matrix(self, lam: float) -> sparse.csc_matrix:
        """Assembled nonnegative kernel of Psi Psi(lam) acting on (b1, b2)."""
        g = self.grid
        n = g.ns
        W = self.laplace_weights(lam)
        # component 2 <- b1: lower-triangular Toeplitz with the weights W
        depth = min(len(W), n)
        counts = n - np.arange(depth)
        shift = np.repeat(np.arange(depth), counts)
        cols = np.concatenate([np.arange(c) for c in counts])
        rows = n + cols + shift
        vals = W[shift]
        # component 1 <- b2: conservative deposit of the halved positions
        _, pos = self._division_source(np.zeros(n))
        src = np.arange(n)
        if g.nb:
            src = np.arange(g.nb - 1, n) - (g.nb - 1)
            pos = pos[g.nb - 1:]
        i0, w0, i1, w1, keep = deposit_weights(g, self.growth.halve_s(pos))
        scale = self.mass_factor * math.exp(-lam * self.T_B)
        rows = np.concatenate([rows, i0[keep], i1[keep]])
        cols = np.concatenate([cols, n + src[keep], n + src[keep]])
        vals = np.concatenate([vals, scale * w0[keep], scale * w1[keep]])
        M = sparse.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))
        return M.tocsc()

    def grid_norm(self, lam: float) -> float:
        """Largest column sum of the assembled Psi Psi(lam) kernel."""
        M = self.psi_psi_matrix(lam)
        return float(np.asarray(abs(M).sum(axis=0)).max())

    def norm_bound_terms(self, lam: float) -> tuple[float, float]:
        """(division term, exit term) of the analytic contraction bound."""
        return self.mass_factor * math.exp(-lam * self.T_B), self.duration.laplace(lam)

    def norm_bound(self, lam: float) -> float:
        return max(self.norm_bound_terms(lam))

    def composed_weights(self, lam: float) -> tuple[np.ndarray, float]:
        """Kernel of the grid composition Psi o Psi(lam).

        Returns the exit convolution weights and the division scale; they
        differ from the direct kernel by O(h) because the grid samples the
        eigen solution at the age nodes.
        """
        ages = self.grid.ages
        w = np.empty(len(ages) + 1)
        w[0] = (1.0 - self.survival_half) * math.exp(-0.5 * lam * self.grid.h)
        w[1:] = self.step_exit * self.survival_nodes * np.exp(-lam * ages)
        scale = math.exp(-lam * ages[self.grid.nb - 1]) if self.grid.nb else 1.0
        return w, scale

    def solve_boundary(self, b: BoundaryDensity, lam: float, tol: float = 1e-12,
                       kernel: str = "direct", return_iterations: bool = False):
        """Solve (I - Psi Psi(lam)) x = b by the Neumann series.

        ``kernel`` selects the direct kernel or the grid composition
        Psi o Psi(lam); the latter makes the lifted resolvent satisfy the
        discrete boundary coupling exactly.
        """
        q = self.norm_bound(lam)
        if q >= 1:
            raise PreconditionViolated(
                "lambda = %g does not exceed omega = %g for the %s variant (bound %g)"
                % (lam, self.omega, self.variant, q))
        if kernel == "direct":
            W = self.laplace_weights(lam)
            scale = math.exp(-lam * self.T_B)
        elif kernel == "composed":
            W, scale = self.composed_weights(lam)
            q = max(q, self.mass_factor * scale, float(W.sum()))
            if q >= 1:
                raise PreconditionViolated("grid composition is not a contraction at "
                                           "lambda = %g; refine the grid" % lam)
        else:
            raise ValueError("kernel must be 'direct' or 'composed'")
        g = self.grid

        def apply(v):
            return (self._division_kernel(v[1], scale), np.convolve(v[0], W)[: g.ns])

        def norm(v):
            return float((np.abs(v[0]).sum() + np.abs(v[1]).sum()) * g.h)

        x, its = neumann_solve(lambda v: _Pair(apply(v)), _Pair((b.b1, b.b2)), q, tol, norm)
        out = BoundaryDensity(g, x[0], x[1], b.allow_negative)
        if return_iterations:
            return out, its
        return out

    # -- resolvents ---------------------------------------------------------

    def _resolvent_weights(self, lam: float) -> tuple[float, float]:
        h = self.grid.h
        w1 = 2.0 * math.sinh(0.5 * lam * h) / lam
        w0 = -math.expm1(-0.5 * lam * h) / lam
        return w0, w1

    def resolvent_a0(self, f: StateDensity, lam: float) -> StateDensity:
        """R(lam, A0) f: Laplace transform of the boundary-free evolution.

        Integrates along characteristics with e^{-lam t} integrated exactly
        over each age cell (product integration), so that
        ``lam * ||R f|| <= ||f||`` holds exactly for nonnegative f.
        """
        if lam <= 0:
            raise ValueError("lambda must be positive")
        w0, w1 = self._resolvent_weights(lam)
        e = math.exp(-lam * self.grid.h)
        kappa = np.concatenate([[0.0], e * self.step_survival[:-1]])
        u1 = self._row_recursion(f.f1, kappa, w0, w1)
        u2 = self._row_recursion(f.f2, np.full(len(f.f2), e), w0, w1)
        return StateDensity(self.grid, u1, u2, f.allow_negative)

    @staticmethod
    def _row_recursion(f, kappa, w0, w1):
        out = np.empty_like(f)
        acc = np.zeros(f.shape[1])
        for i in range(f.shape[0]):
            shifted = np.empty_like(acc)
            shifted[0] = 0.0
            shifted[1:] = acc[:-1]
            acc = f[i] + kappa[i] * shifted
            out[i] = w1 * acc - (w1 - w0) * f[i]
        return out

    def resolvent_a_psi(self, f: StateDensity, lam: float, tol: float = 1e-12) -> StateDensity:
        """R(lam, A_Psi) f = R0 f + Psi(lam) (I - Psi Psi(lam))^{-1} Psi R0 f."""
        if lam <= self.omega:
            raise PreconditionViolated("lambda must exceed omega = %g" % self.omega)
        r0 = self.resolvent_a0(f, lam)
        b = self.solve_boundary(self.apply_psi(r0), lam, tol, kernel="composed")
        lift = self.apply_psi_lambda(b, lam)
        r0.f1 += lift.f1
        r0.f2 += lift.f2
        del lift
        return r0

    # -- generator (independent upwind discretisation) -------------------------

    def generator_rows(self, u: np.ndarray, beta: np.ndarray, phase: int, start: int, stop: int):
        """Rows [start, stop) of the upwind generator applied to one phase."""
        h = self.grid.h
        rows = np.arange(start, stop)
        up = np.zeros((stop - start, u.shape[1]))
        inner = rows >= 1
        if np.any(inner):
            prev = u[rows[inner] - 1]
            up[inner, 1:] = prev[:, :-1]
        du = (u[start:stop] - up) / h
        if start == 0:
            du[0] = (u[0] - beta) / (0.5 * h)
        out = -du
        if phase == 1:
            out -= self.hazard_nodes[start:stop, None] * u[start:stop]
        return out

    def apply_generator(self, u: StateDensity, beta: BoundaryDensity) -> StateDensity:
        g = self.grid
        a1 = self.generator_rows(u.f1, beta.b1, 1, 0, g.na)
        a2 = self.generator_rows(u.f2, beta.b2, 2, 0, g.nb) if g.nb else np.zeros((0, g.ns))
        return StateDensity(g, a1, a2, True)

    def generator_residual(self, u: StateDensity, lam: float, f: StateDensity | None,
                           beta: BoundaryDensity, chunk: int = 256) -> float:
        """L1 norm of (lam - A) u - f with A the upwind generator.

        Evaluated in row blocks to keep memory flat on fine grids.
        """
        g = self.grid
        total = 0.0
        for phase, arr, b, rows in ((1, u.f1, beta.b1, g.na), (2, u.f2, beta.b2, g.nb)):
            src = None if f is None else (f.f1 if phase == 1 else f.f2)
            for start in range(0, rows, chunk):
                stop = min(rows, start + chunk)
                r = lam * arr[start:stop] - self.generator_rows(arr, b, phase, start, stop)
                if src is not None:
                    r -= src[start:stop]
                total += float(np.abs(r).sum())
        return total * g.h**2

    # -- hypothesis checks ----------------------------------------------------

    def test_boundary(self) -> BoundaryDensity:
        g = self.grid
        mid = g.s_min + 0.3 * (g.s_max - g.s_min)
        sig = 0.05 * (g.s_max - g.s_min)
        from .grid import boundary_bump
        return BoundaryDensity(g, boundary_bump(g, mid, sig), boundary_bump(g, mid + sig, sig))

    def test_density(self) -> StateDensity:
        from .grid import gaussian_bump
        g = self.grid
        a0 = min(1.0, 0.25 * g.a_max)
        s0 = g.s_min + a0 + 0.2 * (g.s_max - g.s_min)
        sig = min(0.25, 0.1 * a0)
        f = gaussian_bump(g, a0, s0, sig, phase=1, mass=0.5)
        if g.nb:
            f2 = gaussian_bump(g, 0.5 * g.T_B, s0, min(sig, 0.2 * g.T_B), phase=2, mass=0.5)
            f = f + f2
        return f

    def green_residual(self, f: StateDensity) -> float:
        """int A f - int Psi0 f + int rho f1 + int B+ f2 with A taking trace Psi0 f."""
        g = self.grid
        Af = self.apply_generator(f, self.apply_psi0(f))
        h2 = g.h**2
        total_a = (Af.f1.sum() + Af.f2.sum()) * h2
        psi0 = (f.f1[0].sum() + (f.f2[0].sum() if g.nb else 0.0)) * g.h
        hazard = float((self.hazard_nodes[:, None] * f.f1).sum() * h2)
        bplus = float(self.exit_trace(f).sum() * g.h)
        return float(total_a - psi0 + hazard + bplus)

    def check_hypotheses(self, lambdas, tol_factor: float = 5.0) -> dict:
        """Grid-level checks of the boundary-perturbation hypotheses."""
        g = self.grid
        h = g.h
        b = self.test_boundary()
        nb_ = b.l1_norm()
        f = self.test_density()
        nf = f.l1_norm()
        checks = []

        def add(name, lam, residual, limit):
            checks.append({"check": name, "lambda": lam, "residual": float(residual),
                           "limit": float(limit), "pass": bool(residual <= limit)})

        for lam in lambdas:
            lam = float(lam)
            u = self.apply_psi_lambda(b, lam)
            add("right_inverse_trace", lam, (self.apply_psi0(u) - b).l1_norm() / nb_,
                tol_factor * h)
            add("eigen_equation", lam, self.generator_residual(u, lam, None, b) / nb_,
                tol_factor * h)
            add("greiner_bound", lam, max(0.0, lam * u.l1_norm() / nb_ - 1.0), 1e-12)
            bound = self.norm_bound(lam)
            add("norm_bound_below_one", lam, bound, 1.0 - 1e-15)
            if lam > 0:
                r = self.resolvent_a0(f, lam)
                add("resolvent_positive", lam, max(0.0, -float(min(r.f1.min(), r.f2.min(initial=0)))),
                    0.0)
                add("resolvent_contraction", lam, max(0.0, lam * r.l1_norm() / nf - 1.0), 1e-12)
        add("green_identity", None, abs(self.green_residual(f)) / nf, tol_factor * h)
        return {"grid": g.describe(), "variant": self.variant, "checks": checks,
                "pass": all(c["pass"] for c in checks)}
