"""Birth-size operator P, its fixed point and the stationary density."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .boundary import ModelOperators
from .errors import NoConvergence, PreconditionViolated
from .grid import BoundaryDensity, StateDensity, boundary_bump, boundary_l1, halve_size_pushforward


def second_boundary(ops: ModelOperators, f1: np.ndarray) -> np.ndarray:
    """Phase-B entry density produced by newborns with label density ``f1``.

    Each newborn leaves phase A after a random time, so its label is spread
    by the exit weights; mass is kept up to the s_max truncation.
    """
    return np.convolve(np.asarray(f1, dtype=float), ops.exit_weights)[: ops.grid.ns]


def apply_p(ops: ModelOperators, f: np.ndarray) -> np.ndarray:
    """Birth-size density of the daughter given the mother's birth density.

    Works in s = Q(x) coordinates on the label cells: spread by the phase-A
    exit law, advance by T_B, then halve the size.  This is the probability
    kernel of one generation and does not depend on the variant.
    """
    g = ops.grid
    b2 = second_boundary(ops, f)
    nb = g.nb
    if nb == 0:
        return halve_size_pushforward(g, b2)
    moved = np.zeros(g.ns)
    moved[nb - 1:] = b2[: g.ns - nb + 1]
    return halve_size_pushforward(g, moved, ops.division_positions)


def label_moments(ops: ModelOperators, b: np.ndarray) -> tuple[float, float]:
    c = ops.grid.labels
    tot = b.sum()
    mean = float((b * c).sum() / tot)
    return mean, float((b * (c - mean) ** 2).sum() / tot)


def default_initial(ops: ModelOperators) -> np.ndarray:
    """Unit-mass Gaussian bump at the middle of the s range."""
    g = ops.grid
    width = g.s_max - g.s_min
    return boundary_bump(g, g.s_min + 0.5 * width, 0.05 * width)


@dataclass
class FixedPointResult:
    density: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)
    moments: list = field(default_factory=list)


def dispersion_diagnostic(moments) -> dict:
    """Classify the label trajectory of the iterates.

    Linear growth of the variance (positive slope, R^2 >= 0.9) is reported
    as dispersive, the signature of a missing steady state.
    """
    means = [m[0] for m in moments]
    variances = [m[1] for m in moments]
    diag = {"mean": means, "variance": variances}
    if len(variances) >= 3:
        fit = stats.linregress(np.arange(len(variances)), variances)
        diag["variance_slope"] = float(fit.slope)
        diag["variance_r_squared"] = float(fit.rvalue**2)
        dispersive = fit.slope > 0 and fit.rvalue**2 >= 0.9
    else:
        dispersive = False
    diag["classification"] = "dispersive" if dispersive else "slow_mixing"
    return diag


def find_fixed_point(ops: ModelOperators, f0=None, tol: float = 1e-10,
                     max_iter: int = 500) -> FixedPointResult:
    """Power iteration f <- P f / ||P f|| until ||P f - f|| <= tol."""
    g = ops.grid
    f = default_initial(ops) if f0 is None else np.asarray(f0, dtype=float)
    mass = boundary_l1(g, f)
    if mass <= 0:
        raise ValueError("initial density has zero mass")
    f = f / mass
    history = []
    moments = [label_moments(ops, f)]
    for it in range(max_iter + 1):
        pf = apply_p(ops, f)
        res = boundary_l1(g, pf - f)
        history.append(res)
        if res <= tol:
            return FixedPointResult(f, res, it, history, moments)
        if it == max_iter:
            break
        m = boundary_l1(g, pf)
        if m <= 0:
            break
        f = pf / m
        moments.append(label_moments(ops, f))
    diag = dispersion_diagnostic(moments)
    diag["residuals"] = history
    # mass P pushes out of the s window bounds the reachable residual
    loss = 1.0 - boundary_l1(g, apply_p(ops, f))
    diag["truncation_loss"] = loss
    stalled = len(history) >= 3 and abs(history[-1] - history[-3]) <= 1e-6 * history[-1]
    if diag["classification"] != "dispersive" and stalled and history[-1] <= 2.0 * loss:
        diag["classification"] = "truncation_limited"
    raise NoConvergence("no fixed point within %d iterations (residual %.3g, %s)"
                        % (max_iter, history[-1], diag["classification"]), diag)


def build_steady_density(ops: ModelOperators, f1: np.ndarray, tol: float | None = None,
                         normalize: bool = False) -> StateDensity:
    """Stationary density generated by the birth density ``f1``.

    Phase A carries the survival-weighted translate of ``f1`` along the
    characteristics, phase B the translate of :func:`second_boundary`.
    If ``tol`` is given, ``f1`` must be a fixed point of P to that accuracy.
    """
    g = ops.grid
    f1 = np.asarray(f1, dtype=float)
    if tol is not None:
        res = boundary_l1(g, apply_p(ops, f1) - f1)
        if res > tol * max(1.0, boundary_l1(g, f1)):
            raise PreconditionViolated("birth density is not a fixed point (residual %.3g)" % res)
    if not math.isfinite(ops.duration.mean()):
        raise PreconditionViolated("phase-A survival is not integrable")
    b2 = second_boundary(ops, f1)
    S = ops.survival_nodes
    out1 = np.zeros((g.na, g.ns))
    out2 = np.zeros((g.nb, g.ns))
    for i in range(g.na):
        out1[i, i:] = S[i] * f1[: g.ns - i]
    for i in range(g.nb):
        out2[i, i:] = b2[: g.ns - i]
    f = StateDensity(g, out1, out2)
    if normalize:
        m = f.l1_norm()
        if m > 0:
            f.f1 /= m
            f.f2 /= m
    return f


def boundary_of(ops: ModelOperators, f1: np.ndarray) -> BoundaryDensity:
    return BoundaryDensity(ops.grid, f1, second_boundary(ops, f1))


def verify_steady(ops: ModelOperators, f_star: StateDensity, lambdas=(0.5, 1.0, 2.0)) -> dict:
    """Residuals certifying that ``f_star`` is stationary.

    ``generator``: ||A f|| with the independent upwind generator and trace
    Psi f; ``coupling``: ||Psi0 f - Psi f||; ``subsolution``: largest excess
    of Psi Psi(lam) b over b for b = Psi f; ``invariance``: ||Psi Psi(0) b - b||.
    """
    b = ops.apply_psi(f_star)
    report = {
        "generator": ops.generator_residual(f_star, 0.0, None, b),
        "coupling": (ops.apply_psi0(f_star) - b).l1_norm(),
        "invariance": (ops.apply_psi_psi_lambda(b, 0.0) - b).l1_norm(),
        "subsolution": {},
    }
    for lam in lambdas:
        lam = float(lam)
        if lam <= ops.omega:
            continue
        diff = ops.apply_psi_psi_lambda(b, lam) - b
        excess = max(float(diff.b1.max(initial=0.0)), float(diff.b2.max(initial=0.0)), 0.0)
        report["subsolution"][str(lam)] = excess
    report["mass"] = f_star.l1_norm()
    return report


def existence_report(ops: ModelOperators) -> dict:
    """Compare E(T_A) with Q(lambda(x)) - Q(x) on the top of the size range."""
    growth = ops.growth
    g = ops.grid
    mean = ops.duration.mean()
    report = {"mean_duration": mean if math.isfinite(mean) else "inf",
              "growth": growth.kind, "notes": []}
    q0 = growth.q_at_zero
    if not math.isfinite(q0):
        report["verdict"] = "inconclusive"
        report["notes"].append("Q(0) = -inf: the comparison needs a finite Q(0); for "
                               "exponential growth the operator P is known to have no "
                               "steady state")
        return report
    s = np.linspace(g.s_min + 0.75 * (g.s_max - g.s_min), g.s_max, 257)
    x = np.asarray(growth.q_inverse(s))
    x = x[x > 0]
    lam_x = np.asarray(growth.lambda_cut(g.T_B, x))
    q_lam = np.where(lam_x > 0, np.asarray(growth.q(np.where(lam_x > 0, lam_x, 1.0))), q0)
    gap = q_lam - np.asarray(growth.q(x))
    lo, hi = float(gap.min()), float(gap.max())
    report["tail_gap_min"] = lo
    report["tail_gap_max"] = hi
    if math.isfinite(mean) and mean < lo:
        report["verdict"] = "exists_unique" if ops.duration.positive_tail else "exists"
    elif mean > hi:
        report["verdict"] = "not_exists"
    else:
        report["verdict"] = "inconclusive"
    if growth.kind == "constant":
        report["notes"].append("constant growth: the existence condition holds if and "
                               "only if E(T_A) is finite")
    return report
