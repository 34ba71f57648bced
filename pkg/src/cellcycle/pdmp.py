"""Monte Carlo simulation of the piecewise deterministic cell-cycle process.

Between jumps a cell ages at unit speed and grows along the flow; in the
accumulated-time coordinate s = Q(x) growth is a unit-speed translation,
so ensembles are simulated in s.  Phase A lasts a random time T_A, phase B
lasts T_B and ends with division x -> x/2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import ModelOperators
from .errors import PreconditionViolated
from .grid import StateDensity
from .rng import uniforms

PHASE_A = "A"
PHASE_B = "B"
CHUNK = 16384


@dataclass(frozen=True)
class CellState:
    age: float
    size: float
    phase: str = PHASE_A
    clock: float = 0.0
    # remaining phase-A time, drawn lazily
    remaining: float | None = None

    def __post_init__(self):
        if self.age < 0 or self.size <= 0 or self.phase not in (PHASE_A, PHASE_B):
            raise ValueError("invalid cell state")


@dataclass(frozen=True)
class EventRecord:
    kind: str
    time: float
    size_at_event: float
    generation: int


def advance(ops: ModelOperators, c: CellState, stream, generation: int = 0):
    """Run one cell to its next jump; returns ``(new_state, event)``."""
    growth = ops.growth
    if c.phase == PHASE_A:
        tau = c.remaining
        if tau is None:
            tau = float(ops.duration.residual_given_age(c.age, stream.random()))
        x = float(growth.flow(tau, c.size))
        return (CellState(0.0, x, PHASE_B, c.clock + tau),
                EventRecord("phase_switch", c.clock + tau, x, generation))
    tau = ops.T_B - c.age
    x = float(growth.flow(tau, c.size))
    return (CellState(0.0, x * 0.5, PHASE_A, c.clock + tau),
            EventRecord("division", c.clock + tau, x, generation))


def simulate_lineage(ops: ModelOperators, initial: CellState, t_end: float, stream):
    """Follow one daughter per division until the clock passes ``t_end``.

    Returns ``(final_state, events)``; the final state is flowed to exactly
    ``t_end`` with any unfinished phase-A time kept in ``remaining``.
    """
    events = []
    c = initial
    gen = 0
    while True:
        if c.phase == PHASE_A and c.remaining is None:
            tau = float(ops.duration.residual_given_age(c.age, stream.random()))
            c = CellState(c.age, c.size, c.phase, c.clock, tau)
        wait = c.remaining if c.phase == PHASE_A else ops.T_B - c.age
        if c.clock + wait > t_end:
            dt = max(t_end - c.clock, 0.0)
            x = float(ops.growth.flow(dt, c.size))
            rem = None if c.phase == PHASE_B else c.remaining - dt
            return CellState(c.age + dt, x, c.phase, c.clock + dt, rem), events
        c, ev = advance(ops, c, stream, gen)
        events.append(ev)
        if ev.kind == "division":
            gen += 1


def generation_times(events) -> np.ndarray:
    """Intervals between consecutive divisions of a lineage."""
    t = np.array([e.time for e in events if e.kind == "division"])
    return np.diff(t)


# -- vectorised ensembles -------------------------------------------------------

@dataclass
class Ensemble:
    """Cells in s coordinates; ``phase`` is 0 for A and 1 for B."""

    ids: np.ndarray
    s: np.ndarray
    age: np.ndarray
    phase: np.ndarray
    remaining: np.ndarray
    draws: np.ndarray
    divisions: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.divisions is None:
            self.divisions = np.zeros(len(self.s), dtype=np.int64)


def _draw(seed, ens: Ensemble, idx):
    u = uniforms(seed, ens.ids[idx], ens.draws[idx])
    ens.draws[idx] += 1
    return u


def run_ensemble(ops: ModelOperators, ens: Ensemble, horizon, seed: int,
                 stop_at_division: bool = False) -> np.ndarray:
    """Advance every cell by ``horizon`` (scalar or per cell) in place.

    Jumps are handled exactly, one event per pass over the active cells.
    With ``stop_at_division`` a cell stops right after its first division.
    Returns the time each cell actually advanced.
    """
    T_B = ops.T_B
    dur = ops.duration
    n = len(ens.s)
    horizon = np.broadcast_to(np.asarray(horizon, dtype=float), (n,))
    elapsed = np.zeros(n)
    active = np.arange(n)
    while active.size:
        ph = ens.phase[active]
        tau = np.where(ph == 0, ens.remaining[active], T_B - ens.age[active])
        left = horizon[active] - elapsed[active]
        done = tau > left
        fin = active[done]
        dt = left[done]
        ens.s[fin] += dt
        ens.age[fin] += dt
        elapsed[fin] += dt
        a_fin = ens.phase[fin] == 0
        ens.remaining[fin[a_fin]] -= dt[a_fin]
        jump = active[~done]
        tj = tau[~done]
        ens.s[jump] += tj
        elapsed[jump] += tj
        ens.age[jump] = 0.0
        to_b = jump[ens.phase[jump] == 0]
        to_a = jump[ens.phase[jump] == 1]
        ens.phase[to_b] = 1
        ens.remaining[to_b] = 0.0
        ens.s[to_a] = ops.growth.halve_s(ens.s[to_a])
        ens.phase[to_a] = 0
        ens.divisions[to_a] += 1
        if len(to_a):
            ens.remaining[to_a] = dur.quantile(_draw(seed, ens, to_a))
        if stop_at_division:
            jump = to_b
        # cells pushed below the size range are dropped from further stepping
        active = jump[np.isfinite(ens.s[jump])]
    return elapsed


def sample_initial(ops: ModelOperators, f: StateDensity, ids: np.ndarray, seed: int) -> Ensemble:
    """Draw cells from a gridded density: a cell by inverse CDF over cell
    masses, then a uniform point in that (age, label) cell."""
    g = ops.grid
    masses = np.concatenate([f.f1.ravel(), f.f2.ravel()])
    cdf = np.cumsum(masses)
    total = cdf[-1]
    if total <= 0:
        raise ValueError("initial density has zero mass")
    n = len(ids)
    draws = np.zeros(n, dtype=np.uint64)
    u = [uniforms(seed, ids, draws + k) for k in range(4)]
    cell = np.minimum(np.searchsorted(cdf, u[0] * total, side="right"), len(masses) - 1)
    n1 = f.f1.size
    phase = (cell >= n1).astype(np.int8)
    local = np.where(phase == 0, cell, cell - n1)
    i, j = np.divmod(local, g.ns)
    age = (i + u[1]) * g.h
    label = g.s_min + (j - i + u[2]) * g.h
    s = label + age
    rem = np.zeros(n)
    a_cells = phase == 0
    rem[a_cells] = ops.duration.residual_given_age(age[a_cells], u[3][a_cells])
    return Ensemble(ids.astype(np.uint64), s, age, phase, rem, draws + np.uint64(4))


def histogram(ops: ModelOperators, ens: Ensemble) -> tuple[np.ndarray, np.ndarray, int]:
    """Counts per grid cell (phase A, phase B) and the number outside."""
    g = ops.grid
    ok = np.isfinite(ens.s)
    i = np.floor(ens.age / g.h).astype(np.int64)
    k = np.floor((np.where(ok, ens.s, 0.0) - ens.age - g.s_min) / g.h).astype(np.int64)
    j = k + i
    rows = np.where(ens.phase == 0, g.na, g.nb)
    inside = ok & (i >= 0) & (i < rows) & (k >= 0) & (j < g.ns)
    c1 = np.zeros(g.na * g.ns, dtype=np.int64)
    c2 = np.zeros(g.nb * g.ns, dtype=np.int64)
    a = inside & (ens.phase == 0)
    b = inside & (ens.phase == 1)
    np.add.at(c1, i[a] * g.ns + j[a], 1)
    np.add.at(c2, i[b] * g.ns + j[b], 1)
    return c1.reshape(g.na, g.ns), c2.reshape(g.nb, g.ns), int((~inside).sum())


@dataclass
class EnsembleResult:
    density: StateDensity
    counts_a: np.ndarray
    counts_b: np.ndarray
    outside: int
    n_cells: int


def ensemble_density(ops: ModelOperators, initial: StateDensity, n_cells: int, t: float,
                     seed: int, threads: int = 1) -> EnsembleResult:
    """Empirical density at time ``t`` of ``n_cells`` independent cells.

    Cells are processed in fixed chunks keyed by cell index, so the result
    is identical for any number of threads.
    """
    g = ops.grid
    chunks = [np.arange(lo, min(lo + CHUNK, n_cells), dtype=np.uint64)
              for lo in range(0, n_cells, CHUNK)]

    def work(ids):
        ens = sample_initial(ops, initial, ids, seed)
        run_ensemble(ops, ens, t, seed)
        return histogram(ops, ens)

    c1 = np.zeros((g.na, g.ns), dtype=np.int64)
    c2 = np.zeros((g.nb, g.ns), dtype=np.int64)
    outside = 0
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ids) for ids in chunks]
    for p1, p2, out in parts:
        c1 += p1
        c2 += p2
        outside += out
    scale = 1.0 / (max(n_cells, 1) * g.h**2)
    dens = StateDensity(g, c1 * scale, c2 * scale)
    return EnsembleResult(dens, c1, c2, outside, n_cells)


def sample_generation_times(ops: ModelOperators, n: int, seed: int, x0: float | None = None):
    """Birth-to-division times of ``n`` independent newborn cells."""
    g = ops.grid
    ids = np.arange(n, dtype=np.uint64)
    draws = np.zeros(n, dtype=np.uint64)
    rem = np.asarray(ops.duration.quantile(uniforms(seed, ids, draws)), dtype=float)
    s0 = g.s_min + 0.25 * (g.s_max - g.s_min) if x0 is None else float(ops.growth.q(x0))
    ens = Ensemble(ids, np.full(n, s0), np.zeros(n), np.zeros(n, dtype=np.int8), rem,
                   draws + np.uint64(1))
    elapsed = run_ensemble(ops, ens, np.inf, seed, stop_at_division=True)
    return elapsed


# -- branching population ---------------------------------------------------------

@dataclass
class BranchingResult:
    times: np.ndarray
    log_population: np.ndarray
    counts: np.ndarray
    rate: float
    thinning_events: int


def simulate_branching(ops: ModelOperators, initial: Ensemble | int, t_end: float, cap: int,
                       seed: int, window: float | None = None) -> BranchingResult:
    """Population in which every division yields two daughters.

    Time is cut into windows no longer than T_B, so a cell divides at most
    once per window.  Above ``cap`` the population is thinned uniformly and
    the log of the thinning factor is carried in the population estimate.
    """
    if ops.variant != "bell_population":
        raise PreconditionViolated("branching simulation needs the bell_population variant")
    if cap <= 0:
        raise ValueError("cap must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    g = ops.grid
    if isinstance(initial, int):
        n = initial
        ids = np.arange(n, dtype=np.uint64)
        draws = np.zeros(n, dtype=np.uint64)
        rem = np.asarray(ops.duration.quantile(uniforms(seed, ids, draws)), dtype=float)
        ens = Ensemble(ids, np.full(n, g.s_min + 0.25 * (g.s_max - g.s_min)), np.zeros(n),
                       np.zeros(n, dtype=np.int8), rem, draws + np.uint64(1))
    else:
        ens = initial
    next_id = int(ens.ids.max()) + 1 if len(ens.ids) else 0
    window = min(ops.T_B, t_end) if window is None else min(window, ops.T_B)
    n_windows = max(1, int(math.ceil(t_end / window - 1e-12)))
    log_w = 0.0
    times = [0.0]
    logs = [math.log(len(ens.s)) if len(ens.s) else -math.inf]
    counts = [len(ens.s)]
    thinned = 0
    t = 0.0
    for _ in range(n_windows):
        dt = min(window, t_end - t)
        if dt <= 0:
            break
        ens.divisions[:] = 0
        used = run_ensemble(ops, ens, dt, seed, stop_at_division=True)
        born = np.nonzero(ens.divisions > 0)[0]
        if len(born):
            new_ids = np.arange(next_id, next_id + len(born), dtype=np.uint64)
            next_id += len(born)
            sis = Ensemble(new_ids, ens.s[born].copy(), np.zeros(len(born)),
                           np.zeros(len(born), dtype=np.int8), np.zeros(len(born)),
                           np.zeros(len(born), dtype=np.uint64))
            sis.remaining = np.asarray(ops.duration.quantile(
                _draw(seed, sis, np.arange(len(born)))), dtype=float)
            # both daughters finish the window; neither can divide again in it
            pair = _concat(_take(ens, born), sis)
            run_ensemble(ops, pair, np.tile(dt - used[born], 2), seed)
            rest = np.setdiff1d(np.arange(len(ens.s)), born, assume_unique=True)
            ens = _concat(_take(ens, rest), pair)
        t += dt
        n_now = len(ens.s)
        if n_now > cap:
            keep = np.sort(rng.choice(n_now, size=cap, replace=False))
            log_w += math.log(n_now / cap)
            ens = _take(ens, keep)
            thinned += 1
        times.append(t)
        logs.append(math.log(len(ens.s)) + log_w if len(ens.s) else -math.inf)
        counts.append(len(ens.s))
    times = np.array(times)
    logs = np.array(logs)
    half = len(times) // 2
    rate = float(np.polyfit(times[half:], logs[half:], 1)[0]) if len(times) - half >= 2 else float("nan")
    return BranchingResult(times, logs, np.array(counts), rate, thinned)


def _concat(a: Ensemble, b: Ensemble) -> Ensemble:
    return Ensemble(*(np.concatenate([getattr(a, k), getattr(b, k)])
                      for k in ("ids", "s", "age", "phase", "remaining", "draws", "divisions")))


def _take(a: Ensemble, idx) -> Ensemble:
    return Ensemble(*(getattr(a, k)[idx]
                      for k in ("ids", "s", "age", "phase", "remaining", "draws", "divisions")))


def _block_sums(x: np.ndarray, block: int) -> np.ndarray:
    r = -(-x.shape[0] // block) * block
    c = -(-x.shape[1] // block) * block
    y = np.zeros((r, c))
    y[: x.shape[0], : x.shape[1]] = x
    return y.reshape(r // block, block, c // block, block).sum(axis=(1, 3))


def block_l1(f: StateDensity, g: StateDensity, block: int = 1) -> float:
    """L1 distance after pooling ``block`` x ``block`` grid cells.

    Pooling turns the cell histogram of an ensemble into a coarser
    histogram with less sampling noise; ``block=1`` is the plain distance.
    """
    f.grid.check_same(g.grid)
    h2 = f.grid.h**2
    return float((np.abs(_block_sums(f.f1, block) - _block_sums(g.f1, block)).sum()
                  + np.abs(_block_sums(f.f2, block) - _block_sums(g.f2, block)).sum()) * h2)
