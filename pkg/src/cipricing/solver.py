"""Fixed-step RK4 solutions of the Kolmogorov forward equations.

All solvers share one grid ``t_n = n h`` from the entry age to ``max_age``.
Intensities are evaluated at the RK4 stage points ``t_n``, ``t_n + h/2`` and
``t_n + h``, i.e. on a half-step grid precomputed once per solve.

The semi-Markov variant (M1) has exits from states 1 and 2 that depend on the
time since entry. Select occupancies for every entry time on the grid are
advanced together in calendar time (``cohort_sweep``); the inflow-weighted
sums over those cohorts give the 1->3 and 2->3 fluxes, which enter the
integro-differential forward equations as a forcing term. The fluxes appear
with opposite signs in the source and target equations, so RK4 keeps the
state probabilities summing to one to rounding error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidState, InvalidVariant, StepTooLarge
from .intensity import IntensitySet, ModelVariant

CONSERVATION_TOL = 1e-6
CLAMP_TOL = 1e-10

M0_TRANSITIONS = ((0, 1, "01"), (0, 2, "02"), (1, 2, "12"), (1, 3, "13"))
SEMI_TRANSITIONS = (
    (0, 1, "01"),
    (0, 2, "02"),
    (0, 4, "04"),
    (1, 4, "14"),
    (2, 4, "24"),
    (3, 4, "34"),
    (3, 5, "35"),
)
DURATION_TRANSITIONS = ((1, 3, "13"), (2, 3, "23"))

SELECT_STATES = {1: (1, 3, 4, 5), 2: (2, 3, 4, 5), 3: (3, 4, 5)}


@dataclass(frozen=True)
class SolverConfig:
    h: float = 1 / 52
    max_age: float = 90.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step must be positive, got {self.h}")

    def n_steps(self, span: float) -> int:
        """Number of steps covering ``span`` years; must be a whole number."""
        if not span > 0:
            raise ValueError(f"horizon must be positive, got {span}")
        n = round(span / self.h)
        if n < 1 or abs(n * self.h - span) > 1e-9 * max(1.0, span):
            raise ValueError(f"horizon {span} is not a whole number of steps of {self.h}")
        return n

    def horizon_steps(self, entry_age: float) -> int:
        if not self.max_age > entry_age:
            raise ValueError(f"max_age {self.max_age} must exceed entry age {entry_age}")
        return self.n_steps(self.max_age - entry_age)


@dataclass
class SelectGrid:
    """Occupancies ``p^{entry,j}_{[x]}(t)`` after entering ``entry_state`` at
    ``entry_age`` with ``duration_offset`` years already spent there."""

    entry_state: int
    entry_age: float
    h: float
    states: tuple[int, ...]
    probs: np.ndarray
    duration_offset: float = 0.0
    drift: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.probs)) * self.h

    def p(self, j: int) -> np.ndarray:
        if j not in self.states:
            return np.zeros(len(self.probs))
        return self.probs[:, self.states.index(j)]


@dataclass
class OccupancyGrid:
    """Occupancies ``p^{start,j}_x(t)`` on the solver grid.

    ``flows`` holds the duration-dependent transition fluxes (``"13"``,
    ``"23"``) for M1/M2, i.e. probability per year of moving into state 3.
    """

    variant: ModelVariant
    entry_age: float
    h: float
    start_state: int
    states: tuple[int, ...]
    probs: np.ndarray
    intensities: IntensitySet = field(repr=False)
    cfg: SolverConfig = field(repr=False)
    flows: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    drift: float = 0.0
    select_cache: dict[tuple[int, int], SelectGrid] = field(default_factory=dict, repr=False)
    aux: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.probs) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    @property
    def ages(self) -> np.ndarray:
        return self.entry_age + self.times

    def p(self, j: int) -> np.ndarray:
        return self.probs[:, self.states.index(j)]

    def select(self, entry_state: int, k: int = 0) -> SelectGrid:
        """Select grid entered at grid index ``k`` (age ``x + k h``), cached."""
        key = (entry_state, k)
        if key not in self.select_cache:
            self.select_cache[key] = solve_select(
                self.intensities, entry_state, self.entry_age + k * self.h, self.cfg
            )
        return self.select_cache[key]

    def to_csv(self, path: str | Path) -> None:
        header = ["t"] + [f"p{self.start_state}{j}" for j in self.states]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.probs):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def stage_rates(curve, origin: float, n: int, h: float) -> np.ndarray:
    """``curve(origin + j h/2)`` for ``j = 0 .. 2n``."""
    return curve(origin + np.arange(2 * n + 1) * (h / 2))


def decay_factors(l0, lm, l1, h: float):
    """One RK4 step multiplier for ``y' = -lambda(t) y`` given the stage
    rates at the start, middle and end of the step."""
    k1 = -l0
    k2 = -lm * (1 + h / 2 * k1)
    k3 = -lm * (1 + h / 2 * k2)
    k4 = -l1 * (1 + h * k3)
    return 1 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_linear(Q: np.ndarray, p0: np.ndarray, h: float, forcing: np.ndarray | None = None) -> np.ndarray:
    """Integrate ``dp/dt = p Q(t) + b(t)`` for a row vector ``p``.

    ``Q`` has shape ``(2n + 1, S, S)`` and ``forcing`` ``(2n + 1, S)``, both
    sampled on the half-step grid.
    """
    n = (len(Q) - 1) // 2
    out = np.empty((n + 1, len(p0)))
    p = np.asarray(p0, dtype=float).copy()
    out[0] = p
    zero = np.zeros_like(p)
    for i in range(n):
        q0, qm, q1 = Q[2 * i], Q[2 * i + 1], Q[2 * i + 2]
        if forcing is None:
            b0 = bm = b1 = zero
        else:
            b0, bm, b1 = forcing[2 * i], forcing[2 * i + 1], forcing[2 * i + 2]
        k1 = p @ q0 + b0
        k2 = (p + h / 2 * k1) @ qm + bm
        k3 = (p + h / 2 * k2) @ qm + bm
        k4 = (p + h * k3) @ q1 + b1
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = p
    return out


def _generator(n_half: int, states: tuple[int, ...], rates: dict[tuple[int, int], np.ndarray]) -> np.ndarray:
    idx = {s: i for i, s in enumerate(states)}
    Q = np.zeros((n_half, len(states), len(states)))
    for (i, j), r in rates.items():
        Q[:, idx[i], idx[j]] += r
    diag = np.arange(len(states))
    Q[:, diag, diag] = -Q.sum(axis=2)
    return Q


def _finish(probs: np.ndarray) -> tuple[np.ndarray, float]:
    """Check conservation, then clamp rounding excursions into [0, 1]."""
    drift = float(np.max(np.abs(probs.sum(axis=1) - 1.0)))
    if not drift <= CONSERVATION_TOL:
        raise StepTooLarge(f"row sums drifted by {drift:.3g}; reduce the step")
    if probs.min() < -CLAMP_TOL or probs.max() > 1 + CLAMP_TOL:
        raise StepTooLarge(f"probabilities left [0, 1] by more than {CLAMP_TOL:g}")
    return np.clip(probs, 0.0, 1.0), drift


def _require(intens: IntensitySet, *variants: ModelVariant) -> None:
    if intens.variant not in variants:
        names = "/".join(v.value for v in variants)
        raise InvalidVariant(f"expected a {names} intensity set, got {intens.variant.value}")


def solve_m0(intens: IntensitySet, x: float, cfg: SolverConfig = SolverConfig(), start_state: int = 0) -> OccupancyGrid:
    """Industry 4-state Markov model from state 0 or 1 at age ``x``."""
    _require(intens, ModelVariant.M0)
    if start_state not in (0, 1):
        raise InvalidState(f"M0 start state must be 0 or 1, got {start_state}")
    n = cfg.horizon_steps(x)
    rates = {(i, j): stage_rates(intens.curves[lab], x, n, cfg.h) for i, j, lab in M0_TRANSITIONS}
    states = (0, 1, 2, 3)
    Q = _generator(2 * n + 1, states, rates)
    p0 = np.zeros(4)
    p0[start_state] = 1.0
    probs, drift = _finish(rk4_linear(Q, p0, cfg.h))
    if start_state == 1:
        probs = probs[:, 1:]
        states = (1, 2, 3)
    return OccupancyGrid(ModelVariant.M0, x, cfg.h, start_state, states, probs, intens, cfg, drift=drift)


def _semi_rates(intens: IntensitySet, x: float, n: int, h: float) -> dict[tuple[int, int], np.ndarray]:
    return {(i, j): stage_rates(intens.curves[lab], x, n, h) for i, j, lab in SEMI_TRANSITIONS}


def solve_m2(intens: IntensitySet, x: float, cfg: SolverConfig = SolverConfig()) -> OccupancyGrid:
    """Six-state Markov special case: constant metastasis rates."""
    _require(intens, ModelVariant.M2)
    n = cfg.horizon_steps(x)
    rates = _semi_rates(intens, x, n, cfg.h)
    for i, j, lab in DURATION_TRANSITIONS:
        rates[(i, j)] = np.full(2 * n + 1, intens.duration[lab].tail_rate)
    states = (0, 1, 2, 3, 4, 5)
    Q = _generator(2 * n + 1, states, rates)
    probs, drift = _finish(rk4_linear(Q, np.eye(6)[0], cfg.h))
    flows = {
        "13": probs[:, 1] * rates[(1, 3)][::2],
        "23": probs[:, 2] * rates[(2, 3)][::2],
    }
    return OccupancyGrid(ModelVariant.M2, x, cfg.h, 0, states, probs, intens, cfg, flows=flows, drift=drift)


def solve_select(
    intens: IntensitySet,
    entry_state: int,
    entry_age: float,
    cfg: SolverConfig = SolverConfig(),
    duration_offset: float = 0.0,
) -> SelectGrid:
    """Occupancies after entering state 1, 2 or 3 at ``entry_age``.

    Exits from states 1 and 2 to state 3 are evaluated at duration
    ``duration_offset + t``; everything else at attained age.
    """
    _require(intens, ModelVariant.M1, ModelVariant.M2)
    if entry_state not in SELECT_STATES:
        raise InvalidState(f"select entry state must be 1, 2 or 3, got {entry_state}")
    if duration_offset < 0:
        raise ValueError("duration offset must be >= 0")
    n = cfg.horizon_steps(entry_age)
    h = cfg.h
    states = SELECT_STATES[entry_state]
    rates = {
        (i, j): stage_rates(intens.curves[lab], entry_age, n, h)
        for i, j, lab in SEMI_TRANSITIONS
        if i in states
    }
    durations = duration_offset + np.arange(2 * n + 1) * (h / 2)
    for i, j, lab in DURATION_TRANSITIONS:
        if i in states:
            rates[(i, j)] = intens.duration[lab](durations)
    Q = _generator(2 * n + 1, states, rates)
    p0 = np.zeros(len(states))
    p0[0] = 1.0
    probs, drift = _finish(rk4_linear(Q, p0, h))
    return SelectGrid(entry_state, entry_age, h, states, probs, duration_offset, drift)


def cohort_sweep(
    intens: IntensitySet, x: float, cfg: SolverConfig, entry_state: int
) -> Iterator[tuple[int, np.ndarray]]:
    """Advance the stay-probabilities of every cohort entering state 1 or 2
    on the grid, in calendar order.

    Yields ``(n, y)`` where ``y[m]`` is ``p^{ss}_{[x + (n - m) h]}(m h)``, the
    probability that someone entering at grid index ``n - m`` is still in
    ``entry_state`` after ``m`` steps. ``y`` is a view that is overwritten on
    the next iteration.
    """
    _require(intens, ModelVariant.M1, ModelVariant.M2)
    dur_label, age_label = {1: ("13", "14"), 2: ("23", "24")}[entry_state]
    n_total = cfg.horizon_steps(x)
    h = cfg.h
    dur = intens.duration[dur_label](np.arange(2 * n_total + 1) * (h / 2))
    age = stage_rates(intens.curves[age_label], x, n_total, h)
    d0, dm, d1 = dur[0:-1:2], dur[1::2], dur[2::2]
    y = np.empty(n_total + 1)
    y[0] = 1.0
    yield 0, y[:1]
    for n in range(n_total):
        a0, am, a1 = age[2 * n], age[2 * n + 1], age[2 * n + 2]
        factor = decay_factors(d0[: n + 1] + a0, dm[: n + 1] + am, d1[: n + 1] + a1, h)
        y[1 : n + 2] = y[: n + 1] * factor
        y[0] = 1.0
        yield n + 1, y[: n + 2]


def _trapezoid_conv(q: np.ndarray, g: np.ndarray, n: int, h: float) -> float:
    """``h * sum_k w_k q[k] g[n-k]`` with trapezoid weights over k = 0..n."""
    if n == 0:
        return 0.0
    terms = q[n::-1] * g
    return h * (terms.sum() - 0.5 * (terms[0] + terms[-1]))


def solve_m1(intens: IntensitySet, x: float, cfg: SolverConfig = SolverConfig()) -> OccupancyGrid:
    """Semi-Markov model from state 0 at age ``x``."""
    _require(intens, ModelVariant.M1)
    n_total = cfg.horizon_steps(x)
    h = cfg.h
    rates = _semi_rates(intens, x, n_total, h)

    exit0 = rates[(0, 1)] + rates[(0, 2)] + rates[(0, 4)]
    factors = decay_factors(exit0[0:-1:2], exit0[1::2], exit0[2::2], h)
    p00 = np.concatenate([[1.0], np.cumprod(factors)])

    q1 = p00 * rates[(0, 1)][::2]
    q2 = p00 * rates[(0, 2)][::2]
    grid_d = np.arange(n_total + 1) * h
    mu13 = intens.duration["13"](grid_d)
    mu23 = intens.duration["23"](grid_d)
    c13 = np.zeros(n_total + 1)
    c23 = np.zeros(n_total + 1)
    sweeps = zip(cohort_sweep(intens, x, cfg, 1), cohort_sweep(intens, x, cfg, 2))
    for (n, y1), (_, y2) in sweeps:
        c13[n] = _trapezoid_conv(q1, y1 * mu13[: n + 1], n, h)
        c23[n] = _trapezoid_conv(q2, y2 * mu23[: n + 1], n, h)

    forcing = np.zeros((2 * n_total + 1, 6))
    for label, c in (("13", c13), ("23", c23)):
        half = np.empty(2 * n_total + 1)
        half[::2] = c
        half[1::2] = 0.5 * (c[:-1] + c[1:])
        src = 1 if label == "13" else 2
        forcing[:, src] -= half
        forcing[:, 3] += half

    states = (0, 1, 2, 3, 4, 5)
    Q = _generator(2 * n_total + 1, states, rates)
    raw = rk4_linear(Q, np.eye(6)[0], h, forcing)
    probs, drift = _finish(raw)
    return OccupancyGrid(
        ModelVariant.M1, x, h, 0, states, probs, intens, cfg, flows={"13": c13, "23": c23}, drift=drift
    )


def convolution_occupancy(grid: OccupancyGrid, entry_state: int) -> np.ndarray:
    """``p^{0s}(t_n)`` rebuilt as the trapezoid convolution of state-0
    inflow with select stay probabilities, for s = 1 or 2.

    Used to cross-check the forward-equation solution of M1.
    """
    intens = grid.intensities
    label = {1: (0, 1, "01"), 2: (0, 2, "02")}[entry_state][2]
    p00 = grid.p(0)
    q = p00 * intens.curves[label](grid.ages)
    out = np.zeros(grid.n + 1)
    for n, y in cohort_sweep(intens, grid.entry_age, grid.cfg, entry_state):
        out[n] = _trapezoid_conv(q, y, n, grid.h)
    return out


def solve(intens: IntensitySet, x: float, cfg: SolverConfig = SolverConfig()) -> OccupancyGrid:
    """Occupancies from state 0 with the solver matching the variant."""
    if intens.variant is ModelVariant.M0:
        return solve_m0(intens, x, cfg)
    if intens.variant is ModelVariant.M1:
        return solve_m1(intens, x, cfg)
    return solve_m2(intens, x, cfg)
