"""Monte Carlo life histories on the intensity set, as a check on the solver.

Paths move in steps of ``sim_step``. In each step a path in state ``i``
leaves with probability ``1 - exp(-sum_j mu_ij dt)``, rates taken at the
mid-step age and duration, and one uniform draw picks both whether it
leaves and where it goes. The duration clock restarts when a path enters
state 1 or 2.

``simulation_law`` propagates the exact distribution of the same discrete
scheme, so the Monte Carlo output can be checked against it without noise,
and the step-size effect can be measured without sampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidContract, InvalidState
from .intensity import DurationHazard, IntensitySet, ModelVariant
from .pricing import ContractSpec, Health, Product
from .solver import DURATION_TRANSITIONS, M0_TRANSITIONS, SEMI_TRANSITIONS, SolverConfig

BLOCK_SIZE = 16384
SIM_CHUNK = 16
DEFAULT_SIM_STEP = SolverConfig().h / 4


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    seed: int
    sim_step: float = DEFAULT_SIM_STEP
    horizon: float | None = None  # default: up to max_age

    def __post_init__(self):
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths >= 1):
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not self.sim_step > 0:
            raise ValueError(f"sim_step must be positive, got {self.sim_step}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SimSummary:
    states: tuple[int, ...]
    checkpoints: np.ndarray
    freq: np.ndarray  # (checkpoint, state)
    se: np.ndarray
    n_paths: int
    epv: float | None = None
    epv_se: float | None = None
    meta: dict = field(default_factory=dict)

    def frequency(self, t: float, state: int) -> float:
        return float(self.freq[self._row(t), self.states.index(state)])

    def std_error(self, t: float, state: int) -> float:
        return float(self.se[self._row(t), self.states.index(state)])

    def _row(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.checkpoints - t)))
        if abs(self.checkpoints[i] - t) > 1e-9:
            raise KeyError(f"no checkpoint at t={t}")
        return i

    def rows(self):
        for i, t in enumerate(self.checkpoints):
            for j, s in enumerate(self.states):
                yield {"t": repr(float(t)), "state": s, "frequency": repr(float(self.freq[i, j])),
                       "se": repr(float(self.se[i, j]))}


def _whole_steps(span: float, dt: float, what: str) -> int:
    n = round(span / dt)
    if abs(n * dt - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"{what} {span} is not a whole number of sim steps of {dt}")
    return n


def _duration_cap(hazards: list[DurationHazard], dt: float) -> int:
    """First duration index whose mid-step rate equals the tail rate for
    every hazard; longer durations can share one bin."""
    cap = 0.0
    for hz in hazards:
        j = len(hz.rates) - 1
        while j >= 0 and hz.rates[j] == hz.tail_rate:
            j -= 1
        if j >= 0:
            cap = max(cap, float(hz.durations[j + 1]) if j + 1 < len(hz.durations) else float(hz.durations[-1]))
    return max(0, math.ceil(cap / dt - 0.5))


class _Scheme:
    """Per-step rates of the discrete scheme for one intensity set."""

    def __init__(self, intens: IntensitySet, entry_age: float, dt: float, n_steps: int):
        self.variant = intens.variant
        self.dt = dt
        self.n_states = self.variant.n_states
        self.dead = self.variant.dead_states
        if self.variant is ModelVariant.M0:
            trans = [(i, j, lab, False) for i, j, lab in M0_TRANSITIONS]
            self.tracked: tuple[int, ...] = ()
        else:
            trans = [(i, j, lab, False) for i, j, lab in SEMI_TRANSITIONS]
            trans += [(i, j, lab, True) for i, j, lab in DURATION_TRANSITIONS]
            self.tracked = (1, 2)
        self.out = {s: [(j, lab, d) for i, j, lab, d in trans if i == s] for s in range(self.n_states)}
        self.live = tuple(s for s in range(self.n_states) if s not in self.dead)
        mids = entry_age + (np.arange(n_steps) + 0.5) * dt
        self.age_rates = {lab: np.asarray(intens.rate(lab, mids)) for i, j, lab, d in trans if not d}
        hazards = [intens.duration[lab] for _, _, lab, d in trans if d]
        self.cap = _duration_cap(hazards, dt) if hazards else 0
        zmid = (np.arange(self.cap + 1) + 0.5) * dt
        self.dur_rates = {lab: np.asarray(intens.duration_rate(lab, zmid)) for _, _, lab, d in trans if d}

    def rates(self, src: int, step: int, dur_idx: np.ndarray) -> np.ndarray:
        """Exit rates from ``src`` as an array (len(dur_idx), n_out)."""
        outs = self.out[src]
        R = np.empty((len(dur_idx), len(outs)))
        for c, (_, lab, is_dur) in enumerate(outs):
            R[:, c] = self.dur_rates[lab][np.minimum(dur_idx, self.cap)] if is_dur else self.age_rates[lab][step]
        return R


def _payment_events(contract: ContractSpec | None, variant: ModelVariant) -> set[tuple[int, int]]:
    if contract is None:
        return set()
    if contract.model is not variant:
        raise InvalidContract("contract model differs from the intensity set")
    if contract.product is Product.LIFE:
        n = variant.n_states
        return {(i, j) for i in range(n) for j in variant.dead_states if i not in variant.dead_states}
    if variant is ModelVariant.M0:
        return {(0, 1), (0, 2)}
    return {(0, 1), (0, 4), (2, 3), (2, 4)}


def _start(intens: IntensitySet, start_state: int, contract: ContractSpec | None, duration: float) -> tuple[int, float]:
    if contract is not None:
        expected = 0 if contract.health is Health.HEALTHY else 1
        if start_state != expected:
            raise InvalidState(f"contract health {contract.health.value} starts in state {expected}")
        if contract.health is Health.FIVE_YEARS:
            duration = 5.0
    live = [s for s in range(intens.variant.n_states) if s not in intens.variant.dead_states]
    if start_state not in live:
        raise InvalidState(f"start state {start_state} is not a live state of {intens.variant.value}")
    if intens.variant is ModelVariant.M0 and start_state not in (0, 1):
        raise InvalidState("M0 paths start in state 0 or 1")
    return start_state, duration


def _setup(intens, start_state, entry_age, dt, horizon, checkpoints, contract, duration):
    start_state, duration = _start(intens, start_state, contract, duration)
    if horizon is None:
        horizon = SolverConfig().max_age - entry_age
    n_steps = _whole_steps(horizon, dt, "horizon")
    cps = np.atleast_1d(np.asarray(checkpoints, dtype=float))
    if np.any(cps < 0) or np.any(cps > horizon + 1e-9):
        raise ValueError("checkpoints must lie within the horizon")
    cp_steps = [_whole_steps(c, dt, "checkpoint") if c > 0 else 0 for c in cps]
    n_pay = n_steps
    if contract is not None:
        n_pay = _whole_steps(contract.term_years(SolverConfig(max_age=entry_age + horizon)), dt, "term")
    d0 = _whole_steps(duration, dt, "duration") if duration > 0 else 0
    scheme = _Scheme(intens, entry_age, dt, n_steps)
    return scheme, start_state, n_steps, cps, cp_steps, n_pay, d0



def _move(scheme, step, movers, u, p, state, entered, is_tracked, dests_of, events, n_pay, paid, pv, payment):
    """Send ``movers`` (with their draws ``u`` and exit probabilities ``p``)
    to their destinations for this step, in place."""
    src_of = state[movers]
    for src in np.unique(src_of):
        src = int(src)
        sel = src_of == src
        m = movers[sel]
        R = scheme.rates(src, step, step - entered[m])
        v = u[sel] / p[sel]
        cum = np.cumsum(R, axis=1) / R.sum(axis=1)[:, None]
        pick = np.minimum((v[:, None] >= cum).sum(axis=1), R.shape[1] - 1)
        dests = dests_of[src][pick]
        state[m] = dests
        entered[m[is_tracked[dests]]] = step + 1
        if events and step < n_pay:
            for dst in np.unique(dests):
                if (src, int(dst)) in events:
                    hit = m[(dests == dst) & ~paid[m]]
                    pv[hit] = payment
                    paid[hit] = True


def simulate(
    intens: IntensitySet,
    start_state: int,
    entry_age: float,
    sim_cfg: SimConfig,
    checkpoints,
    contract: ContractSpec | None = None,
    start_duration: float = 0.0,
) -> SimSummary:
    """Simulate ``sim_cfg.n_paths`` histories and summarise state frequencies
    at ``checkpoints`` (years after ``entry_age``).

    With a ``contract`` the discounted benefit of each path is also
    averaged; the benefit is paid at the middle of the step in which the
    insured event happens, within the term.
    """
    dt = sim_cfg.sim_step
    scheme, s0, n_steps, cps, cp_steps, n_pay, d0 = _setup(
        intens, start_state, entry_age, dt, sim_cfg.horizon, checkpoints, contract, start_duration
    )
    events = _payment_events(contract, intens.variant)
    n = sim_cfg.n_paths
    n_blocks = -(-n // BLOCK_SIZE)
    # one stream per block of paths: path i always sees the same draws
    gens = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(sim_cfg.seed, spawn_key=(b,))))
            for b in range(n_blocks)]
    state = np.full(n, s0, dtype=np.int8)
    entered = np.full(n, -d0, dtype=np.int64)  # duration index = step - entered
    paid = np.zeros(n, dtype=bool)
    pv = np.zeros(n)
    delta = contract.delta if contract is not None else 0.0
    benefit = contract.benefit if contract is not None else 0.0

    # exit probabilities of states without duration effects, one row per step
    p_tab = np.zeros((n_steps, scheme.n_states))
    for src in scheme.live:
        if src not in scheme.tracked:
            tot = sum(scheme.age_rates[lab] for _, lab, _ in scheme.out[src])
            p_tab[:, src] = -np.expm1(-tot * dt)
    p_upper = p_tab.max(axis=1)
    for src in scheme.tracked:
        tot = sum(scheme.age_rates[lab] if not d else scheme.dur_rates[lab].max() for _, lab, d in scheme.out[src])
        p_upper = np.maximum(p_upper, -np.expm1(-tot * dt))
    is_tracked = np.zeros(scheme.n_states, dtype=bool)
    is_tracked[list(scheme.tracked)] = True
    dests_of = {src: np.array([o[0] for o in scheme.out[src]], dtype=np.int8) for src in scheme.live}

    record = {0: state.copy()} if 0 in cp_steps else {}
    pending = sorted(set(cp_steps) - {0})
    for step in range(n_steps):
        row = step % SIM_CHUNK
        if row == 0:
            rows = min(SIM_CHUNK, n_steps - step)
            U_chunk = np.concatenate([g.random((rows, BLOCK_SIZE)) for g in gens], axis=1)[:, :n]
        u = U_chunk[row]
        # p_upper bounds every exit probability at this step, so only these
        # paths can move; the exact test below is the same as on all paths
        cand = np.flatnonzero(u < p_upper[step])
        if cand.size:
            u_c = u[cand]
            p_c = p_tab[step][state[cand]]
            for src in scheme.tracked:
                sub = np.flatnonzero(state[cand] == src)
                if sub.size:
                    tot = scheme.rates(src, step, step - entered[cand[sub]]).sum(axis=1)
                    p_c[sub] = -np.expm1(-tot * dt)
            go = u_c < p_c
            if go.any():
                _move(scheme, step, cand[go], u_c[go], p_c[go], state, entered, is_tracked, dests_of, events,
                      n_pay, paid, pv, benefit * math.exp(-delta * (step + 0.5) * dt))
        if pending and step + 1 == pending[0]:
            record[step + 1] = state.copy()
            pending.pop(0)
    states = tuple(range(scheme.n_states))
    freq = np.array([[np.mean(record[k] == s) for s in states] for k in cp_steps])
    se = np.sqrt(freq * (1 - freq) / n)
    summary = SimSummary(states, cps, freq, se, n, meta={"sim_step": dt, "seed": sim_cfg.seed})
    if contract is not None:
        summary.epv = float(pv.mean())
        summary.epv_se = float(pv.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return summary


def simulation_law(
    intens: IntensitySet,
    start_state: int,
    entry_age: float,
    sim_step: float,
    checkpoints,
    contract: ContractSpec | None = None,
    horizon: float | None = None,
    start_duration: float = 0.0,
) -> tuple[np.ndarray, float | None]:
    """Exact state distribution of the discrete scheme at ``checkpoints``,
    and the exact expected discounted benefit when ``contract`` is given.

    States 1 and 2 of the semi-Markov model carry a distribution over
    duration steps; durations past the end of the tabulated hazard share a
    single bin.
    """
    dt = sim_step
    scheme, s0, n_steps, cps, cp_steps, n_pay, d0 = _setup(
        intens, start_state, entry_age, dt, horizon, checkpoints, contract, start_duration
    )
    events = _payment_events(contract, intens.variant)
    delta = contract.delta if contract is not None else 0.0
    sizes = {s: (scheme.cap + 1 if s in scheme.tracked else 1) for s in range(scheme.n_states)}
    mass = {s: np.zeros(sizes[s]) for s in range(scheme.n_states)}
    mass[s0][min(d0, sizes[s0] - 1)] = 1.0
    bins = {s: np.arange(sizes[s]) for s in range(scheme.n_states)}
    out = {}
    epv = 0.0

    def snapshot():
        return np.array([mass[s].sum() for s in range(scheme.n_states)])

    if 0 in cp_steps:
        out[0] = snapshot()
    for step in range(n_steps):
        new = {s: (mass[s].copy() if s in scheme.dead else np.zeros(sizes[s])) for s in mass}
        for src in scheme.live:
            m = mass[src]
            R = scheme.rates(src, step, bins[src])
            tot = R.sum(axis=1)
            p_exit = -np.expm1(-tot * dt)
            stay = m * (1 - p_exit)
            if src in scheme.tracked:
                new[src][1:] += stay[:-1]
                new[src][-1] += stay[-1]
            else:
                new[src] += stay
            with np.errstate(divide="ignore", invalid="ignore"):
                share = np.where(tot[:, None] > 0, R / tot[:, None], 0.0)
            flows = (m * p_exit) @ share
            for c, (dst, _, _) in enumerate(scheme.out[src]):
                new[dst][0] += flows[c]
                if step < n_pay and (src, dst) in events:
                    epv += flows[c] * math.exp(-delta * (step + 0.5) * dt)
        mass = new
        if step + 1 in cp_steps:
            out[step + 1] = snapshot()
    law = np.array([out[k] for k in cp_steps])
    return law, (contract.benefit * epv if contract is not None else None)
