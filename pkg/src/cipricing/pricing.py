"""Net single premiums for accelerated critical illness and life cover.

Every integral is a trapezoid sum on the solver grid. For M1 the benefits
that follow an unobserved onset or a metastasis are nested integrals over
the entry time into state 2 or 3; the inner integrals are the premiums of a
policyholder selected in that state at the entry age.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidContract, TermExceedsMaxAge, UnsupportedHealthState
from .intensity import IntensitySet, ModelVariant
from .solver import (
    OccupancyGrid,
    SelectGrid,
    SolverConfig,
    cohort_sweep,
    solve,
    solve_m0,
    solve_select,
)

MIN_ENTRY_AGE = 30.0
MAX_ENTRY_AGE = 60.0
DEFAULT_BENEFIT = 1000.0
DIAGNOSIS_LAG = 5.0


class Product(str, enum.Enum):
    CII = "CII_accelerated"
    LIFE = "Life"


class Health(str, enum.Enum):
    HEALTHY = "healthy"
    NOW = "premetastatic_now"
    FIVE_YEARS = "premetastatic_5yr_ago"


@dataclass(frozen=True)
class ContractSpec:
    product: Product
    entry_age: float
    term: float | None = None  # None: whole life to max_age
    interest: float = 0.02
    benefit: float = DEFAULT_BENEFIT
    health: Health = Health.HEALTHY
    model: ModelVariant = ModelVariant.M1

    def __post_init__(self):
        object.__setattr__(self, "product", Product(self.product))
        object.__setattr__(self, "health", Health(self.health))
        object.__setattr__(self, "model", ModelVariant(self.model))
        if not MIN_ENTRY_AGE <= self.entry_age <= MAX_ENTRY_AGE:
            raise InvalidContract(f"entry age must lie in [30, 60], got {self.entry_age}")
        if self.term is not None and not self.term > 0:
            raise InvalidContract(f"term must be positive, got {self.term}")
        if not (self.interest >= 0 and math.isfinite(self.interest)):
            raise InvalidContract(f"interest must be finite and >= 0, got {self.interest}")
        if not self.benefit >= 0:
            raise InvalidContract(f"benefit must be >= 0, got {self.benefit}")
        if self.product is Product.CII and self.health is not Health.HEALTHY:
            raise UnsupportedHealthState("CII cover is sold to healthy lives only")
        if self.model is ModelVariant.M0 and self.health is Health.FIVE_YEARS:
            raise UnsupportedHealthState("M0 has no duration since diagnosis")

    @property
    def delta(self) -> float:
        return math.log1p(self.interest)

    def term_years(self, cfg: SolverConfig) -> float:
        span = cfg.max_age - self.entry_age
        if self.term is None:
            return span
        if self.term > span + 1e-9:
            raise TermExceedsMaxAge(f"term {self.term} runs past age {cfg.max_age}")
        return self.term


@dataclass(frozen=True)
class PremiumQuote:
    spec: ContractSpec
    epv: float
    h: float
    meta: dict = field(default_factory=dict, compare=False)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2
    return w


def _term_steps(spec: ContractSpec, cfg: SolverConfig) -> int:
    return cfg.n_steps(spec.term_years(cfg))


def discounted_integral(rate: np.ndarray, delta: float, h: float, n: int) -> float:
    """Trapezoid sum of ``exp(-delta t) rate(t)`` over ``t_0 .. t_n``."""
    t = np.arange(n + 1) * h
    return float(np.dot(trapezoid_weights(n, h), np.exp(-delta * t) * rate[: n + 1]))


def _check_grid(grid: OccupancyGrid, spec: ContractSpec, intens: IntensitySet) -> None:
    if grid.variant is not spec.model or grid.variant is not intens.variant:
        raise InvalidContract("grid, intensities and contract disagree on the model")
    if abs(grid.entry_age - spec.entry_age) > 1e-12:
        raise InvalidContract("grid entry age differs from the contract")


def _state3_exit_epv(intens: IntensitySet, x: float, cfg: SolverConfig, delta: float, n_T: int) -> np.ndarray:
    """``g[k]``: EPV at time ``t_k`` of death from state 3 before ``t_{n_T}``
    for a life entering state 3 at age ``x + t_k``.

    State 3 has no duration effect, so ``p33_[x+u](s) = S(u+s)/S(u)`` with
    ``S`` the stay probability from age ``x``; the inner trapezoid for every
    ``k`` then follows from one reversed cumulative sum.
    """
    sel = solve_select(intens, 3, x, cfg)
    h = cfg.h
    ages = x + np.arange(n_T + 1) * h
    S = sel.p(3)[: n_T + 1]
    lam = intens.rate("34", ages) + intens.rate("35", ages)
    u = np.arange(n_T + 1) * h
    F = np.exp(-delta * u) * S * lam
    R = np.cumsum(F[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = h * np.exp(delta * u) / S * (R - 0.5 * F - 0.5 * F[n_T])
    g[~np.isfinite(g)] = 0.0
    g[n_T] = 0.0
    return g


def unobserved_exit_sums(grid: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Inner sums of the nested trapezoid for exits from state 2 (M1).

    With ``q = p00 mu02`` the entry flux and ``f_k(m) = p22_[x+kh](mh)
    (mu23(mh) + mu24(x+(k+m)h))`` the exit rate of cohort ``k``, collect the
    pairs with ``k + m = n``:

    * ``I[n]``: weights for a horizon past ``t_n`` (outer 1/2 at k = 0,
      inner 1/2 at m = 0);
    * ``J[n]``: weights when ``t_n`` is the horizon itself (inner 1/2 at the
      right end; the cohort entering at the horizon contributes nothing).

    Neither depends on the interest rate or the term, so they are cached.
    """
    if "unobs_IJ" in grid.aux:
        return grid.aux["unobs_IJ"]
    intens = grid.intensities
    h = grid.h
    N = grid.n
    q2 = grid.p(0) * intens.rate("02", grid.ages)
    mu23 = intens.duration_rate("23", np.arange(N + 1) * h)
    mu24 = intens.rate("24", grid.ages)
    I = np.zeros(N + 1)
    J = np.zeros(N + 1)
    for n, y in cohort_sweep(intens, grid.entry_age, grid.cfg, 2):
        f = y * (mu23[: n + 1] + mu24[n])
        terms = q2[n::-1] * f  # index m: cohort k = n - m at duration m
        w_out = np.ones(n + 1)
        w_out[n] = 0.5  # k = 0
        w_in = np.ones(n + 1)
        w_in[0] = 0.5
        I[n] = np.dot(w_out * w_in, terms)
        if n > 0:
            J[n] = 0.5 * np.dot(w_out[1:], terms[1:])
    grid.aux["unobs_IJ"] = (I, J)
    return I, J


def _nested_unobserved(grid: OccupancyGrid, delta: float, n_T: int) -> float:
    I, J = unobserved_exit_sums(grid)
    h = grid.h
    disc = np.exp(-delta * np.arange(n_T + 1) * h)
    return h * h * float(np.dot(disc[:n_T], I[:n_T]) + disc[n_T] * J[n_T])


def _grid_for(spec: ContractSpec, intens: IntensitySet, cfg: SolverConfig, grid):
    if grid is None:
        grid = solve(intens, spec.entry_age, cfg)
    _check_grid(grid, spec, intens)
    return grid


def _quote(spec: ContractSpec, value: float, cfg: SolverConfig, **meta) -> PremiumQuote:
    return PremiumQuote(spec, spec.benefit * value, cfg.h, {"quadrature": "trapezoid", **meta})


def price_cii(
    spec: ContractSpec, intens: IntensitySet, cfg: SolverConfig = SolverConfig(), grid: OccupancyGrid | None = None
) -> PremiumQuote:
    """Accelerated CII: pays on diagnosis or earlier death."""
    if spec.product is not Product.CII:
        raise InvalidContract("price_cii needs a CII contract")
    n_T = _term_steps(spec, cfg)
    grid = _grid_for(spec, intens, cfg, grid)
    a, d, h = grid.ages, spec.delta, cfg.h
    p00 = grid.p(0)
    if spec.model is ModelVariant.M0:
        value = discounted_integral(p00 * (intens.rate("01", a) + intens.rate("02", a)), d, h, n_T)
        return _quote(spec, value, cfg)
    direct = discounted_integral(p00 * (intens.rate("01", a) + intens.rate("04", a)), d, h, n_T)
    if spec.model is ModelVariant.M2:
        mu23 = intens.duration["23"].tail_rate
        unobs = discounted_integral(grid.p(2) * (mu23 + intens.rate("24", a)), d, h, n_T)
    else:
        unobs = _nested_unobserved(grid, d, n_T)
    return _quote(spec, direct + unobs, cfg, direct=direct, unobserved=unobs)


def price_life_healthy(
    spec: ContractSpec, intens: IntensitySet, cfg: SolverConfig = SolverConfig(), grid: OccupancyGrid | None = None
) -> PremiumQuote:
    """Death benefit from any cause for a life healthy at purchase."""
    if spec.product is not Product.LIFE or spec.health is not Health.HEALTHY:
        raise InvalidContract("price_life_healthy needs a Life contract on a healthy life")
    n_T = _term_steps(spec, cfg)
    grid = _grid_for(spec, intens, cfg, grid)
    a, d, h = grid.ages, spec.delta, cfg.h
    if spec.model is ModelVariant.M0:
        rate = grid.p(0) * intens.rate("02", a) + grid.p(1) * (intens.rate("12", a) + intens.rate("13", a))
        return _quote(spec, discounted_integral(rate, d, h, n_T), cfg)
    pre = grid.p(0) * intens.rate("04", a) + grid.p(1) * intens.rate("14", a) + grid.p(2) * intens.rate("24", a)
    before = discounted_integral(pre, d, h, n_T)
    if spec.model is ModelVariant.M2:
        after = discounted_integral(grid.p(3) * (intens.rate("34", a) + intens.rate("35", a)), d, h, n_T)
    else:
        g = _state3_exit_epv(intens, spec.entry_age, cfg, d, n_T)
        inflow = (grid.flows["13"] + grid.flows["23"])[: n_T + 1]
        after = discounted_integral(inflow * g, d, h, n_T)
    return _quote(spec, before + after, cfg, before_metastasis=before, after_metastasis=after)


def _diagnosed_select(intens: IntensitySet, spec: ContractSpec, cfg: SolverConfig) -> SelectGrid:
    offset = DIAGNOSIS_LAG if spec.health is Health.FIVE_YEARS and spec.model is ModelVariant.M1 else 0.0
    return solve_select(intens, 1, spec.entry_age, cfg, duration_offset=offset)


def price_life_diagnosed(
    spec: ContractSpec, intens: IntensitySet, cfg: SolverConfig = SolverConfig()
) -> PremiumQuote:
    """Death benefit for a life with pre-metastatic BC at purchase.

    ``premetastatic_5yr_ago`` starts the duration clock at five years. M2
    has no duration effect, so both diagnosed states price identically.
    """
    if spec.product is not Product.LIFE or spec.health is Health.HEALTHY:
        raise InvalidContract("price_life_diagnosed needs a Life contract on a diagnosed life")
    if intens.variant is not spec.model:
        raise InvalidContract("intensities and contract disagree on the model")
    n_T = _term_steps(spec, cfg)
    x, d, h = spec.entry_age, spec.delta, cfg.h
    a = x + np.arange(n_T + 1) * h
    if spec.model is ModelVariant.M0:
        g1 = solve_m0(intens, x, cfg, start_state=1)
        rate = g1.p(1) * (intens.rate("12", g1.ages) + intens.rate("13", g1.ages))
        return _quote(spec, discounted_integral(rate, d, h, n_T), cfg)
    sel = _diagnosed_select(intens, spec, cfg)
    p11 = sel.p(1)[: n_T + 1]
    before = discounted_integral(p11 * intens.rate("14", a), d, h, n_T)
    if spec.model is ModelVariant.M2:
        after = discounted_integral(sel.p(3)[: n_T + 1] * (intens.rate("34", a) + intens.rate("35", a)), d, h, n_T)
    else:
        mu13 = intens.duration_rate("13", sel.duration_offset + np.arange(n_T + 1) * h)
        g = _state3_exit_epv(intens, x, cfg, d, n_T)
        after = discounted_integral(p11 * mu13 * g, d, h, n_T)
    return _quote(spec, before + after, cfg, before_metastasis=before, after_metastasis=after,
                  duration_offset=sel.duration_offset)


def flat_life_value(grid: OccupancyGrid | SelectGrid, intens: IntensitySet, delta: float, n_T: int) -> float:
    """Per-unit life EPV from the occupancies alone: the discounted death
    flux out of every live state. Used to cross-check the nested M1 sums."""
    h = grid.h
    ages = grid.entry_age + np.arange(len(grid.probs)) * h
    if intens.variant is ModelVariant.M0:
        flows = [("0", "02"), ("1", "12"), ("1", "13")]
    else:
        flows = [("0", "04"), ("1", "14"), ("2", "24"), ("3", "34"), ("3", "35")]
    rate = np.zeros(len(ages))
    for state, label in flows:
        rate += grid.p(int(state)) * intens.rate(label, ages)
    return discounted_integral(rate, delta, h, n_T)


def price(
    spec: ContractSpec, intens: IntensitySet, cfg: SolverConfig = SolverConfig(), grid: OccupancyGrid | None = None
) -> PremiumQuote:
    """Dispatch on product and health state."""
    if spec.product is Product.CII:
        return price_cii(spec, intens, cfg, grid)
    if spec.health is Health.HEALTHY:
        return price_life_healthy(spec, intens, cfg, grid)
    return price_life_diagnosed(spec, intens, cfg)
