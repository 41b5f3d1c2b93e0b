"""Net cancer survival, k_x curves and the all-cause mortality split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_ingest import LADDER, RawPanel
from .errors import MissingYear, OutOfRange, StateNotInModel
from .intensity import IntensitySet, ModelVariant
from .solver import OccupancyGrid, SolverConfig, solve, solve_m0, solve_select

KX_ENTRY_AGE = 30.0


@dataclass(frozen=True)
class KxCurve:
    ages: np.ndarray
    kx: np.ndarray
    source: str

    def at(self, age: float) -> float:
        """Value at an attained age on the grid (nearest node)."""
        i = int(np.argmin(np.abs(self.ages - age)))
        if abs(self.ages[i] - age) > 1e-9:
            raise OutOfRange(f"age {age} is not a grid node")
        return float(self.kx[i])

    def rows(self):
        for a, k in zip(self.ages, self.kx):
            yield {"attained_age": repr(float(a)), "kx": repr(float(k)), "source": self.source}


@dataclass(frozen=True)
class SurvivalCurve:
    diagnosis_age: float
    diagnosis_state: int
    model: str
    times: np.ndarray
    survival: np.ndarray

    def at(self, t: float) -> float:
        i = int(round(t / (self.times[1] - self.times[0])))
        return float(self.survival[i])

    def rows(self):
        for t, s in zip(self.times, self.survival):
            yield {
                "t": repr(float(t)),
                "survival": repr(float(s)),
                "diagnosis_state": self.diagnosis_state,
                "diagnosis_age": repr(float(self.diagnosis_age)),
                "model": self.model,
            }


def net_survival(
    intens: IntensitySet, diagnosis_state: int, x: float, cfg: SolverConfig = SolverConfig()
) -> SurvivalCurve:
    """``(1 - p_other - p_bc) / (1 - p_other)`` after diagnosis at age ``x``.

    M1/M2 accept state 1 (pre-metastatic) or 3 (metastatic); M0 has a single
    BC state and accepts 1 only.
    """
    if intens.variant is ModelVariant.M0:
        if diagnosis_state != 1:
            raise StateNotInModel("M0 has only one BC state; use diagnosis_state=1")
        grid = solve_m0(intens, x, cfg, start_state=1)
        other, bc = grid.p(2), grid.p(3)
    else:
        if diagnosis_state not in (1, 3):
            raise StateNotInModel(f"diagnosis state must be 1 or 3, got {diagnosis_state}")
        sel = solve_select(intens, diagnosis_state, x, cfg)
        other, bc = sel.p(4), sel.p(5)
    with np.errstate(divide="ignore", invalid="ignore"):
        surv = (1.0 - other - bc) / (1.0 - other)
    surv = np.clip(np.nan_to_num(surv, nan=0.0), 0.0, 1.0)
    # rounding can break monotonicity at the 1e-16 level
    surv = np.minimum.accumulate(surv)
    times = np.arange(len(surv)) * cfg.h
    return SurvivalCurve(x, diagnosis_state, intens.variant.value, times, surv)


def kx_from_grid(grid: OccupancyGrid) -> np.ndarray:
    """BC deaths over all deaths, as instantaneous flows at each grid age."""
    intens = grid.intensities
    a = grid.ages
    if grid.variant is ModelVariant.M0:
        p0, p1 = grid.p(0), grid.p(1)
        bc = p1 * intens.rate("13", a)
        total = p0 * intens.rate("02", a) + p1 * intens.rate("12", a) + bc
    else:
        p3 = grid.p(3)
        bc = p3 * intens.rate("35", a)
        total = (
            grid.p(0) * intens.rate("04", a)
            + grid.p(1) * intens.rate("14", a)
            + grid.p(2) * intens.rate("24", a)
            + p3 * intens.rate("34", a)
            + bc
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(total > 0, bc / total, 0.0)
    return np.clip(k, 0.0, 1.0)


def kx_model(
    intens: IntensitySet, cfg: SolverConfig = SolverConfig(), entry_age: float = KX_ENTRY_AGE
) -> KxCurve:
    """Model-implied k_x for a cohort entering healthy at ``entry_age``."""
    grid = solve(intens, entry_age, cfg)
    return KxCurve(grid.ages, kx_from_grid(grid), intens.variant.value)


def kx_observed(bc_deaths: RawPanel, other_deaths: RawPanel, year: int) -> KxCurve:
    """Share of BC deaths among BC plus other-cause deaths per age band.

    Bands with no deaths at all are left out.
    """
    counts = {}
    for panel in (bc_deaths, other_deaths):
        if year not in panel.years():
            raise MissingYear(f"{panel.kind} has no records for {year}")
        counts[panel.kind] = {band: c for (yr, band), (c, _) in panel.pooled().items() if yr == year}
    ages, ks = [], []
    for band in LADDER:
        bc = counts[bc_deaths.kind].get(band, 0)
        other = counts[other_deaths.kind].get(band, 0)
        if bc + other == 0:
            continue
        ages.append(band.midpoint)
        ks.append(bc / (bc + other))
    return KxCurve(np.array(ages), np.array(ks), "observed")


def mu02_from_kx(mu_all, kx):
    """Other-cause mortality as the complement of the BC share of all-cause
    mortality."""
    mu_all = np.asarray(mu_all, dtype=float)
    kx = np.asarray(kx, dtype=float)
    if np.any((kx < 0) | (kx > 1)) or np.any(~np.isfinite(kx)):
        raise OutOfRange("k_x must lie in [0, 1]")
    if np.any(mu_all < 0):
        raise OutOfRange("all-cause mortality must be >= 0")
    out = (1.0 - kx) * mu_all
    return out if out.ndim else float(out)

