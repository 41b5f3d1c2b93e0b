"""Transition intensities for the three model variants.

State numbering follows the model diagrams:

* M0 (industry Markov): 0 no BC, 1 BC observed, 2 dead other causes,
  3 dead BC.
* M1/M2: 0 no BC, 1 pre-metastatic observed, 2 pre-metastatic unobserved,
  3 metastatic, 4 dead other causes, 5 dead BC.

Transition labels are two-character strings ``"ij"``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .data_ingest import LADDER, AgeBandRateTable, load_rate_table
from .errors import (
    InsufficientKnots,
    InvalidParams,
    InvalidVariant,
    NegativeDuration,
    NonpositiveRate,
    ZeroExposure,
)

RATE_FLOOR = 1e-12
STAGE_SHARE = 0.81
MU13_M2 = 0.0194


class ModelVariant(str, enum.Enum):
    M0 = "M0"
    M1 = "M1"
    M2 = "M2"

    @property
    def n_states(self) -> int:
        return 4 if self is ModelVariant.M0 else 6

    @property
    def dead_states(self) -> tuple[int, ...]:
        return (2, 3) if self is ModelVariant.M0 else (4, 5)


class Mu13Source(str, enum.Enum):
    METASTATIC = "metastatic"
    DCIS = "dcis"


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 0.6
    beta: float = 1 / 7
    mu13_m0_source: Mu13Source = Mu13Source.METASTATIC
    mu13_m2_const: float = MU13_M2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidParams(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise InvalidParams(f"beta must lie in (0, 1), got {self.beta}")
        if not self.mu13_m2_const >= 0:
            raise InvalidParams(f"constant mu13 must be >= 0, got {self.mu13_m2_const}")
        object.__setattr__(self, "mu13_m0_source", Mu13Source(self.mu13_m0_source))


class IntensityCurve:
    """Age-continuous rate: ``factor * exp(s(age))``.

    ``s`` is a natural cubic spline through ``(age, log_rate)`` knots, held
    constant outside the first and last knot. ``factor`` lets proportional
    curves (e.g. the unobserved-onset split) share one spline exactly.
    """

    def __init__(self, ages, log_rates, factor: float = 1.0):
        ages = np.asarray(ages, dtype=float)
        log_rates = np.asarray(log_rates, dtype=float)
        if ages.ndim != 1 or ages.shape != log_rates.shape:
            raise ValueError("ages and log_rates must be 1-d and the same length")
        if len(ages) < 2:
            raise InsufficientKnots("need at least two knots")
        if np.any(np.diff(ages) <= 0):
            raise ValueError("knot ages must be strictly increasing")
        if not factor >= 0:
            raise ValueError("factor must be >= 0")
        self.ages = ages
        self.log_rates = log_rates
        self.factor = float(factor)
        self._spline = CubicSpline(ages, log_rates, bc_type="natural")

    @classmethod
    def constant(cls, rate: float) -> "IntensityCurve":
        return cls([0.0, 1.0], [0.0, 0.0], factor=rate)

    @property
    def knots(self) -> list[tuple[float, float]]:
        shift = np.log(self.factor) if self.factor > 0 else -np.inf
        return list(zip(self.ages.tolist(), (self.log_rates + shift).tolist()))

    def __call__(self, age):
        a = np.clip(np.asarray(age, dtype=float), self.ages[0], self.ages[-1])
        out = self.factor * np.exp(self._spline(a))
        return out if out.ndim else float(out)

    def derivative(self, age, order: int = 1):
        """Derivative of the log-spline (zero outside the knot range)."""
        a = np.asarray(age, dtype=float)
        inside = (a >= self.ages[0]) & (a <= self.ages[-1])
        return np.where(inside, self._spline(np.clip(a, self.ages[0], self.ages[-1]), order), 0.0)

    def scaled(self, factor: float) -> "IntensityCurve":
        return IntensityCurve(self.ages, self.log_rates, self.factor * factor)

    def __repr__(self) -> str:
        return f"IntensityCurve({len(self.ages)} knots, ages {self.ages[0]}-{self.ages[-1]}, factor={self.factor:g})"


class DurationHazard:
    """Rate as a function of time since entry: linear between tabulated
    points and ``tail_rate`` beyond the last one."""

    def __init__(self, durations, rates, tail_rate: float | None = None):
        z = np.asarray(durations, dtype=float)
        r = np.asarray(rates, dtype=float)
        if z.ndim != 1 or z.shape != r.shape or len(z) == 0:
            raise ValueError("durations and rates must be non-empty 1-d arrays of equal length")
        if z[0] != 0:
            raise ValueError("durations must start at 0")
        if np.any(np.diff(z) <= 0):
            raise ValueError("durations must be strictly increasing")
        if np.any(r < 0):
            raise ValueError("rates must be >= 0")
        self.durations = z
        self.rates = r
        self.tail_rate = float(r[-1] if tail_rate is None else tail_rate)
        if self.tail_rate < 0:
            raise ValueError("tail rate must be >= 0")

    @classmethod
    def constant(cls, rate: float) -> "DurationHazard":
        return cls([0.0], [rate], rate)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.rates == self.tail_rate))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise NegativeDuration(f"duration must be >= 0, got {z.min()}")
        out = np.interp(z, self.durations, self.rates, right=self.tail_rate)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "DurationHazard":
        return DurationHazard(self.durations, self.rates * factor, self.tail_rate * factor)

    def __repr__(self) -> str:
        return f"DurationHazard({len(self.durations)} points, tail={self.tail_rate:g})"


def duration_mu13(hazard: DurationHazard, z):
    return hazard(z)


def mu35_from_early_death(no_early: float, early: float) -> float:
    """Death rate when survivors give a full year of exposure and deaths
    half a year each."""
    if no_early < 0 or early < 0:
        raise ValueError("counts must be >= 0")
    if no_early + early <= 0:
        raise ZeroExposure("no exposure")
    return early / (no_early + early / 2)


def smooth_log_curve(table: AgeBandRateTable) -> IntensityCurve:
    """Natural cubic spline through log band rates at band midpoints."""
    rates = table.rates
    if np.any(rates < 0):
        raise NonpositiveRate(f"{table.kind}: negative rate")
    if np.count_nonzero(rates > 0) < 2:
        raise InsufficientKnots(f"{table.kind}: need at least two positive band rates")
    if np.any(rates == 0):
        warnings.warn(f"{table.kind}: zero band rates floored at {RATE_FLOOR:g}", stacklevel=2)
        rates = np.maximum(rates, RATE_FLOOR)
    return IntensityCurve([b.midpoint for b in LADDER], np.log(rates))


def _resource(name: str):
    return resources.files("cipricing").joinpath("data", name)


def england_table(column: str) -> AgeBandRateTable:
    """One column of the shipped England 2001-2019 calibration table.

    Columns: ``incidence``, ``onset_premetastatic``, ``other_mortality``,
    ``bc_death_metastatic``.
    """
    with resources.as_file(_resource("england_rates_v1.csv")) as path:
        table = load_rate_table(path, column, kind=column)
    return AgeBandRateTable(table.entries, column, (2001, 2019), "england_rates_v1")


def dcis_table() -> AgeBandRateTable:
    with resources.as_file(_resource("dcis_mu13_v1.csv")) as path:
        table = load_rate_table(path, "rate", kind="bc_death_dcis")
    return AgeBandRateTable(table.entries, "bc_death_dcis", (2001, 2019), "dcis_mu13_v1")


def metastasis_duration_hazard() -> DurationHazard:
    """Pre-metastatic to metastatic rate by years since diagnosis."""
    text = _resource("metastasis_duration_v1.csv").read_text(encoding="utf-8")
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    z = [float(a) for a, _ in rows]
    r = [float(b) for _, b in rows]
    return DurationHazard(z, r, r[-1])


@dataclass(frozen=True)
class IntensitySet:
    """All transition intensities of one model variant.

    ``curves`` maps age-only transitions to curves; ``duration`` maps the
    duration-dependent ones (``"13"``, ``"23"`` in M1/M2) to hazards. M2 uses
    constant duration hazards, so the same solver code covers both.
    """

    variant: ModelVariant
    params: ModelParams
    curves: Mapping[str, IntensityCurve]
    duration: Mapping[str, DurationHazard] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        required = _REQUIRED[self.variant]
        missing = [lab for lab in required[0] if lab not in self.curves]
        missing += [lab for lab in required[1] if lab not in self.duration]
        if missing:
            raise InvalidVariant(f"{self.variant.value}: missing intensities {missing}")
        if self.variant is ModelVariant.M2 and not all(h.is_constant for h in self.duration.values()):
            raise InvalidVariant("M2 needs duration-independent metastasis rates")

    def rate(self, label: str, ages):
        return self.curves[label](ages)

    def duration_rate(self, label: str, z):
        return self.duration[label](z)

    def replace(self, **changes) -> "IntensitySet":
        curves = dict(self.curves)
        duration = dict(self.duration)
        for label, value in changes.items():
            if isinstance(value, DurationHazard):
                duration[label] = value
            else:
                curves[label] = value
        return IntensitySet(self.variant, self.params, curves, duration)


_REQUIRED = {
    ModelVariant.M0: (("01", "02", "12", "13"), ()),
    ModelVariant.M1: (("01", "02", "04", "14", "24", "34", "35"), ("13", "23")),
    ModelVariant.M2: (("01", "02", "04", "14", "24", "34", "35"), ("13", "23")),
}


def constant_intensity_set(variant, rates: Mapping[str, float], params: ModelParams | None = None) -> IntensitySet:
    """Toy set with constant rates; unspecified transitions are zero."""
    variant = ModelVariant(variant)
    ages_req, dur_req = _REQUIRED[variant]
    unknown = set(rates) - set(ages_req) - set(dur_req)
    if unknown:
        raise InvalidVariant(f"{variant.value} has no transitions {sorted(unknown)}")
    curves = {lab: IntensityCurve.constant(rates.get(lab, 0.0)) for lab in ages_req}
    duration = {lab: DurationHazard.constant(rates.get(lab, 0.0)) for lab in dur_req}
    return IntensitySet(variant, params or ModelParams(), curves, duration)


def build_intensity_set(
    incidence: AgeBandRateTable,
    other_mortality: AgeBandRateTable,
    variant,
    params: ModelParams | None = None,
    *,
    bc_death: AgeBandRateTable | None = None,
    dcis: AgeBandRateTable | None = None,
    metastasis: DurationHazard | None = None,
    stage_share: float = STAGE_SHARE,
) -> IntensitySet:
    """Calibrated intensity set for one variant.

    ``bc_death`` (metastatic BC death rates), ``dcis`` and ``metastasis``
    default to the shipped literature tables.
    """
    variant = ModelVariant(variant)
    params = params or ModelParams()
    bc_death = bc_death if bc_death is not None else england_table("bc_death_metastatic")
    other = smooth_log_curve(other_mortality)

    if variant is ModelVariant.M0:
        if params.mu13_m0_source is Mu13Source.DCIS:
            bc = smooth_log_curve(dcis if dcis is not None else dcis_table())
        else:
            bc = smooth_log_curve(bc_death)
        onset = smooth_log_curve(incidence)
        curves = {"01": onset, "02": other, "12": other, "13": bc}
        return IntensitySet(variant, params, curves)

    onset = smooth_log_curve(incidence.scaled(stage_share, kind="onset_premetastatic"))
    curves = {
        "01": onset,
        "02": onset.scaled((1 - params.alpha) / params.alpha),
        "04": other,
        "14": other,
        "24": other,
        "34": other,
        "35": smooth_log_curve(bc_death),
    }
    if variant is ModelVariant.M1:
        mu13 = metastasis if metastasis is not None else metastasis_duration_hazard()
    else:
        mu13 = DurationHazard.constant(params.mu13_m2_const)
    duration = {"13": mu13, "23": mu13.scaled(1 / params.beta)}
    return IntensitySet(variant, params, curves, duration)
