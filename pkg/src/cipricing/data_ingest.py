"""Population panels and age-band rate tables.

A panel holds yearly counts (registrations or deaths) with mid-year
population exposure per age band; ``average_rates`` reduces it to one rate
per band over a year range.
"""

from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DuplicateKey, EmptyBand, MalformedRow, MissingBand, UnknownAgeBand

PANEL_HEADER = ("year", "age_band", "count", "population")
PANEL_KINDS = ("registrations", "bc_deaths", "other_deaths")
DEFAULT_YEARS = (2001, 2019)


@dataclass(frozen=True, order=True)
class AgeBand:
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"age band needs lo < hi, got {self.lo}-{self.hi}")

    @property
    def midpoint(self) -> float:
        # bands are inclusive of whole years: 50-54 covers [50, 55)
        return (self.lo + self.hi + 1) / 2

    @classmethod
    def parse(cls, text: str) -> "AgeBand":
        try:
            lo, hi = (int(part) for part in text.strip().replace("–", "-").split("-"))
        except ValueError:
            raise UnknownAgeBand(f"cannot parse age band {text!r}") from None
        band = cls(lo, hi) if lo < hi else None
        if band not in LADDER:
            raise UnknownAgeBand(f"age band {text!r} is not on the ladder")
        return band

    def __str__(self) -> str:
        return f"{self.lo}-{self.hi}"


LADDER: tuple[AgeBand, ...] = (AgeBand(30, 49),) + tuple(
    AgeBand(lo, lo + 4) for lo in range(50, 90, 5)
)
MIDPOINTS = np.array([band.midpoint for band in LADDER])


@dataclass(frozen=True)
class PanelRecord:
    year: int
    age_band: AgeBand
    count: int
    population: float


@dataclass(frozen=True)
class RawPanel:
    """Yearly counts and exposures for one kind of event.

    Uniqueness of ``(year, age_band)`` is enforced when reading files; in
    memory, repeated keys are pooled by ``average_rates``.
    """

    kind: str
    records: tuple[PanelRecord, ...]

    def __post_init__(self):
        if self.kind not in PANEL_KINDS:
            raise ValueError(f"unknown panel kind {self.kind!r}")
        for rec in self.records:
            if rec.age_band not in LADDER:
                raise UnknownAgeBand(str(rec.age_band))
            if rec.count < 0:
                raise MalformedRow(f"negative count in {rec}")
            if not rec.population > 0:
                raise MalformedRow(f"population must be positive in {rec}")

    def years(self) -> list[int]:
        return sorted({rec.year for rec in self.records})

    def pooled(self) -> dict[tuple[int, AgeBand], tuple[int, float]]:
        """Counts and exposure summed per (year, band)."""
        out: dict[tuple[int, AgeBand], tuple[int, float]] = {}
        for rec in self.records:
            key = (rec.year, rec.age_band)
            c, p = out.get(key, (0, 0.0))
            out[key] = (c + rec.count, p + rec.population)
        return out


@dataclass(frozen=True)
class AgeBandRateTable:
    entries: Mapping[AgeBand, float]
    kind: str
    year_range: tuple[int, int] | None = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        missing = [str(b) for b in LADDER if b not in self.entries]
        if missing:
            raise MissingBand(f"{self.kind}: no rate for bands {', '.join(missing)}")
        extra = [str(b) for b in self.entries if b not in LADDER]
        if extra:
            raise UnknownAgeBand(", ".join(extra))
        if any(r < 0 or not np.isfinite(r) for r in self.entries.values()):
            raise MalformedRow(f"{self.kind}: rates must be finite and >= 0")
        # fix ladder order regardless of how the mapping was built
        object.__setattr__(self, "entries", {b: float(self.entries[b]) for b in LADDER})

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.entries[b] for b in LADDER])

    def __getitem__(self, band: AgeBand | str) -> float:
        if isinstance(band, str):
            band = AgeBand.parse(band)
        return self.entries[band]

    def scaled(self, factor: float, kind: str | None = None) -> "AgeBandRateTable":
        return AgeBandRateTable(
            {b: r * factor for b, r in self.entries.items()},
            kind or self.kind,
            self.year_range,
            self.source,
        )


def _parse_row(row: list[str], lineno: int, path) -> PanelRecord:
    if len(row) != 4:
        raise MalformedRow(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
    year_s, band_s, count_s, pop_s = (s.strip() for s in row)
    band = AgeBand.parse(band_s)
    try:
        year = int(year_s)
        count = int(count_s)
        population = float(pop_s)
    except ValueError:
        raise MalformedRow(f"{path}:{lineno}: bad value in {row}") from None
    if count < 0:
        raise MalformedRow(f"{path}:{lineno}: negative count {count}")
    if not population > 0 or not np.isfinite(population):
        raise MalformedRow(f"{path}:{lineno}: population must be positive, got {pop_s}")
    return PanelRecord(year, band, count, population)


def load_panel(path: str | Path, kind: str) -> RawPanel:
    """Read a ``year,age_band,count,population`` CSV file."""
    path = Path(path)
    records = []
    seen: set[tuple[int, AgeBand]] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PANEL_HEADER:
            raise MalformedRow(f"{path}: header must be {','.join(PANEL_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            rec = _parse_row(row, lineno, path)
            key = (rec.year, rec.age_band)
            if key in seen:
                raise DuplicateKey(f"{path}:{lineno}: repeated ({rec.year}, {rec.age_band})")
            seen.add(key)
            records.append(rec)
    return RawPanel(kind, tuple(records))


def average_rates(panel: RawPanel, years: tuple[int, int] = DEFAULT_YEARS) -> AgeBandRateTable:
    """Unweighted mean over years of count / mid-year population, per band.

    Years outside ``years`` (inclusive) are ignored. Bands missing some years
    inside the range are averaged over what is there, with a warning.
    """
    first, last = years
    if first > last:
        raise ValueError(f"empty year range {years}")
    yearly: dict[AgeBand, list[float]] = defaultdict(list)
    for (year, band), (count, pop) in sorted(panel.pooled().items()):
        if first <= year <= last:
            yearly[band].append(count / pop)
    expected = last - first + 1
    entries = {}
    for band in LADDER:
        values = yearly.get(band)
        if not values:
            raise EmptyBand(f"{panel.kind}: band {band} has no records in {first}-{last}")
        if len(values) < expected:
            warnings.warn(
                f"{panel.kind}: band {band} has {len(values)} of {expected} years in range",
                stacklevel=2,
            )
        entries[band] = float(np.mean(values))
    return AgeBandRateTable(entries, panel.kind, (first, last))


def load_rate_table(path: str | Path, column: str = "rate", kind: str | None = None) -> AgeBandRateTable:
    """Read one rate column from an ``age_band,...`` CSV file."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "age_band" not in reader.fieldnames:
            raise MalformedRow(f"{path}: missing age_band column")
        if column not in reader.fieldnames:
            raise MalformedRow(f"{path}: missing column {column!r}")
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            band = AgeBand.parse(row["age_band"])
            if band in entries:
                raise DuplicateKey(f"{path}:{lineno}: repeated band {band}")
            try:
                entries[band] = float(row[column])
            except (TypeError, ValueError):
                raise MalformedRow(f"{path}:{lineno}: bad rate {row[column]!r}") from None
    return AgeBandRateTable(entries, kind or column, source=str(path))

