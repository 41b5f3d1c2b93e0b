"""Run configuration read from a TOML file.

Every table and key is optional; unknown ones are rejected. Example::

    [data]
    registrations = "panels/registrations.csv"
    bc_deaths = "panels/bc_deaths.csv"
    other_deaths = "panels/other_deaths.csv"
    year_range = [2001, 2019]

    [models]
    variants = ["M0", "M1", "M2"]

    [params]                 # first entries drive price/solve/survival/kx
    alpha = [0.6, 0.4, 0.8]
    beta = ["1/7", "1/5", "1/10"]
    mu13_source = ["metastatic", "dcis"]
    mu13_m2 = 0.0194

    [contracts]
    products = ["CII_accelerated", "Life"]
    health = ["healthy", "premetastatic_now", "premetastatic_5yr_ago"]
    entry_ages = [30, 40, 50, 60]
    terms = [10, 25, "whole"]
    interest = [0.02, 0.04]
    benefit = 1000

    [solver]
    step = "1/52"
    max_age = 90

    [analytics]
    diagnosis_ages = [30, 60]
    diagnosis_states = [1, 3]
    observed_years = [2001, 2019]

    [simulation]
    n_paths = 200000
    seed = 2024
    sim_step = "1/208"
    entry_age = 30
    checkpoints = [10, 30, 60]

    [output]
    dir = "out"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data_ingest import DEFAULT_YEARS, PANEL_KINDS
from .errors import ConfigError
from .intensity import MU13_M2, ModelParams, ModelVariant, Mu13Source
from .pricing import Health, Product
from .solver import SolverConfig

SCHEMA = {
    "data": {"registrations", "bc_deaths", "other_deaths", "year_range"},
    "models": {"variants"},
    "params": {"alpha", "beta", "mu13_source", "mu13_m2"},
    "contracts": {"products", "health", "entry_ages", "terms", "interest", "benefit"},
    "solver": {"step", "max_age"},
    "analytics": {"diagnosis_ages", "diagnosis_states", "observed_years"},
    "simulation": {"n_paths", "seed", "sim_step", "entry_age", "checkpoints"},
    "output": {"dir"},
}


def parse_number(value, what: str) -> float:
    """A real number, or a fraction written as a string such as ``"1/7"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{what}: expected a number or fraction string, got {value!r}")


def _list(value, what: str) -> list:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{what}: list must not be empty")
    return items


@dataclass(frozen=True)
class RunConfig:
    panels: dict[str, Path] = field(default_factory=dict)
    year_range: tuple[int, int] = DEFAULT_YEARS
    variants: tuple[ModelVariant, ...] = tuple(ModelVariant)
    alphas: tuple[float, ...] = (0.6,)
    betas: tuple[float, ...] = (1 / 7,)
    beta_labels: tuple[str, ...] = ("1/7",)
    mu13_sources: tuple[Mu13Source, ...] = (Mu13Source.METASTATIC,)
    mu13_m2: float = MU13_M2
    products: tuple[Product, ...] = (Product.CII, Product.LIFE)
    health: tuple[Health, ...] = (Health.HEALTHY,)
    entry_ages: tuple[float, ...] = (30.0,)
    terms: tuple[float | None, ...] = (10.0, 25.0, None)
    interest: tuple[float, ...] = (0.02, 0.04)
    benefit: float = 1000.0
    solver: SolverConfig = SolverConfig()
    diagnosis_ages: tuple[float, ...] = (30.0, 60.0)
    diagnosis_states: tuple[int, ...] = (1, 3)
    observed_years: tuple[int, ...] = (2001, 2019)
    n_paths: int = 200_000
    seed: int = 2024
    sim_step: float | None = None
    sim_entry_age: float = 30.0
    checkpoints: tuple[float, ...] = (10.0, 30.0, 60.0)
    out_dir: Path = Path("out")

    @property
    def base_params(self) -> ModelParams:
        return ModelParams(self.alphas[0], self.betas[0], self.mu13_sources[0], self.mu13_m2)


def _check_keys(raw: dict) -> None:
    for table, body in raw.items():
        if table not in SCHEMA:
            raise ConfigError(f"unknown table [{table}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{table}] must be a table")
        unknown = set(body) - SCHEMA[table]
        if unknown:
            raise ConfigError(f"[{table}]: unknown keys {sorted(unknown)}")


def _enum_list(enum_cls, values, what):
    try:
        return tuple(enum_cls(v) for v in _list(values, what))
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _int_list(values, what) -> tuple[int, ...]:
    items = _list(values, what)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in items):
        raise ConfigError(f"{what}: expected integers")
    return tuple(items)


def from_dict(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a parsed config; relative paths resolve against ``base_dir``."""
    _check_keys(raw)
    kw: dict = {}
    data = raw.get("data", {})
    panels = {}
    for kind in PANEL_KINDS:
        if kind in data:
            path = Path(data[kind])
            path = path if path.is_absolute() else base_dir / path
            if not path.is_file():
                raise ConfigError(f"[data] {kind}: no such file {path}")
            panels[kind] = path
    if ("registrations" in panels) != ("other_deaths" in panels):
        raise ConfigError("[data] calibration needs both registrations and other_deaths panels")
    kw["panels"] = panels
    if "year_range" in data:
        yr = _int_list(data["year_range"], "[data] year_range")
        if len(yr) != 2 or yr[0] > yr[1]:
            raise ConfigError("[data] year_range must be [first, last]")
        kw["year_range"] = yr

    if "variants" in raw.get("models", {}):
        kw["variants"] = _enum_list(ModelVariant, raw["models"]["variants"], "[models] variants")

    params = raw.get("params", {})
    if "alpha" in params:
        kw["alphas"] = tuple(parse_number(v, "[params] alpha") for v in _list(params["alpha"], "[params] alpha"))
    if "beta" in params:
        betas = _list(params["beta"], "[params] beta")
        kw["betas"] = tuple(parse_number(v, "[params] beta") for v in betas)
        kw["beta_labels"] = tuple(str(v) for v in betas)
    if "mu13_source" in params:
        kw["mu13_sources"] = _enum_list(Mu13Source, params["mu13_source"], "[params] mu13_source")
    if "mu13_m2" in params:
        kw["mu13_m2"] = parse_number(params["mu13_m2"], "[params] mu13_m2")

    con = raw.get("contracts", {})
    if "products" in con:
        kw["products"] = _enum_list(Product, con["products"], "[contracts] products")
    if "health" in con:
        kw["health"] = _enum_list(Health, con["health"], "[contracts] health")
    if "entry_ages" in con:
        kw["entry_ages"] = tuple(parse_number(v, "[contracts] entry_ages") for v in _list(con["entry_ages"], "[contracts] entry_ages"))
    if "terms" in con:
        kw["terms"] = tuple(
            None if v == "whole" else parse_number(v, "[contracts] terms") for v in _list(con["terms"], "[contracts] terms")
        )
    if "interest" in con:
        kw["interest"] = tuple(parse_number(v, "[contracts] interest") for v in _list(con["interest"], "[contracts] interest"))
    if "benefit" in con:
        kw["benefit"] = parse_number(con["benefit"], "[contracts] benefit")

    sol = raw.get("solver", {})
    try:
        kw["solver"] = SolverConfig(
            parse_number(sol.get("step", 1 / 52), "[solver] step"),
            parse_number(sol.get("max_age", 90.0), "[solver] max_age"),
        )
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}") from None

    an = raw.get("analytics", {})
    if "diagnosis_ages" in an:
        kw["diagnosis_ages"] = tuple(parse_number(v, "[analytics] diagnosis_ages") for v in _list(an["diagnosis_ages"], "[analytics] diagnosis_ages"))
    if "diagnosis_states" in an:
        kw["diagnosis_states"] = _int_list(an["diagnosis_states"], "[analytics] diagnosis_states")
    if "observed_years" in an:
        kw["observed_years"] = _int_list(an["observed_years"], "[analytics] observed_years")

    sim = raw.get("simulation", {})
    if "n_paths" in sim:
        kw["n_paths"] = _int_list(sim["n_paths"], "[simulation] n_paths")[0]
    if "seed" in sim:
        kw["seed"] = _int_list(sim["seed"], "[simulation] seed")[0]
    if "sim_step" in sim:
        kw["sim_step"] = parse_number(sim["sim_step"], "[simulation] sim_step")
    if "entry_age" in sim:
        kw["sim_entry_age"] = parse_number(sim["entry_age"], "[simulation] entry_age")
    if "checkpoints" in sim:
        kw["checkpoints"] = tuple(parse_number(v, "[simulation] checkpoints") for v in _list(sim["checkpoints"], "[simulation] checkpoints"))

    if "dir" in raw.get("output", {}):
        out = Path(raw["output"]["dir"])
        kw["out_dir"] = out if out.is_absolute() else base_dir / out

    cfg = RunConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Cross-field checks; raises ConfigError."""
    try:
        for a in cfg.alphas:
            for b in cfg.betas:
                ModelParams(a, b, cfg.mu13_sources[0], cfg.mu13_m2)
    except ValueError as exc:
        raise ConfigError(f"[params]: {exc}") from None
    for age in cfg.entry_ages + (cfg.sim_entry_age,):
        if not 30 <= age <= 60:
            raise ConfigError(f"entry ages must lie in [30, 60], got {age}")
    for t in cfg.terms:
        if t is not None and not t > 0:
            raise ConfigError(f"[contracts] terms must be positive, got {t}")
        if t is not None and max(cfg.entry_ages) + t > cfg.solver.max_age + 1e-9:
            raise ConfigError(f"[contracts] term {t} runs past age {cfg.solver.max_age}")
    if Product.LIFE not in cfg.products and Health.HEALTHY not in cfg.health:
        raise ConfigError("[contracts] grid is empty: CII is sold to healthy lives only")
    if any(i < 0 for i in cfg.interest):
        raise ConfigError("[contracts] interest must be >= 0")
    if cfg.benefit < 0:
        raise ConfigError("[contracts] benefit must be >= 0")
    if any(s not in (1, 3) for s in cfg.diagnosis_states):
        raise ConfigError("[analytics] diagnosis_states must be 1 or 3")
    if cfg.n_paths < 1:
        raise ConfigError("[simulation] n_paths must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("[simulation] seed must be a 64-bit unsigned integer")
    if cfg.sim_step is not None and not cfg.sim_step > 0:
        raise ConfigError("[simulation] sim_step must be positive")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, path.parent)
