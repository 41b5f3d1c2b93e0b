"""Command-line batch runner.

Usage: ``cipricing <command> [--config FILE] [--out-dir DIR] [--step H] [--seed N]``
with commands ``calibrate``, ``solve``, ``price``, ``survival``, ``kx``,
``sweep`` and ``simulate``. Exit codes: 0 success, 1 configuration error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import logging
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

from . import analytics, pricing
from .config import RunConfig, load_config, parse_number
from .data_ingest import LADDER, AgeBandRateTable, average_rates, load_panel
from .errors import ConfigError, DataError, ModelError, NumericalError
from .intensity import (
    STAGE_SHARE,
    IntensitySet,
    ModelParams,
    ModelVariant,
    Mu13Source,
    build_intensity_set,
    england_table,
)
from .pricing import ContractSpec, Health, Product
from .sim_oracle import SimConfig, simulate
from .solver import SolverConfig, solve

log = logging.getLogger("cipricing")

QUOTE_HEADER = ["model", "product", "health", "entry_age", "term", "interest", "benefit", "epv"]
SCENARIO_HEADER = ["scenario_id", "model", "alpha", "beta", "mu13_source"] + QUOTE_HEADER[1:] + ["rel_change"]
KX_HEADER = ["attained_age", "kx", "source"]
SURVIVAL_HEADER = ["t", "survival", "diagnosis_state", "diagnosis_age", "model"]
CALIBRATION_HEADER = ["age_band", "incidence", "onset_premetastatic", "other_mortality", "bc_death_metastatic"]
SIMULATION_HEADER = ["model", "t", "state", "frequency", "se", "ode"]

BASELINE = (0.6, 1 / 7, Mu13Source.METASTATIC)


def _fmt(x) -> str:
    if x is None:
        return "whole"
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


class Outputs:
    """Atomic CSV writer that can remove everything it wrote so far."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.written: list[Path] = []

    def write(self, name: str, header: list[str], rows) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        target = self.out_dir / name
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.written.append(target)
        log.info("wrote %s", target)
        return target

    def cleanup(self) -> None:
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()


def calibration_tables(cfg: RunConfig) -> tuple[AgeBandRateTable, AgeBandRateTable]:
    """Incidence and other-cause tables from the panels, else the shipped table."""
    if "registrations" in cfg.panels:
        reg = load_panel(cfg.panels["registrations"], "registrations")
        oth = load_panel(cfg.panels["other_deaths"], "other_deaths")
        return average_rates(reg, cfg.year_range), average_rates(oth, cfg.year_range)
    return england_table("incidence"), england_table("other_mortality")


def _intensities(cfg: RunConfig, variant: ModelVariant, params: ModelParams, tables) -> IntensitySet:
    return build_intensity_set(tables[0], tables[1], variant, params)


def contracts(cfg: RunConfig, variant: ModelVariant):
    """Every applicable contract of the grid for one model.

    Combinations that do not exist (CII on a diagnosed life, duration since
    diagnosis under M0) are skipped.
    """
    grid = itertools.product(cfg.entry_ages, cfg.products, cfg.health, cfg.terms, cfg.interest)
    for age, product, health, term, i in grid:
        if product is Product.CII and health is not Health.HEALTHY:
            continue
        if variant is ModelVariant.M0 and health is Health.FIVE_YEARS:
            continue
        yield ContractSpec(product, age, term, i, cfg.benefit, health, variant)


def quote_all(cfg: RunConfig, intens: IntensitySet, specs) -> list[tuple[ContractSpec, float]]:
    grids = {}
    out = []
    for spec in specs:
        grid = None
        if spec.health is Health.HEALTHY:
            if spec.entry_age not in grids:
                grids[spec.entry_age] = solve(intens, spec.entry_age, cfg.solver)
            grid = grids[spec.entry_age]
        out.append((spec, pricing.price(spec, intens, cfg.solver, grid).epv))
    return out


def _quote_row(spec: ContractSpec, epv: float) -> list:
    return [spec.model.value, spec.product.value, spec.health.value, spec.entry_age, spec.term,
            spec.interest, spec.benefit, epv]


def beta_label(beta: float) -> str:
    frac = Fraction(beta).limit_denominator(1000)
    return f"{frac.numerator}/{frac.denominator}" if abs(float(frac) - beta) < 1e-12 else repr(beta)


def scenarios(cfg: RunConfig, variant: ModelVariant) -> list[ModelParams]:
    """Baseline first, then the rest of the grid that affects ``variant``.

    The mu13 source only changes M0; alpha and beta only change M1/M2.
    """
    base = ModelParams(*BASELINE, mu13_m2_const=cfg.mu13_m2)
    out = [base]
    if variant is ModelVariant.M0:
        for src in cfg.mu13_sources:
            p = dataclasses.replace(base, mu13_m0_source=src)
            if p not in out:
                out.append(p)
    else:
        for a, b in itertools.product(cfg.alphas, cfg.betas):
            p = dataclasses.replace(base, alpha=a, beta=b)
            if not any(abs(q.alpha - a) < 1e-12 and abs(q.beta - b) < 1e-12 for q in out):
                out.append(p)
    return out


def cmd_calibrate(cfg: RunConfig, out: Outputs) -> None:
    inc, oth = calibration_tables(cfg)
    bc = england_table("bc_death_metastatic")
    rows = [[str(b), inc[b], STAGE_SHARE * inc[b], oth[b], bc[b]] for b in LADDER]
    out.write("calibration.csv", CALIBRATION_HEADER, rows)


def cmd_solve(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    for variant in cfg.variants:
        intens = _intensities(cfg, variant, cfg.base_params, tables)
        for age in cfg.entry_ages:
            grid = solve(intens, age, cfg.solver)
            header = ["t"] + [f"p0{j}" for j in grid.states]
            rows = ([t] + list(map(float, p)) for t, p in zip(grid.times.tolist(), grid.probs))
            out.write(f"grid_{variant.value}_x{age:g}.csv", header, rows)


def cmd_price(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    rows = []
    for variant in cfg.variants:
        intens = _intensities(cfg, variant, cfg.base_params, tables)
        rows += [_quote_row(s, e) for s, e in quote_all(cfg, intens, contracts(cfg, variant))]
    out.write("quotes.csv", QUOTE_HEADER, rows)


def cmd_sweep(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    rows = []
    for variant in cfg.variants:
        specs = list(contracts(cfg, variant))
        base_epv = None
        for params in scenarios(cfg, variant):
            intens = _intensities(cfg, variant, params, tables)
            quotes = quote_all(cfg, intens, specs)
            if base_epv is None:
                base_epv = [e for _, e in quotes]
            sid = f"{variant.value}/alpha={params.alpha!r}/beta={beta_label(params.beta)}/mu13={params.mu13_m0_source.value}"
            for (spec, epv), b in zip(quotes, base_epv):
                rel = (epv - b) / b if b != 0 else float("nan")
                rows.append([sid, variant.value, params.alpha, beta_label(params.beta), params.mu13_m0_source.value]
                            + _quote_row(spec, epv)[1:] + [rel])
    out.write("scenarios.csv", SCENARIO_HEADER, rows)


def cmd_survival(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    rows = []
    for variant in cfg.variants:
        intens = _intensities(cfg, variant, cfg.base_params, tables)
        states = (1,) if variant is ModelVariant.M0 else cfg.diagnosis_states
        for state in dict.fromkeys(states):
            for age in cfg.diagnosis_ages:
                curve = analytics.net_survival(intens, state, age, cfg.solver)
                rows += [[r[k] for k in SURVIVAL_HEADER] for r in curve.rows()]
    out.write("survival.csv", SURVIVAL_HEADER, rows)


def cmd_kx(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    rows = []
    for variant in cfg.variants:
        intens = _intensities(cfg, variant, cfg.base_params, tables)
        curve = analytics.kx_model(intens, cfg.solver)
        rows += [[r[k] for k in KX_HEADER] for r in curve.rows()]
    if "bc_deaths" in cfg.panels and "other_deaths" in cfg.panels:
        bc = load_panel(cfg.panels["bc_deaths"], "bc_deaths")
        oth = load_panel(cfg.panels["other_deaths"], "other_deaths")
        for year in cfg.observed_years:
            curve = analytics.kx_observed(bc, oth, year)
            rows += [[r["attained_age"], r["kx"], f"observed_{year}"] for r in curve.rows()]
    out.write("kx.csv", KX_HEADER, rows)


def cmd_simulate(cfg: RunConfig, out: Outputs) -> None:
    tables = calibration_tables(cfg)
    sim_step = cfg.sim_step if cfg.sim_step is not None else cfg.solver.h / 4
    horizon = cfg.solver.max_age - cfg.sim_entry_age
    rows = []
    for variant in cfg.variants:
        intens = _intensities(cfg, variant, cfg.base_params, tables)
        grid = solve(intens, cfg.sim_entry_age, cfg.solver)
        summary = simulate(intens, 0, cfg.sim_entry_age, SimConfig(cfg.n_paths, cfg.seed, sim_step, horizon),
                           cfg.checkpoints)
        for t in cfg.checkpoints:
            k = cfg.solver.n_steps(t) if t > 0 else 0
            for s in summary.states:
                rows.append([variant.value, t, s, summary.frequency(t, s), summary.std_error(t, s),
                             float(grid.probs[k, grid.states.index(s)])])
    out.write("simulation.csv", SIMULATION_HEADER, rows)


COMMANDS = {
    "calibrate": (cmd_calibrate, "write the age-band calibration table"),
    "solve": (cmd_solve, "dump occupancy grids from the healthy state"),
    "price": (cmd_price, "net single premiums for the contract grid"),
    "survival": (cmd_survival, "net cancer survival after diagnosis"),
    "kx": (cmd_kx, "model and observed k_x curves"),
    "sweep": (cmd_sweep, "premiums over the parameter grid against the baseline"),
    "simulate": (cmd_simulate, "Monte Carlo state frequencies next to the ODE solution"),
}


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="TOML run configuration")
    shared.add_argument("--out-dir", type=Path, help="output directory (overrides [output] dir)")
    shared.add_argument("--step", help="solver step in years, e.g. 1/52 (overrides [solver] step)")
    shared.add_argument("--seed", type=int, help="simulation seed (overrides [simulation] seed)")
    shared.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="cipricing", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[shared], help=text)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if args.step is not None:
        try:
            changes["solver"] = SolverConfig(parse_number(args.step, "--step"), cfg.solver.max_age)
        except ValueError as exc:
            raise ConfigError(f"--step: {exc}") from None
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        changes["seed"] = args.seed
    return dataclasses.replace(cfg, **changes) if changes else cfg


def run(command: str, cfg: RunConfig) -> list[Path]:
    out = Outputs(cfg.out_dir)
    try:
        COMMANDS[command][0](cfg, out)
    except BaseException:
        out.cleanup()
        raise
    return out.written


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        for path in run(args.command, cfg):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ModelError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
