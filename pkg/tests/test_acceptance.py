"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single PASS/FAIL line (also collected into the
terminal summary). Sub-checks are all evaluated before the verdict so a
failing line shows every number that missed.

Run alone with ``pytest tests/test_acceptance.py -v -s``.
"""

import time

import numpy as np
import pytest

from cipricing.analytics import kx_model, mu02_from_kx
from cipricing.data_ingest import LADDER, PanelRecord, RawPanel, average_rates
from cipricing.intensity import (
    STAGE_SHARE,
    ModelParams,
    Mu13Source,
    build_intensity_set,
    constant_intensity_set,
    england_table,
)
from cipricing.pricing import ContractSpec, Health, Product, price
from cipricing.sim_oracle import SimConfig, simulate
from cipricing.solver import SolverConfig, solve

REPORT: dict[str, str] = {}
CFG = SolverConfig()
TERMS = (10.0, 25.0, None)
RATES = (0.02, 0.04)
AGES = (30.0, 40.0, 50.0, 60.0)

# transition table as published: incidence, M1/M2 onset, other-cause, BC death
PUBLISHED = {
    "30-49": (0.00106, 0.00086, 0.00084, 0.16739),
    "50-54": (0.00277, 0.00224, 0.00228, 0.24005),
    "55-59": (0.00287, 0.00233, 0.00363, 0.24005),
    "60-64": (0.00349, 0.00282, 0.00588, 0.28060),
    "65-69": (0.00393, 0.00318, 0.00952, 0.28060),
    "70-74": (0.00345, 0.00280, 0.01643, 0.36002),
    "75-79": (0.00384, 0.00311, 0.02987, 0.40000),
    "80-84": (0.00417, 0.00338, 0.05496, 0.49711),
    "85-89": (0.00447, 0.00362, 0.10112, 0.50000),
}


class Checks:
    def __init__(self, cid: str, title: str):
        self.cid, self.title = cid, title
        self.failed: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, what: str) -> None:
        (self.notes if ok else self.failed).append(what)

    def verdict(self) -> None:
        status = "PASS" if not self.failed else "FAIL"
        detail = "; ".join(self.failed) if self.failed else "; ".join(self.notes[:6])
        line = f"{self.cid} {status}  {self.title}  [{detail}]"
        REPORT[self.cid] = line
        print(line)
        assert not self.failed, line


def rel(a, b):
    return (a - b) / b


def epv(model, intens, product, x, term, i, health="healthy", grid=None):
    spec = ContractSpec(Product(product), x, term, i, health=Health(health), model=model)
    return price(spec, intens, CFG, grid).epv


@pytest.fixture(scope="module")
def tables():
    return england_table("incidence"), england_table("other_mortality")


def sets(tables, **params):
    p = ModelParams(**params)
    return {v: build_intensity_set(*tables, v, p) for v in ("M0", "M1", "M2")}


@pytest.fixture(scope="module")
def base(tables):
    return sets(tables)


@pytest.fixture(scope="module")
def grids(base):
    return {(v, x): solve(base[v], x, CFG) for v in base for x in (30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0)}


def test_c1_calibration_golden_values():
    c = Checks("C1", "calibration table")
    t0 = time.perf_counter()
    cols = {k: england_table(k) for k in ("incidence", "onset_premetastatic", "other_mortality", "bc_death_metastatic")}
    for band, row in PUBLISHED.items():
        for (name, table), want in zip(cols.items(), row):
            c.check(table[band] == want, f"{name} {band}={table[band]} vs {want}")
        onset = STAGE_SHARE * cols["incidence"][band]
        c.check(abs(onset - row[1]) <= 0.5e-5 * (1 + STAGE_SHARE), f"0.81*inc {band} {onset:.6f} vs {row[1]}")
    # exact panels built from the table average back to it
    pop = 10**8
    for name in ("incidence", "other_mortality"):
        recs = tuple(PanelRecord(y, b, round(cols[name][b] * pop), pop) for y in range(2001, 2020) for b in LADDER)
        avg = average_rates(RawPanel("registrations", recs), (2001, 2019))
        ok = all(round(avg[b], 5) == cols[name][b] for b in LADDER)
        c.check(ok, f"panel average reproduces {name}")
    c.check(cols["incidence"]["30-49"] == 0.00106 and cols["other_mortality"]["85-89"] == 0.10112, "spot values")
    elapsed = time.perf_counter() - t0
    c.check(elapsed < 1.0, f"runtime {elapsed:.2f}s < 1s")
    c.verdict()


def test_c2_kx_reproduction(base):
    c = Checks("C2", "k_x at age 40, cohort from 30, +/-0.05")
    for model, want in (("M0", 0.48), ("M1", 0.18), ("M2", 0.25)):
        t0 = time.perf_counter()
        k = kx_model(base[model], CFG, entry_age=30.0).at(40.0)
        elapsed = time.perf_counter() - t0
        c.check(abs(k - want) <= 0.05, f"{model} k(40)={k:.3f} vs {want}")
        c.check(elapsed < 30.0, f"{model} runtime {elapsed:.1f}s")
    c.verdict()


def test_c3_model_ordering(base, grids):
    c = Checks("C3", "CII ordering M1 >= M2 >= M0, gap shrinks with term")
    n = 0
    for x in (30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0):
        for i in RATES:
            gaps = {}
            for term in TERMS:
                v = {m: epv(m, base[m], "CII_accelerated", x, term, i, grid=grids[(m, x)]) for m in base}
                n += 1
                c.check(v["M1"] >= v["M2"] >= v["M0"], f"x={x:g} T={term} i={i}: {v['M1']:.3f} {v['M2']:.3f} {v['M0']:.3f}")
                gaps[term] = rel(v["M1"], v["M2"])
            c.check(gaps[None] < gaps[10.0], f"x={x:g} i={i}: whole gap {gaps[None]:.4f} vs 10y {gaps[10.0]:.4f}")
    c.notes.insert(0, f"{n} contracts")
    c.verdict()


def test_c4_alpha_sensitivity(tables, base, grids):
    c = Checks("C4", "alpha sensitivity, +/-7pp")
    want = {("M1", 0.4): 28.0, ("M2", 0.4): 15.0, ("M1", 0.8): -14.0, ("M2", 0.8): -7.0}
    alt = {a: sets(tables, alpha=a) for a in (0.4, 0.8)}
    for (model, a), target in want.items():
        b0 = epv(model, base[model], "CII_accelerated", 30.0, 10.0, 0.02, grid=grids[(model, 30.0)])
        b1 = epv(model, alt[a][model], "CII_accelerated", 30.0, 10.0, 0.02)
        pct = 100 * rel(b1, b0)
        c.check(abs(pct - target) <= 7.0, f"{model} alpha={a}: {pct:+.1f}% vs {target:+.0f}%")
    for model in ("M1", "M2"):
        for health in ("premetastatic_now", "premetastatic_5yr_ago"):
            for x in AGES:
                vals = [epv(model, s[model], "Life", x, 10.0, 0.02, health) for s in (base, alt[0.4], alt[0.8])]
                c.check(vals[0] == vals[1] == vals[2], f"{model} {health} x={x:g} invariant to alpha")
    c.verdict()


def test_c5_beta_sensitivity(tables, base, grids):
    c = Checks("C5", "beta sensitivity, +/-3pp, signs exact")
    alt = {b: sets(tables, beta=b) for b in (1 / 10, 1 / 5)}
    want = {("M1", 1 / 10): 8.0, ("M2", 1 / 10): 2.0, ("M1", 1 / 5): -5.0, ("M2", 1 / 5): -2.0}
    for (model, b), target in want.items():
        life, cii = [], []
        for x in AGES:
            g = solve(alt[b][model], x, CFG)
            for term in TERMS:
                for i in RATES:
                    life.append(100 * rel(epv(model, alt[b][model], "Life", x, term, i, grid=g),
                                          epv(model, base[model], "Life", x, term, i, grid=grids[(model, x)])))
                    cii.append(100 * rel(epv(model, alt[b][model], "CII_accelerated", x, term, i, grid=g),
                                         epv(model, base[model], "CII_accelerated", x, term, i, grid=grids[(model, x)])))
        life, cii = np.array(life), np.array(cii)
        extreme = life.max() if target > 0 else life.min()
        tag = f"{model} beta=1/{round(1 / b)}"
        c.check(abs(extreme - target) <= 3.0, f"{tag} life up to {extreme:+.1f}% vs {target:+.0f}%")
        c.check(np.all(np.sign(life) == np.sign(target)), f"{tag} life signs")
        c.check(np.all(np.sign(cii) == np.sign(target)), f"{tag} CII signs")
        c.check(np.abs(cii).max() <= 2.0 + 3.0, f"{tag} CII |change| max {np.abs(cii).max():.1f}%")
    c.verdict()


def test_c6_dcis_swap(tables, base):
    c = Checks("C6", "DCIS mu13 under M0")
    dcis = build_intensity_set(*tables, "M0", ModelParams(mu13_m0_source=Mu13Source.DCIS))
    k0, k1 = kx_model(dcis, CFG), kx_model(base["M1"], CFG)
    sel = (k1.ages >= 35) & (k1.ages <= 89)
    gap = (k1.kx - k0.kx)[sel]
    c.check(bool(np.all(gap > 0)), f"k gap M1-M0dcis min {gap.min():.4f} on [35, 89]")
    for x in AGES:
        g0 = solve(dcis, x, CFG)
        for term in TERMS:
            for i in RATES:
                ref = epv("M1", base["M1"], "Life", x, term, i, "premetastatic_5yr_ago")
                for health in ("healthy", "premetastatic_now"):
                    v = epv("M0", dcis, "Life", x, term, i, health, grid=g0 if health == "healthy" else None)
                    c.check(v < ref, f"x={x:g} T={term} i={i} M0 {health} {v:.2f} < {ref:.2f}")
    c.verdict()


def test_c7_duration_dependence(base):
    c = Checks("C7", "5yr-ago vs now life premiums")
    for x in AGES:
        for term in TERMS:
            for i in RATES:
                now = epv("M1", base["M1"], "Life", x, term, i, "premetastatic_now")
                later = epv("M1", base["M1"], "Life", x, term, i, "premetastatic_5yr_ago")
                c.check(later < now, f"M1 x={x:g} T={term} i={i}: {later:.2f} < {now:.2f}")
                now2 = epv("M2", base["M2"], "Life", x, term, i, "premetastatic_now")
                later2 = epv("M2", base["M2"], "Life", x, term, i, "premetastatic_5yr_ago")
                c.check(later2 == now2, f"M2 x={x:g} T={term} i={i} equal")
    c.verdict()


def test_c8_property_suite(base, grids):
    c = Checks("C8", "property suite")
    # conservation
    worst = max(np.max(np.abs(grids[(m, 30.0)].probs.sum(axis=1) - 1)) for m in base)
    c.check(worst <= 1e-8, f"conservation {worst:.1e}")
    # constant-hazard closed form
    g = solve(constant_intensity_set("M0", {"01": 0.05, "02": 0.05}), 30.0, CFG)
    err = abs(g.p(0)[52] - np.exp(-0.1))
    c.check(err <= 1e-8, f"exp(-0.1) err {err:.1e}")
    g = solve(constant_intensity_set("M2", {"01": 0.1, "02": 0.05, "04": 0.05}), 30.0, CFG)
    err = abs(g.p(0)[260] - np.exp(-1.0))
    c.check(err <= 1e-8, f"exp(-1) err {err:.1e}")
    # RK4 step halving on a smooth constant-rate case
    s = constant_intensity_set("M0", {"01": 0.2, "02": 0.12, "12": 0.16, "13": 0.8})
    v = [solve(s, 30.0, SolverConfig(h=h, max_age=40.0)).probs[int(round(10 / h))] for h in (0.5, 0.25, 0.125)]
    ratio = np.max(np.abs(v[0] - v[1])) / np.max(np.abs(v[1] - v[2]))
    c.check(14 < ratio < 18, f"RK4 ratio {ratio:.2f}")
    # Monte Carlo vs ODE
    n = 200_000
    cps = (10.0, 30.0, 60.0)
    worst_z = 0.0
    for m in base:
        out = simulate(base[m], 0, 30.0, SimConfig(n, 2024), cps)
        grid = grids[(m, 30.0)]
        for t in cps:
            for st in out.states:
                p = grid.probs[int(round(t * 52)), grid.states.index(st)]
                se = np.sqrt(p * (1 - p) / n)
                diff = abs(out.frequency(t, st) - p)
                z = diff / se if se > 0 else (0.0 if diff == 0 else np.inf)
                worst_z = max(worst_z, z)
                c.check(z <= 3.0, f"MC {m} t={t:g} state {st}: z={z:.2f}")
    c.notes.append(f"MC worst z {worst_z:.2f}")
    # quadrature under h-halving, in units of the benefit
    half = SolverConfig(h=1 / 104)
    worst_q = 0.0
    for m in base:
        for product in ("CII_accelerated", "Life"):
            a = epv(m, base[m], product, 30.0, None, 0.02, grid=grids[(m, 30.0)])
            spec = ContractSpec(Product(product), 30.0, None, 0.02, model=m)
            b = price(spec, base[m], half).epv
            worst_q = max(worst_q, abs(a - b) / 1000)
    c.check(worst_q < 1e-4, f"quadrature change {worst_q:.1e} of benefit")
    # all-cause split round trip
    rng = np.random.default_rng(2024)
    mu02, mu13 = rng.uniform(1e-4, 0.1, 100), rng.uniform(0, 0.5, 100)
    e0, e1 = rng.uniform(1e3, 1e6, 100), rng.uniform(1e2, 1e5, 100)
    d = mu02 * e0 + mu02 * e1 + mu13 * e1
    back = mu02_from_kx(d / (e0 + e1), mu13 * e1 / d)
    err = np.max(np.abs(back / mu02 - 1))
    c.check(err < 1e-13, f"mu02 round trip rel err {err:.1e}")
    c.verdict()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
