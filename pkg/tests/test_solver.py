import numpy as np
import pytest
from scipy.linalg import expm

from cipricing.errors import InvalidState, InvalidVariant, StepTooLarge
from cipricing.intensity import DurationHazard, build_intensity_set, constant_intensity_set
from cipricing.solver import (
    SELECT_STATES,
    SolverConfig,
    cohort_sweep,
    convolution_occupancy,
    solve,
    solve_m0,
    solve_m1,
    solve_m2,
    solve_select,
)

CFG = SolverConfig()
M0_RATES = {"01": 0.05, "02": 0.03, "12": 0.04, "13": 0.2}
SEMI_RATES = {"01": 0.02, "02": 0.01, "04": 0.015, "14": 0.015, "24": 0.015, "34": 0.015, "35": 0.3,
              "13": 0.05, "23": 0.35}


def generator(n, rates):
    Q = np.zeros((n, n))
    for lab, r in rates.items():
        Q[int(lab[0]), int(lab[1])] = r
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    return Q


def expm_oracle(n, rates, t, start=0):
    return expm(generator(n, rates) * t)[start]


def test_zero_intensities_identity():
    for v in ("M0", "M1", "M2"):
        g = solve(constant_intensity_set(v, {}), 30.0, CFG)
        assert np.all(g.p(0) == 1.0)
        assert np.all(g.probs[:, 1:] == 0.0)


def test_m0_two_decrement_closed_form():
    g = solve_m0(constant_intensity_set("M0", {"01": 0.05, "02": 0.05}), 30.0, CFG)
    assert abs(g.p(0)[52] - np.exp(-0.1)) <= 1e-8
    assert abs(g.p(1)[52] - 0.5 * (1 - np.exp(-0.1))) <= 1e-8
    assert g.p(0)[52] == pytest.approx(0.904837, abs=5e-7)
    assert g.p(1)[52] == pytest.approx(0.047581, abs=5e-7)


def test_m0_illness_death_closed_form():
    r = M0_RATES
    g = solve_m0(constant_intensity_set("M0", r), 30.0, CFG)
    l0, l1 = r["01"] + r["02"], r["12"] + r["13"]
    t = g.times
    p01 = r["01"] * (np.exp(-l0 * t) - np.exp(-l1 * t)) / (l1 - l0)
    assert np.max(np.abs(g.p(0) - np.exp(-l0 * t))) <= 1e-8
    assert np.max(np.abs(g.p(1) - p01)) <= 1e-8
    for k in (520, 1560, 3120):
        assert np.max(np.abs(g.probs[k] - expm_oracle(4, r, t[k]))) <= 1e-8


def test_m0_from_diagnosed_state():
    r = M0_RATES
    g = solve_m0(constant_intensity_set("M0", r), 40.0, CFG, start_state=1)
    assert g.states == (1, 2, 3)
    t = g.times[-1]
    assert np.max(np.abs(g.probs[-1] - expm_oracle(4, r, t, start=1)[1:])) <= 1e-8
    with pytest.raises(InvalidState):
        solve_m0(constant_intensity_set("M0", r), 40.0, CFG, start_state=2)


def test_m2_closed_forms():
    g = solve_m2(constant_intensity_set("M2", {"01": 0.1, "02": 0.05, "04": 0.05}), 30.0, CFG)
    assert abs(g.p(0)[5 * 52] - np.exp(-1.0)) <= 1e-8
    g = solve_m2(constant_intensity_set("M2", SEMI_RATES), 30.0, CFG)
    for k in (520, 1560, 3120):
        assert np.max(np.abs(g.probs[k] - expm_oracle(6, SEMI_RATES, g.times[k]))) <= 1e-8


def test_select_state3_exponential():
    s = constant_intensity_set("M2", {"35": 0.5})
    sel = solve_select(s, 3, 40.0, CFG)
    assert sel.states == SELECT_STATES[3]
    assert abs(sel.p(3)[104] - np.exp(-1.0)) <= 1e-8
    assert sel.p(3)[104] == pytest.approx(0.367879, abs=5e-7)


def test_select_constant_rates_match_expm():
    s = constant_intensity_set("M1", SEMI_RATES)
    for entry in (1, 2, 3):
        sel = solve_select(s, entry, 35.0, CFG)
        exact = expm_oracle(6, SEMI_RATES, sel.times[-1], start=entry)[list(sel.states)]
        assert np.max(np.abs(sel.probs[-1] - exact)) <= 1e-8


def test_select_early_metastasis_is_second_order(england):
    """mu13 starts at 0, so p13(h) shrinks by about 4 when h halves."""
    s = england["M1"]
    a = solve_select(s, 1, 40.0, SolverConfig(h=1 / 52)).p(3)[1]
    b = solve_select(s, 1, 40.0, SolverConfig(h=1 / 104)).p(3)[1]
    assert 0 < a < (1 / 52) ** 2
    assert a / b == pytest.approx(4.0, rel=0.02)


def test_unobserved_metastasis_ratio(england):
    s = england["M1"]
    p13 = solve_select(s, 1, 40.0, CFG).p(3)[1:6]
    p23 = solve_select(s, 2, 40.0, CFG).p(3)[1:6]
    assert np.allclose(p23 / p13, 7.0, rtol=2e-3)


def test_m1_no_onset_stays_healthy():
    g = solve_m1(constant_intensity_set("M1", {"13": 0.1, "23": 0.2, "35": 0.3}), 30.0, CFG)
    assert np.all(g.p(0) == 1.0) and np.all(g.probs[:, 1:] == 0.0)


@pytest.mark.parametrize("beta", [1 / 7, 0.999])
def test_m1_constant_duration_equals_m2(tables, beta):
    from cipricing.intensity import ModelParams

    params = ModelParams(beta=beta)
    m2 = build_intensity_set(*tables, "M2", params)
    m1 = build_intensity_set(*tables, "M1", params, metastasis=DurationHazard.constant(0.0194))
    g1, g2 = solve_m1(m1, 30.0, CFG), solve_m2(m2, 30.0, CFG)
    assert np.max(np.abs(g1.probs - g2.probs)) <= 1e-6


def test_m1_constant_rates_match_expm():
    g = solve_m1(constant_intensity_set("M1", SEMI_RATES), 30.0, CFG)
    for k in (520, 1560, 3120):
        assert np.max(np.abs(g.probs[k] - expm_oracle(6, SEMI_RATES, g.times[k]))) <= 1e-6


def test_m1_fewer_bc_deaths_than_m0(grids30):
    k = 60 * 52
    assert grids30["M1"].p(5)[k] < 0.8 * grids30["M0"].p(3)[k]


def test_conservation_and_monotonicity(grids30, england):
    grids = list(grids30.values())
    grids += [solve_select(england["M1"], e, 45.0, CFG) for e in (1, 2, 3)]
    for g in grids:
        assert np.max(np.abs(g.probs.sum(axis=1) - 1.0)) <= 1e-8
        assert g.probs.min() >= 0.0 and g.probs.max() <= 1.0
    for v, g in grids30.items():
        assert np.all(np.diff(g.p(0)) <= 0)
        states = (2, 3) if v == "M0" else (4, 5)
        for j in states:
            assert np.all(np.diff(g.p(j)) >= 0)


def test_m1_matches_trapezoid_select_decomposition(grids30):
    """Occupancy of states 1 and 2 rebuilt as entry flux convolved with
    select stay probabilities agrees with the forward-equation solution."""
    g = grids30["M1"]
    for s in (1, 2):
        assert np.max(np.abs(convolution_occupancy(g, s) - g.p(s))) <= 1e-7


def test_cohort_sweep_matches_select_grids(england):
    s = england["M1"]
    cfg = SolverConfig(h=1 / 12, max_age=60.0)
    last = None
    for n, y in cohort_sweep(s, 30.0, cfg, 1):
        if n == 120:
            last = y.copy()
            break
    for m in (0, 7, 60, 120):
        entry = 30.0 + (120 - m) / 12
        sel = solve_select(s, 1, entry, cfg)
        assert last[m] == pytest.approx(sel.p(1)[m], rel=1e-12)


@pytest.mark.parametrize("variant, rates, n", [("M0", M0_RATES, 4), ("M2", SEMI_RATES, 6)])
def test_rk4_fourth_order(variant, rates, n):
    s = constant_intensity_set(variant, {k: 4 * v for k, v in rates.items()})
    vals = []
    for h in (0.5, 0.25, 0.125):
        g = solve(s, 30.0, SolverConfig(h=h, max_age=40.0))
        vals.append(g.probs[int(round(10.0 / h))])
    ratio = np.max(np.abs(vals[0] - vals[1])) / np.max(np.abs(vals[1] - vals[2]))
    assert 14 < ratio < 18, ratio


def test_step_too_large():
    s = constant_intensity_set("M0", {"01": 50.0})
    with pytest.raises(StepTooLarge):
        solve_m0(s, 30.0, SolverConfig(h=0.5, max_age=40.0))


def test_wrong_variant_and_bad_config(england):
    with pytest.raises(InvalidVariant):
        solve_m1(england["M2"], 30.0)
    with pytest.raises(InvalidVariant):
        solve_select(england["M0"], 1, 30.0)
    with pytest.raises(InvalidState):
        solve_select(england["M1"], 0, 30.0)
    with pytest.raises(ValueError):
        SolverConfig(h=0.35).horizon_steps(30.0)
    with pytest.raises(ValueError):
        SolverConfig(h=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_age=30.0).horizon_steps(30.0)


def test_deterministic(england):
    a = solve_m1(england["M1"], 50.0, CFG)
    b = solve_m1(england["M1"], 50.0, CFG)
    assert np.array_equal(a.probs, b.probs)


def test_grid_dump(tmp_path, grids30):
    path = tmp_path / "g.csv"
    grids30["M2"].to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,p00,p01,p02,p03,p04,p05"
    assert len(lines) == 3121 + 1
    assert lines[1].startswith("0.0,1.0,0.0")


def test_select_cache(grids30):
    g = grids30["M1"]
    a = g.select(1, 10)
    assert g.select(1, 10) is a
    assert a.entry_age == pytest.approx(30.0 + 10 / 52)
