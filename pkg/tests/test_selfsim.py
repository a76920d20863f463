import csv
import math

import numpy as np
import pytest

import oracles
from hsselfsim.core import ConfigError, ProblemParams, RadialField, make_grid
from hsselfsim.selfsim import (EvolutionState, decay_fit, evolve, evolve_series, physical_grid,
                               selfsim_error, write_time_series)
from hsselfsim.solver import ground_state

P = ProblemParams(3, 0.5, 3.0, 0.75)


def _gauss(grid, sigma=1.0, scale=1.0):
    return RadialField(grid, scale * np.exp(-grid.nodes ** 2 / (4 * sigma)))


def test_heat_kernel():
    g = physical_grid(3, 30.0, 6000)
    st = evolve(_gauss(g), P, 1.0, 2.0, 1e-3, nonlinear=False, R_phys=30.0, M_phys=6000)
    exact = oracles.heat_gaussian(st.field.grid.nodes, 2.0)
    assert np.max(np.abs(st.field.values - exact)) <= 1e-3 * np.max(exact)


def test_heat_l2_decay():
    g = physical_grid(3, 40.0, 4000)
    times = np.geomspace(1.0, 10.0, 6)
    sts = evolve_series(_gauss(g), P, 1.0, times, nonlinear=False, R_phys=40.0, M_phys=4000)
    fit = decay_fit(sts, P, power=2.0)
    assert fit.fitted_exponent == pytest.approx(-1.5, rel=1e-2)
    assert fit.r2 > 0.9999


def test_zero_data_stays_zero():
    g = make_grid(3)
    st = evolve(RadialField(g, np.zeros(g.M)), P, 1.0, 3.0)
    assert np.all(st.field.values == 0.0) and st.mass_q == 0.0
    with pytest.raises(ValueError):
        decay_fit([st, st], P)


def test_bad_times():
    g = make_grid(3)
    with pytest.raises(ConfigError):
        evolve(_gauss(g), P, 1.0, 1.0)
    with pytest.raises(ConfigError):
        evolve_series(_gauss(g), P, 0.0, [1.0])


def test_blowup_detected():
    g = physical_grid(3, 10.0, 1000)
    sts = evolve_series(_gauss(g, 1.0, 30.0), P, 1.0, [5.0], R_phys=10.0, M_phys=1000)
    last = sts[-1]
    assert last.status == "blowup"
    lo, hi = last.blowup_bracket
    assert 1.0 < lo < hi <= 5.0


@pytest.fixture(scope="module")
def profile():
    return ground_state(P, grid=make_grid(3, 16.0, 4000, 2.0)).rescaled


def test_selfsim_identity_at_start(profile):
    st = evolve_series(profile, P, 1.0, [1.0])[0]
    assert selfsim_error(profile, st, P) <= 1e-8


def test_selfsim_zero_profile(profile):
    st = evolve_series(profile, P, 1.0, [1.0])[0]
    assert selfsim_error(0.0 * profile, st, P) == pytest.approx(1.0)
    bad = EvolutionState(0.0, st.field, st.mass_q, 0.0)
    with pytest.raises(ConfigError):
        selfsim_error(profile, bad, P)


def test_series_monotone_positive(profile, tmp_path):
    times = [1.0, 1.5, 2.0, 3.0]
    sts = evolve_series(profile, P, 1.0, times, M_phys=4000, R_phys=40.0)
    assert [s.t for s in sts] == times
    for s in sts:
        u = s.field.values
        assert np.all(np.isfinite(u))
        assert u.min() >= -1e-10 * u.max()
        assert s.status == "ok"
    assert all(b.steps > a.steps for a, b in zip(sts[1:], sts[2:]))
    write_time_series(sts, tmp_path / "ts.csv", profile, P)
    with open(tmp_path / "ts.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "mass_q", "sup_u", "selfsim_error"] and len(rows) == 5


def _t2_error(M, dt_max):
    v = ground_state(P, grid=make_grid(3, 16.0, M, 2.0))
    st = evolve(v.rescaled, P, 1.0, 2.0, 1e-3, M_phys=M, R_phys=40.0, dt_max=dt_max)
    return selfsim_error(v.rescaled, st, P), v.residual_after_rescale, 40.0 / M


def test_selfsim_resolution_and_residual_bound():
    runs = [_t2_error(M, dt) for M, dt in ((2000, 0.01), (4000, 0.005), (8000, 0.0025))]
    errs = [r[0] for r in runs]
    # refining h (with dt alongside) at least halves the error
    assert errs[0] >= 2 * errs[1] and errs[1] >= 2 * errs[2]
    # err <= C (rho + h^2) with one C across resolutions
    C = [e / (rho + h * h) for e, rho, h in runs]
    assert max(C) / min(C) <= 1.5
    runs_fit_C = C[0]
    assert all(e <= 1.5 * runs_fit_C * (rho + h * h) for e, rho, h in runs)
    assert math.isfinite(runs_fit_C)
