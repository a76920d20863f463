import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsselfsim.bubbles import s0_reference
from hsselfsim.core import (ConfigError, ProblemParams, RadialField, apply_L, gaussian,
                            make_grid, resample)
from hsselfsim.functionals import (energy_breakdown, grid_search_fiber_max, mass_sq,
                                   mountain_pass_level, norms, weak_residual)
from hsselfsim.solver import (ConvergenceError, count_sign_changes, cosine_K,
                              cutoff_bubble_init, first_eigenpair, ground_state,
                              minimize_quotient, pohozaev_check, shoot_radial,
                              shooting_ladder, strong_system)


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_first_eigenpair(N):
    g = make_grid(N)
    e = first_eigenpair(g, N)
    assert e.lambda1 == pytest.approx(N / 2, rel=1e-3)
    assert cosine_K(e.eigenfield, gaussian(g)) >= 0.9999
    assert e.eigenfield.values[0] > 0
    assert mass_sq(e.eigenfield) == pytest.approx(1.0, rel=1e-12)
    res = apply_L(e.eigenfield) - e.lambda1 * e.eigenfield
    res = RadialField(g, np.r_[0.0, res.values[1:-1], 0.0])
    assert math.sqrt(mass_sq(res)) <= 1e-3


def test_eigenpair_errors():
    g = make_grid(4, 16.0, 400)
    with pytest.raises(ConfigError):
        first_eigenpair(g, 5)
    with pytest.raises(ConvergenceError):
        first_eigenpair(g, maxiter=1)


def test_strong_system_jacobian():
    p = ProblemParams(3, 0.5, 3.0, 0.75)
    g = make_grid(3, 16.0, 200, 2.0)
    v = np.exp(-g.nodes ** 2 / 5) * (1 + 0.3 * g.nodes)
    F, J = strong_system(v, g, p)
    rng = np.random.default_rng(1)
    d = rng.standard_normal(g.M) * 1e-6
    F2, _ = strong_system(v + d, g, p)
    lin = F + J @ d
    assert np.max(np.abs(F2 - lin)) <= 1e-6 * np.max(np.abs(J @ d))


# --- critical quotient ------------------------------------------------------

@pytest.mark.parametrize("N,s", [(4, 0.5), (5, 1.0), (7, 0.5)])
def test_unweighted_minimum_reaches_S0(N, s):
    p = ProblemParams.critical(N, s, 0.0)
    g = make_grid(N)
    rep = minimize_quotient(p, False, cutoff_bubble_init(g, p, 1.0, weighted=False), maxiter=3000)
    assert rep.S_value <= s0_reference(p) * (1 + 1e-2)
    assert math.isnan(rep.residual_after_rescale)


def test_weighted_minimum_below_S0(critical_minimizer):
    p, rep = critical_minimizer
    assert rep.converged and rep.status == "converged"
    assert rep.S_value < s0_reference(p)
    assert rep.residual_after_rescale <= 1e-2
    hist = np.array(rep.history)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[1:]))


def test_init_scale_removed(critical_minimizer):
    p, rep = critical_minimizer
    g = rep.minimizer.grid
    rep10 = minimize_quotient(p, True, 10.0 * cutoff_bubble_init(g, p))
    assert rep10.S_value == pytest.approx(rep.S_value, rel=1e-6)


def test_mountain_pass_of_minimizer(critical_minimizer):
    p, rep = critical_minimizer
    N, s = p.N, p.s
    c = (2 - s) / (2 * (N - s))
    lvl = mountain_pass_level(rep.rescaled, p)
    assert lvl.value == pytest.approx(c * rep.S_value ** ((N - s) / (2 - s)), rel=1e-3)
    p0 = p.with_alpha(0.0)
    rep0 = minimize_quotient(p0, True, cutoff_bubble_init(rep.minimizer.grid, p0), maxiter=3000)
    assert lvl.value < c * rep0.S_value ** ((N - s) / (2 - s))


def test_minimize_guards():
    p = ProblemParams.critical(5, 1.0, 2.5)
    g = make_grid(5, 16.0, 400)
    with pytest.raises(ConfigError):
        minimize_quotient(p, True, gaussian(g))
    with pytest.raises(ConfigError):
        minimize_quotient(ProblemParams(5, 1.0, 2.5, 1.0), True, gaussian(g))
    with pytest.raises(ConfigError):
        minimize_quotient(p.with_alpha(1.5), True, RadialField(g, np.zeros(g.M)))


@pytest.mark.parametrize("N", [3, 5])
def test_coercivity_boundary(N):
    g = make_grid(N)
    v = gaussian(g)
    p = ProblemParams.critical(N, 0.5, N / 2)
    assert energy_breakdown(v, p).A <= 1e-3 * mass_sq(v)
    for a in (N / 2 + 0.05, N / 2 + 1.0):
        assert energy_breakdown(v, p.with_alpha(a)).A < 0


# --- subcritical ground state ----------------------------------------------

def test_ground_state_identities(fine_ground_state, subcritical_params):
    rep, p = fine_ground_state, subcritical_params
    v = rep.rescaled
    e = rep.energy
    assert rep.converged
    assert rep.residual_after_rescale <= 1e-6
    assert abs(e["A"] - e["B"]) <= 1e-6 * max(e["A"], e["B"])
    assert e["E"] == pytest.approx((0.5 - 1 / p.q) * e["B"], rel=1e-6)
    assert v.values[0] > 0 and np.all(v.values >= -1e-12 * v.values[0])
    assert weak_residual(v, p).norm <= 1e-6


def test_ground_state_pohozaev(fine_ground_state, subcritical_params):
    ph = pohozaev_check(fine_ground_state.rescaled, subcritical_params)
    assert ph.rel_err1 <= 1e-3 and ph.rel_err3 <= 1e-3
    # the Hardy-bound comparison concerns q = 2*(s); here alpha = N/4 exactly, so only
    # the margin (valid for any decaying field) is checked
    assert ph.hardy_margin >= 0 and not ph.degenerate


def test_ground_state_is_minimax(fine_ground_state, subcritical_params):
    p = subcritical_params
    v = fine_ground_state.rescaled
    g = v.grid
    r = g.nodes
    E0 = fine_ground_state.energy["E"]
    rng = np.random.default_rng(20)
    for _ in range(20):
        c = rng.uniform(-2, 2, 4)
        c[0] = rng.uniform(0.2, 2)
        w = RadialField(g, np.polynomial.polynomial.polyval(r, c)
                        * np.exp(-r ** 2 / (4 * rng.uniform(0.3, 1.0))) * (1 - (r / g.R_max) ** 2))
        eb = energy_breakdown(w, p)
        w = (eb.A / eb.B) ** (1 / (p.q - 2)) * w   # puts the fiber peak at t = 1
        _, best = grid_search_fiber_max(w, p)
        assert E0 <= best * (1 + 1e-8)


def test_ground_state_guards(subcritical_params):
    with pytest.raises(ConfigError):
        ground_state(ProblemParams.critical(3, 0.5, 0.75))
    with pytest.raises(ConfigError):
        ground_state(subcritical_params.with_alpha(1.5))


# --- shooting -----------------------------------------------------------------

def test_shoot_mirror_symmetry(subcritical_params):
    g = make_grid(3)
    a = shoot_radial(subcritical_params, 2.5, g)
    b = shoot_radial(subcritical_params, -2.5, g)
    assert np.array_equal(a.field.values, -b.field.values)
    assert a.node_count == b.node_count
    with pytest.raises(ConfigError):
        shoot_radial(subcritical_params, 0.0, g)


def test_shoot_blowup_reported(subcritical_params):
    sol = shoot_radial(subcritical_params, 1e4, make_grid(3))
    assert sol.status in ("blowup", "ok")
    if sol.status == "blowup":
        assert not sol.admissible and sol.r_reached < 16.0


def test_sign_change_count():
    assert count_sign_changes([9.0, 1.0, -1.0, 0.0, -2.0, 3.0, 7.0]) == 2
    assert count_sign_changes([1.0, 1.0, 1.0]) == 0


@pytest.fixture(scope="module")
def ladder(subcritical_params):
    return shooting_ladder(subcritical_params, make_grid(3), max_nodes=1)


def test_ladder_nodes_and_energy(ladder, subcritical_params):
    assert set(ladder) == {0, 1}
    for k, sol in ladder.items():
        assert sol.admissible and sol.node_count == k
        assert sol.node_count == count_sign_changes(sol.field.values)
    e0 = energy_breakdown(ladder[0].field, subcritical_params).E
    e1 = energy_breakdown(ladder[1].field, subcritical_params).E
    assert e1 > e0


def test_ladder_matches_ground_state(ladder, fine_ground_state, subcritical_params):
    u = ladder[0].field
    gs = RadialField(u.grid, resample(fine_ground_state.rescaled, u.grid.nodes))
    diff = norms(u - gs, subcritical_params)["l2_K"] / norms(gs, subcritical_params)["l2_K"]
    assert diff <= 2e-2
    assert weak_residual(u, subcritical_params).norm <= 1e-3


# --- Pohozaev --------------------------------------------------------------------

def test_pohozaev_zero_field():
    g = make_grid(5, 16.0, 400)
    ph = pohozaev_check(RadialField(g, np.zeros(g.M)), ProblemParams.critical(5, 1.0, 1.5))
    assert ph.degenerate and ph.rel_err1 == 0 and ph.rel_err3 == 0


def test_pohozaev_critical_minimizer(critical_minimizer):
    p, rep = critical_minimizer
    ph = pohozaev_check(rep.rescaled, p)
    assert ph.rel_err1 <= 1e-2 and ph.rel_err3 <= 1e-2 and ph.hardy_bound_ok


@settings(max_examples=20, deadline=None)
@given(coeffs=st.lists(st.floats(-2, 2), min_size=1, max_size=4).filter(
    lambda c: any(abs(x) > 1e-2 for x in c)), width=st.floats(0.2, 1.0))
def test_hardy_margin_nonnegative(coeffs, width):
    # (1/2) int r^2 v'^2 >= (N^2/8) int v^2 for every decaying field
    g = make_grid(5, 16.0, 3000)
    r = g.nodes
    v = RadialField(g, np.polynomial.polynomial.polyval(r, coeffs) * np.exp(-r ** 2 / (4 * width))
                    * (1 - (r / 16.0) ** 2))
    ph = pohozaev_check(v, ProblemParams.critical(5, 1.0, 1.0))
    assert ph.hardy_margin >= -1e-3 * abs(ph.id3_lhs)
