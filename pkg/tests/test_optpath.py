import itertools
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidroute import fluid, optpath
from fluidroute.jobsize import feasible_slope, get_distribution
from fluidroute.validation import solved_table

GOLDEN = Path(__file__).parent / "golden" / "path_deviation.json"
SHAPE_TAGS = ("uniform", "exp", "bpareto", "pareto")
CLOSED_FORMS = ("RND", "LWL", "STO", "MWL", "UNAWARE")


@pytest.fixture(scope="module")
def exp09():
    return solved_table("exp", 0.9)


@pytest.fixture(scope="module")
def exp05():
    return solved_table("exp", 0.5)


# --- table invariants --------------------------------------------------------


@pytest.mark.parametrize("rho", [0.3, 0.7])
def test_axis_boundary_value(rho, exp03, exp07):
    t = exp03 if rho == 0.3 else exp07
    phi1 = t.dist.phi_axis(rho)
    assert t.tau[-1] == pytest.approx((1 - 2 * phi1) / 2, abs=1e-14)
    if rho < 0.5:
        assert t.tau[-1] == -0.5


def test_controls_feasible(exp03, exp07, exp09):
    for t in (exp03, exp07, exp09):
        k = feasible_slope(t.rho)
        assert np.all(np.abs(t.control) <= k * (1 + 1e-12))


def test_solver_residual_small(exp07):
    assert exp07.residual < 1e-6
    assert exp07.yhat[0] == 0.0 and exp07.yhat[-1] == 1.0


def test_w_positive_and_finite(exp07):
    w = exp07.w
    assert np.all(np.isfinite(w))
    assert np.all(w[:-1] > 0)


def test_axis_value_zero_below_half(exp03):
    # the axis is absorbing, no further cost
    assert optpath.value_lookup(exp03, (1.0, 0.0)) == 0.0
    assert optpath.value_lookup(exp03, (2.5, 0.0)) == 0.0
    assert exp03.w[-1] == 0.0


def test_boundary_control_is_maximal(exp07):
    # at the balanced point the optimum unbalances at full speed; the sign
    # reflects the mirror image y -> -y of the symmetric start
    k = feasible_slope(0.7)
    assert abs(exp07.control[0]) == pytest.approx(k, rel=1e-5)


def test_solve_rejects_bad_load():
    with pytest.raises(ValueError):
        optpath.solve("exp", 1.0, n_grid=51)
    with pytest.raises(ValueError):
        optpath.solve("exp", 0.0, n_grid=51)


def test_solve_is_deterministic():
    a = optpath.solve("uniform", 0.6, n_grid=201, n_controls=101)
    b = optpath.solve("uniform", 0.6, n_grid=201, n_controls=101)
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.control, b.control)


def test_det_controls_tie():
    # constant sizes: every work-conserving control costs the same
    t = optpath.solve("det", 0.7, n_grid=401)
    assert t.flat_fraction == 1.0
    assert np.all(t.control[:-1] == 0.0)


# --- optimality against closed forms -----------------------------------------


def _random_states(rng, count, hi=1.0):
    pts = rng.uniform(0.0, hi, size=(count, 2))
    return [tuple(sorted(p, reverse=True)) for p in pts]


@pytest.mark.parametrize("name", CLOSED_FORMS)
def test_opt_below_closed_forms(name, exp07, rng):
    for u in _random_states(rng, 20):
        opt = optpath.policy_value("OPT", *u, "exp", 0.7, table=exp07)
        other = optpath.policy_value(name, *u, "exp", 0.7)
        assert opt <= other + 1e-9


def test_policy_value_errors(exp07):
    with pytest.raises(ValueError):
        optpath.policy_value("OPT", 1, 0, "exp", 0.7)
    with pytest.raises(ValueError):
        optpath.policy_value("SITA", 1, 0, "exp", 0.7)


# --- value lookup ------------------------------------------------------------


def test_lookup_origin(exp07):
    assert optpath.value_lookup(exp07, (0.0, 0.0)) == 0.0
    assert optpath.value_lookup(exp07, (0.0, 0.0), method="interp") == 0.0


@pytest.mark.parametrize("j", [0, 1, 500, 1000, 1999, 2000])
def test_lookup_reproduces_nodes(exp07, j):
    yh = exp07.yhat[j]
    x = 1.3
    u = (0.5 * x * (1 + yh), 0.5 * x * (1 - yh))
    stored = exp07.prefactor * x * x * (0.5 + exp07.tau[j])
    assert optpath.value_lookup(exp07, u) == pytest.approx(stored, rel=1e-12, abs=1e-15)


def test_lookup_interp_matches_nodes(exp07):
    j = 700
    yh = exp07.yhat[j]
    th = exp07.theta[j]
    r = 1.7
    u = (r * math.cos(th), r * math.sin(th))
    assert yh == pytest.approx((u[0] - u[1]) / (u[0] + u[1]), abs=1e-12)
    assert optpath.value_lookup(exp07, u, method="interp") == pytest.approx(r * r * exp07.w[j], rel=1e-9)


def test_lookup_symmetric_in_order(exp07):
    assert optpath.value_lookup(exp07, (0.3, 0.9)) == optpath.value_lookup(exp07, (0.9, 0.3))


def test_lookup_unknown_method(exp07):
    with pytest.raises(ValueError):
        optpath.value_lookup(exp07, (1, 0.5), method="spline")


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_lookup_quadratic_scaling(r, frac):
    t = solved_table("exp", 0.7)
    u = (r, r * frac)
    for method in ("bellman", "interp"):
        v1 = optpath.value_lookup(t, u, method=method)
        v3 = optpath.value_lookup(t, (3 * u[0], 3 * u[1]), method=method)
        assert v3 == pytest.approx(9 * v1, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.0, 1.0))
def test_lookup_between_balanced_and_worst(r, frac):
    # the optimum never costs more than random splitting
    t = solved_table("exp", 0.7)
    u = (r, r * frac)
    assert optpath.value_lookup(t, u) <= fluid.v_rnd(u, 0.7, get_distribution("exp")) + 1e-9


# --- traces ------------------------------------------------------------------


def test_trace_axis_start_light_load():
    t = solved_table("exp", 0.4)
    tr = optpath.trace(t, (1.5, 0.0))
    assert tr.absorbed
    assert len(tr.x) == 1 or tr.total_cost == 0.0
    assert tr.total_cost == 0.0


def test_trace_from_origin(exp07):
    tr = optpath.trace(exp07, (0.0, 0.0))
    assert tr.total_cost == 0.0 and len(tr.x) == 1


def test_trace_unbalances(exp07):
    tr = optpath.trace(exp07, (1.0, 1.0))
    yh = tr.yhat[:-1]
    assert tr.absorbed
    assert np.all(np.diff(yh) > 0)
    assert tr.reversals == 0
    assert tr.x[-1] == 0.0


def test_trace_cost_matches_value(exp07, rng):
    starts = [(1.0, 1.0), (2.0, 0.5)] + _random_states(rng, 3, hi=3.0)
    for u in starts:
        tr = optpath.trace(exp07, u)
        assert tr.total_cost == pytest.approx(optpath.value_lookup(exp07, u), rel=1e-6)


def test_trace_cost_at_node_formula(exp07):
    tr = optpath.trace(exp07, (1.0, 1.0))
    expected = 4.0 * exp07.prefactor * (0.5 + exp07.tau[0])
    assert tr.total_cost == pytest.approx(expected, rel=1e-9)


def test_heavier_load_unbalances_faster(exp05, exp09):
    def yhat_at(t, frac):
        tr = optpath.trace(t, (1.0, 1.0))
        # relative imbalance once the total backlog has fallen by ``frac``
        return np.interp(2.0 * (1 - frac), tr.x[::-1], tr.yhat[::-1])

    assert yhat_at(exp09, 0.1) > yhat_at(exp05, 0.1)


def test_trace_scale_free(exp07):
    a = optpath.trace(exp07, (1.0, 1.0))
    b = optpath.trace(exp07, (2.0, 2.0))
    assert len(a.x) == len(b.x)
    np.testing.assert_allclose(b.x, 2 * a.x, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.y, 2 * a.y, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.cost, 4 * a.cost, rtol=1e-9, atol=1e-12)


def test_trace_rows_columns(exp07):
    tr = optpath.trace(exp07, (1.0, 0.5))
    rows = list(tr.rows())
    assert len(rows) == len(tr.x)
    assert all(len(r) == 9 for r in rows)
    s, u1, u2 = rows[0][:3]
    assert (s, u1, u2) == (0.0, 1.0, 0.5)


def _x_at_levels(tag, levels):
    tr = optpath.trace(solved_table(tag, 0.7), (1.0, 1.0))
    return np.interp(levels, tr.yhat[:-1], tr.x[:-1])


def test_distribution_deviation_golden():
    levels = np.linspace(0.0, 1.0, 11)
    xs = {tag: _x_at_levels(tag, levels) for tag in SHAPE_TAGS}
    pairs = {}
    for a, b in itertools.combinations(SHAPE_TAGS, 2):
        d = np.abs(xs[a] - xs[b])
        pairs[f"{a}-{b}"] = {"small": float(d[levels < 0.5].max()), "large": float(d[levels >= 0.5].max())}
    order = sorted(pairs, key=lambda k: pairs[k]["large"])
    current = {"levels": levels.tolist(), "x": {k: v.tolist() for k, v in xs.items()}, "pairs": pairs, "order": order}
    if os.environ.get("FLUIDROUTE_REGEN_GOLDEN"):
        GOLDEN.write_text(json.dumps(current, indent=2) + "\n")
    golden = json.loads(GOLDEN.read_text())
    # shapes disagree more once the imbalance is large
    for k, p in pairs.items():
        assert p["large"] > p["small"], k
    assert order == golden["order"]
    for tag in SHAPE_TAGS:
        np.testing.assert_allclose(xs[tag], golden["x"][tag], rtol=1e-6)


# --- unit cost curves --------------------------------------------------------


THETAS = np.linspace(0.0, math.pi / 4, 50)


@pytest.mark.parametrize("name", ("OPT",) + CLOSED_FORMS)
def test_unit_cost_nondecreasing(name, exp07):
    src = exp07 if name == "OPT" else name
    c = optpath.unit_cost_curve(src, THETAS, "exp", 0.7)
    assert c.shape == (50, 2)
    np.testing.assert_array_equal(c[:, 0], THETAS)
    assert np.all(np.diff(c[:, 1]) >= -1e-9)


def test_unit_cost_opt_lowest(exp07):
    opt = optpath.unit_cost_curve(exp07, THETAS)[:, 1]
    for name in ("RND", "STO", "MWL"):
        other = optpath.unit_cost_curve(name, THETAS, "exp", 0.7)[:, 1]
        assert np.all(opt <= other + 1e-9)


def test_unit_cost_axis_light_load(exp03):
    assert optpath.unit_cost_curve(exp03, [0.0])[0, 1] == 0.0
    for name in ("STO", "MWL", "LWL", "UNAWARE"):
        assert optpath.unit_cost_curve(name, [0.0], "exp", 0.3)[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_unit_cost_axis_formula():
    rho = 0.7
    d = get_distribution("exp")
    expected = rho * (1 - d.phi_axis(rho)) / (1 - rho)
    for name in ("STO", "MWL"):
        w = optpath.unit_cost_curve(name, [0.0], "exp", rho)[0, 1]
        assert w == pytest.approx(expected, rel=1e-12)


def test_unit_cost_balanced_coincide():
    th = [math.pi / 4]
    vals = [optpath.unit_cost_curve(n, th, "exp", 0.7)[0, 1] for n in ("RND", "LWL", "STO")]
    assert max(vals) - min(vals) < 1e-6


def test_unit_cost_rejects_range(exp07):
    with pytest.raises(ValueError):
        optpath.unit_cost_curve(exp07, [1.0])
    with pytest.raises(ValueError):
        optpath.unit_cost_curve("RND", [0.1])


# --- independent 2-D dynamic program -----------------------------------------


@pytest.fixture(scope="module")
def dp07():
    return optpath.solve_dp2d("exp", 0.7, nx=200, ny=201, n_controls=101)


def test_dp_agrees_with_solver(dp07, exp07, rng):
    for _ in range(10):
        u1, u2 = _random_states(rng, 1)[0]
        s = u1 + u2
        if s > 1.0:
            u1, u2 = u1 / s, u2 / s
        a = dp07.value(u1, u2)
        b = optpath.value_lookup(exp07, (u1, u2))
        assert a == pytest.approx(b, rel=0.01)


def test_dp_axis_and_origin(dp07):
    assert dp07.value(0.0, 0.0) == 0.0
    assert dp07.path_term(0.4, 0.4) <= 0.0
    with pytest.raises(ValueError):
        dp07.value(1.0, 0.5)
