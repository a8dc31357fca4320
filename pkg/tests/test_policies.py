import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidroute import optpath, policies
from fluidroute.jobsize import get_distribution
from fluidroute.policies import DispatchContext, MissingTableError, PolicyConfig, decide, lookahead_cost
from fluidroute.validation import solved_table

TABLE_KINDS = ("F_BLB", "F_BLBH", "FLUID_OPT_REF")
PURE_KINDS = ("LWL", "DICE", "CARD", "SSLL", "SSLL_BLB")


def _cfg(kind, table=None, **kw):
    if kind in TABLE_KINDS:
        table = table or solved_table("exp", 0.7)
    return PolicyConfig(kind, table=table, **kw)


def _decide(cfg, u, x, rng=None):
    return decide(cfg, DispatchContext(u, x), rng, d="exp", rho=0.7)


# --- configuration -----------------------------------------------------------


def test_unknown_kind():
    with pytest.raises(ValueError):
        PolicyConfig("JSQ")


def test_kind_case_insensitive():
    assert PolicyConfig("f_blbh", table=solved_table("exp", 0.7)).kind == "F_BLBH"
    assert PolicyConfig("dice").code == policies.KINDS.index("DICE")


@pytest.mark.parametrize("kind", TABLE_KINDS)
def test_missing_table(kind):
    with pytest.raises(MissingTableError):
        PolicyConfig(kind)


def test_negative_thresholds_rejected():
    with pytest.raises(ValueError):
        PolicyConfig("DICE", tau_dice=-1.0)
    with pytest.raises(ValueError):
        PolicyConfig("SSLL", h_S=-0.1)
    with pytest.raises(ValueError):
        PolicyConfig("CARD", card_params=(1.0, 2.0))


def test_defaults(exp07):
    assert PolicyConfig("F_BLB", table=exp07).resolved().u_B == 3.0
    r = PolicyConfig("F_BLBH", table=exp07).resolved()
    assert (r.u_B, r.h_S) == (2.0, 1.5)
    assert PolicyConfig("DICE").tau_dice == 6.0
    h = PolicyConfig("SSLL").resolved("exp", 0.7).h_S
    assert h == pytest.approx(get_distribution("exp").load_balancing_threshold())
    assert h == pytest.approx(1.678, abs=1e-3)


def test_card_defaults():
    d = get_distribution("exp")
    small, large, q = policies.card_defaults(d, 0.7)
    assert d.partial_load(small, 0.7) == pytest.approx(0.7 / 4, rel=1e-9)
    assert d.partial_load(large, 0.7) == pytest.approx(3 * 0.7 / 4, rel=1e-9)
    assert q == pytest.approx(2 * 0.7 / 0.3)
    assert PolicyConfig("CARD").resolved("exp", 0.7).card_params == (small, large, q)


def test_resolved_needs_distribution():
    with pytest.raises(ValueError):
        PolicyConfig("SSLL").resolved()
    with pytest.raises(ValueError):
        PolicyConfig("CARD").resolved("exp")


def test_context_validation():
    with pytest.raises(ValueError):
        DispatchContext((-1.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        DispatchContext((1.0, 0.0), 0.0)


# --- decisions ---------------------------------------------------------------


def test_lwl_picks_least_work():
    for x in (0.01, 1.0, 50.0):
        assert _decide(PolicyConfig("LWL"), (3.0, 1.0), x) == 1


def test_ties_go_to_first_queue():
    assert _decide(PolicyConfig("LWL"), (2.0, 2.0), 1.0) == 0
    assert _decide(PolicyConfig("SSLL"), (2.0, 2.0), 0.1) == 0


def test_dice_rule():
    cfg = PolicyConfig("DICE", tau_dice=6.0)
    assert _decide(cfg, (9.0, 5.0), 0.5) == 1  # 5.5 < 6 -> short queue
    assert _decide(cfg, (9.0, 5.0), 1.5) == 0  # 6.5 >= 6 -> long queue


def test_ssll_threshold():
    cfg = PolicyConfig("SSLL")
    assert _decide(cfg, (4.0, 1.0), 1.0) == 1
    assert _decide(cfg, (4.0, 1.0), 2.0) == 0


def test_ssll_tiny_job_balanced():
    cfg = PolicyConfig("SSLL", h_S=1.5)
    assert _decide(cfg, (1.0, 1.0 - 1e-12), 1e-12) == 1
    # strict inequality at the threshold itself
    assert _decide(cfg, (1.0, 0.5), 1.5) == 0


def test_ssll_blb_buffer():
    cfg = PolicyConfig("SSLL_BLB", u_B=2.0, h_S=1.5)
    assert _decide(cfg, (5.0, 1.0), 10.0) == 1
    assert _decide(cfg, (5.0, 3.0), 10.0) == 0
    assert _decide(cfg, (5.0, 3.0), 1.0) == 1


def test_card_bands():
    cfg = PolicyConfig("CARD", card_params=(0.5, 2.0, 3.0))
    assert _decide(cfg, (9.0, 8.0), 0.4) == 1  # small: short
    assert _decide(cfg, (1.0, 0.0), 2.5) == 0  # large: long
    assert _decide(cfg, (9.0, 2.0), 1.0) == 1  # medium, short backlog low
    assert _decide(cfg, (9.0, 4.0), 1.0) == 0  # medium, short backlog high


def test_rnd_uses_generator():
    cfg = PolicyConfig("RND")
    with pytest.raises(ValueError):
        _decide(cfg, (1.0, 1.0), 1.0)
    rng = np.random.default_rng(3)
    picks = [_decide(cfg, (1.0, 1.0), 1.0, rng) for _ in range(4000)]
    assert 0.45 < np.mean(picks) < 0.55
    a = [_decide(cfg, (1.0, 0.0), 1.0, np.random.default_rng(9)) for _ in range(3)]
    assert len(set(a)) == 1


def test_f_blb_buffer_falls_back_to_lwl(exp07):
    cfg = PolicyConfig("F_BLB", table=exp07, u_B=3.0)
    assert _decide(cfg, (8.0, 2.9), 100.0) == 1
    assert _decide(cfg, (8.0, 3.0), 100.0) == 1  # "<=" on the short backlog


def test_f_blb_lookahead_choice(exp07):
    cfg = PolicyConfig("F_BLB", table=exp07, u_B=0.0)
    for u, x in [((10.0, 4.0), 0.2), ((10.0, 4.0), 8.0), ((6.0, 5.0), 3.0)]:
        c = [lookahead_cost(exp07, u, x, i) for i in (0, 1)]
        want = 0 if c[0] <= c[1] else 1
        assert _decide(cfg, u, x) == want


def test_f_blbh_small_jobs_go_short(exp07):
    cfg = PolicyConfig("F_BLBH", table=exp07)
    assert _decide(cfg, (20.0, 10.0), 1.0) == 1


def test_f_blbh_degenerates_to_f_blb(exp07):
    # h_S = 0 never triggers the size rule
    a = PolicyConfig("F_BLB", table=exp07, u_B=2.0)
    b = PolicyConfig("F_BLBH", table=exp07, u_B=2.0, h_S=0.0)
    rng = np.random.default_rng(17)
    u = np.zeros(2)
    d = get_distribution("exp")
    for _ in range(3000):
        u = np.maximum(u - rng.exponential(1 / 0.7) / 2, 0.0)
        x = float(d.sample(rng, 1)[0])
        i = _decide(a, tuple(u), x)
        assert _decide(b, tuple(u), x) == i
        u[i] += x


def test_fluid_opt_ref_threshold(exp07):
    cfg = PolicyConfig("FLUID_OPT_REF", table=exp07)
    thr = exp07.threshold
    j = 1000
    yh = exp07.yhat[j]
    u = (1 + yh, 1 - yh)
    assert _decide(cfg, u, 0.999 * thr[j]) == 1
    assert _decide(cfg, u, 1.001 * thr[j]) == 0
    assert _decide(cfg, (0.0, 0.0), 5.0) == 0


@pytest.mark.parametrize("kind", PURE_KINDS + TABLE_KINDS)
@settings(max_examples=40, deadline=None)
@given(u0=st.floats(0, 50), u1=st.floats(0, 50), x=st.floats(1e-6, 50))
def test_index_in_range_and_pure(kind, u0, u1, x):
    cfg = _cfg(kind, card_params=(0.5, 2.0, 3.0) if kind == "CARD" else None)
    i = _decide(cfg, (u0, u1), x)
    assert i in (0, 1)
    assert _decide(cfg, (u0, u1), x) == i


def test_more_than_two_servers():
    rng = np.random.default_rng(0)
    assert _decide(PolicyConfig("LWL"), (3.0, 2.0, 0.5, 1.0), 1.0) == 2
    assert _decide(PolicyConfig("RND"), (3.0, 2.0, 0.5), 1.0, rng) in (0, 1, 2)
    with pytest.raises(ValueError):
        _decide(PolicyConfig("DICE"), (3.0, 2.0, 0.5), 1.0)


# --- lookahead ---------------------------------------------------------------


def test_lookahead_symmetric_at_origin(exp07):
    c0 = lookahead_cost(exp07, (0.0, 0.0), 1.3, 0)
    c1 = lookahead_cost(exp07, (0.0, 0.0), 1.3, 1)
    assert c0 == c1
    assert _decide(PolicyConfig("F_BLB", table=exp07, u_B=0.0), (0.0, 0.0), 1.3) == 0


def test_lookahead_prefers_short_under_imbalance(exp07):
    assert lookahead_cost(exp07, (10.0, 1.0), 0.1, 1) < lookahead_cost(exp07, (10.0, 1.0), 0.1, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 5), st.sampled_from([0, 1]))
def test_lookahead_scaling(u0, u1, x, i):
    t = solved_table("exp", 0.7)
    u = np.array([u0, u1])
    c = lookahead_cost(t, u, x, i)
    c2 = lookahead_cost(t, 2 * u, 2 * x, i)
    wait = 2 * u[i]
    assert c2 - 2 * wait == pytest.approx(4 * (c - wait), rel=1e-9, abs=1e-9)


def test_lookahead_value_on_nodes(exp07):
    # the kernel's interpolated value agrees with the table on grid nodes
    for j in (0, 250, 1000, 1800, 2000):
        yh = exp07.yhat[j]
        x = 2.0
        u = np.array([0.5 * x * (1 + yh) - 0.4, 0.5 * x * (1 - yh)])
        c = lookahead_cost(exp07, u, 0.4, 0)
        want = 2 * u[0] + optpath.value_lookup(exp07, (u[0] + 0.4, u[1]))
        assert c == pytest.approx(want, rel=1e-9)


def test_lookahead_argument_checks(exp07):
    with pytest.raises(ValueError):
        lookahead_cost(exp07, (1.0, 2.0, 3.0), 1.0, 0)
    with pytest.raises(IndexError):
        lookahead_cost(exp07, (1.0, 2.0), 1.0, 2)


# --- CARD tuning --------------------------------------------------------------


def test_tune_card_grid():
    best, results = policies.tune_card("exp", 0.5, [0.3, 0.7], [1.0, 2.0], [1.0, 2.0], arrivals=20_000, seed=2)
    assert len(results) == 8
    assert best in results
    assert results[best] == min(results.values())
    best2, results2 = policies.tune_card("exp", 0.5, [0.3, 0.7], [1.0, 2.0], [1.0, 2.0], arrivals=20_000, seed=2)
    assert best2 == best and results2 == results
