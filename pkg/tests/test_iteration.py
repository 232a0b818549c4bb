import numpy as np
import pytest

from conftest import admissible_pair, make_law
from blowup_lab.iteration import (IterationConfig, Trajectory, data_map, horizon,
                                  increment_functionals, iterate_step, ledger, local_energy,
                                  make_context, reconstruct_field, run_iteration,
                                  solve_increment, zeroth_iterate)
from blowup_lab.conditions import vanishing_functionals
from blowup_lab.propagator import CauchyPair, duhamel_forward, free_evolve


@pytest.fixture(scope="module")
def ctx(table, tm):
    return make_context(make_law(0.5, 10.0), table, tm)


@pytest.fixture(scope="module")
def step(ctx, table):
    pair = admissible_pair(table, ctx.law, 1e-2, 1e-3)
    return pair, iterate_step(ctx, [zeroth_iterate(ctx, pair)], 1)


def test_horizon_cap():
    cfg = IterationConfig()
    assert horizon(make_law(0.5, 10.0), cfg) == pytest.approx(200.0)
    assert horizon(make_law(1 / 3, 10.0), cfg) == pytest.approx(100.0)
    assert horizon(make_law(0.1, 10.0), cfg) == pytest.approx(10 * 1e4 ** (1 / 11))


def test_zero_data_gives_zero_ledgers(ctx, table):
    z = CauchyPair(table.state(), table.state())
    res = run_iteration(ctx, z, 2)
    assert res.ledgers == [0.0, 0.0] and res.converged
    assert not np.any(res.states.x)


def test_history_length_checked(ctx, table):
    z = CauchyPair(table.state(), table.state())
    with pytest.raises(ValueError):
        iterate_step(ctx, [zeroth_iterate(ctx, z)], 2)


def test_zeroth_iterate_is_free_flow(ctx, step, table):
    pair, _ = step
    x0 = zeroth_iterate(ctx, pair)
    i = ctx.taus.size // 3
    sl = free_evolve(ctx.law, table, pair, ctx.taus[i])
    assert np.array_equal(x0.x[i], sl.x)
    assert x0.xd[0] == pytest.approx(pair.x0.x_d)


def test_increment_data_is_the_correction(step):
    _, rec = step
    for name in ("linear", "nonlinear"):
        inc = rec.parts[name]
        assert np.allclose(inc.delta.x[0], inc.correction.x0.x, rtol=0, atol=1e-12 * np.abs(inc.raw.x0.x).max())
        assert np.allclose(inc.delta.dx[0], inc.correction.x1.x, rtol=0, atol=1e-12 * np.abs(inc.raw.x1.x).max())


def test_increment_free_data_vanishes(ctx, step, table):
    _, rec = step
    v = increment_functionals(ctx, rec)
    raw = rec.parts["linear"].raw + rec.parts["nonlinear"].raw
    v_raw = vanishing_functionals(table, ctx.nc, ctx.law.nu, raw)
    scale = max(abs(v_raw["v0"]), abs(v_raw["v1"]))
    assert scale > 0
    assert abs(v["v0"]) <= 1e-9 * scale and abs(v["v1"]) <= 1e-9 * scale


def test_ledger_total_is_sum_of_six_terms(step):
    _, rec = step
    terms = {k: v for k, v in rec.ledger.items() if k != "total"}
    assert len(terms) == 6 and all(v >= 0 for v in terms.values())
    assert rec.ledger["total"] == pytest.approx(sum(terms.values()))


def test_degree_separation(ctx, table, step):
    pair, rec = step
    half = CauchyPair(pair.x0 * 0.5, pair.x1 * 0.5)
    rec2 = iterate_step(ctx, [zeroth_iterate(ctx, half)], 1)
    lin = rec.ledger_parts["linear"]["total"] / rec2.ledger_parts["linear"]["total"]
    nl = rec.ledger_parts["nonlinear"]["total"] / rec2.ledger_parts["nonlinear"]["total"]
    assert lin == pytest.approx(2.0, rel=1e-8)
    assert nl == pytest.approx(4.0, rel=0.1)


def test_increment_matches_forward_duhamel(ctx, table):
    law, u = ctx.law, np.log(table.xis)
    bump = np.exp(-(u - np.log(0.5)) ** 2)

    def f(s):
        return s ** -2 * bump * np.cos(0.3 * s)

    F = np.column_stack([np.zeros(ctx.taus.size), np.array([f(s) for s in ctx.taus])])
    inc = solve_increment(ctx, F)
    i = int(np.argmin(np.abs(ctx.taus - 20.0)))
    fwd = inc.delta.x[i] - free_evolve(law, table, inc.correction, ctx.taus[i]).x
    ref = duhamel_forward(law, table, f, ctx.taus[i])
    assert np.abs(fwd - ref).max() <= 2e-3 * np.abs(ref).max()


def test_data_map_roundtrip(table, tm, law_half):
    # physical side only: the inverse transform aliases far-field content beyond r_phys
    R = table.R
    eps = R ** 3 * np.exp(-R * R / 4) / 4
    w1 = R * np.exp(-(R - 2) ** 2)
    pair = data_map(law_half, table, tm, "physical->fourier", (eps, w1))
    e2, w2 = data_map(law_half, table, tm, "fourier->physical", pair)
    m = table.phys_mask()
    for a, b in ((e2, eps), (w2, w1)):
        assert np.abs(a - b)[m].max() <= 1e-3 * np.abs(b).max()


def test_data_map_without_beta_decouples(table, tm, law_half, generic_pair):
    _, w1 = data_map(law_half, table, tm, "fourier->physical", generic_pair, beta=0.0)
    assert np.allclose(w1, -reconstruct_field(table, generic_pair.x1))


def test_data_map_beta_coupling_is_order_one_over_tau0(table, tm, generic_pair):
    gaps = []
    for t0 in (10.0, 20.0, 40.0):
        law = make_law(0.5, t0)
        _, w1 = data_map(law, table, tm, "fourier->physical", generic_pair)
        _, w0 = data_map(law, table, tm, "fourier->physical", generic_pair, beta=0.0)
        gaps.append(np.abs(w1 - w0).max())
    assert gaps[0] / gaps[1] == pytest.approx(2.0) and gaps[1] / gaps[2] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        data_map(make_law(0.5), table, tm, "sideways", generic_pair)


def test_local_energy_of_zero_is_zero(ctx, table, tm):
    z = Trajectory.zeros(ctx.taus, table.xis.size, table.key)
    assert not np.any(local_energy(ctx.law, table, tm, z, idx=[0, 5]))


def test_reconstruct_pure_discrete(table):
    f = reconstruct_field(table, table.state(2.0, np.zeros(table.xis.size)))
    assert np.allclose(f, 2.0 * table.phi_d)


def test_zeroth_iterate_discrete_decay_rate(ctx, table):
    pair = admissible_pair(table, ctx.law, 1e-2, 1e-3)
    xd = zeroth_iterate(ctx, pair).xd
    m = ctx.taus < 4 * ctx.law.tau0
    rate = np.polyfit(ctx.taus[m], np.log(np.abs(xd[m])), 1)[0]
    assert abs(rate + np.sqrt(-table.xi_d)) <= 2 / ctx.law.tau0


def test_first_discrete_increment_decays(ctx, step):
    _, rec = step
    t = ctx.taus
    q = t ** 0.9 * (np.abs(rec.delta.xd) + np.abs(rec.delta.dxd))
    assert np.all(np.isfinite(q))
    assert q[t >= t.mean()].max() <= q[t < t.mean()].max()


def test_accumulated_state_at_tau0_is_corrected_data(ctx, table):
    pair = admissible_pair(table, ctx.law, 1e-2, 1e-3)
    res = run_iteration(ctx, pair, 2)
    s, c = res.states, res.corrected_data
    assert np.array_equal(s.x[0], c.x0.x) and np.array_equal(s.dx[0], c.x1.x)
    assert s.xd[0] == pytest.approx(c.x0.x_d, rel=1e-14)
    assert s.dxd[0] == pytest.approx(c.x1.x_d, rel=1e-14)
