"""The twelve acceptance criteria at their stated tolerances, one PASS/FAIL line each."""
import numpy as np

from conftest import ACCEPTANCE_LINES, admissible_pair, make_law
from blowup_lab.conditions import NormConfig, fit_exponent, growth_split_measure, weighted_norm
from blowup_lab.iteration import (IterationConfig, band_iteration_norms, iterate_step,
                                  local_energy, make_context, run_iteration, zeroth_iterate)
from blowup_lab.oracle import compare_with_fourier
from blowup_lab.propagator import discrete_free_evolve, free_evolve, transport_residual
from blowup_lab.scaling import phase_from_tau0, phase_integral, phase_quadrature
from blowup_lab.conditions import energy_norm


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_spectral_asymptotics(table):
    xi, rho = table.xis, table.rho
    lo = 3 * np.pi * np.sqrt(xi[xi <= 1e-3]) * rho[xi <= 1e-3]
    hi = np.pi * rho[xi >= 50] / np.sqrt(xi[xi >= 50])
    ok = lo.min() >= 0.9 and lo.max() <= 1.1 and hi.min() >= 0.95 and hi.max() <= 1.05
    report(1, ok, f"low [{lo.min():.4f}, {lo.max():.4f}] high [{hi.min():.4f}, {hi.max():.4f}]")


def test_criterion_02_transference_calibration(tm):
    res = tm.diagnostics["identity_residual"]
    ok = abs(tm.Kdd + 0.5) <= 1e-3 and res <= 1e-2
    report(2, ok, f"K_dd = {tm.Kdd:.6f}, identity residual {res:.2e}")


def test_criterion_03_phase_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        law = make_law(rng.uniform(0.05, 1.0), rng.uniform(1, 50))
        a = law.tau0 * rng.uniform(1, 3)
        b = a * rng.uniform(1.01, 5)
        anchor = rng.choice([law.tau0, a, b])
        closed = float(phase_integral(law, a, b, anchor))
        quad = phase_quadrature(law, a, b, anchor)
        worst = max(worst, abs(closed - quad) / abs(quad))
    worked = float(phase_from_tau0(make_law(0.5, 2.0), 4.0))
    ok = worst <= 1e-10 and worked == 0.75
    report(3, ok, f"max rel gap {worst:.1e} over 100 configs, worked value {worked!r}")


def test_criterion_04_propagator_exactness(table, law_half, generic_pair):
    sl = free_evolve(law_half, table, generic_pair, law_half.tau0)
    ident = max(np.abs(sl.x - generic_pair.x0.x).max(), np.abs(sl.dx - generic_pair.x1.x).max())
    res = []
    for d in (0.1, 0.05, 0.025):
        r, sc = transport_residual(law_half, table, generic_pair, 15.0, d)
        res.append(np.abs(r).max() / sc.max())
    ratios = np.array(res[:-1]) / np.array(res[1:])
    ok = ident <= 1e-12 and np.all((ratios > 3.5) & (ratios < 4.5))
    report(4, ok, f"|S(tau0) - I| = {ident:.1e}, residual ratios {np.round(ratios, 2).tolist()}")


def test_criterion_05_growth_dichotomy(table, law_half, generic_pair):
    nc = NormConfig.from_law(law_half)
    taus = np.linspace(10, 80, 29)
    adm = growth_split_measure(law_half, table, nc, admissible_pair(table, law_half), taus)
    gen = growth_split_measure(law_half, table, nc, generic_pair, taus)
    s = adm.sup_eps1_over_R
    ratio = s.max() / s.min()
    ok = adm.fitted_exponent <= 1.1 and gen.fitted_exponent >= 2.5 and ratio <= 2
    report(5, ok, f"exponents admissible {adm.fitted_exponent:.3f} generic "
                  f"{gen.fitted_exponent:.3f}, sup|eps1/R| max/min {ratio:.2f}")


def test_criterion_06_energy_flatness(table, law_half):
    nc = NormConfig.from_law(law_half)
    pair = admissible_pair(table, law_half)
    taus = np.linspace(10, 80, 29)
    en = np.array([energy_norm(table, nc, free_evolve(law_half, table, pair, t).x) for t in taus])
    dev = np.abs(en / en[0] - 1)
    ok = dev.max() <= 0.2
    report(6, ok, f"max deviation {dev.max():.3f} at tau = {taus[np.argmax(dev)]:.1f}, "
                  f"range [{(en / en[0]).min():.3f}, {(en / en[0]).max():.3f}]")


def test_criterion_07_discrete_mode(table):
    k = np.sqrt(-table.xi_d)
    gam, cd = [], []
    for t0 in (10.0, 20.0, 40.0):
        fit = discrete_free_evolve(make_law(0.5, t0), table.xi_d, 1.0)["fit"]
        gam.append(abs(fit.gamma_d + k))
        cd.append(abs(fit.c_d - 1))
    g, c = np.array(gam), np.array(cd)
    halving = g[:-1] / g[1:]
    scaled = g * np.array([10.0, 20.0, 40.0])
    ok = np.all(halving >= 1.7) and scaled.max() <= 2.0 and np.all(np.diff(c) < 0)
    report(7, ok, f"gamma error ratios {np.round(halving, 2).tolist()}, max tau0*err "
                  f"{scaled.max():.3f}, |c_d - 1| {np.round(c, 4).tolist()}")


def test_criterion_08_correction_smallness(table, tm):
    vals = []
    for t0 in (10.0, 20.0, 40.0):
        law = make_law(0.5, t0)
        nc = NormConfig.from_law(law)
        pair = admissible_pair(table, law, 1e-2, 1e-3)
        ctx = make_context(law, table, tm)
        rec = iterate_step(ctx, [zeroth_iterate(ctx, pair)], 1)
        den = weighted_norm(table, nc, "S~", pair) + abs(pair.x0.x_d)
        vals.append(weighted_norm(table, nc, "S~", rec.correction) / den)
    expo = np.polyfit(np.log([10, 20, 40]), np.log(vals), 1)[0]
    report(8, expo <= -0.8, f"ratios {np.round(vals, 4).tolist()}, fitted exponent {expo:.2f}")


def test_criterion_09_iteration_contraction(table, tm):
    law = make_law(1 / 3, 40.0)
    pair = admissible_pair(table, law, 1e-2, 1e-3)
    res = run_iteration(make_context(law, table, tm), pair, 3)
    A = res.ledgers
    ok = A[1] < A[0] and A[2] < A[1]
    report(9, ok, f"Delta A = {np.round(A, 4).tolist()}")


def test_criterion_10_oracle_equivalence(table, tm, law_half, generic_pair):
    worst = []
    for dR in (0.04, 0.02, 0.01):
        c = compare_with_fourier(law_half, table, tm, generic_pair, dR=dR)
        worst.append(float(c.rel_l2_error.max()))
    ok = worst[-1] <= 0.05 and worst[0] > worst[1] > worst[2]
    report(10, ok, f"max rel L2 over [tau0, 2 tau0] at dR 0.04/0.02/0.01: "
                   f"{', '.join(f'{w:.2e}' for w in worst)}")


def test_criterion_11_local_energy(table, tm, law_third):
    pair = admissible_pair(table, law_third)
    ctx = make_context(law_third, table, tm)
    traj = zeroth_iterate(ctx, pair)
    idx = np.nonzero(ctx.window)[0][::3]
    E = local_energy(law_third, table, tm, traj, idx=idx)
    t = ctx.taus[idx]
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    expo = fit_exponent(t, E)
    bound = 1 - 1 / law_third.nu + 0.3
    dec = bool(np.all(np.diff(E[half]) < 0))
    report(11, dec and expo <= bound,
           f"decreasing over last half: {dec}, fitted exponent {expo:.3f} (bound {bound:.1f})")


def test_criterion_12_factorial_suppression(table, tm, law_half):
    ctx = make_context(law_half, table, tm)
    norms, d2 = band_iteration_norms(ctx, n=8, eps=0.1)
    growth = norms[1:] / norms[:-1]
    ok = np.all(d2 < 0) and np.all(growth < 1 / 0.1)
    report(12, ok, f"second log-differences {np.round(d2, 3).tolist()}")
