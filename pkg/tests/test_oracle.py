import numpy as np
import pytest

from conftest import make_law
from blowup_lab.oracle import (CFLError, OracleGrid, compare_with_fourier, evolve_linear,
                               evolve_quintic, ground_state_w, linear_energy, linear_potential)
from blowup_lab.propagator import CauchyPair


def test_cfl_guard():
    with pytest.raises(CFLError):
        OracleGrid(10.0, 0.01, 0.02)
    with pytest.raises(CFLError):
        OracleGrid(0.005, 0.01, 0.001)
    assert OracleGrid.with_cfl(10.0, 0.02).cfl == pytest.approx(0.5)


def test_free_standing_wave_second_order():
    law = make_law(1 / 3)
    errs = []
    k = 3.0
    for dr in (0.02, 0.01, 0.005):
        g = OracleGrid.with_cfl(4 * np.pi, dr)
        r = g.r
        tr = evolve_linear(law, g, np.sin(k * r), np.zeros_like(r), [0, 1.0], potential=False)
        m = r < g.r_max - 1.5  # outside the influence of the absorbing edge
        errs.append(np.abs(tr.w[-1] - np.sin(k * r) * np.cos(k))[m].max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_ground_state_is_static_second_order():
    errs = []
    for dr in (0.04, 0.02, 0.01):
        g = OracleGrid.with_cfl(40.0, dr)
        r = g.r
        w0 = ground_state_w(r, 1.0)
        tr = evolve_quintic(g, w0, np.zeros_like(r), [0.0, 1.0, 2.0])
        errs.append(np.abs(tr.w[-1] - w0)[r < 30].max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_finite_speed_of_propagation():
    law = make_law(1 / 3)
    g = OracleGrid.with_cfl(60.0, 0.01)
    r = g.r
    w0 = r * np.exp(-4 * (r - 10) ** 2)
    tr = evolve_linear(law, g, w0, np.zeros_like(r), [0, 10], frozen_lam=1.0)
    assert np.abs(tr.w[-1][r > 23]).max() < 1e-12


def test_energy_drift_second_order():
    law = make_law(1 / 3)
    drift = []
    for dr in (0.02, 0.01):
        g = OracleGrid.with_cfl(60.0, dr)
        r = g.r
        V = linear_potential(law, 0.0, r, frozen_lam=1.0)
        w0 = r * np.exp(-(r - 10) ** 2)
        tr = evolve_linear(law, g, w0, np.zeros_like(r), np.linspace(0, 8, 5), frozen_lam=1.0)
        E = [linear_energy(g, w, wt, V) for w, wt in zip(tr.w, tr.wt)]
        drift.append(np.abs(np.array(E) / E[0] - 1).max())
    assert drift[1] < drift[0]
    assert drift[0] / drift[1] == pytest.approx(4, rel=0.25)


def test_ground_state_dichotomy():
    g = OracleGrid.with_cfl(80.0, 0.02)
    r = g.r
    W = ground_state_w(r, 1.0)
    up = evolve_quintic(g, 1.05 * W, np.zeros_like(r), np.linspace(0, 40, 41))
    assert up.status == "blowup" and up.t_stop < 10
    down = evolve_quintic(g, 0.95 * W, np.zeros_like(r), np.linspace(0, 40, 41))
    assert down.status == "ok"
    dist = np.max(np.abs(down.w - W)[:, 1:] / r[1:], axis=1)
    assert np.all(np.diff(dist) >= 0)
    assert dist[-1] == pytest.approx(1.0, abs=0.01)


def test_backward_runs_toward_blowup_time():
    law = make_law(1 / 3)
    g = OracleGrid.with_cfl(20.0, 0.02)
    r = g.r
    w0 = r * np.exp(-(r - 5) ** 2)
    tr = evolve_linear(law, g, w0, np.zeros_like(r), [2.0, 1.5, 1.0], potential=False)
    assert np.array_equal(tr.t, [2.0, 1.5, 1.0]) and np.all(np.isfinite(tr.w))
    # free wave is time-reversible: zero velocity data gives the same field either way
    fw = evolve_linear(law, g, w0, np.zeros_like(r), [2.0, 2.5, 3.0], potential=False)
    assert np.abs(tr.w[-1] - fw.w[-1]).max() < 1e-12


def test_zero_data_compare(table, tm, law_half):
    z = CauchyPair(table.state(), table.state())
    c = compare_with_fourier(law_half, table, tm, z, taus=[10.0, 11.0], dR=0.04)
    assert not np.any(c.rel_l2_error)


def test_printed_source_reading_disagrees(table, tm, law_half, generic_pair):
    taus = np.linspace(10, 20, 6)
    exact = compare_with_fourier(law_half, table, tm, generic_pair, taus=taus)
    printed = compare_with_fourier(law_half, table, tm, generic_pair, taus=taus,
                                   dx_coeff=-4.0, k_shift=0.0)
    assert exact.rel_l2_continuous.max() < 1e-3
    assert printed.rel_l2_continuous.max() > 100 * exact.rel_l2_continuous.max()
