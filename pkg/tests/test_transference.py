import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_law
from blowup_lab.spectral import dft_forward, dft_inverse
from blowup_lab.transference import (_expn_complex, apply_R_source, first_derivative_grid,
                                     kernel_band_split, plancherel_vec_norm, reference_fields)


def test_calibration(tm):
    assert tm.Kdd == pytest.approx(-0.5, abs=1e-3)
    assert tm.diagnostics["identity_residual"] <= 1e-2


def test_Kcd_two_routes(tm):
    # direct pairing with R phi_d' against the commutator formula
    assert tm.diagnostics["Kcd_route_gap"] < 1e-6


def test_Kdc_matches_physical_pairing(table, tm):
    R = table.R
    for f in reference_fields(R).values():
        x = dft_forward(table, f).x
        field = dft_inverse(table, table.state(0.0, x))
        direct = table.grid_R.inner(table.phi_d, R * first_derivative_grid(field, table.grid_R.dr))
        assert tm.Kdc @ x == pytest.approx(direct, rel=0.02, abs=1e-6)


def test_commutator_matches_products(tm):
    assert np.allclose(tm.commAK, tm.A @ tm.K - tm.K @ tm.A)


def test_K_bounded_on_suite(table, tm):
    ratios = []
    for f in reference_fields(table.R).values():
        v = dft_forward(table, f).vector()
        ratios.append(plancherel_vec_norm(table, tm.K @ v) / plancherel_vec_norm(table, v))
    assert max(ratios) < 10


@pytest.mark.parametrize("n,z", [(4, 0.5 - 2j), (4, 25 + 3j), (6, -40j), (5, 1e-3 - 1e-2j),
                                 (4, -80j), (6, 2 - 35j)])
def test_expn_against_mpmath(n, z):
    ref = complex(mpmath.expint(n, z))
    assert _expn_complex(n, np.array([z]))[0] == pytest.approx(ref, rel=1e-10)


def test_band_split_partitions(table, tm):
    parts = kernel_band_split(tm, table.xis, 8, 0.1)
    assert np.max(np.abs(tm.Kcc - parts["Kd"] - parts["Knd"])) == 0
    assert np.max(np.abs(parts["Kd"] - parts["K1"] - parts["K2"] - parts["K3"])) == 0
    big = kernel_band_split(tm, table.xis, 10 ** 6, 0.1)["Kd"]
    assert np.count_nonzero(big - np.diag(np.diag(big))) == 0
    with pytest.raises(ValueError):
        kernel_band_split(tm, table.xis, 1, 0.1)


def _states(table):
    R = table.R
    a = dft_forward(table, R * np.exp(-R * R / 4))
    b = dft_forward(table, R * np.exp(-(R - 2) ** 2))
    return a, b


def test_source_vanishes_without_beta(table, tm):
    law = make_law(0.5)
    a, b = _states(table)
    out = apply_R_source(law, tm, 10.0, a, b, beta=0.0)
    assert np.all(out.vector() == 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_source_linear(table, tm, p, q):
    law = make_law(0.5)
    a, b = _states(table)
    lhs = apply_R_source(law, tm, 12.0, a * p + b * q, b * p + a * q).vector()
    rhs = (apply_R_source(law, tm, 12.0, a, b) * p + apply_R_source(law, tm, 12.0, b, a) * q).vector()
    assert np.allclose(lhs, rhs, atol=1e-10 * np.abs(rhs).max())


def test_source_halves_at_double_time(table, tm):
    law = make_law(0.5)
    a, b = _states(table)
    n1 = plancherel_vec_norm(table, apply_R_source(law, tm, 10.0, a, b).vector())
    n2 = plancherel_vec_norm(table, apply_R_source(law, tm, 20.0, a, b).vector())
    assert 0.4 < n2 / n1 < 0.6
