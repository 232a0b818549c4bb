"""Vanishing functionals, admissible corrections, weighted norms and the growth split.

Frequency integrals of the form int g(xi) trig(w xi^(1/2)) dxi are evaluated on a refined
log grid: the smooth factor g(xi) xi is spline-interpolated in u = log xi and the trig factor
is sampled exactly, with at most `phase_step` radians between nodes.
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .propagator import free_evolve
from .scaling import phase_integral
from .spectral import dft_forward, dft_inverse

# rho(xi) ~ xi^(-1/2) / (3 pi) at low frequency; the resonance coefficient carries its root
RESONANCE_CONST = (3 * np.pi) ** -0.5


class ConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormConfig:
    delta0: float = 0.05
    tau0: float = 10.0
    dyadic_base: float = 2.0
    dyadic_levels: int = 3

    @classmethod
    def from_law(cls, law, levels=3):
        return cls(law.delta0, law.tau0, 2.0, levels)


@dataclass(frozen=True, eq=False)
class GrowthReport:
    taus: np.ndarray
    sup_eps1_over_R: np.ndarray
    sup_eps2: np.ndarray
    sup_total: np.ndarray
    g_tilde: np.ndarray
    energy: np.ndarray
    fitted_exponent: float

    def rows(self):
        return np.column_stack([self.taus, self.sup_eps1_over_R, self.sup_eps2, self.sup_total])


# ---------------------------------------------------------------- oscillatory integrals

def osc_integral(table, g, omega, trig, phase_step=0.1):
    """int_0^inf g(xi) trig(omega xi^(1/2)) dxi for trig in {"sin", "cos"}; g sampled on the grid."""
    fg = table.grid_xi
    u, h = fg.u, fg.h
    y = np.asarray(g, dtype=float) * fg.xis
    max_step = abs(omega) * np.sqrt(fg.xis[-1]) * h / 2
    m = max(1, int(np.ceil(max_step / phase_step)))
    fn = np.sin if trig == "sin" else np.cos
    if m == 1:
        uf, yf = u, y
    else:
        uf = np.linspace(u[0], u[-1], (u.size - 1) * m + 1)
        yf = CubicSpline(u, y)(uf)
    vals = yf * fn(omega * np.exp(uf / 2))
    hf = uf[1] - uf[0]
    total = hf * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    # below the grid the u-integrand decays like xi^(1/2) for resonant data
    return float(total + 2 * vals[0])


def resonance_integrals(table, x0, x1, omega, x0_power=-0.25):
    """(int rho^(1/2) x1 xi^(-3/4) sin(omega xi^(1/2)), int rho^(1/2) x0 xi^(x0_power) cos(omega xi^(1/2)))."""
    xi = table.xis
    sr = np.sqrt(table.rho)
    i1 = osc_integral(table, sr * x1 * xi ** -0.75, omega, "sin")
    i0 = osc_integral(table, sr * x0 * xi ** x0_power, omega, "cos")
    return i1, i0


def vanishing_functionals(table, nc, nu, pair, x0_power=-0.25):
    """v1 (sin functional on x1) and v0 (cos functional on x0) at omega = nu tau0.

    x0_power = -0.25 is the default; -0.75 gives the alternative weight."""
    v1, v0 = resonance_integrals(table, pair.x0.x, pair.x1.x, nu * nc.tau0, x0_power)
    return {"v0": v0, "v1": v1}


def correction_profile(table, nc, C_cut=1.0, width=1.0):
    """F(chi_{R <= C_cut tau0} phi(R, 0)), with a smooth tanh cutoff of the given width."""
    R = table.R
    chi = 0.5 * (1 - np.tanh((R - C_cut * nc.tau0) / width))
    return dft_forward(table, chi * table.phi0).x


def admissible_correction(table, nc, nu, pair, C_cut=1.0, x0_power=-0.25, min_ratio=1e-12):
    """Add multiples of the correction profile so that both functionals vanish."""
    from .propagator import CauchyPair
    prof = correction_profile(table, nc, C_cut)
    zero = np.zeros_like(prof)
    p1, _ = resonance_integrals(table, zero, prof, nu * nc.tau0, x0_power)
    _, p0 = resonance_integrals(table, prof, zero, nu * nc.tau0, x0_power)
    scale = np.sqrt(np.sum(table.grid_xi.weights * table.rho * prof ** 2))
    if min(abs(p0), abs(p1)) < min_ratio * scale:
        raise ConditioningError(f"degenerate correction profile (v0={p0:.2e}, v1={p1:.2e})")
    v = vanishing_functionals(table, nc, nu, pair, x0_power)
    alpha = -v["v1"] / p1
    beta = -v["v0"] / p0
    corrected = CauchyPair(pair.x0 + table.state(0.0, beta * prof),
                           pair.x1 + table.state(0.0, alpha * prof))
    return {"corrected": corrected, "alpha": float(alpha), "beta": float(beta), "profile": prof}


# ---------------------------------------------------------------- norms

def _bracket(xi):
    return np.sqrt(1 + xi * xi)


def norm_weight(nc, kind, xi):
    d = nc.delta0
    b = _bracket(xi)
    if kind == "S~1":
        return b ** (0.5 + 2 * d) / np.minimum(nc.tau0 * np.sqrt(xi), 1.0) * xi ** (0.5 - d)
    if kind in ("S~2", "S2"):
        return b ** (0.5 + 2 * d) * xi ** -d
    if kind == "S1":
        return b ** (1 + 2 * d) * xi ** -d
    if kind == "S3":
        return np.minimum(xi ** d, 1.0) * b ** (0.5 + d)
    raise ValueError(f"unknown norm {kind!r}")


_ALIASES = {"S̃₁": "S~1", "S̃₂": "S~2", "S₁": "S1", "S₂": "S2", "S₃": "S3", "S̃": "S~"}


def weighted_norm(table, nc, kind, obj):
    """Weighted L^2(dxi) norm of a state (component kinds) or a CauchyPair ("S~", "S")."""
    kind = _ALIASES.get(kind, kind)
    if kind in ("S~", "S"):
        k0, k1 = ("S~1", "S~2") if kind == "S~" else ("S1", "S2")
        return weighted_norm(table, nc, k0, obj.x0) + weighted_norm(table, nc, k1, obj.x1)
    x = obj.x if hasattr(obj, "x") else np.asarray(obj, dtype=float)
    w = norm_weight(nc, kind, table.xis)
    return float(np.sqrt(np.sum(table.grid_xi.weights * (w * x) ** 2)))


def energy_norm(table, nc, x):
    """||xi^(3/4 + delta0) x||_{L^2(dxi)}."""
    return float(np.sqrt(np.sum(table.grid_xi.weights * (table.xis ** (0.75 + nc.delta0) * x) ** 2)))


def dyadic_diagnostic(nc, taus, q, weight_exponent):
    """(sum over dyadic blocks [N, bN) of [sup (tau/tau0)^w q]^2)^(1/2), N = tau0 b^k, k < levels."""
    taus = np.asarray(taus, dtype=float)
    q = np.asarray(q, dtype=float)
    vals = (taus / nc.tau0) ** weight_exponent * np.abs(q)
    total = 0.0
    for k in range(nc.dyadic_levels):
        lo = nc.tau0 * nc.dyadic_base ** k
        hi = lo * nc.dyadic_base
        last = k == nc.dyadic_levels - 1
        m = (taus >= lo * (1 - 1e-12)) & ((taus <= hi * (1 + 1e-12)) if last else (taus < hi))
        if np.any(m):
            total += np.max(vals[m]) ** 2
    return float(np.sqrt(total))


# ---------------------------------------------------------------- growth split

def g_tilde(law, table, pair, tau, x0_power=-0.25):
    """(lambda(tau)/lambda(tau0)) [sin-integral of x1 + cos-integral of x0] at the tau0-anchored phase."""
    om = float(phase_integral(law, law.tau0, tau, law.tau0))
    i1, i0 = resonance_integrals(table, pair.x0.x, pair.x1.x, om, x0_power)
    return float(law.lam_ratio(tau, law.tau0)) * (i1 + i0)


def fit_exponent(taus, vals, tail=0.5):
    """Log-log slope over the last `tail` fraction of the window."""
    taus = np.asarray(taus, dtype=float)
    vals = np.abs(np.asarray(vals, dtype=float))
    m = taus >= taus[0] + (1 - tail) * (taus[-1] - taus[0])
    if m.sum() < 2 or np.any(vals[m] <= 0):
        return 0.0
    return float(np.polyfit(np.log(taus[m]), np.log(vals[m]), 1)[0])


def growth_split_measure(law, table, nc, pair, taus, r_sup=None):
    """P_c eps~ = eps1 + eps2 with eps1 = c phi(R, 0) g~(tau); sups over R <= r_sup (default r_phys)."""
    taus = np.asarray(taus, dtype=float)
    R = table.R
    r_sup = table.config.r_phys if r_sup is None else r_sup
    m = (R > 0) & (R <= r_sup)
    phi0_R = np.max(np.abs(table.phi0[m] / R[m]))
    s1, s2, st, gs, en = [], [], [], [], []
    for tau in taus:
        sl = free_evolve(law, table, pair, tau)
        field = dft_inverse(table, table.state(0.0, sl.x))
        g = g_tilde(law, table, pair, tau)
        eps1 = RESONANCE_CONST * g * table.phi0
        s1.append(RESONANCE_CONST * abs(g) * phi0_R)
        s2.append(np.max(np.abs(field - eps1)[m]))
        st.append(np.max(np.abs(field)[m]))
        gs.append(g)
        en.append(energy_norm(table, nc, sl.x))
    st = np.array(st)
    expo = fit_exponent(taus, st) if np.any(st > 0) else 0.0
    return GrowthReport(taus, np.array(s1), np.array(s2), st, np.array(gs), np.array(en), expo)
