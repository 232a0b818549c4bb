"""Physical-space finite-difference solver for the radial wave equation, w = r * perturbation.

Linear:  w_tt = w_rr + 5 lambda(t)^2 W(lambda(t) r)^4 w.
Quintic: w_tt = w_rr + w^5 / r^4.
Time stepping is Stormer-Verlet (the velocity form of leapfrog) in an evolution variable
s = +-(t - t_start), so runs toward the blow-up time t = 0 are forward runs in s.  Dirichlet
at r = 0, first-order Sommerfeld w_s + w_r = 0 at r_max.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .spectral import FourierState, dft_inverse, ground_state_eval
from .transference import first_derivative_matrix


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class OracleGrid:
    r_max: float
    dr: float
    dt: float
    n_steps: int = 0

    def __post_init__(self):
        if self.dr <= 0 or self.dt <= 0 or self.r_max <= self.dr:
            raise CFLError("need r_max > dr > 0 and dt > 0")
        if self.cfl > 0.9 + 1e-12:
            raise CFLError(f"dt/dr = {self.cfl:.3f} exceeds 0.9")

    @property
    def cfl(self):
        return self.dt / self.dr

    @property
    def r(self):
        n = int(round(self.r_max / self.dr))
        return np.arange(n + 1) * self.dr

    @classmethod
    def with_cfl(cls, r_max, dr, cfl=0.5):
        return cls(r_max, dr, cfl * dr)


@dataclass(frozen=True, eq=False)
class OracleTrajectory:
    t: np.ndarray
    r: np.ndarray
    w: np.ndarray
    wt: np.ndarray
    status: str = "ok"
    t_stop: float = np.nan


def _laplacian(w, dr):
    out = np.zeros_like(w)
    out[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / (dr * dr)
    return out


def _as_samples(f, r):
    return np.asarray(f(r) if callable(f) else f, dtype=float)


def linear_potential(law, t, r, frozen_lam=None):
    lam = frozen_lam if frozen_lam is not None else float(law.lam(law.tau_of_t(t)))
    return 5 * lam * lam * ground_state_eval(lam * r) ** 4


def _verlet(accel, grid, w0, w1, t_out, blowup=None):
    """Integrate w_tt = accel(t, w) from t_out[0] through the (monotone) times t_out."""
    r, dr = grid.r, grid.dr
    t_out = np.asarray(t_out, dtype=float)
    sgn = 1.0 if t_out[-1] >= t_out[0] else -1.0
    w = _as_samples(w0, r).copy()
    v = sgn * _as_samples(w1, r)  # dw/ds
    w[0] = 0.0
    ws, vs = [w.copy()], [sgn * v]
    t = t_out[0]
    a = accel(t, w)
    for t_next in t_out[1:]:
        span = abs(t_next - t)
        m = max(1, int(np.ceil(span / grid.dt - 1e-9)))
        ds = span / m
        for _ in range(m):
            vh = v + 0.5 * ds * a
            edge = w[-1] - ds * (w[-1] - w[-2]) / dr
            w = w + ds * vh
            w[0] = 0.0
            w[-1] = edge
            t = t + sgn * ds
            a = accel(t, w)
            v = vh + 0.5 * ds * a
            v[-1] = -(w[-1] - w[-2]) / dr
            if blowup is not None and blowup(w):
                ws.append(w.copy())
                vs.append(sgn * v)
                n = len(ws)
                return OracleTrajectory(np.append(t_out[:n - 1], t), r, np.array(ws),
                                        np.array(vs), "blowup", t)
        t = t_next
        ws.append(w.copy())
        vs.append(sgn * v)
    return OracleTrajectory(t_out, r, np.array(ws), np.array(vs))


def evolve_linear(law, grid, w0, w1, t_out, potential=True, frozen_lam=None):
    """Linearized flow around W_lambda(t); w0, w1 are samples on grid.r or callables of r."""
    r, dr = grid.r, grid.dr

    def accel(t, w):
        a = _laplacian(w, dr)
        if potential:
            a += linear_potential(law, t, r, frozen_lam) * w
        return a

    return _verlet(accel, grid, w0, w1, t_out)


def evolve_quintic(grid, w0, w1, t_out, blowup_level=1e3):
    """Full focusing quintic flow for w = r u; stops cleanly once sup|u| exceeds blowup_level."""
    r, dr = grid.r, grid.dr
    inv_r4 = np.zeros_like(r)
    inv_r4[1:] = r[1:] ** -4.0

    def accel(t, w):
        return _laplacian(w, dr) + w ** 5 * inv_r4

    def blowup(w):
        return not np.all(np.isfinite(w)) or np.max(np.abs(w[1:] / r[1:])) > blowup_level

    return _verlet(accel, grid, w0, w1, t_out, blowup)


def ground_state_w(r, lam):
    return r * np.sqrt(lam) * ground_state_eval(lam * r)


def linear_energy(grid, w, wt, V):
    """int (w_t^2 + w_r^2 - V w^2) dr on the staggered difference grid."""
    dr = grid.dr
    wr = np.diff(w) / dr
    return float(dr * (np.sum(wt ** 2 - V * w ** 2) + np.sum(wr ** 2)))


# ---------------------------------------------------------------- Fourier-side system

def inflow_A(table, tm):
    """A with zero-inflow closure at xi_max.

    Transport runs toward low xi, so the top of the grid is an inflow boundary where the
    one-sided closure of A_c produces growing spurious modes; beyond-grid values are taken as 0.
    """
    n, h = tm.n, table.grid_xi.h
    D = first_derivative_matrix(n, h)
    Dz = D.copy()
    c = np.array([1, -8, 0, 8, -1]) / (12.0 * h)
    Dz[-2:] = 0.0
    Dz[-2, -4:] = c[:4]
    Dz[-1, -3:] = c[:3]
    A = tm.A
    A[1:, 1:] += 2 * (D - Dz)
    return A


def transport_rhs(law, table, tm, dx_coeff=-2.0, k_shift=1.0):
    """d/dtau (X, Y) for Y = D X: decoupled transport plus the linear source.

    Defaults give the source that matches the physical flow; (dx_coeff, k_shift) = (-4, 0)
    is the printed coefficient reading.
    """
    n = tm.n + 1
    I = np.eye(n)
    A = inflow_A(table, tm)
    Kt = tm.K - k_shift * I
    P = Kt @ Kt + A @ Kt - Kt @ A + (1 + law.beta_prime_over_beta2()) * Kt
    xi = np.concatenate([[table.xi_d], table.xis])

    def rhs(tau, z):
        b = float(law.beta(tau))
        X, Y = z[:n], z[n:]
        dX = Y - b * (A @ X)
        dY = -b * (A @ Y) - b * Y - xi * X + dx_coeff * b * (Kt @ Y) - b * b * (P @ X)
        return np.concatenate([dX, dY])

    return rhs


def fourier_evolve(law, table, tm, pair, taus, rtol=1e-10, atol=1e-14, **source):
    """Method-of-lines solution of the full linear transport system; rows are state vectors."""
    rhs = transport_rhs(law, table, tm, **source)
    z0 = np.concatenate([pair.x0.vector(), pair.x1.vector()])
    sol = solve_ivp(rhs, (taus[0], taus[-1]), z0, method="DOP853", t_eval=taus,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    n = tm.n + 1
    return sol.y[:n].T, sol.y[n:].T


@dataclass(frozen=True, eq=False)
class Comparison:
    taus: np.ndarray
    rel_l2_error: np.ndarray
    rel_l2_continuous: np.ndarray
    physical: np.ndarray
    fourier: np.ndarray
    R: np.ndarray


def compare_with_fourier(law, table, tm, pair, taus=None, dR=0.02, cfl=0.5, r_cmp=None,
                         rtol=1e-10, **source):
    """Relative grid-L^2 gap of eps~(tau, R) on R <= r_cmp between the two solvers.

    rel_l2_continuous repeats the measurement after projecting out phi_d on both sides, since
    the unstable discrete mode dominates late slices.

    Physical side: data from the Fourier pair at tau0 (eps~ = lambda w, w_t = (R/lambda) eps_t),
    evolved by evolve_linear with dr = dR / lambda(tau_end).
    """
    from .iteration import data_map
    from .nonlinear import field_window

    taus = np.linspace(law.tau0, 2 * law.tau0, 11) if taus is None else np.asarray(taus, float)
    r_cmp = table.config.r_phys if r_cmp is None else r_cmp
    R = table.R
    win = field_window(table)
    eps0, w1R = data_map(law, table, tm, "fourier->physical", pair)
    eps0, w1R = eps0 * win, w1R * win
    lam0 = float(law.lam(taus[0]))
    lam1 = float(law.lam(taus[-1]))
    ts = law.t(taus)
    m_data = R <= table.config.r_phys + 12.0
    r_max = R[m_data][-1] / lam0 + abs(ts[-1] - ts[0]) + 0.05
    grid = OracleGrid.with_cfl(r_max, dR / lam1, cfl)
    r = grid.r
    Rd = R[m_data]
    inside = lam0 * r <= Rd[-1]
    w0 = np.where(inside, CubicSpline(Rd, eps0[m_data])(np.minimum(lam0 * r, Rd[-1])), 0.0) / lam0
    w1 = np.where(inside, CubicSpline(Rd, w1R[m_data])(np.minimum(lam0 * r, Rd[-1])), 0.0)
    traj = evolve_linear(law, grid, w0, w1, ts)

    X, _ = fourier_evolve(law, table, tm, pair, taus, rtol=rtol, **source)
    m = R <= r_cmp
    wts = table.grid_R.weights[m]
    pd = table.phi_d[m]

    def rel(a, b):
        den = np.sqrt(np.sum(wts * a * a))
        return np.sqrt(np.sum(wts * (a - b) ** 2)) / den if den > 0 else 0.0

    errs, errs_c, A_side, B_side = [], [], [], []
    for i, tau in enumerate(taus):
        lam = float(law.lam(tau))
        a = lam * CubicSpline(r, traj.w[i])(R[m] / lam)
        b = dft_inverse(table, FourierState.from_vector(X[i], table.key))[m]
        A_side.append(a)
        B_side.append(b)
        errs.append(rel(a, b))
        errs_c.append(rel(a - np.sum(wts * pd * a) * pd, b - np.sum(wts * pd * b) * pd))
    return Comparison(taus, np.array(errs), np.array(errs_c), np.array(A_side),
                      np.array(B_side), R[m])
