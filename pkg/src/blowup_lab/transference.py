"""The operator A_c, the transference operator K and the linear source of the transport system.

Conventions.  States are vectors v = (x_d, x(xi_1), ..., x(xi_N)); index 0 is the discrete
mode.  K is defined operationally by K := F (R d/dR) F^{-1} - A with A = diag(0, A_c) and
A_c = -2 xi d/dxi - (5/2 + xi rho'/rho).  From [L, R d/dR] = 2L - (2V + R V') one gets the
off-diagonal kernel rho(eta) F(xi, eta) / (xi - eta) with
F(xi, eta) = -<phi_xi, (2V + R V') phi_eta>, and the diagonal symbol
-2 xi d/dxi - (3/2 + xi rho'/rho), so K_cc = PV kernel + identity.
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import UnivariateSpline
from scipy.special import exp1

from .spectral import FourierState, GridMismatchError, ground_state_eval


class ConstructionError(RuntimeError):
    pass


def first_derivative_matrix(n, h):
    """4th-order d/du on a uniform grid: central inside, one-sided 5-point at the ends."""
    D = np.zeros((n, n))
    c = np.array([1, -8, 0, 8, -1]) / 12.0
    for i in range(2, n - 2):
        D[i, i - 2:i + 3] = c
    fwd = np.array([-25, 48, -36, 16, -3]) / 12.0
    D[0, :5] = fwd
    D[1, :5] = np.array([-3, -10, 18, -6, 1]) / 12.0
    D[-1, -5:] = -fwd[::-1]
    D[-2, -5:] = -np.array([-3, -10, 18, -6, 1])[::-1] / 12.0
    return D / h


def rho_log_derivative(u, rho, smooth=1e-10):
    """xi rho'/rho = d log rho / du, from a smoothing spline of log rho against u."""
    spl = UnivariateSpline(u, np.log(rho), k=5, s=u.size * smooth ** 2)
    return spl.derivative()(u)


def build_Ac(u, h, rho):
    n = u.size
    D = first_derivative_matrix(n, h)
    ell = rho_log_derivative(u, rho)
    return -2 * D - np.diag(2.5 + ell), ell


def shifted_potential(R):
    """2V + R V' = (10/3) W^6 (R^2 - 3)."""
    W = ground_state_eval(R)
    return (10.0 / 3.0) * W ** 6 * (R * R - 3)


def _expn_complex(n, z, switch=2.0, tol=1e-15, max_iter=5000):
    """E_n(z) for complex z off the negative real axis.

    Upward recurrence from E_1 for |z| <= switch; the continued fraction (modified Lentz)
    above, where recurrence would amplify rounding by |z|^(n-1)/(n-1)!.
    """
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) <= switch
    zs = np.where(small, z, 1.0)
    e = exp1(zs)
    for m in range(1, n):
        e = (np.exp(-zs) - zs * e) / m
    zl = np.where(small, 1.0 + n, z)
    b = zl + n
    c = np.full_like(zl, 1e300)
    d = 1.0 / b
    h = d
    for i in range(1, max_iter):
        an = -i * (n - 1 + i)
        b = b + 2
        d = 1.0 / (an * d + b)
        c = b + an / c
        step = c * d
        h = h * step
        if np.all(np.abs(step - 1) < tol):
            break
    return np.where(small, e, h * np.exp(-zl))


def _tail_cos(kappa, theta, a, n):
    """Re int_a^inf R^-n e^{i (kappa R + theta)} dR."""
    kappa = np.asarray(kappa, dtype=float)
    zero = kappa == 0
    I = a ** (1 - n) * _expn_complex(n, -1j * np.where(zero, 1.0, kappa) * a)
    I = np.where(zero, a ** (1 - n) / (n - 1), I)
    return np.real(np.exp(1j * theta) * I)


def far_tail(table):
    """int_{r_max}^inf phi_i phi_j (2V + R V') dR from phi ~ c sin(k R + theta) and
    2V + R V' = 90 R^-4 - 1080 R^-6 + O(R^-8)."""
    a = table.grid_R.r_max
    k = np.sqrt(table.xis)
    c, th = table.amp, table.phase
    dk = k[:, None] - k[None, :]
    sk = k[:, None] + k[None, :]
    dth = th[:, None] - th[None, :]
    sth = th[:, None] + th[None, :]
    out = np.zeros_like(dk)
    for coef, n in ((90.0, 4), (-1080.0, 6)):
        out += coef * (_tail_cos(dk, dth, a, n) - _tail_cos(sk, sth, a, n))
    return 0.5 * c[:, None] * c[None, :] * out


def first_derivative_grid(f, h, odd=True):
    """8th-order d/dR of uniform samples starting at R=0, odd reflection at 0."""
    c = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
    f = np.asarray(f, dtype=float)
    ext = np.concatenate([-f[4:0:-1] if odd else f[4:0:-1], f])
    n = f.size
    out = np.zeros(n)
    acc = np.zeros(n - 4)
    for j, cj in enumerate(c):
        acc += cj * ext[j:j + n - 4]
    out[:n - 4] = acc / h
    # trailing nodes: one-sided 2nd order (fields are negligible there)
    out[n - 4:] = np.gradient(f, h)[n - 4:]
    return out


@dataclass(frozen=True, eq=False)
class TransferenceMatrices:
    key: str
    Ac: np.ndarray
    Kcc: np.ndarray
    Kcd: np.ndarray
    Kdc: np.ndarray
    Kdd: float
    F: np.ndarray
    ell: np.ndarray
    diagnostics: dict

    @property
    def n(self):
        return self.Ac.shape[0]

    @property
    def A(self):
        A = np.zeros((self.n + 1, self.n + 1))
        A[1:, 1:] = self.Ac
        return A

    @property
    def K(self):
        K = np.empty((self.n + 1, self.n + 1))
        K[0, 0] = self.Kdd
        K[0, 1:] = self.Kdc
        K[1:, 0] = self.Kcd
        K[1:, 1:] = self.Kcc
        return K

    @property
    def commAK(self):
        A, K = self.A, self.K
        return A @ K - K @ A

    def apply(self, M, s):
        if s.key != self.key:
            raise GridMismatchError("state does not match the transference table")
        return FourierState.from_vector(M @ s.vector(), s.key)


def pv_matrix(u, h, rho, F, D=None):
    """Discretize x -> PV int rho(eta) F(xi, eta) x(eta) / (xi - eta) d eta on the log grid.

    In u = log xi the kernel is rho F x k(u_i - u') du' with k(s) = 1/(e^s - 1) = 1/s - 1/2 + ...
    The 1/s part is a punctured trapezoid sum plus the correction -h G'(u_i); the smooth
    remainder takes the value -1/2 on the diagonal.
    """
    n = u.size
    D = first_derivative_matrix(n, h) if D is None else D
    s = u[:, None] - u[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 1.0 / np.expm1(s)
    np.fill_diagonal(k, -0.5)
    wu = np.full(n, h)
    wu[0] = wu[-1] = h / 2
    G = rho[None, :] * F  # G[i, j] = rho_j F_ij
    M = k * G * wu[None, :]
    M -= h * D * G  # row i: -h d/du' [rho F_i. x](u_i)
    return M


def build_transference(table, check=True, resid_tol=1e-2):
    fg = table.grid_xi
    grid = table.grid_R
    R = grid.nodes
    Ac, ell = build_Ac(fg.u, fg.h, table.rho)
    q = shifted_potential(R) * grid.weights
    F = -(table.phi * q[None, :]) @ table.phi.T - far_tail(table)
    Kcc = pv_matrix(fg.u, fg.h, table.rho, F) + np.eye(fg.size)
    dphi_d = first_derivative_grid(table.phi_d, grid.dr, odd=True)
    Kcd = table.phi @ (grid.weights * R * dphi_d)
    Kdd = float(np.sum(grid.weights * table.phi_d * R * dphi_d))
    Kdc = -Kcd * table.rho * fg.weights
    # route 2 for K_cd: the commutator identity with the L^2 discrete mode
    Kcd_alt = -(table.phi @ (q * table.phi_d)) / (fg.xis - table.xi_d)
    diag = {
        "Kcd_route_gap": float(np.max(np.abs(Kcd - Kcd_alt)) / np.max(np.abs(Kcd))),
    }
    tm = TransferenceMatrices(table.key, Ac, Kcc, Kcd, Kdc, Kdd, F, ell, diag)
    if check:
        res = identity_residual(table, tm)
        diag["identity_residual"] = res
        if res > resid_tol:
            raise ConstructionError(f"operator identity residual {res:.2e} > {resid_tol}")
    return tm


def reference_fields(R):
    """Fixed suite of smooth Dirichlet-class test fields."""
    return {
        "gauss": R * np.exp(-R * R),
        "wide_gauss": R * np.exp(-R * R / 4),
        "cubic": R ** 3 * np.exp(-R * R / 4) / 4,
        "shell": R * np.exp(-(R - 3) ** 2),
        "rational": R / (1 + R * R) ** 3,
    }


def plancherel_vec_norm(table, v):
    return np.sqrt(v[0] ** 2 + np.sum(table.grid_xi.weights * table.rho * v[1:] ** 2))


def identity_residual(table, tm, fields=None):
    """max over the suite of ||F(R f') - (A + K) F f|| / ||f||, with F(R f') by direct R-differentiation."""
    from .spectral import dft_forward
    R = table.R
    fields = fields or reference_fields(R)
    AK = tm.A + tm.K
    worst = 0.0
    for f in fields.values():
        lhs = dft_forward(table, R * first_derivative_grid(f, table.grid_R.dr)).vector()
        rhs = AK @ dft_forward(table, f).vector()
        worst = max(worst, plancherel_vec_norm(table, lhs - rhs) / table.grid_R.norm(f))
    return worst


def apply_R_source(law, tm, tau, x, dx, dx_coeff=-4.0, k_shift=0.0, beta=None):
    """R(tau, x) = dx_coeff beta K dx - beta^2 (K^2 + [A, K] + K + beta' beta^-2 K) x.

    K is the operational transference operator shifted by -k_shift (k_shift = 1 turns it into
    the operator attached to R d/dR - 1).  Defaults reproduce the printed form.
    """
    if x.key != tm.key or dx.key != tm.key:
        raise GridMismatchError("states do not match the transference table")
    b = law.beta(tau) if beta is None else beta
    K = tm.K - k_shift * np.eye(tm.n + 1)
    A = tm.A
    xv, dv = x.vector(), dx.vector()
    Kx = K @ xv
    out = dx_coeff * b * (K @ dv)
    out -= b * b * (K @ Kx + A @ Kx - K @ (A @ xv) + (1 + law.beta_prime_over_beta2()) * Kx)
    return FourierState.from_vector(out, x.key)


def exact_transport_source(law, tm, tau, x, dx, beta=None):
    """Source that makes the decoupled transport equation exact (see the decisions ledger)."""
    return apply_R_source(law, tm, tau, x, dx, dx_coeff=-2.0, k_shift=1.0, beta=beta)


def kernel_band_split(tm, xis, n, eps):
    if n < 2 or not (0 < eps < 1):
        raise ValueError("need n >= 2 and 0 < eps < 1")
    ratio = xis[:, None] / xis[None, :]
    near = np.abs(ratio - 1) < 1.0 / n
    Kd = np.where(near, tm.Kcc, 0.0)
    Knd = tm.Kcc - Kd
    lo = (xis < eps)[:, None]
    hi = (xis > 1 / eps)[:, None]
    K1 = np.where(lo, Kd, 0.0)
    K3 = np.where(hi, Kd, 0.0)
    K2 = np.where(~lo & ~hi, Kd, 0.0)
    return {"Kd": Kd, "Knd": Knd, "K1": K1, "K2": K2, "K3": K3}
