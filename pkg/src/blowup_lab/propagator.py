"""Exact flows of the decoupled transport equation (D^2 + beta D + xi) x = f.

Along characteristics xi lambda^2 = const the substitution x = rho^(-1/2) lambda^(5/2) z turns
the equation into z_ss + lambda0^2 xi~ z = lambda^(-1/2) rho^(1/2) f with ds = dtau / lambda,
which gives the homogeneous propagator and both Duhamel integrals below.
"""
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .spectral import FourierState


class AccuracyError(RuntimeError):
    pass


class HorizonError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CauchyPair:
    x0: FourierState
    x1: FourierState

    def __add__(self, other):
        return CauchyPair(self.x0 + other.x0, self.x1 + other.x1)

    def __mul__(self, a):
        return CauchyPair(self.x0 * a, self.x1 * a)

    __rmul__ = __mul__

    @classmethod
    def continuous(cls, table, x0, x1, x0d=0.0, x1d=0.0):
        return cls(table.state(x0d, x0), table.state(x1d, x1))


@dataclass(frozen=True)
class DiscreteModeFit:
    c_d: float
    gamma_d: float


@dataclass(frozen=True, eq=False)
class Slice:
    x: np.ndarray
    dx: np.ndarray


# ---------------------------------------------------------------- log-grid resampling

def _lagrange4(t):
    return np.stack([
        -t * (t - 1) * (t - 2) / 6,
        (t + 1) * (t - 1) * (t - 2) / 2,
        -(t + 1) * t * (t - 2) / 2,
        (t + 1) * t * (t - 1) / 6,
    ])


def sample_at(vals, q, low="const", high="zero", h=None, slopes=(-0.5, 0.5)):
    """Values at fractional grid index q by 4-point Lagrange interpolation.

    vals is (N,) with q of any shape, or (M, N) with q of shape (M, K).  Outside [0, N-1]
    the rules low/high in {"zero", "const", "linear"} apply; "linear" extends with the
    given slope per unit u (log rho has tails -1/2 and +1/2).
    """
    vals = np.asarray(vals, dtype=float)
    q = np.asarray(q, dtype=float)
    n = vals.shape[-1]
    m = np.clip(np.floor(q).astype(int), 1, n - 3)
    w = _lagrange4(q - m)
    if vals.ndim == 1:
        out = sum(w[j] * vals[m - 1 + j] for j in range(4))
        first, last = vals[0], vals[-1]
    else:
        rows = np.arange(vals.shape[0])[:, None]
        out = sum(w[j] * vals[rows, m - 1 + j] for j in range(4))
        first, last = vals[:, :1], vals[:, -1:]
    out = np.where(q < 0, _extend(first, q, low, slopes[0], h), out)
    out = np.where(q > n - 1, _extend(last, q - (n - 1), high, slopes[1], h), out)
    return out


def _extend(edge, dq, rule, slope, h):
    if rule == "zero":
        return np.zeros_like(dq)
    if rule == "const":
        return edge + 0 * dq
    if rule == "linear":
        return edge + slope * dq * h
    raise ValueError(rule)


def log_rho_at(table, uq):
    fg = table.grid_xi
    return sample_at(np.log(table.rho), (uq - fg.u[0]) / fg.h, "linear", "linear", h=fg.h)


def values_at(table, vals, uq, low="const", high="zero"):
    fg = table.grid_xi
    return sample_at(vals, (uq - fg.u[0]) / fg.h, low, high)


def _shift_q(table, shift_u):
    """Fractional indices of the grid nodes shifted by shift_u (exact integers for zero shift)."""
    fg = table.grid_xi
    shift_u = np.atleast_1d(np.asarray(shift_u, dtype=float))
    return np.arange(fg.size)[None, :] + (shift_u / fg.h)[:, None]


def rho_ratio_sqrt(table, shift_u):
    """(rho(e^{u+shift}) / rho(e^u))^(1/2) on the grid; shift_u scalar or (M,) -> (M, N)."""
    logr = np.log(table.rho)
    lr = sample_at(logr, _shift_q(table, shift_u), "linear", "linear", h=table.grid_xi.h)
    return np.exp(0.5 * (lr - logr[None, :]))


def resample(table, vals, shift_u, low="const", high="zero"):
    """vals evaluated at e^{u + shift_u}; vals (N,) shared or (M, N) row per shift."""
    return sample_at(np.asarray(vals, dtype=float), _shift_q(table, shift_u), low, high)


def _sinc_over_sqrt(a, xi):
    """sin(a sqrt(xi)) / sqrt(xi), smooth as xi -> 0."""
    return a * np.sinc(a * np.sqrt(xi) / np.pi)


# ---------------------------------------------------------------- homogeneous flow

def free_evolve(law, table, pair, tau):
    if tau < law.tau0:
        raise ValueError("tau must be >= tau0")
    xi = table.xis
    L = float(law.lam_ratio(tau, law.tau0))
    shift = 2 * np.log(L)
    rr = rho_ratio_sqrt(table, shift)[0]
    x0 = resample(table, pair.x0.x, shift)[0]
    x1 = resample(table, pair.x1.x, shift)[0]
    return _assemble(law, tau, xi, L, rr, x0, x1)


def _assemble(law, tau, xi, L, rr, x0, x1):
    a = float(law.lam(tau)) * (law.inv_lam_antideriv(tau) - law.inv_lam_antideriv(law.tau0))
    th = a * np.sqrt(xi)
    c, s = np.cos(th), np.sin(th)
    x = rr * (L ** 2.5 * c * x0 + L ** 1.5 * _sinc_over_sqrt(a, xi) * x1)
    dx = rr * (-L ** 2.5 * np.sqrt(xi) * s * x0 + L ** 1.5 * c * x1)
    return Slice(x, dx)


def free_evolve_at(law, table, pair, tau, xi):
    """The homogeneous flow at arbitrary frequencies xi (data and rho interpolated in log xi)."""
    xi = np.asarray(xi, dtype=float)
    L = float(law.lam_ratio(tau, law.tau0))
    u = np.log(xi)
    ut = u + 2 * np.log(L)
    rr = np.exp(0.5 * (log_rho_at(table, ut) - log_rho_at(table, u)))
    x0 = values_at(table, pair.x0.x, ut)
    x1 = values_at(table, pair.x1.x, ut)
    return _assemble(law, tau, xi, L, rr, x0, x1)


def transport_residual(law, table, pair, tau, dtau):
    """(D^2 + beta D + xi) x at the grid frequencies by central differences along characteristics.

    With z = rho^(1/2) lambda^(-5/2) x on the characteristic xi(s) lambda(s)^2 = const one has
    D x = rho^(-1/2) lambda^(5/2) z' and D^2 x = rho^(-1/2) lambda^(5/2) z''.
    Returns the residual and the scale |xi x| + |beta D x| for normalization.
    """
    xi = table.xis
    z = []
    for k in (-1, 0, 1):
        t = tau + k * dtau
        xk = xi * float(law.lam_ratio(tau, t)) ** 2
        sl = free_evolve_at(law, table, pair, t, xk)
        rho_k = np.exp(log_rho_at(table, np.log(xk)))
        z.append(np.sqrt(rho_k) * float(law.lam(t)) ** -2.5 * sl.x)
    zm, z0, zp = z
    pref = float(law.lam(tau)) ** 2.5 / np.sqrt(np.exp(log_rho_at(table, np.log(xi))))
    d2 = pref * (zp - 2 * z0 + zm) / dtau ** 2
    d1 = pref * (zp - zm) / (2 * dtau)
    x = pref * z0
    b = float(law.beta(tau))
    return d2 + b * d1 + xi * x, np.abs(xi * x) + np.abs(b * d1) + np.abs(d2)


# ---------------------------------------------------------------- Duhamel quadrature

# Gauss-Kronrod 7/15 on [-1, 1]
_XGK = np.array([0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                 0.207784955007898467600689403773245, 0.0])
_WGK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
G_WEIGHTS = np.zeros(15)
G_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def panel_breaks(a, b, width_max, rel_max=0.05):
    """Panel edges on [a, b]: width <= width_max and <= rel_max * sigma."""
    edges = [a]
    s = a
    while s < b:
        w = min(width_max, rel_max * s)
        s = min(b, s + w)
        if b - s < 1e-9 * b:
            s = b
        edges.append(s)
    return np.array(edges)


def sigma_nodes(breaks, width_max):
    """Gauss-Kronrod nodes on panels refining the interval list `breaks`."""
    nodes, wk, wg = [], [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        e = panel_breaks(a, b, width_max)
        mid = 0.5 * (e[1:] + e[:-1])
        half = 0.5 * (e[1:] - e[:-1])
        nodes.append((mid[:, None] + half[:, None] * GK_NODES[None, :]).ravel())
        wk.append((half[:, None] * GK_WEIGHTS[None, :]).ravel())
        wg.append((half[:, None] * G_WEIGHTS[None, :]).ravel())
    if not nodes:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(wk), np.concatenate(wg)


class SourceCache:
    """Memoized continuous source sigma -> f(sigma, .) on the xi grid."""

    def __init__(self, f):
        self.f = f
        self.store = {}

    def __call__(self, sigma):
        key = float(sigma)
        v = self.store.get(key)
        if v is None:
            v = np.asarray(self.f(key), dtype=float)
            self.store[key] = v
        return v

    def rows(self, sigmas):
        return np.array([self(s) for s in sigmas])


def _panel_width(table, xi_cap, phase_step=np.pi / 2):
    cap = table.xis[-1] if xi_cap is None else xi_cap
    return phase_step / np.sqrt(cap)


def _duhamel_sum(law, table, cache, tau, nodes, wk, wg, forward, chunk=1500):
    xi = table.xis
    sq = np.sqrt(xi)
    lam_tau = float(law.lam(tau))
    x = np.zeros(xi.size)
    dx = np.zeros(xi.size)
    xg = np.zeros(xi.size)
    for i0 in range(0, nodes.size, chunk):
        sig = nodes[i0:i0 + chunk]
        L = law.lam_ratio(tau, sig)
        shift = 2 * np.log(L)
        f = resample(table, cache.rows(sig), shift)
        rr = rho_ratio_sqrt(table, shift)
        dS = law.inv_lam_antideriv(tau) - law.inv_lam_antideriv(sig)  # S(tau) - S(sigma)
        a = lam_tau * np.abs(dS)
        amp = (L ** 1.5)[:, None] * rr * f
        ph = a[:, None] * sq[None, :]
        s_part = amp * _sinc_over_sqrt(a[:, None], xi[None, :])
        c_part = amp * np.cos(ph)
        x += wk[i0:i0 + chunk] @ s_part
        xg += wg[i0:i0 + chunk] @ s_part
        dx += wk[i0:i0 + chunk] @ c_part
    if not forward:
        dx = -dx
    return x, dx, np.abs(x - xg)


def duhamel_forward(law, table, f, tau, with_derivative=False, xi_cap=None, breaks=None,
                    tol=1e-6):
    """Zero-data solution at tau: int_{tau0}^{tau} (lam(tau)/lam(s))^{3/2} rho-ratio
    sin[lam(tau) sqrt(xi) int_s^tau 1/lam] / sqrt(xi) f(s, rescaled xi) ds."""
    cache = f if isinstance(f, SourceCache) else SourceCache(f)
    br = _breaks(law.tau0, tau, breaks)
    nodes, wk, wg = sigma_nodes(br, _panel_width(table, xi_cap))
    if nodes.size == 0:
        z = np.zeros(table.xis.size)
        return (z, z.copy()) if with_derivative else z
    x, dx, err = _duhamel_sum(law, table, cache, tau, nodes, wk, wg, forward=True)
    scale = max(np.abs(x).max(), 1e-300)
    if err.max() > tol * scale and err.max() > 1e-14:
        raise AccuracyError(f"forward Duhamel panel error {err.max():.2e} (scale {scale:.2e})")
    return (x, dx) if with_derivative else x


def _breaks(a, b, extra):
    pts = [a, b]
    if extra is not None:
        pts += [s for s in extra if a < s < b]
    return np.unique(np.array(pts, dtype=float))


@dataclass(frozen=True, eq=False)
class BackwardResult:
    x: np.ndarray
    dx: np.ndarray
    t_max: float
    tail: float
    quad_err: float


def duhamel_backward(law, table, f, tau, t_max=None, xi_cap=None, breaks=None, tol=1e-4,
                     max_doublings=4, tail_decay=2.0):
    """Solution vanishing at infinity: int_tau^{t_max} (...) sin[lam(tau) sqrt(xi) int_tau^s 1/lam] ...

    The tail beyond t_max is estimated from the integrand envelope at t_max assuming
    decay like s^(-tail_decay); t_max doubles until the estimate is below tol.
    """
    cache = f if isinstance(f, SourceCache) else SourceCache(f)
    t_max = 20 * law.tau0 if t_max is None else t_max
    width = _panel_width(table, xi_cap)
    for _ in range(max_doublings + 1):
        br = _breaks(tau, t_max, breaks)
        nodes, wk, wg = sigma_nodes(br, width)
        x, dx, err = _duhamel_sum(law, table, cache, tau, nodes, wk, wg, forward=False)
        env = _envelope(law, table, cache, tau, t_max)
        tail = env * t_max / (tail_decay - 1)
        scale = max(np.abs(x).max(), np.abs(dx).max(), 1e-300)
        if tail <= tol * scale or scale <= 1e-300:
            return BackwardResult(x, dx, t_max, tail, float(err.max()))
        t_max *= 2
    raise HorizonError(f"backward Duhamel tail {tail:.2e} exceeds {tol:.1e} x scale {scale:.2e}")


def _envelope(law, table, cache, tau, sigma):
    L = law.lam_ratio(tau, sigma)
    shift = 2 * np.log(L)
    f = resample(table, cache(sigma), shift)[0]
    rr = rho_ratio_sqrt(table, shift)[0]
    a = float(law.lam(tau)) * (law.inv_lam_antideriv(sigma) - law.inv_lam_antideriv(tau))
    amp = L ** 1.5 * rr * np.abs(f)
    return float(np.max(amp * np.maximum(a, 1.0)))


# ---------------------------------------------------------------- discrete mode

def _PQ(k, h):
    """int_0^h e^{-kt}(h-t)/h dt and int_0^h e^{-kt} t/h dt."""
    kh = k * h
    e = np.expm1(-kh)
    P = (kh + e) / (k * k * h)
    Q = (-e - kh * np.exp(-kh)) / (k * k * h)
    return P, Q


def _sweeps(k, sig, f):
    """Left and right exponential sweeps of piecewise-linear f (exact per interval)."""
    h = np.diff(sig)
    P, Q = _PQ(k, h)
    gl = np.concatenate([[0.0], f[:-1] * Q + f[1:] * P])
    gr = np.concatenate([f[:-1] * P + f[1:] * Q, [0.0]])
    if np.allclose(h, h[0], rtol=1e-12, atol=0):
        E = np.exp(-k * h[0])
        left = lfilter([1.0], [1.0, -E], gl)
        right = lfilter([1.0], [1.0, -E], gr[::-1])[::-1]
        return left, right
    E = np.exp(-k * h)
    n = sig.size
    left = np.zeros(n)
    right = np.zeros(n)
    for i in range(1, n):
        left[i] = E[i - 1] * left[i - 1] + gl[i]
    for i in range(n - 2, -1, -1):
        right[i] = E[i] * right[i + 1] + gr[i]
    return left, right


def exp_convolution(k, sig, f, taus=None):
    """int e^{-k|tau - s|} f(s) ds over the samples (sig, f), f piecewise linear; exact.

    With taus=None the result is returned on the sample points in O(N).
    """
    sig = np.asarray(sig, dtype=float)
    f = np.asarray(f, dtype=float)
    left, right = _sweeps(k, sig, f)
    if taus is None:
        return left + right
    h = np.diff(sig)
    n = sig.size
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = np.empty(taus.size)
    for j, t in enumerate(taus):
        i = int(np.clip(np.searchsorted(sig, t) - 1, 0, n - 2))
        ft = f[i] + (f[i + 1] - f[i]) * (t - sig[i]) / h[i]
        a, b = t - sig[i], sig[i + 1] - t
        tot = np.exp(-k * a) * left[i] + np.exp(-k * b) * right[i + 1]
        if a > 0:
            Pa, Qa = _PQ(k, a)
            tot += f[i] * Qa + ft * Pa
        if b > 0:
            Pb, Qb = _PQ(k, b)
            tot += ft * Pb + f[i + 1] * Qb
        out[j] = tot
    return out


def green_kernel(xi_d, tau, sigma):
    k = np.sqrt(-xi_d)
    return -0.5 / k * np.exp(-k * np.abs(np.asarray(tau) - np.asarray(sigma)))


def discrete_green_apply(xi_d, sig, f_d, tau=None):
    """int H_d(tau, s) f_d(s) ds, H_d = -|xi_d|^{-1/2}/2 e^{-|xi_d|^{1/2}|tau - s|}."""
    k = np.sqrt(-xi_d)
    return -0.5 / k * exp_convolution(k, sig, f_d, tau)


def _signed_convolution(k, sig, f):
    """int sign(tau - s) e^{-k|tau - s|} f(s) ds on the sample points (exact, piecewise linear)."""
    left, right = _sweeps(k, sig, np.asarray(f, dtype=float))
    return left - right


def discrete_fixed_point(law, xi_d, sig, x_free, beta_scale=1.0, tol=1e-13, max_iter=200):
    """Solve x = x_free(tau) + int beta(s) x'(s) G(tau, s) ds, G = e^{-k|tau-s|}/(2k), integrated by parts:

    x(tau) = x_free - beta(tau0) x(tau0) G(tau, tau0) - int beta'(s) x G ds - 1/2 int beta x sign(tau-s) e^{-k|tau-s|} ds.
    Any exponentially decaying x_free is allowed; returns x on sig.
    """
    k = np.sqrt(-xi_d)
    beta = beta_scale * law.beta(sig)
    dbeta = -beta / sig
    G0 = np.exp(-k * (sig - sig[0])) / (2 * k)
    x = x_free.copy()
    prev_step = None
    for it in range(max_iter):
        new = (x_free - beta[0] * x[0] * G0
               - exp_convolution(k, sig, dbeta * x) / (2 * k)
               - 0.5 * _signed_convolution(k, sig, beta * x))
        step = np.max(np.abs(new - x))
        x = new
        if step <= tol * max(np.max(np.abs(x)), 1e-300):
            return x, it + 1
        if prev_step is not None and step > prev_step and it > 3:
            raise DivergenceError("discrete fixed point is not contracting (tau0 too small?)")
        prev_step = step
    raise DivergenceError("discrete fixed point did not converge")


def discrete_free_evolve(law, xi_d, x0d, t_max=None, dsig=None, beta_scale=1.0):
    """Decaying homogeneous discrete mode with x_d(tau0) = x0d; returns samples and the (c_d, gamma_d) fit."""
    k = np.sqrt(-xi_d)
    t0 = law.tau0
    t_max = t0 + 40.0 / k if t_max is None else t_max
    dsig = 0.01 / k if dsig is None else dsig
    n = int(np.ceil((t_max - t0) / dsig))
    sig = np.linspace(t0, t_max, n + 1)
    unit, iters = discrete_fixed_point(law, xi_d, sig, np.exp(-k * (sig - t0)), beta_scale)
    xd = unit * (x0d / unit[0]) if x0d != 0 else np.zeros_like(unit)
    fit = fit_discrete_mode(sig, unit / unit[0], t0, k)
    return {"taus": sig, "x_d": xd, "fit": fit, "iterations": iters}


def fit_discrete_mode(sig, xd_unit, t0, k):
    m = sig <= t0 + 5.0 / k
    slope, intercept = np.polyfit(sig[m] - t0, np.log(np.abs(xd_unit[m])), 1)
    return DiscreteModeFit(float(np.exp(intercept)), float(slope))


def discrete_mode_ode_oracle(law, xi_d, T=None, beta_scale=1.0):
    """Decaying solution of x'' + beta x' - k^2 x = 0 by backward integration from T (oracle)."""
    from scipy.integrate import solve_ivp
    k = np.sqrt(-xi_d)
    t0 = law.tau0
    T = t0 + 40.0 / k if T is None else T

    def rhs(t, y):
        return [y[1], k * k * y[0] - beta_scale * float(law.beta(t)) * y[1]]
    b = beta_scale * float(law.beta(T))
    g = -b / 2 - np.sqrt(k * k + b * b / 4)
    sol = solve_ivp(rhs, (T, t0), [1.0, g], method="DOP853", rtol=1e-12, atol=1e-300,
                    dense_output=True)
    return sol


# ---------------------------------------------------------------- sweeps along characteristics
#
# Labels are frequencies at tau0 on the table's u-grid (extended upward).  At time sigma the
# label u~ sits at grid position u~ - 2 log(lambda(sigma)/lambda(tau0)).  Backward solutions
# oscillate in the label at high frequency, so outputs are only formed at times where that
# shift is a multiple of 1/M grid steps, using the one of M interleaved label frames that
# lines up exactly with the grid.


@dataclass(frozen=True, eq=False)
class SweepGrid:
    taus: np.ndarray
    steps: np.ndarray   # label shift of each node in units of h/M
    M: int

    @property
    def residues(self):
        return self.steps % self.M


def sweep_grid(law, table, t_end, xi_content=50.0, phase_step=0.3, rel_step=0.01):
    """Aligned nodes from tau0 to (at least) t_end.

    Spacing obeys Delta sigma <= phase_step / xi(sigma)^(1/2) for content below xi_content at
    tau0 (transported, xi(sigma) = xi_content (lambda0/lambda(sigma))^2) and <= rel_step sigma.
    """
    h = table.grid_xi.h
    p = law.p
    tau0 = law.tau0
    M = max(1, int(np.ceil(tau0 * h * np.sqrt(xi_content) / (2 * p * phase_step))))
    d = h / (2 * p * M)  # log-time increment of one step
    lam0 = float(law.lam(tau0))
    steps = [0]
    while tau0 * np.exp(steps[-1] * d) < t_end * (1 - 1e-12):
        s = tau0 * np.exp(steps[-1] * d)
        w = min(phase_step * float(law.lam(s)) / (lam0 * np.sqrt(xi_content)), rel_step * s)
        stride = max(1, int(np.log1p(w / s) / d))
        steps.append(steps[-1] + stride)
    steps = np.array(steps)
    return SweepGrid(tau0 * np.exp(steps * d), steps, M)


@dataclass(frozen=True, eq=False)
class LabelFrame:
    """M interleaved label grids u0 + (k + r/M) h, extended upward by `extra` nodes."""
    u0: float
    h: float
    n: int
    n_grid: int
    M: int

    @classmethod
    def build(cls, table, grid):
        fg = table.grid_xi
        extra = int(np.ceil(grid.steps[-1] / grid.M)) + 4
        return cls(float(fg.u[0]), float(fg.h), fg.size + extra, fg.size, grid.M)

    def u(self, r=0):
        return self.u0 + self.h * (np.arange(self.n) + r / self.M)

    def to_labels(self, vals, step, r, low="const"):
        """Grid values at the node with label shift step/M -> values on frame r."""
        q = np.arange(self.n) + (r - step) / self.M
        return sample_at(vals, q, low, "zero")

    def from_labels(self, vals, step):
        """Frame values at an aligned node -> grid values (exact index lookup)."""
        n = step // self.M
        return vals[n:n + self.n_grid]


def _filon_weights(theta):
    """phi_a, phi_b with int_0^1 e^{i theta x} [(1-x) G_a + x G_b] dx = phi_a G_a + phi_b G_b."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-2
    t = np.where(small, 1.0, theta)
    e = np.exp(1j * t)
    pa = 1j / t - (e - 1) / t ** 2
    pb = -1j * e / t + (e - 1) / t ** 2
    th = theta
    pa_s = 0.5 + 1j * th / 6 - th ** 2 / 24 - 1j * th ** 3 / 120
    pb_s = 0.5 + 1j * th / 3 - th ** 2 / 8 - 1j * th ** 3 / 30
    return np.where(small, pa_s, pa), np.where(small, pb_s, pb)


@dataclass(frozen=True, eq=False)
class SweepResult:
    taus: np.ndarray
    x: np.ndarray   # (nodes, N) on the table grid
    dx: np.ndarray
    tail: float


def duhamel_sweep(law, table, grid, sources, direction="backward", tol=1e-3):
    """Duhamel solutions at every node of an aligned grid from sources f(tau_i, .) on the table grid.

    "backward": vanishing at the last node (the horizon); "forward": zero data at tau0.
    In s = int dtau/lambda the kernel phase is omega (s - s'), omega = lambda0 xi~^(1/2) per
    label xi~; sources are interpolated linearly in s and integrated exactly (Filon).
    """
    taus = grid.taus
    sources = np.asarray(sources, dtype=float)
    if sources.shape[0] != taus.size:
        raise ValueError("one source row per node is required")
    frame = LabelFrame.build(table, grid)
    S = np.asarray(law.inv_lam_antideriv(taus))
    lam = np.asarray(law.lam(taus))
    lam0 = float(law.lam(law.tau0))
    logrho = np.log(table.rho)
    ds = np.diff(S)
    sgn = 1.0 if direction == "backward" else -1.0
    if direction not in ("backward", "forward"):
        raise ValueError(direction)
    x = np.zeros((taus.size, frame.n_grid))
    dx = np.zeros_like(x)
    tail = 0.0
    for r in np.unique(grid.residues):
        omega = lam0 * np.exp(frame.u(r) / 2)
        G = np.empty((taus.size, frame.n))
        lr = np.empty_like(G)
        for i, st in enumerate(grid.steps):
            q = np.arange(frame.n) + (r - st) / frame.M
            lr[i] = sample_at(logrho, q, "linear", "linear", h=frame.h)
            G[i] = lam[i] ** -0.5 * np.exp(0.5 * lr[i]) * frame.to_labels(sources[i], st, r)
        pa, pb = _filon_weights(omega[None, :] * ds[:, None])
        J = ds[:, None] * np.exp(1j * omega[None, :] * S[:-1, None]) * (pa * G[:-1] + pb * G[1:])
        I = np.zeros((taus.size, frame.n), dtype=complex)
        if direction == "backward":
            I[:-1] = np.cumsum(J[::-1], axis=0)[::-1]
            tail = max(tail, float(np.max(np.abs(G[-1])) * abs(S[-1])))
        else:
            I[1:] = np.cumsum(J, axis=0)
        for i in np.nonzero(grid.residues == r)[0]:
            rot = np.exp(-1j * omega * S[i]) * I[i]
            m = lam[i] ** 2.5 * np.exp(-0.5 * lr[i])
            x[i] = frame.from_labels(sgn * m * rot.imag / omega, grid.steps[i])
            dx[i] = frame.from_labels(-sgn * m / lam[i] * rot.real, grid.steps[i])
    if direction == "backward":
        scale = float(np.max(np.abs(dx))) + float(np.max(np.abs(x)))
        if scale > 0 and tail > tol * scale:
            raise HorizonError(f"sweep tail {tail:.2e} exceeds {tol:.1e} x {scale:.2e}")
    return SweepResult(taus, x, dx, tail)
