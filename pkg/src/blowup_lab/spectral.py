"""Distorted Fourier analysis of L = -d^2/dR^2 - 5 W^4(R) on the half line (Dirichlet at 0).

Regular solutions phi(R, xi) are normalized by phi(0) = 0, phi'(0) = 1.  The spectral
density is read off from the large-R amplitude: phi ~ c sin(sqrt(xi) R + theta) gives
rho = 1 / (pi c^2 sqrt(xi)).
"""
import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal


class StructuralError(RuntimeError):
    pass


class GridTooShortError(RuntimeError):
    pass


class GridMismatchError(ValueError):
    pass


def ground_state_eval(R, lam=1.0):
    R = np.asarray(R, dtype=float)
    return np.sqrt(lam) / np.sqrt(1 + lam * lam * R * R / 3)


def potential(R, on=True):
    """V(R) = -5 W(R)^4."""
    R = np.asarray(R, dtype=float)
    if not on:
        return np.zeros_like(R)
    return -5.0 / (1 + R * R / 3) ** 2


# 8th-order central second-difference stencil
_D2 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def second_derivative(f, h, odd=True):
    """d^2/dR^2 of uniform samples starting at R=0 (8th order).

    Uses the odd reflection at R=0; the last four nodes are returned as nan.
    """
    f = np.asarray(f, dtype=float)
    ext = np.concatenate([-f[4:0:-1] if odd else f[4:0:-1], f])
    n = f.size
    out = np.full(n, np.nan)
    acc = np.zeros(n - 4)
    for j, c in enumerate(_D2):
        acc += c * ext[j:j + n - 4]
    out[:n - 4] = acc / h ** 2
    return out


@dataclass(frozen=True)
class TableConfig:
    xi_min: float = 1e-12
    xi_max: float = 200.0
    n_xi: int = 400
    r_max: float = 200.0
    dr: float = 0.02
    rtol: float = 1e-12
    atol: float = 1e-14
    fit_wavelengths: float = 5.0
    fit_tol: float = 1e-6
    resid_tol: float = 1e-6
    discrete_tol: float = 1e-6
    r_phys: float = 20.0
    potential_on: bool = True

    def key(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class RadialGrid:
    r_max: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def dr(self):
        return self.nodes[1] - self.nodes[0]

    @classmethod
    def uniform(cls, r_max, dr):
        n = int(round(r_max / dr))
        n += n % 2  # Simpson needs an even number of intervals
        R = np.linspace(0.0, n * dr, n + 1)
        w = np.full(n + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return cls(float(R[-1]), R, w * dr / 3)

    def inner(self, f, g):
        return float(np.sum(self.weights * f * g))

    def norm(self, f):
        return np.sqrt(max(self.inner(f, f), 0.0))


@dataclass(frozen=True, eq=False)
class FreqGrid:
    xis: np.ndarray
    u: np.ndarray
    h: float
    weights: np.ndarray  # dxi quadrature weights

    @classmethod
    def log_uniform(cls, xi_min, xi_max, n):
        u = np.linspace(np.log(xi_min), np.log(xi_max), n)
        h = u[1] - u[0]
        xi = np.exp(u)
        w = h * xi
        w[0] *= 0.5
        w[-1] *= 0.5
        # integrable xi^(-1/2) behaviour below the grid
        w[0] += 2 * xi[0]
        return cls(xi, u, h, w)

    @property
    def size(self):
        return self.xis.size


@dataclass(frozen=True, eq=False)
class SpectralTable:
    config: TableConfig
    grid_R: RadialGrid
    grid_xi: FreqGrid
    xi_d: float
    phi_d: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    phi0: np.ndarray
    amp: np.ndarray
    phase: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def key(self):
        return self.config.key()

    @property
    def xis(self):
        return self.grid_xi.xis

    @property
    def R(self):
        return self.grid_R.nodes

    def state(self, x_d=0.0, x=None):
        x = np.zeros(self.grid_xi.size) if x is None else np.asarray(x, dtype=float)
        return FourierState(float(x_d), x, self.key)

    def phys_mask(self):
        return self.R <= self.config.r_phys


@dataclass(frozen=True, eq=False)
class FourierState:
    x_d: float
    x: np.ndarray
    key: str

    def _check(self, other):
        if self.key != other.key or self.x.shape != other.x.shape:
            raise GridMismatchError("states live on different spectral tables")

    def __add__(self, other):
        self._check(other)
        return FourierState(self.x_d + other.x_d, self.x + other.x, self.key)

    def __sub__(self, other):
        self._check(other)
        return FourierState(self.x_d - other.x_d, self.x - other.x, self.key)

    def __mul__(self, a):
        return FourierState(a * self.x_d, a * self.x, self.key)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def vector(self):
        return np.concatenate([[self.x_d], self.x])

    @classmethod
    def from_vector(cls, v, key):
        return cls(float(v[0]), np.array(v[1:], dtype=float), key)


# ---------------------------------------------------------------- regular solutions

def _solve_batch(xis, R_end, cfg):
    xis = np.asarray(xis, dtype=float)
    n = xis.size
    on = cfg.potential_on

    def rhs(R, y):
        out = np.empty_like(y)
        out[:n] = y[n:]
        out[n:] = (potential(R, on) - xis) * y[:n]
        return out

    y0 = np.concatenate([np.zeros(n), np.ones(n)])
    sol = solve_ivp(rhs, (0.0, R_end), y0, method="DOP853", rtol=cfg.rtol,
                    atol=cfg.atol, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"regular-solution integration failed: {sol.message}")
    return sol


def _fit_amplitude(sol, i, n, xi, R_end, nwave):
    """Least-squares a sin(kR) + b cos(kR) over the last nwave wavelengths."""
    k = np.sqrt(xi)
    Rs = np.linspace(R_end - nwave * 2 * np.pi / k, R_end, int(40 * nwave) + 1)
    y = sol.sol(Rs)[i]
    M = np.column_stack([np.sin(k * Rs), np.cos(k * Rs)])
    (a, b), *_ = np.linalg.lstsq(M, y, rcond=None)
    c = np.hypot(a, b)
    resid = np.sqrt(np.mean((M @ [a, b] - y) ** 2)) / c
    return c, np.arctan2(b, a), resid


def _residual_norms(sol, xis, grid, on, stride=5):
    """||(L - xi) phi|| / ||phi|| on grid nodes, phi'' from an 8th-order stencil of the dense output."""
    n = xis.size
    hh = min(grid.dr / 2, 0.1 / np.sqrt(xis.max()))
    R = grid.nodes[::stride]
    R = R[R >= 4 * hh]
    w = np.gradient(R)
    d2 = np.zeros((n, R.size))
    for j, c in enumerate(_D2):
        d2 += c * sol.sol(R + (j - 4) * hh)[:n]
    d2 /= hh ** 2
    phi = sol.sol(R)[:n]
    res = -d2 + (potential(R, on)[None, :] - xis[:, None]) * phi
    return np.sqrt((res ** 2 @ w) / (phi ** 2 @ w))


def _batches(R_end, ratio=2.0):
    order = np.argsort(-R_end)  # longest horizon first
    groups, cur = [], [order[-1]]
    for i in order[::-1][1:]:
        if R_end[i] <= ratio * R_end[cur[0]]:
            cur.append(i)
        else:
            groups.append(cur)
            cur = [i]
    groups.append(cur)
    return groups


def regular_solutions(grid, xis, cfg):
    xis = np.asarray(xis, dtype=float)
    k = np.sqrt(xis)
    tail = cfg.fit_wavelengths * 2 * np.pi / k
    # the fit window must sit where |V| ~ 45 R^-4 is far below xi
    start = np.maximum(grid.r_max, 40 * (45 / xis) ** 0.25) if cfg.potential_on else grid.r_max
    R_end = start + tail
    phi = np.empty((xis.size, grid.nodes.size))
    amp = np.empty(xis.size)
    ph = np.empty(xis.size)
    fit_res = np.empty(xis.size)
    eq_res = np.empty(xis.size)
    for idx in _batches(R_end):
        idx = np.sort(np.array(idx))
        sub = xis[idx]
        end = R_end[idx].max()
        sol = _solve_batch(sub, end, cfg)
        phi[idx] = sol.sol(grid.nodes)[:idx.size]
        for j, i in enumerate(idx):
            amp[i], ph[i], fit_res[i] = _fit_amplitude(sol, j, idx.size, xis[i], R_end[i],
                                                       cfg.fit_wavelengths)
        eq_res[idx] = _residual_norms(sol, sub, grid, cfg.potential_on)
    return phi, amp, ph, fit_res, eq_res


def eigenfunction_solve(grid, xi, cfg=None):
    """Regular solution at one xi; returns (phi samples, amplitude, phase, fit residual)."""
    cfg = cfg or TableConfig(r_max=grid.r_max)
    if not xi > 0:
        raise ValueError("xi must be positive")
    phi, amp, ph, fit_res, _ = regular_solutions(grid, [xi], cfg)
    if fit_res[0] > cfg.fit_tol:
        raise GridTooShortError(f"amplitude fit residual {fit_res[0]:.2e} at xi={xi:g}")
    return phi[0], amp[0], ph[0], fit_res[0]


def spectral_measure(c, xi):
    return 1.0 / (np.pi * np.asarray(c) ** 2 * np.sqrt(xi))


# ---------------------------------------------------------------- discrete mode

def _shoot(xi, R_s, on=True):
    def rhs(R, y):
        return [y[1], (float(potential(R, on)) - xi) * y[0]]
    sol = solve_ivp(rhs, (0.0, R_s), [0.0, 1.0], method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    return sol


def _node_count(xi, R_s, on=True):
    sol = _shoot(xi, R_s, on)
    y = sol.sol(np.linspace(1e-3, R_s, 4001))[0]
    return int(np.sum(np.signbit(y[1:]) != np.signbit(y[:-1])))


def _dense_eigenvalue(h, L, on=True):
    R = np.arange(1, int(round(L / h))) * h
    d = 2 / h ** 2 + potential(R, on)
    e = -np.ones(R.size - 1) / h ** 2
    return eigh_tridiagonal(d, e, select="i", select_range=(0, 0), eigvals_only=True)[0]


def discrete_eigenvalue_dense(h=0.02, L=40.0, on=True):
    """Tridiagonal eigensolver at h, h/2, h/4 combined by Richardson extrapolation."""
    lam = [_dense_eigenvalue(h / 2 ** j, L, on) for j in range(3)]
    return (64 * lam[2] - 20 * lam[1] + lam[0]) / 45


def discrete_mode_solve(grid, tol=1e-6, on=True, window=(-5.0, -1e-2), R_s=30.0):
    lo, hi = window
    if _node_count(hi, R_s, on) == 0:
        raise StructuralError("no negative eigenvalue in the scan window")
    if _node_count(hi, R_s, on) > 1:
        raise StructuralError("more than one negative eigenvalue in the scan window")
    if _node_count(lo, R_s, on) != 0:
        raise StructuralError("scan window does not bracket the ground state")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _node_count(mid, R_s, on) == 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    xi_d = 0.5 * (lo + hi)
    xi_dense = discrete_eigenvalue_dense(on=on)
    if abs(xi_d - xi_dense) > 1e-6:
        raise StructuralError(f"shooting {xi_d:.10f} and dense {xi_dense:.10f} disagree")

    k = np.sqrt(-xi_d)
    R = grid.nodes
    R_m = min(8.0 / k, R[-1])
    R_far = min(45.0 / k, R[-1])
    fwd = _shoot(xi_d, R_m, on)

    def rhs(r, y):
        return [y[1], (float(potential(r, on)) - xi_d) * y[0]]
    bwd = solve_ivp(rhs, (R_far, R_m), [1.0, -k], method="DOP853", rtol=1e-12, atol=1e-300,
                    dense_output=True)
    scale = fwd.sol(R_m)[0] / bwd.sol(R_m)[0]
    slope_mismatch = abs(fwd.sol(R_m)[1] - scale * bwd.sol(R_m)[1]) / abs(fwd.sol(R_m)[1])
    phi_d = np.zeros_like(R)
    a = R <= R_m
    b = (R > R_m) & (R <= R_far)
    phi_d[a] = fwd.sol(R[a])[0]
    phi_d[b] = scale * bwd.sol(R[b])[0]
    phi_d /= grid.norm(phi_d)
    if phi_d[np.argmax(np.abs(phi_d))] < 0:
        phi_d = -phi_d
    res = _grid_residual(grid, phi_d, xi_d, on)
    if res > tol:
        raise StructuralError(f"discrete-mode residual {res:.2e} exceeds {tol:.1e}")
    info = {"xi_d_dense": xi_dense, "slope_mismatch": slope_mismatch, "residual": res}
    return xi_d, phi_d, info


def _grid_residual(grid, f, xi, on=True):
    R = grid.nodes
    d2 = second_derivative(f, grid.dr)
    m = ~np.isnan(d2)
    res = (-d2 + (potential(R, on) - xi) * f)[m]
    return np.sqrt(np.sum(grid.weights[m] * res ** 2)) / grid.norm(f)


# ---------------------------------------------------------------- zero resonance

def zero_resonance_closed(R):
    R = np.asarray(R, dtype=float)
    return R * (1 - R * R / 3) * (1 + R * R / 3) ** -1.5


def zero_resonance(grid, tol=1e-8):
    phi0 = zero_resonance_closed(grid.nodes)
    res = _grid_residual(grid, phi0, 0.0)
    if res > tol:
        raise RuntimeError(f"zero-resonance residual {res:.2e}")
    return phi0


# ---------------------------------------------------------------- table

def build_table(cfg=None):
    cfg = cfg or TableConfig()
    grid = RadialGrid.uniform(cfg.r_max, cfg.dr)
    fg = FreqGrid.log_uniform(cfg.xi_min, cfg.xi_max, cfg.n_xi)
    phi, amp, ph, fit_res, eq_res = regular_solutions(grid, fg.xis, cfg)
    if fit_res.max() > cfg.fit_tol:
        i = int(np.argmax(fit_res))
        raise GridTooShortError(f"amplitude fit residual {fit_res[i]:.2e} at xi={fg.xis[i]:g}")
    rho = spectral_measure(amp, fg.xis)
    if cfg.potential_on:
        xi_d, phi_d, dinfo = discrete_mode_solve(grid, cfg.discrete_tol)
    else:
        xi_d, phi_d, dinfo = -np.inf, np.zeros_like(grid.nodes), {}
    phi0 = zero_resonance(grid) if cfg.potential_on else grid.nodes.copy()
    R = grid.nodes
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.abs(phi[:, 1:] / R[1:])
    diag = {
        "fit_residual_max": float(fit_res.max()),
        "eq_residual_max": float(eq_res.max()),
        "eq_residuals": eq_res,
        "fit_residuals": fit_res,
        "sup_phi_over_R": float(ratio.max()),
        "orthogonality_max": _orthogonality(grid, phi, phi_d) if cfg.potential_on else 0.0,
        **{f"discrete_{k}": v for k, v in dinfo.items()},
    }
    return SpectralTable(cfg, grid, fg, float(xi_d), phi_d, phi, rho, phi0, amp, ph, diag)


def _orthogonality(grid, phi, phi_d):
    w = grid.weights
    ip = phi @ (w * phi_d)
    norms = np.sqrt((phi ** 2) @ w)
    return float(np.max(np.abs(ip) / norms))


# ---------------------------------------------------------------- transforms

def dft_forward(table, f):
    f = np.asarray(f, dtype=float)
    if f.shape != table.R.shape:
        raise GridMismatchError("field does not live on the table's R grid")
    wf = table.grid_R.weights * f
    return FourierState(float(table.phi_d @ wf), table.phi @ wf, table.key)


def dft_inverse(table, s):
    if s.key != table.key or s.x.shape != table.xis.shape:
        raise GridMismatchError("state does not live on this table")
    c = table.grid_xi.weights * table.rho * s.x
    return s.x_d * table.phi_d + c @ table.phi


def plancherel_norm2(table, s):
    return s.x_d ** 2 + float(np.sum(table.grid_xi.weights * table.rho * s.x ** 2))


def continuous_inner(table, a, b):
    return float(np.sum(table.grid_xi.weights * table.rho * a * b))
