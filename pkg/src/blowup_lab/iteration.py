"""Iterates of the transport system and the Delta A_j ledger.

x^(0) is the free flow of the data; the increment Delta x^(j) solves
(D^2 + beta D + xi) Delta x^(j) = R(tau, Delta x^(j-1)) + Delta f^(j-1) with Delta f^(0) = f^(0).
Each increment is assembled as

    Delta x = x_b + S(tau)(y + c),

where x_b is the Duhamel solution vanishing at the horizon, y = -(x_b, D x_b)(tau0) are the
raw data shifts (so x_b + S(y) is the zero-data forward solution) and c is the admissible
correction that makes y + c satisfy both vanishing conditions.  All time-dependent objects
live on one aligned sweep grid (see propagator.sweep_grid).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import propagator as prop
from .conditions import NormConfig, admissible_correction, vanishing_functionals, weighted_norm
from .conditions import dyadic_diagnostic
from .nonlinear import BulkProfile, rn_fourier_batch
from .propagator import CauchyPair, DivergenceError, HorizonError
from .spectral import FourierState, dft_forward, dft_inverse
from .transference import first_derivative_grid, kernel_band_split


class StageError(RuntimeError):
    """A numerical failure inside an iterate stage, labelled with the stage."""


@dataclass(frozen=True)
class IterationConfig:
    horizon_factor: float = 20.0
    max_lambda_ratio: float = 1e4
    xi_content: float = 50.0
    phase_step: float = 0.3
    rel_step: float = 0.01
    r_cut: float = None
    bulk: BulkProfile = field(default_factory=BulkProfile)
    C_cut: float = 1.0
    x0_power: float = -0.25
    nonlinear: bool = True
    exact_source: bool = True
    dyadic_levels: int = 3
    horizon_tol: float = 1e-3
    discrete_step: float = 0.02


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Full states (x_d, x) and their D-derivatives on the sweep nodes."""
    taus: np.ndarray
    x: np.ndarray
    dx: np.ndarray
    xd: np.ndarray
    dxd: np.ndarray
    key: str

    @classmethod
    def zeros(cls, taus, n, key):
        z = np.zeros((taus.size, n))
        return cls(taus, z, z.copy(), np.zeros(taus.size), np.zeros(taus.size), key)

    def state(self, i):
        return FourierState(float(self.xd[i]), self.x[i], self.key)

    def dstate(self, i):
        return FourierState(float(self.dxd[i]), self.dx[i], self.key)

    def vectors(self):
        return (np.column_stack([self.xd, self.x]), np.column_stack([self.dxd, self.dx]))

    def __add__(self, o):
        return Trajectory(self.taus, self.x + o.x, self.dx + o.dx, self.xd + o.xd,
                          self.dxd + o.dxd, self.key)

    def __sub__(self, o):
        return self + o.scaled(-1.0)

    def scaled(self, a):
        return Trajectory(self.taus, a * self.x, a * self.dx, a * self.xd, a * self.dxd, self.key)


@dataclass(frozen=True, eq=False)
class Increment:
    """One source component of an increment, with its decomposition."""
    delta: Trajectory
    x_tail: np.ndarray     # Delta_{>tau}: x_b
    dx_tail: np.ndarray
    dx_forward: np.ndarray  # D of Delta x - S(c) (the zero-data forward solution)
    raw: CauchyPair        # y
    correction: CauchyPair  # c
    sweep_tail: float

    @property
    def free_data(self):
        return self.raw + self.correction


@dataclass(frozen=True, eq=False)
class IterateRecord:
    j: int
    delta: Trajectory
    parts: dict
    correction: CauchyPair
    free_data: CauchyPair
    discrete_data: tuple
    ledger: dict
    ledger_parts: dict


@dataclass(frozen=True, eq=False)
class IterationContext:
    law: object
    table: object
    tm: object
    cfg: IterationConfig
    grid: prop.SweepGrid
    nc: NormConfig

    @property
    def taus(self):
        return self.grid.taus

    @property
    def window(self):
        """Nodes inside the dyadic window [tau0, tau0 b^levels]."""
        hi = self.nc.tau0 * self.nc.dyadic_base ** self.nc.dyadic_levels
        return self.taus <= hi * (1 + 1e-12)


def horizon(law, cfg):
    """min(horizon_factor, L^(1/p)) tau0 with L = max_lambda_ratio.

    Beyond lambda(tau)/lambda(tau0) ~ 1e4 the departed outgoing wave sits at frequencies where
    its coefficients exceed the field inside the light cone by more than the grid quadrature
    can cancel, so sources there are not resolved.
    """
    return law.tau0 * min(cfg.horizon_factor, cfg.max_lambda_ratio ** (1 / law.p))


def make_context(law, table, tm, cfg=None):
    cfg = cfg or IterationConfig()
    grid = prop.sweep_grid(law, table, horizon(law, cfg), cfg.xi_content,
                           cfg.phase_step, cfg.rel_step)
    nc = NormConfig(law.delta0, law.tau0, 2.0, cfg.dyadic_levels)
    return IterationContext(law, table, tm, cfg, grid, nc)


# ---------------------------------------------------------------- discrete mode on the nodes

def _fine_grid(ctx):
    """Sweep nodes refined to spacing discrete_step / k where the mode has structure."""
    k = np.sqrt(-ctx.table.xi_d)
    taus = ctx.taus
    h = ctx.cfg.discrete_step / k
    edge = ctx.law.tau0 + 40.0 / k
    pieces, idx = [], []
    count = 0
    for a, b in zip(taus[:-1], taus[1:]):
        m = int(np.ceil((b - a) / h)) if a < edge else 1
        pieces.append(a + (b - a) * np.arange(m) / m)
        idx.append(count)
        count += m
    pieces.append([taus[-1]])
    idx.append(count)
    return np.concatenate(pieces), np.array(idx)


def discrete_increment(ctx, fd):
    """Decaying solution of x'' + beta x' + xi_d x = fd (vanishing at the horizon) on the nodes."""
    fine, idx = _fine_grid(ctx)
    f = np.interp(fine, ctx.taus, fd)
    if not np.any(f):
        z = np.zeros(ctx.taus.size)
        return z, z.copy()
    x_free = prop.discrete_green_apply(ctx.table.xi_d, fine, f)
    x, _ = prop.discrete_fixed_point(ctx.law, ctx.table.xi_d, fine, x_free)
    dx = np.gradient(x, fine, edge_order=2)
    return x[idx], dx[idx]


def discrete_homogeneous(ctx, x0d):
    if x0d == 0:
        z = np.zeros(ctx.taus.size)
        return z, z.copy()
    out = prop.discrete_free_evolve(ctx.law, ctx.table.xi_d, x0d)
    sig, xd = out["taus"], out["x_d"]
    spl = CubicSpline(sig, xd)
    inside = ctx.taus <= sig[-1]
    x = np.where(inside, spl(np.minimum(ctx.taus, sig[-1])), 0.0)
    dx = np.where(inside, spl(np.minimum(ctx.taus, sig[-1]), 1), 0.0)
    return x, dx


# ---------------------------------------------------------------- iterates

def free_trajectory(ctx, pair):
    """Continuous free flow of a pair on the nodes (discrete part zero)."""
    n = ctx.table.xis.size
    x = np.empty((ctx.taus.size, n))
    dx = np.empty_like(x)
    for i, t in enumerate(ctx.taus):
        sl = prop.free_evolve(ctx.law, ctx.table, pair, t)
        x[i], dx[i] = sl.x, sl.dx
    z = np.zeros(ctx.taus.size)
    return Trajectory(ctx.taus, x, dx, z, z.copy(), ctx.table.key)


def zeroth_iterate(ctx, pair):
    traj = free_trajectory(ctx, pair)
    xd, dxd = discrete_homogeneous(ctx, pair.x0.x_d)
    return Trajectory(traj.taus, traj.x, traj.dx, xd, dxd, traj.key)


def linear_sources(ctx, delta):
    """Rows R(tau_i, Delta x(tau_i)) as vectors (x_d, x); batched form of apply_R_source."""
    law, tm = ctx.law, ctx.tm
    c1, ks = (-2.0, 1.0) if ctx.cfg.exact_source else (-4.0, 0.0)
    K = tm.K - ks * np.eye(tm.n + 1)
    A = tm.A
    M2 = K @ K + A @ K - K @ A + (1 + law.beta_prime_over_beta2()) * K
    b = np.asarray(law.beta(ctx.taus))[:, None]
    X, DX = delta.vectors()
    return c1 * b * (DX @ K.T) - b * b * (X @ M2.T)


def nonlinear_sources(ctx, traj):
    if not ctx.cfg.nonlinear:
        return np.zeros((ctx.taus.size, ctx.table.xis.size + 1))
    return rn_fourier_batch(ctx.law, ctx.table, ctx.cfg.bulk, ctx.taus, traj.xd, traj.x,
                            ctx.cfg.r_cut)


def solve_increment(ctx, F, label=""):
    """Increment driven by source rows F (vectors (x_d, x)) with admissible data."""
    table, law = ctx.table, ctx.law
    try:
        sw = prop.duhamel_sweep(law, table, ctx.grid, F[:, 1:], "backward", ctx.cfg.horizon_tol)
    except HorizonError as e:
        raise StageError(f"{label}: {e}") from e
    raw = CauchyPair(table.state(0.0, -sw.x[0]), table.state(0.0, -sw.dx[0]))
    if np.any(raw.x0.x) or np.any(raw.x1.x):
        out = admissible_correction(table, ctx.nc, law.nu, raw, ctx.cfg.C_cut, ctx.cfg.x0_power)
        corr = CauchyPair(out["corrected"].x0 - raw.x0, out["corrected"].x1 - raw.x1)
    else:
        corr = CauchyPair(table.state(), table.state())
    free = free_trajectory(ctx, raw + corr)
    fcorr = free_trajectory(ctx, corr)
    try:
        xd, dxd = discrete_increment(ctx, F[:, 0])
    except DivergenceError as e:
        raise StageError(f"{label}: {e}") from e
    delta = Trajectory(ctx.taus, sw.x + free.x, sw.dx + free.dx, xd, dxd, table.key)
    return Increment(delta, sw.x, sw.dx, delta.dx - fcorr.dx, raw, corr, sw.tail)


def ledger(ctx, inc):
    """The six terms of Delta A_j (sups and dyadic sums over the window)."""
    table, nc = ctx.table, ctx.nc
    kappa = ctx.law.kappa
    m = ctx.window
    taus = ctx.taus[m]
    hi = table.xis > 1
    lo = ~hi

    def norms(rows, kind, mask):
        return np.array([weighted_norm(table, nc, kind, np.where(mask, r, 0.0)) for r in rows])

    d = inc.delta
    w_sup = (nc.tau0 / taus) ** kappa
    terms = {
        "high_sup": float(np.max(w_sup * norms(d.x[m], "S1", hi))),
        "high_dyadic": dyadic_diagnostic(nc, taus, norms(inc.dx_forward[m], "S2", hi), kappa),
        "low_sup": float(np.max(w_sup * norms(inc.x_tail[m], "S1", lo))),
        "low_dyadic": dyadic_diagnostic(nc, taus, norms(inc.dx_tail[m], "S2", lo), kappa),
        "data": 2 * weighted_norm(table, nc, "S~", inc.correction),
        "discrete": float(np.max(taus ** (1 - nc.delta0) * np.abs(d.xd[m]))
                          + np.max(taus ** (1 - nc.delta0) * np.abs(d.dxd[m]))),
    }
    terms["total"] = float(sum(terms.values()))
    return terms


def _combine(parts):
    a, b = parts["linear"], parts["nonlinear"]
    return Increment(a.delta + b.delta, a.x_tail + b.x_tail, a.dx_tail + b.dx_tail,
                     a.dx_forward + b.dx_forward, a.raw + b.raw, a.correction + b.correction,
                     max(a.sweep_tail, b.sweep_tail))


def iterate_step(ctx, history, j):
    """Delta x^(j) from history = [x^(0), Delta x^(1), ..., Delta x^(j-1)]."""
    if len(history) != j:
        raise ValueError("history must hold iterates 0..j-1")
    acc = history[0]
    for h in history[1:]:
        acc = acc + h
    F_lin = linear_sources(ctx, history[-1])
    F_nl = nonlinear_sources(ctx, acc)
    if j >= 2:
        F_nl = F_nl - nonlinear_sources(ctx, acc - history[-1])
    parts = {"linear": solve_increment(ctx, F_lin, f"stage {j} linear"),
             "nonlinear": solve_increment(ctx, F_nl, f"stage {j} nonlinear")}
    inc = _combine(parts)
    led = ledger(ctx, inc)
    led_parts = {k: ledger(ctx, v) for k, v in parts.items()}
    disc = (float(inc.delta.xd[0]), float(inc.delta.dxd[0]))
    return IterateRecord(j, inc.delta, parts, inc.correction, inc.free_data, disc, led, led_parts)


@dataclass(frozen=True, eq=False)
class RunResult:
    states: Trajectory
    records: list
    ledgers: list
    converged: bool
    corrected_data: CauchyPair


def run_iteration(ctx, pair, j_max=3):
    """Iterates 1..j_max; converged when the last two ledger ratios are below 1."""
    x0 = zeroth_iterate(ctx, pair)
    history = [x0]
    records = []
    for j in range(1, j_max + 1):
        rec = iterate_step(ctx, history, j)
        records.append(rec)
        history.append(rec.delta)
    ledgers = [r.ledger["total"] for r in records]
    acc = history[0]
    for h in history[1:]:
        acc = acc + h
    # the zeroth iterate picks the decaying discrete branch, which fixes x1d from x0d
    corrected = CauchyPair(pair.x0, FourierState(float(x0.dxd[0]), pair.x1.x, pair.x1.key))
    for r in records:
        corrected = corrected + CauchyPair(
            FourierState(r.discrete_data[0], r.correction.x0.x, pair.x0.key),
            FourierState(r.discrete_data[1], r.correction.x1.x, pair.x1.key))
    converged = _converged(ledgers)
    return RunResult(acc, records, ledgers, converged, corrected)


def _converged(ledgers):
    if not ledgers or max(ledgers) == 0:
        return True
    if len(ledgers) < 3:
        return False
    a, b, c = ledgers[-3:]
    return (a > 0 and b / a < 1) and (b > 0 and c / b < 1)


def increment_functionals(ctx, rec):
    """Vanishing functionals of an increment's free data (relative to the data size)."""
    v = vanishing_functionals(ctx.table, ctx.nc, ctx.law.nu, rec.free_data, ctx.cfg.x0_power)
    return v


# ---------------------------------------------------------------- fields, data and energy

def reconstruct_field(table, state):
    return dft_inverse(table, state)


def data_map(law, table, tm, direction, inputs, beta=None, k_shift=1.0):
    """Data at tau0 between physical (eps~, w1) and Fourier (x0, x1) form, w1 = (R/lambda) eps_t.

    -F(w1) = x1 + beta (K - k_shift) x0 as full vectors; k_shift = 1 is the operator identity
    F (R d/dR - 1) F^-1 = A + K - 1, k_shift = 0 the printed coefficient.
    """
    b = float(law.beta(law.tau0)) if beta is None else beta
    K = tm.K - k_shift * np.eye(tm.n + 1)
    if direction == "physical->fourier":
        eps, w1 = inputs
        x0 = dft_forward(table, eps)
        v = -dft_forward(table, w1).vector() - b * (K @ x0.vector())
        return CauchyPair(x0, FourierState.from_vector(v, table.key))
    if direction == "fourier->physical":
        pair = inputs
        v = pair.x1.vector() + b * (K @ pair.x0.vector())
        eps = dft_inverse(table, pair.x0)
        w1 = -dft_inverse(table, FourierState.from_vector(v, table.key))
        return eps, w1
    raise ValueError(f"unknown direction {direction!r}")


def local_energy(law, table, tm, traj, k_shift=1.0, idx=None):
    """E_loc(t) = (1/2) int_{|x| <= t} |grad_{t,x} eps|^2 dx at the trajectory times.

    In (tau, R): E = (2 pi / lambda) int_0^{nu tau} [v^2 + (d_R eps~ - eps~/R)^2] dR with
    v = -(R/lambda) eps_t = F^-1[D x + beta (K - k_shift) x].
    """
    R = table.R
    dr = table.grid_R.dr
    K = tm.K - k_shift * np.eye(tm.n + 1)
    X, DX = traj.vectors()
    idx = range(traj.taus.size) if idx is None else idx
    out = []
    for i in idx:
        tau = traj.taus[i]
        b = float(law.beta(tau))
        eps = dft_inverse(table, FourierState.from_vector(X[i], table.key))
        v = dft_inverse(table, FourierState.from_vector(DX[i] + b * (K @ X[i]), table.key))
        d = first_derivative_grid(eps, dr)
        g = np.zeros_like(eps)
        g[1:] = d[1:] - eps[1:] / R[1:]
        dens = v * v + g * g
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * dr)])
        out.append(2 * np.pi / float(law.lam(tau)) * float(np.interp(law.nu * tau, R, cum)))
    return np.array(out)


# ---------------------------------------------------------------- middle-band iteration

def band_iteration_norms(ctx, source=None, n=8, eps=0.1, j_max=6):
    """Window sups of ||(beta K2 D U)^j f||_{L^2(rho)} for j = 1..j_max.

    U is the backward Duhamel solution vanishing at the horizon and K2 the middle band of
    the near-diagonal kernel.  The default source is (tau0/tau)^2 exp(-(log xi)^2).
    Returns the norms and their second log-differences (negative means sub-geometric).
    """
    table, law = ctx.table, ctx.law
    K2 = kernel_band_split(ctx.tm, table.xis, n, eps)["K2"]
    taus = ctx.taus
    if source is None:
        source = (law.tau0 / taus[:, None]) ** 2 * np.exp(-np.log(table.xis) ** 2)[None, :]
    F = np.asarray(source, dtype=float)
    b = np.asarray(law.beta(taus))[:, None]
    wq = table.grid_xi.weights * table.rho
    rows = np.nonzero(ctx.window)[0]
    norms = []
    for _ in range(j_max):
        sw = prop.duhamel_sweep(law, table, ctx.grid, F, "backward", np.inf)
        F = b * (sw.dx @ K2.T)
        norms.append(float(np.sqrt(np.max(np.sum(wq * F[rows] ** 2, axis=1)))))
    norms = np.array(norms)
    with np.errstate(divide="ignore"):
        d2 = np.diff(np.log(norms), 2)
    return norms, d2
