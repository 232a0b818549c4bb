"""The quintic source lambda^-2 RN_nu(eps~) on the R grid and its Fourier images.

Conventions: u0 = W_lambda in R coordinates, i.e. lambda^(1/2) W(R), and eps = eps~/R, so
RN(u, eps~) = R (u + eps~/R)^5 - R u^5 - 5 u^4 eps~ = eps~ e (10 u^3 + 10 u^2 e + 5 u e^2 + e^3)
with e = eps~/R.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conditions import RESONANCE_CONST, g_tilde
from .spectral import dft_forward, dft_inverse, ground_state_eval


class ResolutionError(RuntimeError):
    pass


def default_g(R, a):
    return R / (1 + R * R)


@dataclass(frozen=True)
class BulkProfile:
    mode: str = "zero"
    g_model: Callable = field(default=default_g)

    def __post_init__(self):
        if self.mode not in ("zero", "model"):
            raise ValueError(f"bulk mode must be 'zero' or 'model', got {self.mode!r}")

    def amplitude(self, law, tau):
        """lambda^(1/2) / (lambda t)^2; lambda t = nu tau."""
        return float(law.lam(tau)) ** 0.5 / (law.nu * tau) ** 2

    def correction(self, law, tau, R):
        """u_nu - u0 on the R grid."""
        if self.mode == "zero":
            return np.zeros_like(R)
        a = np.clip(R / (law.nu * tau), 0.0, np.nextafter(1.0, 0.0))
        return self.amplitude(law, tau) * self.g_model(R, a)


@dataclass(frozen=True, eq=False)
class SourceSplit:
    E1: np.ndarray
    E2: np.ndarray
    g_tilde: float


def _ratio(R, eps):
    """eps/R along the last axis, the R = 0 value from the one-sided slope (eps(0) = 0)."""
    e = np.empty_like(eps)
    e[..., 1:] = eps[..., 1:] / R[1:]
    h = R[1] - R[0]
    c = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    e[..., 0] = eps[..., :5] @ c
    return e


def _rn(u0, u, eps, R, lam):
    e = _ratio(R, eps)
    if not np.all(np.isfinite(e)):
        raise ResolutionError("eps~/R is not finite; refine the R grid near 0")
    quint = eps * e * (10 * u ** 3 + e * (10 * u ** 2 + e * (5 * u + e)))
    lin = 5 * (u ** 4 - u0 ** 4) * eps
    return (lin + quint) / lam ** 2


def u_nu(law, bulk, tau, R):
    u0 = np.sqrt(float(law.lam(tau))) * ground_state_eval(R)
    return u0, u0 + bulk.correction(law, tau, R)


def rn_physical(law, table, bulk, tau, eps_tilde):
    R = table.R
    u0, u = u_nu(law, bulk, tau, R)
    return _rn(u0, u, np.asarray(eps_tilde, dtype=float), R, float(law.lam(tau)))


def field_window(table, r_cut=None, width=1.0):
    """Smooth taper that removes the aliased far field of inverse transforms."""
    r_cut = table.config.r_phys if r_cut is None else r_cut
    return 0.5 * (1 - np.tanh((table.R - r_cut) / width))


def rn_fourier(law, table, bulk, tau, state, r_cut=None):
    eps = dft_inverse(table, state) * field_window(table, r_cut)
    return dft_forward(table, rn_physical(law, table, bulk, tau, eps))


def rn_fourier_batch(law, table, bulk, taus, xd, x, r_cut=None, width=1.0):
    """Fourier vectors (x_d, x) of the source at many times, fields windowed at r_cut.

    Only R <= r_cut + 12 width is touched; rows of the result are (x_d, x(xi_1), ...).
    """
    r_cut = table.config.r_phys if r_cut is None else r_cut
    R_all = table.R
    n = int(np.searchsorted(R_all, r_cut + 12 * width)) + 1
    R = R_all[:n]
    win = 0.5 * (1 - np.tanh((R - r_cut) / width))
    phi = table.phi[:, :n]
    c = np.asarray(x) * (table.grid_xi.weights * table.rho)
    eps = (np.asarray(xd)[:, None] * table.phi_d[:n] + c @ phi) * win
    taus = np.asarray(taus, dtype=float)
    lam = np.asarray(law.lam(taus), dtype=float)[:, None]
    W = ground_state_eval(R)
    u0 = np.sqrt(lam) * W
    u = u0 + np.array([bulk.correction(law, t, R) for t in taus])
    src = _rn(u0, u, eps, R, lam) * table.grid_R.weights[:n]
    out = np.empty((taus.size, table.xis.size + 1))
    out[:, 0] = src @ table.phi_d[:n]
    out[:, 1:] = src @ phi.T
    return out


def e2_profile(law, table, bulk, tau):
    """Envelope of the resonance interaction: 20 lambda^-2 (u_nu - u0) u0^3 phi(R, 0), per unit g~."""
    R = table.R
    u0, u = u_nu(law, bulk, tau, R)
    return 20 * (u - u0) * u0 ** 3 * RESONANCE_CONST * table.phi0 / float(law.lam(tau)) ** 2


def source_split(law, table, bulk, tau, state, pair=None, g_value=None, r_cut=None):
    """E2 = g~(tau) x (resonance interaction profile), E1 = full source - E2.

    g~ comes from the data pair (or is passed directly); E2 = 0 for bulk mode 'zero'.
    """
    eps = dft_inverse(table, state) * field_window(table, r_cut)
    src = rn_physical(law, table, bulk, tau, eps)
    if g_value is None:
        g_value = g_tilde(law, table, pair, tau) if pair is not None else 0.0
    E2 = g_value * e2_profile(law, table, bulk, tau)
    return SourceSplit(src - E2, E2, float(g_value))


def source_norm(table, f, r_max):
    """Grid H^1 + L^1 proxy of a source over R <= r_max."""
    R = table.R
    m = R <= r_max
    dr = table.grid_R.dr
    fm = f[m]
    l2 = np.sqrt(np.sum(table.grid_R.weights[m] * fm ** 2))
    d = np.diff(fm) / dr
    h1 = np.sqrt(l2 ** 2 + dr * np.sum(d * d))
    l1 = float(np.sum(table.grid_R.weights[m] * np.abs(fm)))
    return float(h1 + l1)
