"""Time reparametrization and modulation scalars.

lambda(tau) = (nu tau)^(1+1/nu), beta(tau) = (1+1/nu)/tau, t = (nu tau)^(-1/nu).
"""
import logging
from dataclasses import dataclass, field

import numpy as np


log = logging.getLogger(__name__)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingLaw:
    nu: float = 0.5
    tau0: float = 10.0
    delta0: float = 0.05
    allow_large_nu: bool = False
    kappa: float = field(init=False)

    def __post_init__(self):
        if not (self.nu > 0 and self.nu <= 1):
            raise DomainError(f"nu must lie in (0, 1], got {self.nu}")
        if self.nu > 1 / 3 + 1e-15:
            if not self.allow_large_nu:
                raise DomainError(f"nu = {self.nu} > 1/3 needs allow_large_nu")
            log.warning("nu = %g > 1/3: source-splitting bounds are not covered", self.nu)
        if self.tau0 < 1:
            raise DomainError(f"tau0 must be >= 1, got {self.tau0}")
        if not (0 < self.delta0 <= 0.2):
            raise DomainError(f"delta0 must lie in (0, 0.2], got {self.delta0}")
        object.__setattr__(self, "kappa", 2 * (1 + 1 / self.nu) * self.delta0)

    @property
    def p(self):
        """Exponent of lambda: 1 + 1/nu."""
        return 1 + 1 / self.nu

    def lam(self, tau):
        tau = _positive(tau)
        return np.power(self.nu * tau, self.p)

    def beta(self, tau):
        return self.p / _positive(tau)

    def t(self, tau):
        return np.power(self.nu * _positive(tau), -1 / self.nu)

    def tau_of_t(self, t):
        return np.exp(-self.nu * np.log(_positive(t))) / self.nu

    def lam_ratio(self, tau, sigma):
        """lambda(tau)/lambda(sigma) = (tau/sigma)^(1+1/nu)."""
        return np.exp(self.p * (np.log(_positive(tau)) - np.log(_positive(sigma))))

    def inv_lam_antideriv(self, u):
        """Antiderivative of 1/lambda: -nu^(-1/nu) u^(-1/nu)."""
        u = _positive(u)
        return -np.exp(-(np.log(self.nu) + np.log(u)) / self.nu)

    def beta_prime_over_beta2(self):
        return -1 / self.p


def _positive(x):
    a = np.asarray(x, dtype=float)
    if np.any(~(a > 0)):
        raise DomainError("time argument must be positive")
    return a if a.ndim else float(a)


def eval_scaling(law, tau):
    return {"lambda": law.lam(tau), "beta": law.beta(tau), "t": law.t(tau)}


def phase_integral(law, tau_a, tau_b, anchor):
    """lambda(anchor) * int_{tau_a}^{tau_b} du / lambda(u), via the closed antiderivative."""
    diff = law.inv_lam_antideriv(tau_b) - law.inv_lam_antideriv(tau_a)
    return law.lam(anchor) * diff


def phase_from_tau0(law, tau):
    """Same integral anchored and started at tau0: nu tau0 (1 - (tau0/tau)^(1/nu))."""
    tau = _positive(tau)
    return law.nu * law.tau0 * (1 - np.exp((np.log(law.tau0) - np.log(tau)) / law.nu))


def phase_quadrature(law, tau_a, tau_b, anchor):
    """Adaptive-quadrature route for the same integral (test oracle only)."""
    from scipy.integrate import quad
    val, _ = quad(lambda u: 1.0 / float(law.lam(u)), tau_a, tau_b, epsabs=0, epsrel=1e-13, limit=200)
    return float(law.lam(anchor)) * val

