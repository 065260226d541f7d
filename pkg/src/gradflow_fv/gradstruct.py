"""Functionals of the discrete gradient structures and the EDB audit.

Per-face conventions (each face stored once, physical flux ``J``, pairing
``<xi, J> = sum_f xi_f J_f``)::

    R*(rho, xi) = sum_f 4 tau alpha_star(u_K, u_L, xi_f / 2, eps)
    R(rho, J)   = sum_f 4 tau alpha_dual(u_K, u_L, J_f / (2 tau), eps)
    D(rho)      = R*(rho, force(rho))

With these the SG flux is ``J = 2 tau d/dxi alpha_star(u_K, u_L, xi/2)`` at
``xi = force(rho)``, and ``R + D = <xi, J> = -dE/dt`` along the scheme.
``eps = 0`` selects the upwind structure throughout.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateState
from .potentials import discretize, q_field
from .special_fn import (alpha_dual, alpha_star, alpha_star_d1, bernoulli, beta,
                         hh_kernel)

__all__ = [
    "energy",
    "force",
    "pairing",
    "r_dual",
    "r_primal",
    "kinetic_flux",
    "fisher",
    "Fisher",
    "FunctionalSample",
    "Audit",
    "audit",
    "edb_residual",
    "chain_rule_defect",
    "CoshDiagnostics",
    "cosh_diagnostics",
]


def _u(t, rho):
    return np.asarray(rho, dtype=float) / t.volumes


def _ends(t, rho):
    u = _u(t, rho)
    return u[t.faces[:, 0]], u[t.faces[:, 1]]


def _phi(s):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = s * np.log(s) - s + 1.0
    return np.where(s == 0, 1.0, v)


def energy(t, dp, rho, eps):
    """``eps sum phi(u_K)|K| + sum V_K rho_K + sum W_KL rho_K rho_L / 2``."""
    rho = np.asarray(rho, dtype=float)
    E = float(dp.Vh @ rho) + dp.interaction_energy(rho)
    if eps > 0:
        E += eps * float(np.sum(_phi(_u(t, rho)) * t.volumes))
    return E


def force(t, dp, rho, eps, q=None):
    """``xi = -(eps log(u_L/u_K) + q)``; ``+-inf`` where exactly one side is empty."""
    if q is None:
        _, q = q_field(dp, t, rho)
    if eps == 0:
        return -q
    uK, uL = _ends(t, rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = -(eps * (np.log(uL) - np.log(uK)) + q)
    return np.where((uK == 0) & (uL == 0), 0.0, xi)


def pairing(xi, J):
    """``sum_f xi_f J_f`` with ``0 * inf = 0``."""
    xi = np.asarray(xi, dtype=float)
    J = np.asarray(J, dtype=float)
    with np.errstate(invalid="ignore"):
        p = np.where(J == 0, 0.0, xi * J)
    return float(np.sum(p))


def r_dual(t, rho, xi, eps):
    """``sum_f 4 tau alpha_star(u_K, u_L, xi_f/2, eps)``."""
    uK, uL = _ends(t, rho)
    return float(np.sum(4.0 * t.tau * alpha_star(uK, uL, 0.5 * np.asarray(xi, dtype=float), eps)))


def r_primal(t, rho, J, eps):
    """``sum_f 4 tau alpha_dual(u_K, u_L, J_f/(2 tau), eps)``; ``inf`` if infeasible."""
    uK, uL = _ends(t, rho)
    J = np.asarray(J, dtype=float)
    return float(np.sum(4.0 * t.tau * alpha_dual(uK, uL, J / (2.0 * t.tau), eps)))


def kinetic_flux(t, rho, xi, eps):
    """Flux dual to ``xi``: ``2 tau d/dxi alpha_star(u_K, u_L, xi/2, eps)``."""
    uK, uL = _ends(t, rho)
    return 2.0 * t.tau * np.asarray(alpha_star_d1(uK, uL, 0.5 * np.asarray(xi, dtype=float), eps))


@dataclass(frozen=True)
class Fisher:
    D: float
    D0: float
    D1: float
    D2: float

    @property
    def decomposition_available(self):
        return not math.isnan(self.D0)

    def __iter__(self):
        return iter((self.D, self.D0, self.D1, self.D2))


def fisher(t, dp, rho, eps):
    """Fisher information ``D = R*(rho, force(rho))`` and its three parts.

    ``D0 = sum 4 tau beta``, ``D1 = sum eps tau (u_L - u_K) q`` and
    ``D2 = sum tau q**2 hh_kernel(u_K, u_L, -q)``.  The parts are NaN when a
    cell is empty.  For ``eps = 0`` only the drift part is present.
    """
    _, q = q_field(dp, t, rho)
    xi = force(t, dp, rho, eps, q)
    D = r_dual(t, rho, xi, eps)
    uK, uL = _ends(t, rho)
    tau = t.tau
    if eps == 0:
        return Fisher(D, 0.0, 0.0, D)
    if np.any(uK == 0) or np.any(uL == 0):
        return Fisher(D, math.nan, math.nan, math.nan)
    D0 = float(np.sum(4.0 * tau * beta(uK, uL, eps)))
    D1 = float(np.sum(eps * tau * (uL - uK) * q))
    D2 = float(np.sum(tau * q * q * hh_kernel(uK, uL, -q, eps)))
    return Fisher(D, D0, D1, D2)


# ---------------------------------------------------------------------------
# audit along trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionalSample:
    t: float
    E: float
    R: float
    D: float
    chain_defect: float


@dataclass
class Audit:
    samples: list
    residual_cum: np.ndarray
    eps: float

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    @property
    def energies(self):
        return np.array([s.E for s in self.samples])

    @property
    def residual(self):
        return float(self.residual_cum[-1]) if self.residual_cum.size else 0.0

    def energy_monotone(self, tol=1e-12):
        E = self.energies
        return bool(np.all(np.diff(E) <= tol * np.maximum(1.0, np.abs(E[:-1]))))


def _record_functionals(traj, eps, dp):
    t = traj.tess
    E, R, D, P = [], [], [], []
    for rho, J in zip(traj.states, traj.fluxes):
        _, q = q_field(dp, t, rho)
        xi = force(t, dp, rho, eps, q)
        E.append(energy(t, dp, rho, eps))
        R.append(r_primal(t, rho, J, eps))
        D.append(r_dual(t, rho, xi, eps))
        P.append(pairing(xi, J))
    return np.array(E), np.array(R), np.array(D), np.array(P)


def audit(traj, eps=None, dp=None):
    """Energy, R, D and the cumulative EDB residual at every record.

    ``residual_cum[n] = trapezoid(R + D, t_0..t_n) + E_n - E_0``.
    """
    eps = traj.config.eps if eps is None else float(eps)
    if dp is None:
        dp = discretize(traj.potentials, traj.tess)
    E, R, D, P = _record_functionals(traj, eps, dp)
    tt = traj.times
    rd = R + D
    with np.errstate(invalid="ignore"):
        inc = 0.5 * (rd[1:] + rd[:-1]) * np.diff(tt)
    cum = np.concatenate([[0.0], np.cumsum(inc)]) + (E - E[0])
    defect = np.full(tt.size, math.nan)
    if tt.size >= 3:
        defect[1:-1] = np.abs((E[2:] - E[:-2]) / (tt[2:] - tt[:-2]) + P[1:-1])
    samples = [FunctionalSample(float(a), float(b), float(c), float(d), float(e))
               for a, b, c, d, e in zip(tt, E, R, D, defect)]
    return Audit(samples, cum, eps)


def edb_residual(traj, s=None, t=None, eps=None, dp=None):
    """``trapezoid(R + D, [s, t]) + E(t) - E(s)`` on record times ``s <= t``."""
    a = audit(traj, eps, dp)
    i = 0 if s is None else traj.index_of(s)
    j = len(traj) - 1 if t is None else traj.index_of(t)
    return float(a.residual_cum[j] - a.residual_cum[i])


def chain_rule_defect(traj, n, eps=None, dp=None):
    """``|(E^{n+1} - E^{n-1}) / (t_{n+1} - t_{n-1}) + <xi^n, J^n>|``."""
    if not 0 < n < len(traj) - 1:
        raise IndexError("chain_rule_defect needs an interior record index")
    eps = traj.config.eps if eps is None else float(eps)
    dp = discretize(traj.potentials, traj.tess) if dp is None else dp
    t = traj.tess
    Em = energy(t, dp, traj.states[n - 1], eps)
    Ep = energy(t, dp, traj.states[n + 1], eps)
    xi = force(t, dp, traj.states[n], eps)
    P = pairing(xi, traj.fluxes[n])
    return abs((Ep - Em) / (traj.times[n + 1] - traj.times[n - 1]) + P)


# ---------------------------------------------------------------------------
# cosh structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoshDiagnostics:
    pi: np.ndarray
    kappa_KL: np.ndarray
    kappa_LK: np.ndarray
    theta: np.ndarray
    detailed_balance_residual: float
    detailed_balance_residual_rel: float
    identity_residual: float
    identity_residual_rel: float
    kernel_bound: float


def cosh_diagnostics(t, dp, rho, eps):
    """Local equilibrium, jump rates, edge conductivity and their identities.

    ``pi_K ~ |K| exp(-Q_K/eps)``, ``kappa_{K|L} = (2 tau/|K|) B(q/eps)``,
    ``theta = kappa_{K|L} pi_K`` and ``J_SG = (eps/2)(ubar_K - ubar_L) theta``
    with ``ubar = rho / pi``.
    """
    rho = np.asarray(rho, dtype=float)
    if not eps > 0:
        raise ValueError("cosh structure needs eps > 0")
    if np.any(rho <= 0):
        raise DegenerateState("cosh diagnostics need strictly positive masses")
    Q, q = q_field(dp, t, rho)
    logw = np.log(t.volumes) - Q / eps
    pi = np.exp(logw - logsumexp(logw))
    K, L = t.faces[:, 0], t.faces[:, 1]
    s = q / eps
    bK = np.asarray(bernoulli(s))
    bL = np.asarray(bernoulli(-s))
    kKL = 2.0 * t.tau / t.volumes[K] * bK
    kLK = 2.0 * t.tau / t.volumes[L] * bL
    db = np.abs(kKL * pi[K] - kLK * pi[L])
    theta = kKL * pi[K]
    ubar = rho / pi
    Jc = 0.5 * eps * (ubar[K] - ubar[L]) * theta
    u = rho / t.volumes
    Jsg = eps * t.tau * (bK * u[K] - bL * u[L])
    diff = np.abs(Jsg - Jc)
    scale = eps * t.tau * (bK * u[K] + bL * u[L])
    rates = np.bincount(K, kKL, minlength=t.n_cells) + np.bincount(L, kLK, minlength=t.n_cells)
    scale_db = np.maximum(kKL * pi[K], kLK * pi[L])
    return CoshDiagnostics(
        pi=pi,
        kappa_KL=kKL,
        kappa_LK=kLK,
        theta=theta,
        detailed_balance_residual=float(np.max(db)) if db.size else 0.0,
        detailed_balance_residual_rel=float(np.max(db / np.maximum(scale_db, 1e-300))) if db.size else 0.0,
        identity_residual=float(np.max(diff)) if diff.size else 0.0,
        identity_residual_rel=float(np.max(diff / np.maximum(scale, 1e-300))) if diff.size else 0.0,
        kernel_bound=float(t.h**2 * np.max(rates)),
    )
