"""Scharfetter-Gummel and upwind face fluxes and explicit time stepping.

Face fields are canonically oriented from the lower cell index ``K`` to the
higher one ``L``; positive flux moves mass from ``K`` to ``L``.

The upwind flux uses the drift ``d = -q = Q_K - Q_L``, which is the
``eps -> 0`` limit of the SG flux: mass moves towards lower ``Q``.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NegativeDensity, NonConvergence
from .gradstruct import energy
from .potentials import q_field
from .special_fn import bernoulli

__all__ = [
    "SchemeConfig",
    "sg_flux",
    "upwind_flux",
    "flux",
    "divergence",
    "stable_dt",
    "step",
    "solve",
    "stationary_state",
    "gibbs_state",
]

KINDS = ("sg", "upwind")
_E_TOL = 1e-13
INTEGRATORS = ("explicit_euler", "heun")


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme and integrator settings.

    ``dt=None`` selects the automatic positivity-preserving step.
    ``record_every=0`` records every step.  ``align_every > 0`` shortens
    steps so that multiples of it are hit exactly (useful to compare
    trajectories recorded every step).  With ``energy_guard`` the auto mode
    rejects steps that raise the discrete energy and halves a persistent
    factor on ``stable_dt``; positivity alone does not make explicit
    stepping stable when the interaction kernel is stiff.
    """

    kind: str = "sg"
    eps: float = 1.0
    dt: float = None
    integrator: str = "explicit_euler"
    t_end: float = 1.0
    record_every: float = 0.0
    safety: float = 0.9
    max_steps: int = 10_000_000
    align_every: float = 0.0
    energy_guard: bool = True

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind in ("up", "upwind"):
            kind = "upwind"
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"scheme kind must be one of {KINDS}, got {self.kind!r}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        eps = float(self.eps)
        if kind == "sg" and not eps > 0:
            raise ConfigError("the SG scheme needs eps > 0")
        if kind == "upwind" and eps != 0:
            raise ConfigError("the upwind scheme has eps = 0")
        object.__setattr__(self, "eps", eps)
        if self.dt is not None and not float(self.dt) > 0:
            raise ConfigError("fixed time step must be positive")
        if not float(self.t_end) >= 0:
            raise ConfigError("t_end must be nonnegative")
        if not float(self.record_every) >= 0:
            raise ConfigError("record_every must be nonnegative")
        if not float(self.align_every) >= 0:
            raise ConfigError("align_every must be nonnegative")
        if not 0 < float(self.safety) <= 1:
            raise ConfigError("safety factor must lie in (0, 1]")

    @classmethod
    def sg(cls, eps, **kw):
        return cls(kind="sg", eps=eps, **kw)

    @classmethod
    def upwind(cls, **kw):
        return cls(kind="upwind", eps=0.0, **kw)

    def with_(self, **kw):
        return replace(self, **kw)


def _densities(t, rho):
    return np.asarray(rho, dtype=float) / t.volumes


def sg_flux(t, dp, rho, eps, q=None):
    """``eps tau (B(q/eps) u_K - B(-q/eps) u_L)`` per face."""
    if q is None:
        _, q = q_field(dp, t, rho)
    u = _densities(t, rho)
    s = q / eps
    return eps * t.tau * (_bern(s) * u[t.faces[:, 0]] - _bern(-s) * u[t.faces[:, 1]])


def _bern(s):
    return np.asarray(bernoulli(s), dtype=float)


def upwind_flux(t, dp, rho, q=None):
    """``tau (d+ u_K - d- u_L)`` with drift ``d = -q``."""
    if q is None:
        _, q = q_field(dp, t, rho)
    u = _densities(t, rho)
    d = -q
    return t.tau * (np.maximum(d, 0.0) * u[t.faces[:, 0]] - np.maximum(-d, 0.0) * u[t.faces[:, 1]])


def flux(t, dp, rho, config, q=None):
    if config.kind == "sg":
        return sg_flux(t, dp, rho, config.eps, q)
    return upwind_flux(t, dp, rho, q)


def divergence(t, J):
    """``sum_L J_{K|L}`` per cell (outflow positive)."""
    return t.face_divergence(J)


def _outflow_rates(t, q, config):
    """Per-cell total outflow rate (fraction of the cell mass per unit time)."""
    if config.kind == "sg":
        e = config.eps
        wK = e * t.tau * _bern(q / e)
        wL = e * t.tau * _bern(-q / e)
    else:
        wK = t.tau * np.maximum(-q, 0.0)
        wL = t.tau * np.maximum(q, 0.0)
    n = t.n_cells
    out = np.bincount(t.faces[:, 0], wK, minlength=n) + np.bincount(t.faces[:, 1], wL, minlength=n)
    return out / t.volumes


def stable_dt(t, dp, rho, config, q=None):
    """Largest explicit Euler step keeping masses nonnegative, times ``safety``."""
    if q is None:
        _, q = q_field(dp, t, rho)
    r = _outflow_rates(t, q, config)
    m = float(np.max(r)) if r.size else 0.0
    return math.inf if m == 0 else config.safety / m


def _euler(t, dp, rho, dt, config):
    J = flux(t, dp, rho, config)
    return rho - dt * divergence(t, J), J


def step(t, dp, rho, dt, config):
    """One explicit step; returns ``(rho_next, J_used)``.

    ``J_used`` is the flux whose divergence advanced the state (the stage
    average for Heun).  Raises :class:`NegativeDensity` if a mass turns
    negative.
    """
    rho = np.asarray(rho, dtype=float)
    if config.integrator == "explicit_euler":
        new, J = _euler(t, dp, rho, dt, config)
    else:
        J0 = flux(t, dp, rho, config)
        mid = rho - dt * divergence(t, J0)
        J1 = flux(t, dp, mid, config)
        J = 0.5 * (J0 + J1)
        new = rho - dt * divergence(t, J)
    if np.any(new < 0):
        k = int(np.argmin(new))
        raise NegativeDensity(f"mass of cell {k} became {new[k]:.3e} with dt={dt:.3e}")
    return new, J


class Trajectory:
    """Recorded solution: times, masses and fluxes evaluated at the masses."""

    def __init__(self, tess, times, states, fluxes, config, potentials=None, meta=None,
                 n_steps=None, dt_max=None):
        self.tess = tess
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.fluxes = np.asarray(fluxes, dtype=float)
        self.config = config
        self.potentials = potentials
        self.meta = dict(meta or {})
        self.n_steps = n_steps
        self.dt_max = dt_max

    def __len__(self):
        return self.times.size

    @property
    def masses(self):
        return self.states.sum(axis=1)

    def index_of(self, time, rtol=1e-12):
        i = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[i] - time) > rtol * max(1.0, abs(time)):
            raise KeyError(f"time {time} is not a record time")
        return i

    def continuity_residual(self):
        """``max |(rho^{n+1} - rho^n)/dt + div J^n|`` over consecutive records."""
        dt = np.diff(self.times)
        if dt.size == 0:
            return 0.0
        drho = np.diff(self.states, axis=0) / dt[:, None]
        div = np.array([divergence(self.tess, J) for J in self.fluxes[:-1]])
        return float(np.max(np.abs(drho + div)))

    def __repr__(self):
        return (f"Trajectory({self.config.kind}, eps={self.config.eps}, records={len(self)}, "
                f"t_end={self.times[-1]:.4g})")


def solve(t, dp, rho0, config):
    """Integrate from ``rho0`` to ``config.t_end``.

    Records are taken at multiples of ``record_every`` (steps are shortened
    to land on them) or after every step when it is 0.  The flux stored with
    each record is evaluated at the recorded state.
    """
    rho = np.array(rho0, dtype=float)
    if rho.shape != (t.n_cells,):
        raise ConfigError(f"initial state has shape {rho.shape}, mesh has {t.n_cells} cells")
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ConfigError("initial masses must be finite and nonnegative")
    T = float(config.t_end)
    every = float(config.record_every)
    grid = every if every > 0 else float(config.align_every)
    auto = config.dt is None
    guard = auto and config.energy_guard
    factor, n_rejected = 1.0, 0
    E_old = energy(t, dp, rho, config.eps) if guard else None
    times, states, fluxes = [0.0], [rho.copy()], [flux(t, dp, rho, config)]
    now = 0.0
    k_rec = 1
    n_steps = 0
    dt_max = 0.0
    while now < T:
        if n_steps >= config.max_steps:
            raise NonConvergence(f"step limit {config.max_steps} reached at t={now:.6g}")
        target = min(T, k_rec * grid) if grid > 0 else T
        _, q = q_field(dp, t, rho)
        dt = factor * stable_dt(t, dp, rho, config, q) if auto else float(config.dt)
        land = False
        if now + dt >= target * (1 - 1e-14):
            dt = target - now
            land = True
        while True:
            try:
                new, _ = step(t, dp, rho, dt, config)
            except NegativeDensity as exc:
                if not auto or dt < 1e-300:
                    raise NegativeDensity(f"{exc} at t={now:.6g} (step {n_steps})",
                                          step=n_steps, time=now) from None
                dt *= 0.5
                land = False
                continue
            if guard:
                E_new = energy(t, dp, new, config.eps)
                if E_new > E_old + _E_TOL * max(1.0, abs(E_old)):
                    factor *= 0.5
                    n_rejected += 1
                    if factor < 1e-8:
                        raise NonConvergence(f"energy guard shrank dt below 1e-8 * stable_dt "
                                             f"at t={now:.6g}")
                    dt *= 0.5
                    land = False
                    continue
                E_old = E_new
            break
        rho = new
        n_steps += 1
        dt_max = max(dt_max, dt)
        now = target if land else now + dt
        if land or every == 0:
            times.append(now)
            states.append(rho.copy())
            fluxes.append(flux(t, dp, rho, config))
        if land and grid > 0:
            k_rec += 1
    meta = {"rejected_steps": n_rejected, "dt_factor": factor} if guard else {}
    traj = Trajectory(t, times, states, fluxes, config, potentials=dp.spec, meta=meta,
                      n_steps=n_steps, dt_max=dt_max)
    return traj


def gibbs_state(t, Q, eps):
    """Normalised ``|K| exp(-Q_K / eps)``."""
    z = np.log(t.volumes) - np.asarray(Q, dtype=float) / eps
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def stationary_state(t, dp, eps, tol=1e-12, damping=0.5, max_iter=10_000, rho0=None):
    """Self-consistent ``rho = normalize(|K| exp(-Q(rho)_K / eps))``.

    Damped Picard iteration; for ``W = 0`` the closed-form Gibbs measure is
    returned directly.  Convergence is measured in total variation.
    """
    if not eps > 0:
        raise ConfigError("stationary_state needs eps > 0")
    if dp.w_zero:
        return gibbs_state(t, dp.Vh, eps)
    rho = t.volumes / t.volumes.sum() if rho0 is None else np.asarray(rho0, dtype=float)
    res = math.inf
    for _ in range(max_iter):
        g = gibbs_state(t, dp.Q(rho), eps)
        res = 0.5 * float(np.sum(np.abs(g - rho)))
        if res <= tol:
            return g
        rho = (1 - damping) * rho + damping * g
    raise NonConvergence(f"Picard iteration did not converge; last residual {res:.3e}")
