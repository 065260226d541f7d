"""Continuum lifts of discrete states and fluxes.

Densities lift to piecewise constants on cells.  A face flux ``J_f`` lifts to
``J_f`` times the oriented segment measure on ``[x_K, x_L]``.
"""
import math

import numpy as np
from scipy import spatial

from .errors import NonNested
from .special_fn import beta

__all__ = [
    "PiecewiseDensity",
    "LiftedFlux",
    "lift_density",
    "lift_flux",
    "bv_seminorm",
    "bv_bound",
    "l1_distance",
    "pair_flux",
]


class PiecewiseDensity:
    """``u(x) = rho_K / |K|`` for ``x`` in cell ``K``."""

    def __init__(self, t, values):
        self.t = t
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (t.n_cells,):
            raise ValueError("one density value per cell expected")
        self._tree = None

    @property
    def masses(self):
        return self.values * self.t.volumes

    def integral(self):
        return float(np.sum(self.masses))

    def locate(self, x):
        """Index of the cell containing each point of ``x`` (shape ``(..., dim)``)."""
        x = np.asarray(x, dtype=float)
        t = self.t
        flat = x.reshape(-1, t.dim)
        if t.grid_edges is not None:
            idx = np.zeros(flat.shape[0], dtype=np.int64)
            for ax, e in enumerate(t.grid_edges):
                i = np.clip(np.searchsorted(e, flat[:, ax], side="right") - 1, 0, e.size - 2)
                idx = idx * (e.size - 1) + i
        else:
            # nearest barycenter: exact for Voronoi-type meshes
            if self._tree is None:
                self._tree = spatial.cKDTree(t.centers)
            idx = self._tree.query(flat)[1]
        return idx.reshape(x.shape[:-1])

    def __call__(self, x):
        return self.values[self.locate(x)]


def lift_density(t, rho):
    return PiecewiseDensity(t, np.asarray(rho, dtype=float) / t.volumes)


class LiftedFlux:
    """Segment-measure lift of a canonically oriented face flux."""

    def __init__(self, t, J):
        self.t = t
        self.J = np.asarray(J, dtype=float)
        if self.J.shape != (t.n_faces,):
            raise ValueError("one flux value per face expected")

    def total_variation(self):
        return float(np.sum(np.abs(self.J) * self.t.dist))


def lift_flux(t, J):
    return LiftedFlux(t, J)


def pair_flux(lf, phi, hq=None):
    """``sum_f J_f (x_L - x_K) . mean_theta phi(x_K + theta (x_L - x_K))``.

    ``phi`` maps points ``(..., dim)`` to vectors ``(..., dim)``.  The mean
    uses the midpoint rule with ``ceil(|x_L - x_K| / hq)`` points per face
    (``hq`` defaults to the mesh size, one point per face).
    """
    t = lf.t
    hq = t.h if hq is None else float(hq)
    npts = np.maximum(np.ceil(t.dist / hq - 1e-12).astype(int), 1)
    xK = t.centers[t.faces[:, 0]]
    total = 0.0
    for n in np.unique(npts):
        sel = np.flatnonzero(npts == n)
        theta = (np.arange(n) + 0.5) / n
        pts = xK[sel, None, :] + theta[None, :, None] * t.delta[sel, None, :]
        vals = np.asarray(phi(pts), dtype=float).reshape(sel.size, n, t.dim)
        mean = vals.mean(axis=1)
        total += float(np.sum(lf.J[sel] * np.sum(mean * t.delta[sel], axis=1)))
    return total


def bv_seminorm(t, rho):
    """Total variation of the piecewise-constant lift: ``sum_f |u_K - u_L| |K|L|``."""
    u = np.asarray(rho, dtype=float) / t.volumes
    return float(np.sum(np.abs(u[t.faces[:, 0]] - u[t.faces[:, 1]]) * t.areas))


def bv_bound(t, rho, eps, tight=False):
    """Upper bound for :func:`bv_seminorm` from the diffusive Fisher part ``D0``.

    Cauchy-Schwarz with ``|x_L - x_K| <= h`` and ``4 beta >= eps**2 (a-b)**2/(a+b)``
    gives ``BV <= sqrt(S) sqrt(D0) / eps`` with ``S = sum (u_K + u_L) h**2 tau``
    (``tight=True``).  The default returns the looser bound
    ``sqrt(2 S) (2 / eps) sqrt(D0)``.
    """
    u = np.asarray(rho, dtype=float) / t.volumes
    uK, uL = u[t.faces[:, 0]], u[t.faces[:, 1]]
    D0 = float(np.sum(4.0 * t.tau * beta(uK, uL, eps)))
    S = float(np.sum((uK + uL) * t.h**2 * t.tau))
    if tight:
        return math.sqrt(S) * math.sqrt(D0) / eps
    return math.sqrt(2.0 * S) * (2.0 / eps) * math.sqrt(D0)


def _same_mesh(a, b):
    return a is b or a == b


def l1_distance(a, b):
    """Exact ``int |u_a - u_b|`` for equal meshes or rectilinear grids on one box.

    Rectilinear grids are compared on the union of their edge sets, so nested
    Cartesian refinements are covered as a special case.
    """
    ta, tb = a.t, b.t
    if _same_mesh(ta, tb):
        return float(np.sum(np.abs(a.values - b.values) * ta.volumes))
    if ta.grid_edges is None or tb.grid_edges is None or ta.dim != tb.dim:
        raise NonNested("L1 distance needs identical meshes or rectilinear grids")
    ea, eb = ta.grid_edges, tb.grid_edges
    axes = []
    for x, y in zip(ea, eb):
        if not (np.isclose(x[0], y[0], rtol=0, atol=1e-12 * (x[-1] - x[0]))
                and np.isclose(x[-1], y[-1], rtol=0, atol=1e-12 * (x[-1] - x[0]))):
            raise NonNested("grids cover different boxes")
        u = np.union1d(x, y)
        # merge edges that differ only by round-off
        tol = 1e-12 * (u[-1] - u[0])
        u = u[np.concatenate([[True], np.diff(u) > tol])]
        u[-1] = max(x[-1], y[-1])
        mid = 0.5 * (u[1:] + u[:-1])
        ia = np.clip(np.searchsorted(x, mid, side="right") - 1, 0, x.size - 2)
        ib = np.clip(np.searchsorted(y, mid, side="right") - 1, 0, y.size - 2)
        axes.append((np.diff(u), ia, ib, x.size - 1, y.size - 1))
    # tensor-product accumulation over the intersection cells
    w = np.ones(1)
    ka = np.zeros(1, dtype=np.int64)
    kb = np.zeros(1, dtype=np.int64)
    for width, ia, ib, na, nb in axes:
        w = (w[:, None] * width[None, :]).ravel()
        ka = (ka[:, None] * na + ia[None, :]).ravel()
        kb = (kb[:, None] * nb + ib[None, :]).ravel()
    return float(np.sum(np.abs(a.values[ka] - b.values[kb]) * w))
