"""External potentials ``V``, interaction kernels ``W`` and their discretisation.

Potentials are described by one-line specs such as ``"quadratic center=0.5,0.5
k=1"`` or ``"morse Cr=2 lr=0.5 Ca=1 la=1"``.  On a tessellation they are
sampled at barycenters, ``V_K = V(x_K)`` and ``W_KL = W(x_L - x_K)``, the
diagonal ``W_KK = W(0)`` included.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import interpolate, spatial

from .errors import ConfigError, Unavailable

__all__ = [
    "Potential",
    "PotentialSpec",
    "DiscretePotentials",
    "parse_potential",
    "discretize",
    "q_field",
    "q_bound_ratio",
    "q_consistency_check",
    "QConsistency",
]

DEFAULT_MEMORY_CAP = 2.0e8  # bytes allowed for the dense W matrix


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def _corners(bounds):
    lo, hi = np.asarray(bounds, dtype=float)
    dim = lo.size
    pick = np.array(np.meshgrid(*[[0, 1]] * dim, indexing="ij")).reshape(dim, -1).T
    return np.where(pick == 0, lo, hi)


class Potential:
    """Base class.  ``kind`` is ``"V"`` or ``"W"``."""

    name = "?"
    kinds = ("V", "W")
    has_gradient = True

    def __init__(self, kind, spec="", lip=None):
        self.kind = kind
        self.spec = spec or self.name
        self._lip = lip

    def __call__(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def _lipschitz(self, bounds):
        return None

    def lipschitz(self, bounds=None):
        """Lipschitz constant on the domain box (``None`` if unknown)."""
        if self._lip is not None:
            return float(self._lip)
        return self._lipschitz(bounds)

    def __repr__(self):
        return f"<{self.kind} {self.spec}>"


class Zero(Potential):
    name = "zero"

    def __call__(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad(self, x):
        return np.zeros(np.shape(x))

    def _lipschitz(self, bounds):
        return 0.0


class Linear(Potential):
    name = "linear"
    kinds = ("V",)

    def __init__(self, kind, g, **kw):
        super().__init__(kind, **kw)
        self.g = np.atleast_1d(np.asarray(g, dtype=float))

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.g

    def grad(self, x):
        return np.broadcast_to(self.g, np.shape(x)).copy()

    def _lipschitz(self, bounds):
        return float(np.linalg.norm(self.g))


class Quadratic(Potential):
    """``k |x - center|**2 / 2``."""
    name = "quadratic"
    kinds = ("V",)

    def __init__(self, kind, center=0.0, k=1.0, **kw):
        super().__init__(kind, **kw)
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.k = float(k)

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return 0.5 * self.k * np.sum(d * d, axis=-1)

    def grad(self, x):
        return self.k * (np.asarray(x, dtype=float) - self.center)

    def _lipschitz(self, bounds):
        if bounds is None:
            return None
        R = np.max(_norm(_corners(bounds) - self.center))
        return abs(self.k) * float(R)


class DoubleWell(Potential):
    """``k (|x - center|**2 - r**2)**2``: minima on the sphere of radius ``r``."""
    name = "double_well"
    kinds = ("V",)

    def __init__(self, kind, center=0.0, r=0.25, k=1.0, **kw):
        super().__init__(kind, **kw)
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.r = float(r)
        self.k = float(k)

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        s = np.sum(d * d, axis=-1) - self.r**2
        return self.k * s * s

    def grad(self, x):
        d = np.asarray(x, dtype=float) - self.center
        s = np.sum(d * d, axis=-1) - self.r**2
        return 4.0 * self.k * s[..., None] * d

    def _lipschitz(self, bounds):
        if bounds is None:
            return None
        R = float(np.max(_norm(_corners(bounds) - self.center)))
        r = self.r
        cand = [R]
        if r / math.sqrt(3) < R:
            cand.append(r / math.sqrt(3))
        return max(4 * abs(self.k) * abs(p * p - r * r) * p for p in cand)


class Morse(Potential):
    """``Cr exp(-|x|/lr) - Ca exp(-|x|/la)``."""
    name = "morse"
    kinds = ("W",)

    def __init__(self, kind, Cr=2.0, lr=0.5, Ca=1.0, la=1.0, **kw):
        super().__init__(kind, **kw)
        self.Cr, self.lr, self.Ca, self.la = float(Cr), float(lr), float(Ca), float(la)
        if not (self.lr > 0 and self.la > 0):
            raise ConfigError("morse length scales must be positive")
        if not (self.Cr >= self.Ca and self.la > self.lr):
            raise ConfigError("morse kernel requires Cr >= Ca and la > lr")

    def __call__(self, x):
        r = _norm(np.asarray(x, dtype=float))
        return self.Cr * np.exp(-r / self.lr) - self.Ca * np.exp(-r / self.la)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r = _norm(x)
        dr = -self.Cr / self.lr * np.exp(-r / self.lr) + self.Ca / self.la * np.exp(-r / self.la)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        return dr[..., None] * unit

    def _lipschitz(self, bounds):
        return self.Cr / self.lr + self.Ca / self.la


class Gaussian(Potential):
    """Attractive well ``amplitude (1 - exp(-|x|**2 / (2 width**2)))``."""
    name = "gaussian"
    kinds = ("W",)

    def __init__(self, kind, amplitude=1.0, width=0.2, **kw):
        super().__init__(kind, **kw)
        self.A = float(amplitude)
        self.w = float(width)
        if not self.w > 0:
            raise ConfigError("gaussian width must be positive")

    def __call__(self, x):
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return -self.A * np.expm1(-r2 / (2 * self.w**2))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return (self.A / self.w**2 * np.exp(-r2 / (2 * self.w**2)))[..., None] * x

    def _lipschitz(self, bounds):
        return abs(self.A) * math.exp(-0.5) / self.w


class AbsValue(Potential):
    """``slope |x|``."""
    name = "abs_value"
    kinds = ("W",)

    def __init__(self, kind, slope=1.0, **kw):
        super().__init__(kind, **kw)
        self.slope = float(slope)

    def __call__(self, x):
        return self.slope * _norm(np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r = _norm(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        return self.slope * unit

    def _lipschitz(self, bounds):
        return abs(self.slope)


class Tabulated(Potential):
    """Piecewise-linear interpolant of CSV samples ``x..., value``.

    Outside the convex hull of the samples the nearest sample is used.  No
    gradient is available.
    """
    name = "tabulated"
    has_gradient = False

    def __init__(self, kind, file, base_dir=None, **kw):
        super().__init__(kind, **kw)
        path = Path(file)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        except ValueError:
            data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=1)
        except OSError as exc:
            raise ConfigError(f"cannot read tabulated potential {path}: {exc}") from None
        if data.shape[1] < 2:
            raise ConfigError("tabulated potential needs columns x..., value")
        self.path = path.resolve()
        # absolute path so that persisted specs stay loadable from anywhere
        self.spec = " ".join(f"file={self.path}" if tok.startswith("file=") else tok
                             for tok in self.spec.split())
        self.points = data[:, :-1]
        self.values = data[:, -1]
        self.dim = self.points.shape[1]
        if self.dim == 1:
            order = np.argsort(self.points[:, 0])
            self._xs = self.points[order, 0]
            self._vs = self.values[order]
        else:
            self._lin = interpolate.LinearNDInterpolator(self.points, self.values)
            self._near = interpolate.NearestNDInterpolator(self.points, self.values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ConfigError(f"tabulated potential is {self.dim}-dimensional, got {x.shape[-1]}")
        if self.dim == 1:
            return np.interp(x[..., 0], self._xs, self._vs)
        flat = x.reshape(-1, self.dim)
        v = self._lin(flat)
        bad = np.isnan(v)
        if bad.any():
            v[bad] = self._near(flat[bad])
        return v.reshape(x.shape[:-1])

    def grad(self, x):
        raise Unavailable(f"tabulated potential {self.path.name} has no gradient")

    def _lipschitz(self, bounds):
        if self.dim == 1:
            dv = np.diff(self._vs)
            dx = np.diff(self._xs)
            ok = dx > 0
            return float(np.max(np.abs(dv[ok] / dx[ok]))) if ok.any() else 0.0
        tri = spatial.Delaunay(self.points)
        best = 0.0
        for i in range(tri.simplices.shape[1]):
            for j in range(i + 1, tri.simplices.shape[1]):
                a, b = tri.simplices[:, i], tri.simplices[:, j]
                dx = _norm(self.points[a] - self.points[b])
                best = max(best, float(np.max(np.abs(self.values[a] - self.values[b]) / dx)))
        return best

    def symmetry_residual(self):
        return float(np.max(np.abs(self(self.points) - self(-self.points))))


_REGISTRY = {cls.name: cls for cls in (Zero, Linear, Quadratic, DoubleWell, Morse,
                                       Gaussian, AbsValue, Tabulated)}

_VECTOR_KEYS = {"g", "center"}


def _parse_value(key, raw):
    if key == "file":
        return raw
    try:
        if key in _VECTOR_KEYS:
            return [float(v) for v in raw.split(",")]
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad numeric value {key}={raw!r}") from None


def parse_potential(text, kind, base_dir=None):
    """Build a potential from a one-line spec like ``"linear g=1,0"``."""
    if kind not in ("V", "W"):
        raise ValueError("kind must be 'V' or 'W'")
    text = (text or "zero").strip()
    tok = text.split()
    name = tok[0]
    cls = _REGISTRY.get(name)
    if cls is None or kind not in cls.kinds:
        allowed = sorted(n for n, c in _REGISTRY.items() if kind in c.kinds)
        raise ConfigError(f"unknown {kind} potential {name!r}; expected one of {allowed}")
    params = {}
    for item in tok[1:]:
        if "=" not in item:
            raise ConfigError(f"potential parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        params[k] = _parse_value(k, v)
    if cls is Tabulated:
        if "file" not in params:
            raise ConfigError("tabulated potential needs file=<csv>")
        params["base_dir"] = base_dir
    try:
        return cls(kind, spec=text, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None


@dataclass
class PotentialSpec:
    V: Potential = field(default_factory=lambda: Zero("V"))
    W: Potential = field(default_factory=lambda: Zero("W"))

    @classmethod
    def from_strings(cls, V="zero", W="zero", base_dir=None):
        return cls(parse_potential(V, "V", base_dir), parse_potential(W, "W", base_dir))

    def lip_V(self, bounds=None):
        return self.V.lipschitz(bounds)

    def lip_W(self, bounds=None):
        return self.W.lipschitz(bounds)

    def c_pot(self, bounds=None):
        """``lip_V + lip_W``, or ``None`` when either is unknown."""
        lv, lw = self.lip_V(bounds), self.lip_W(bounds)
        return None if lv is None or lw is None else lv + lw

    @property
    def has_gradient(self):
        return self.V.has_gradient and self.W.has_gradient


class DiscretePotentials:
    """Sampled potentials on a fixed tessellation.

    ``Wh`` is the dense matrix when it fits under the memory cap; otherwise
    ``W @ rho`` is formed block by block from the kernel.  Both paths sum in
    the same fixed order.
    """

    _BLOCK = 512

    def __init__(self, spec, t, Vh, Wh):
        self.spec = spec
        self.t = t
        self.Vh = Vh
        self.Wh = Wh
        self.w_zero = isinstance(spec.W, Zero)

    @property
    def dense(self):
        return self.Wh is not None

    def conv(self, rho):
        """``sum_M W_KM rho_M`` per cell."""
        rho = np.asarray(rho, dtype=float)
        if self.w_zero:
            return np.zeros(self.t.n_cells)
        if self.Wh is not None:
            return self.Wh @ rho
        x = self.t.centers
        out = np.empty(self.t.n_cells)
        for s in range(0, x.shape[0], self._BLOCK):
            blk = self.spec.W(x[None, :, :] - x[s:s + self._BLOCK, None, :])
            out[s:s + self._BLOCK] = blk @ rho
        return out

    def Q(self, rho):
        return self.Vh + self.conv(rho)

    def interaction_energy(self, rho):
        """``sum_{K,M} W_KM rho_K rho_M / 2``."""
        rho = np.asarray(rho, dtype=float)
        return 0.5 * float(rho @ self.conv(rho))


def discretize(spec, t, memory_cap=DEFAULT_MEMORY_CAP):
    """Sample ``spec`` at the barycenters of ``t``."""
    x = t.centers
    for pot in (spec.V, spec.W):
        for attr in ("g", "center"):
            v = getattr(pot, attr, None)
            if v is not None and v.size not in (1, t.dim):
                raise ConfigError(f"{pot.kind} parameter {attr} has {v.size} entries, mesh is {t.dim}-D")
    Vh = np.asarray(spec.V(x), dtype=float)
    if not np.all(np.isfinite(Vh)):
        raise ConfigError("external potential is not finite on the mesh")
    W = spec.W
    if isinstance(W, Tabulated):
        res = W.symmetry_residual()
        if res > 1e-12:
            raise ConfigError(f"tabulated interaction kernel is not even (residual {res:.3g})")
    Wh = None
    n = t.n_cells
    if not isinstance(W, Zero) and 8.0 * n * n <= memory_cap:
        Wh = np.asarray(W(x[None, :, :] - x[:, None, :]), dtype=float)
        asym = float(np.max(np.abs(Wh - Wh.T)))
        if asym > 1e-12:
            raise ConfigError(f"interaction kernel is not even (residual {asym:.3g})")
        Wh.setflags(write=False)
    Vh.setflags(write=False)
    return DiscretePotentials(spec, t, Vh, Wh)


def q_field(dp, t, rho):
    """Cell potential ``Q_K = V_K + sum_M W_KM rho_M`` and face jumps ``Q_L - Q_K``."""
    Q = dp.Q(rho)
    q = Q[t.faces[:, 1]] - Q[t.faces[:, 0]]
    return Q, q


def q_bound_ratio(dp, t, q):
    """``max |q_f| / (c_pot |x_L - x_K|)``; at most 1 when the constants hold."""
    c = dp.spec.c_pot(t.bounds)
    if c is None:
        raise Unavailable("Lipschitz constants unknown for this potential")
    if c == 0:
        return 0.0 if np.all(q == 0) else math.inf
    return float(np.max(np.abs(q) / (c * t.dist))) if q.size else 0.0


@dataclass(frozen=True)
class QConsistency:
    max_residual: float
    h: float


def q_consistency_check(dp, t, rho):
    """Max over faces of ``|q_f - grad Q(rho_hat)(x_K) . (x_L - x_K)|``.

    The convolution gradient is evaluated with the midpoint rule over cells,
    ``grad V(x) + sum_M rho_M grad W(x - x_M)``.
    """
    spec = dp.spec
    if not spec.has_gradient:
        raise Unavailable("potential has no analytic gradient")
    rho = np.asarray(rho, dtype=float)
    _, q = q_field(dp, t, rho)
    xK = t.centers[t.faces[:, 0]]
    g = spec.V.grad(xK)
    if not dp.w_zero:
        x = t.centers
        gw = np.zeros_like(xK)
        B = DiscretePotentials._BLOCK
        for s in range(0, xK.shape[0], B):
            blk = spec.W.grad(xK[s:s + B, None, :] - x[None, :, :])
            gw[s:s + B] = np.einsum("fmd,m->fd", blk, rho)
        g = g + gw
    pred = np.sum(g * t.delta, axis=1)
    res = float(np.max(np.abs(q - pred))) if q.size else 0.0
    return QConsistency(max_residual=res, h=t.h)
