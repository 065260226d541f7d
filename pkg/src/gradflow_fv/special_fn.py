"""Scalar special functions of the tilt-independent gradient structure.

Every function broadcasts over numpy arrays and returns a Python float for
scalar input.  Removable singularities are handled with series branches and
the exponentially growing forms are rewritten so that nothing overflows for
finite input.

Notation used below: ``c = log(a/b) / 2`` and ``X = xi / eps``.  With these,
the integrand of ``alpha_star`` at unit diffusion reads

    f(x) = sqrt(a b) sinh(x) (c - x) / sinh(c - x),

which is analytic with nearest complex singularity at distance ``pi`` from
the real axis and grows only linearly, like ``a (x - c)`` for ``x >> |c|``
and ``b (x - c)`` for ``x << -|c|``.
"""
from typing import NamedTuple

import numpy as np

__all__ = [
    "MeanArgs",
    "AlphaArgs",
    "bernoulli",
    "log_mean",
    "harm_log_mean",
    "alpha_star",
    "alpha_star_d1",
    "alpha_star_d2",
    "alpha_dual",
    "beta",
    "h_kernel",
    "hh_kernel",
    "alpha_zero",
    "psi_star",
]

EXP_CAP = 700.0

# Quadrature controls: absolute / relative tolerance for alpha_star and beta.
ATOL = 1e-13
RTOL = 1e-11

# Past |x| > |c| + _TAIL the integrand equals its affine asymptote to below
# 2*exp(-2*_TAIL) relative, so the remainder is integrated in closed form.
_TAIL = 18.0

# Below this |s| the kernel h uses its odd Taylor series (truncation < 1e-17);
# the closed form loses about 1e-16/|s|**2 to cancellation.
H_SERIES = 0.5
_H_COEF = (1 / 6, -1 / 180, 1 / 5040, -1 / 151200, 1 / 4790016,
           -691 / 108972864000, 1 / 5337446400, -3617 / 666913927680000)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_CHUNK = 4096


class MeanArgs(NamedTuple):
    s: float
    t: float


class AlphaArgs(NamedTuple):
    a: float
    b: float
    xi: float
    eps: float


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _f(x):
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# elementary kernels
# ---------------------------------------------------------------------------

def bernoulli(s):
    """Bernoulli function ``s / (exp(s) - 1)`` with value 1 at ``s = 0``."""
    s = _f(s)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # s > 0: s e^{-s} / (1 - e^{-s}) avoids overflow of e^s
        pos = s * np.exp(-s) / -np.expm1(-s)
        neg = s / np.expm1(s)
        out = np.where(s > 0, pos, neg)
    out = np.where(s == 0, 1.0, out)
    return _out(out)


def _u_over_atanh(u):
    u2 = u * u
    return 1.0 - u2 / 3.0 - 4.0 * u2 * u2 / 45.0


def log_mean(s, t):
    """Logarithmic mean ``(s - t) / (log s - log t)``."""
    s, t = np.broadcast_arrays(_f(s), _f(t))
    m = 0.5 * (s + t)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (s - t) / (s + t)
        direct = (s - t) / (np.log(s) - np.log(t))
    series = m * _u_over_atanh(u)
    out = np.where(np.abs(u) < 1e-4, series, direct)
    out = np.where((s == 0) | (t == 0), 0.0, out)
    return _out(out)


def harm_log_mean(s, t):
    """Harmonic-logarithmic mean ``s t / log_mean(s, t)``."""
    s, t = np.broadcast_arrays(_f(s), _f(t))
    lam = _f(log_mean(s, t))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (s / lam) * t
    out = np.where((s == 0) | (t == 0), 0.0, out)
    return _out(out)


def h_kernel(s):
    """``(exp(s) - 1 - s) / (4 sinh(s/2)**2)``; increases from 0 to 1."""
    s = _f(s)
    a = np.abs(s)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        em = np.expm1(-a)
        hp = (-em - a * np.exp(-a)) / (em * em)
    hp = np.where(np.isinf(a), 1.0, hp)
    val = np.where(s >= 0, hp, 1.0 - hp)
    s2 = s * s
    ser = 0.0
    for coef in _H_COEF[::-1]:
        ser = ser * s2 + coef
    ser = 0.5 + s * ser
    return _out(np.where(a < H_SERIES, ser, val))


def alpha_zero(a, b, xi):
    """Upwind kernel ``(a (xi+)**2 + b (xi-)**2) / 2``."""
    a, b, xi = np.broadcast_arrays(_f(a), _f(b), _f(xi))
    xp = np.maximum(xi, 0.0)
    xm = np.maximum(-xi, 0.0)
    # zero density times an infinite force contributes nothing
    with np.errstate(invalid="ignore"):
        tp = np.where((a == 0) | (xp == 0), 0.0, a * xp * xp)
        tm = np.where((b == 0) | (xm == 0), 0.0, b * xm * xm)
    return _out(0.5 * (tp + tm))


def psi_star(s, eps):
    """``4 eps**2 (cosh(s / (2 eps)) - 1)``, ``inf`` past double range."""
    s, eps = np.broadcast_arrays(_f(s), _f(eps))
    z = np.abs(s) / (2.0 * eps)
    with np.errstate(over="ignore"):
        # 4e^2(cosh z - 1) = 8 e^2 sinh(z/2)^2, written via expm1 near zero
        small = 2.0 * eps**2 * np.expm1(z) * (-np.expm1(-z))
        big = np.exp(np.log(2.0 * eps**2) + z) * (-np.expm1(-z)) ** 2
    out = np.where(z < 30.0, small, big)
    return _out(out)


# ---------------------------------------------------------------------------
# alpha_star and its derivatives
# ---------------------------------------------------------------------------

def _y_over_sinh(y):
    """``(y / sinh(y)) * exp(|y|) / 2`` evaluated as ``|y| / (1 - e^{-2|y|})``."""
    ay = np.abs(y)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = ay / -np.expm1(-2.0 * ay)
    return np.where(ay == 0, 0.5, r)


def _sinhc_inv(y):
    """``y / sinh(y)``."""
    return 2.0 * _y_over_sinh(y) * np.exp(-np.abs(y))


def _integrand(x, c, hlab):
    """Unit-diffusion integrand; ``hlab = log(ab)/2``."""
    y = c - x
    ax = np.abs(x)
    mag = np.exp(hlab + ax - np.abs(y)) * -np.expm1(-2.0 * ax)
    return np.sign(x) * mag * _y_over_sinh(y)


def _gl_panels(fun, lo, hi, npan, args):
    """Composite 16-point Gauss-Legendre with ``npan`` equal panels per row."""
    frac = np.arange(npan + 1) / npan
    edges = lo[:, None] + (hi - lo)[:, None] * frac
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    x = mid[:, :, None] + half[:, :, None] * _GL_X
    vals = fun(x, *[p[:, None, None] for p in args])
    return np.sum(np.sum(vals * _GL_W, axis=2) * half, axis=1)


def _adaptive(fun, lo, hi, args, width=1.0, atol=ATOL, rtol=RTOL, maxlev=12):
    """Integrate rows of ``fun`` over ``[lo, hi]`` to the given tolerance.

    Panel counts are powers of two; each row is refined until two successive
    counts agree.  Rows are processed in chunks to bound memory.
    """
    lo = np.atleast_1d(_f(lo))
    hi = np.atleast_1d(_f(hi))
    args = [np.atleast_1d(_f(p)) for p in args]
    n = lo.size
    out = np.empty(n)
    length = np.abs(hi - lo)
    k0 = np.ceil(np.log2(np.maximum(length / width, 1.0))).astype(int)
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        idx = np.arange(sl.start, sl.stop)
        lev = k0[sl].copy()
        prev = np.full(idx.size, np.nan)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(maxlev + 2):
            if not pending.any():
                break
            for k in np.unique(lev[pending]):
                sel = pending & (lev == k)
                rows = idx[sel]
                cur = _gl_panels(fun, lo[rows], hi[rows], 2 ** int(k),
                                 [p[rows] for p in args])
                old = prev[sel]
                done = np.abs(cur - old) <= np.maximum(atol, rtol * np.abs(cur))
                done |= k >= k0[rows] + maxlev
                out[rows[done]] = cur[done]
                loc = np.flatnonzero(sel)
                prev[loc] = cur
                pending[loc[done]] = False
                lev[loc[~done]] += 1
    return out


def _alpha1(a, b, X):
    """Unit-diffusion alpha_star for ``a, b > 0``, ``a != b`` (1-d arrays)."""
    c = 0.5 * (np.log(a) - np.log(b))
    hlab = 0.5 * (np.log(a) + np.log(b))
    x0 = np.abs(c) + _TAIL
    lim = np.clip(X, -x0, x0)
    res = np.zeros_like(X)
    nz = lim != 0
    if nz.any():
        res[nz] = _adaptive(_integrand, np.zeros(nz.sum()), lim[nz], [c[nz], hlab[nz]])
    with np.errstate(invalid="ignore", over="ignore"):
        hi_tail = 0.5 * a * ((X - c) ** 2 - (x0 - c) ** 2)
        lo_tail = 0.5 * b * ((X - c) ** 2 - (-x0 - c) ** 2)
    res = res + np.where(X > x0, hi_tail, 0.0) + np.where(X < -x0, lo_tail, 0.0)
    return res


def _alpha_eps(a, b, xi, eps):
    a, b, xi, eps = (np.ravel(v).astype(float) for v in np.broadcast_arrays(a, b, xi, eps))
    out = np.empty(a.size)
    zero_eps = eps == 0
    degen = ((a == 0) | (b == 0)) & ~zero_eps
    quad = (a == b) & ~degen & ~zero_eps
    gen = ~(zero_eps | quad | degen)
    out[zero_eps] = _f(alpha_zero(a[zero_eps], b[zero_eps], xi[zero_eps]))
    out[quad] = 0.5 * a[quad] * xi[quad] ** 2
    out[degen] = 0.0
    if gen.any():
        e = eps[gen]
        with np.errstate(invalid="ignore"):
            X = xi[gen] / e
        fin = np.isfinite(X)
        val = np.full(X.size, np.inf)
        val[fin] = e[fin] ** 2 * _alpha1(a[gen][fin], b[gen][fin], X[fin])
        out[gen] = val
    return out


def alpha_star(a, b, xi, eps):
    """Tilt-independent dual dissipation kernel.

    ``eps == 0`` returns the upwind limit ``alpha_zero``.
    """
    shape = np.broadcast(_f(a), _f(b), _f(xi), _f(eps)).shape
    return _out(_alpha_eps(a, b, xi, eps).reshape(shape))


def _d1_unit(a, b, X):
    c = 0.5 * (np.log(a) - np.log(b))
    hlab = 0.5 * (np.log(a) + np.log(b))
    return _integrand(X, c, hlab)


def alpha_star_d1(a, b, xi, eps):
    """``d/dxi alpha_star = eps sinh(xi/eps) harm_log_mean(a e^{-xi/eps}, b e^{xi/eps})``."""
    a, b, xi, eps = np.broadcast_arrays(_f(a), _f(b), _f(xi), _f(eps))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gen = eps * _d1_unit(a, b, xi / eps)
    out = np.where(a == b, a * xi, gen)
    out = np.where((a == 0) | (b == 0), 0.0, out)
    xp = np.maximum(xi, 0.0)
    xm = np.minimum(xi, 0.0)
    out = np.where(eps == 0, a * xp + b * xm, out)
    return _out(out)


def _d2_unit(a, b, X):
    c = 0.5 * (np.log(a) - np.log(b))
    s = 2.0 * (X - c)
    return a * _f(h_kernel(s)) + b * _f(h_kernel(-s))


def alpha_star_d2(a, b, xi, eps):
    """Second derivative in ``xi``; lies between ``min(a, b)`` and ``max(a, b)``."""
    a, b, xi, eps = np.broadcast_arrays(_f(a), _f(b), _f(xi), _f(eps))
    with np.errstate(divide="ignore", invalid="ignore"):
        gen = _d2_unit(a, b, xi / eps)
    out = np.where(a == b, a, gen)
    out = np.where((a == 0) | (b == 0), np.where(a == b, a, 0.0), out)
    return _out(out)


# ---------------------------------------------------------------------------
# Legendre dual
# ---------------------------------------------------------------------------

def _dual_unit(a, b, J, tol_scale):
    """Solve ``f(X) = J`` and return ``(X, J X - alpha1(X))`` for ``a, b > 0``."""
    lo = np.minimum(J / np.maximum(a, b), J / np.minimum(a, b))
    hi = np.maximum(J / np.maximum(a, b), J / np.minimum(a, b))
    X = np.clip(J / _f(harm_log_mean(a, b)), lo, hi)
    tol = 1e-12 * np.maximum(1.0, np.abs(J)) * tol_scale
    active = np.ones(X.size, dtype=bool)
    for _ in range(200):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        xa = X[ia]
        r = _d1_unit(a[ia], b[ia], xa) - J[ia]
        # tighten the bracket with the sign of the residual
        hi[ia] = np.where(r > 0, xa, hi[ia])
        lo[ia] = np.where(r < 0, xa, lo[ia])
        d2 = _d2_unit(a[ia], b[ia], xa)
        floor = 8e-16 * (np.abs(J[ia]) + d2 * np.abs(xa))
        conv = np.abs(r) <= np.maximum(np.minimum(tol[ia], 1e-10 * np.abs(J[ia])), floor)
        conv |= (hi[ia] - lo[ia]) <= 4e-16 * np.abs(xa)
        step = r / d2
        xn = xa - step
        bad = (xn <= lo[ia]) | (xn >= hi[ia]) | ~np.isfinite(xn)
        xn = np.where(bad, 0.5 * (lo[ia] + hi[ia]), xn)
        small = np.abs(step) <= 1e-16 * np.abs(xa)
        X[ia] = np.where(conv, xa, xn)
        active[ia[conv | (small & ~bad)]] = False
    val = J * X - _alpha1(a, b, X)
    return X, val


def alpha_dual(a, b, j, eps):
    """Legendre dual ``sup_xi (j xi - alpha_star(a, b, xi, eps))``.

    Returns ``inf`` where the supremum is unbounded.
    """
    shape = np.broadcast(_f(a), _f(b), _f(j), _f(eps)).shape
    a, b, j, eps = (np.ravel(v).astype(float) for v in np.broadcast_arrays(a, b, j, eps))
    out = np.empty(a.size)
    jp = np.maximum(j, 0.0)
    jm = np.maximum(-j, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(jp == 0, 0.0, jp * jp / (2.0 * a)) + np.where(jm == 0, 0.0, jm * jm / (2.0 * b))
        quad = np.where(j == 0, 0.0, j * j / (2.0 * a))
    z = eps == 0
    q = (a == b) & ~z
    dg = ((a == 0) | (b == 0)) & ~q & ~z
    gen = ~(z | q | dg)
    out[z] = up[z]
    out[q] = quad[q]
    out[dg] = np.where(j[dg] == 0, 0.0, np.inf)
    if gen.any():
        e = eps[gen]
        _, v = _dual_unit(a[gen], b[gen], j[gen] / e, 1.0)
        out[gen] = e * e * v
    return _out(out.reshape(shape))


def dual_argmax(a, b, j, eps):
    """Maximiser ``xi`` of ``j xi - alpha_star`` for ``a, b, eps > 0``."""
    shape = np.broadcast(_f(a), _f(b), _f(j), _f(eps)).shape
    a, b, j, eps = (np.ravel(v).astype(float) for v in np.broadcast_arrays(a, b, j, eps))
    out = np.where(a == b, j / np.where(a == b, a, 1.0), 0.0)
    gen = a != b
    if gen.any():
        X, _ = _dual_unit(a[gen], b[gen], j[gen] / eps[gen], 1.0)
        out[gen] = eps[gen] * X
    return _out(out.reshape(shape))


# ---------------------------------------------------------------------------
# beta and the second-order kernel
# ---------------------------------------------------------------------------

def _beta_integrand(w, ell, r):
    # r [e^{-(w+l)/2} S((w-l)/2) - e^{-w/2} S(w/2)], S(z) = z / sinh z
    return r * np.exp(-0.5 * (w + ell)) * _sinhc_inv(0.5 * (w - ell)) \
        - r * np.exp(-0.5 * w) * _sinhc_inv(0.5 * w)


def beta(a, b, eps):
    """``alpha_star(a, b, eps log sqrt(a/b), eps)``, from its integral in ``log z``."""
    shape = np.broadcast(_f(a), _f(b), _f(eps)).shape
    a, b, eps = (np.ravel(v).astype(float) for v in np.broadcast_arrays(a, b, eps))
    # symmetric: order so that a <= b, then r = a/b in (0, 1]
    lo_, hi_ = np.minimum(a, b), np.maximum(a, b)
    out = np.zeros(a.size)
    edge = (lo_ == 0) & (hi_ > 0)
    out[edge] = eps[edge] ** 2 / 4.0 * np.pi**2 / 6.0 * hi_[edge]
    gen = (lo_ > 0) & (lo_ != hi_)
    if gen.any():
        r = lo_[gen] / hi_[gen]
        ell = np.log(r)
        # beta_1(r, 1) = (r/4) * int_ell^0 [...] dw, with the r factor in the integrand
        val = _adaptive(_beta_integrand, ell, np.zeros(ell.size), [ell, r], width=2.0)
        out[gen] = eps[gen] ** 2 * hi_[gen] * 0.25 * val
    return _out(out.reshape(shape))


def _hneg_weighted(s, Q):
    return _f(h_kernel(-s)) * (1.0 - s / Q)


_HH_CUT = 40.0


def _hh_G(Q):
    """``G(Q) = int_0^1 h(-lam |Q|) (1 - lam) dlam`` for ``Q != 0``."""
    aq = np.abs(Q)
    top = np.minimum(aq, _HH_CUT)
    val = _adaptive(_hneg_weighted, np.zeros(aq.size), top, [aq], width=2.0,
                    atol=1e-16, rtol=1e-13)
    return val / aq


def hh_kernel(a, b, q, eps):
    """``int_0^1 [a h(lam q/eps) + b h(-lam q/eps)] (1 - lam) dlam``."""
    shape = np.broadcast(_f(a), _f(b), _f(q), _f(eps)).shape
    a, b, q, eps = (np.ravel(v).astype(float) for v in np.broadcast_arrays(a, b, q, eps))
    Q = q / eps
    hpos = np.full(Q.size, 0.25)  # int h(lam Q)(1-lam)
    nz = Q != 0
    if nz.any():
        G = _hh_G(Q[nz])
        hpos[nz] = np.where(Q[nz] > 0, 0.5 - G, G)
    out = a * hpos + b * (0.5 - hpos)
    return _out(out.reshape(shape))
