"""Acceptance criteria, one test each; every test prints one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from gradflow_fv import special_fn as sf
from gradflow_fv.experiments import StudySpec, run_study
from gradflow_fv.gradstruct import (audit, cosh_diagnostics, fisher, force, kinetic_flux, pairing,
                                    r_dual, r_primal)
from gradflow_fv.reconstruct import bv_bound, bv_seminorm
from gradflow_fv.scheme import SchemeConfig, gibbs_state, sg_flux, solve, stable_dt
from gradflow_fv.tessellation import diffusion_tensor

from conftest import make, random_state

# trajectories gathered by criteria 5, 7 and 8 for criteria 6 and 11
_TRAJ = {}


def _rel(a, b, floor=1e-300):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _meshes():
    return [make(1, 12, "quadratic center=0.3 k=2", "gaussian amplitude=0.5 width=0.3"),
            make(2, 5, "linear g=1,-0.5", "morse Cr=2 lr=0.1 Ca=1 la=0.3")]


# ---------------------------------------------------------------------------

def test_c01_special_functions(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 10_000
    a, b = rng.uniform(0, 10, n), rng.uniform(0, 10, n)
    a[:25], b[25:50] = 0.0, 0.0
    xi = rng.uniform(-5, 5, n)
    eps = rng.choice([0.05, 0.1, 0.2, 0.5, 1.0, 2.0], n)
    pos = (a > 0) & (b > 0)
    fails = []
    v = sf.alpha_star(a, b, xi, eps)
    # (a) convexity bounds on the second derivative
    m = (a > 0) | (b > 0)
    d2 = sf.alpha_star_d2(a[m], b[m], xi[m], eps[m])
    if not (np.all(d2 >= np.minimum(a[m], b[m]) * (1 - 1e-12))
            and np.all(d2 <= np.maximum(a[m], b[m]) * (1 + 1e-12))):
        fails.append("a")
    # (b) one-homogeneity and scaling
    for lam in (0.1, 0.5, 2.0, 10.0):
        if _rel(sf.alpha_star(lam * a, lam * b, xi, eps), lam * v) > 1e-12:
            fails.append(f"b(lambda={lam})")
    if _rel(eps**2 * sf.alpha_star(a, b, xi / eps, 1.0), v) > 1e-12:
        fails.append("b(scaling)")
    # (c) cosh bound
    if not (np.all(v >= 0) and np.all(v <= 0.25 * np.sqrt(a * b) * sf.psi_star(2 * xi, eps)
                                        * (1 + 1e-10) + 1e-300)):
        fails.append("c")
    # (d) eps -> 0 towards alpha_zero, monotone under halving
    z = sf.alpha_zero(a[pos][:2000], b[pos][:2000], xi[pos][:2000])
    devs = [np.abs(sf.alpha_star(a[pos][:2000], b[pos][:2000], xi[pos][:2000], e) - z)
            for e in (0.8, 0.4, 0.2, 0.1, 0.05)]
    if not all(np.all(d1 <= d0 * (1 + 1e-9) + 1e-13) for d0, d1 in zip(devs, devs[1:])):
        fails.append("d")
    # (e) beta as alpha_star at the balancing force; (f) two-sided bounds
    bt = sf.beta(a, b, eps)
    xb = eps[pos] * 0.5 * np.log(a[pos] / b[pos])
    if _rel(bt[pos], sf.alpha_star(a[pos], b[pos], xb, eps[pos])) > 1e-10:
        fails.append("e")
    with np.errstate(invalid="ignore"):
        lower = np.where(a + b > 0, eps**2 / 4 * (a - b) ** 2 / (a + b), 0.0)
    upper = eps**2 / 2 * (np.sqrt(a) - np.sqrt(b)) ** 2
    tol = 1e-12 * (1 + upper)
    if not (np.all(lower <= bt + tol) and np.all(bt <= upper + tol)):
        fails.append("f")
    # (g) second-order expansion around the balancing force
    q = rng.uniform(-3, 3, int(pos.sum()))
    lhs = sf.alpha_star(a[pos], b[pos], xb + q / 2, eps[pos])
    rhs = bt[pos] + eps[pos] / 4 * (a[pos] - b[pos]) * q \
        + q**2 / 4 * sf.hh_kernel(a[pos], b[pos], q, eps[pos])
    if not np.allclose(lhs, rhs, rtol=1e-9, atol=1e-13):
        fails.append("g")
    # Legendre consistency and quadrature self-consistency
    j = sf.alpha_star_d1(a[pos], b[pos], xi[pos], eps[pos])
    dual = sf.alpha_dual(a[pos], b[pos], j, eps[pos]) + v[pos]
    if _rel(dual, j * xi[pos]) > 1e-8:
        fails.append("legendre")
    s = slice(0, 3000)
    fd = (sf.alpha_star(a[s], b[s], xi[s] + 1e-5, eps[s])
          - sf.alpha_star(a[s], b[s], xi[s] - 1e-5, eps[s])) / 2e-5
    if not np.allclose(fd, sf.alpha_star_d1(a[s], b[s], xi[s], eps[s]), rtol=1e-6, atol=1e-7):
        fails.append("fd")
    dt = time.perf_counter() - t0
    ok = not fails and dt < 60
    verdict(1, ok, f"{n} draws, failed={fails or 'none'}, {dt:.1f}s (<60s)")
    assert ok


def test_c02_kinetic_relation(verdict, rng):
    worst = 0.0
    count = 0
    for t, dp in _meshes():
        for _ in range(500):
            rho = random_state(t, rng, 0.05, 5.0)
            eps = float(rng.choice([0.05, 0.2, 1.0]))
            J = sg_flux(t, dp, rho, eps)
            Jk = kinetic_flux(t, rho, force(t, dp, rho, eps), eps)
            worst = max(worst, _rel(J, Jk))
            count += 1
    ok = worst <= 1e-10
    verdict(2, ok, f"max rel |J_SG - 2 tau d alpha*(xi/2)| = {worst:.2e} over {count} states (<=1e-10)")
    assert ok


def test_c03_legendre_fenchel(verdict, rng):
    worst_eq, worst_gap = 0.0, math.inf
    for t, dp in _meshes():
        for _ in range(500):
            rho = random_state(t, rng, 0.05, 5.0)
            eps = float(rng.choice([0.05, 0.2, 1.0]))
            xi = rng.normal(0, 2, t.n_faces)
            J = kinetic_flux(t, rho, xi, eps)
            lhs = r_primal(t, rho, J, eps) + r_dual(t, rho, xi, eps)
            worst_eq = max(worst_eq, abs(lhs - pairing(xi, J)) / max(abs(pairing(xi, J)), 1e-300))
            Jm = rng.normal(0, 1, t.n_faces) * np.max(np.abs(J))
            gap = r_primal(t, rho, Jm, eps) + r_dual(t, rho, xi, eps) - pairing(xi, Jm)
            worst_gap = min(worst_gap, gap / max(1.0, abs(pairing(xi, Jm))))
    ok = worst_eq <= 1e-8 and worst_gap >= -1e-12
    verdict(3, ok, f"dual pairs rel err {worst_eq:.2e} (<=1e-8); min normalised Fenchel gap "
                   f"{worst_gap:.2e} (>=-1e-12) on 1000 pairs each")
    assert ok


def test_c04_fisher_decomposition(verdict, rng):
    worst = 0.0
    for t, dp in _meshes():
        for _ in range(500):
            rho = random_state(t, rng, 0.05, 5.0)
            eps = float(rng.choice([0.05, 0.2, 1.0]))
            f = fisher(t, dp, rho, eps)
            worst = max(worst, abs(f.D - (f.D0 + f.D1 + f.D2)) / max(abs(f.D), 1e-300))
    t, dp = make(2, 8, "double_well")
    D_gibbs = fisher(t, dp, gibbs_state(t, dp.Vh, 0.1), 0.1).D
    ok = worst <= 1e-10 and D_gibbs <= 1e-12
    verdict(4, ok, f"max rel |D - (D0+D1+D2)| = {worst:.2e} (<=1e-10); D(Gibbs) = {D_gibbs:.1e} (<=1e-12)")
    assert ok


def _heat(dt):
    t, dp = make(1, 64)
    x = t.centers[:, 0]
    rho = (1 + 0.8 * np.cos(2 * np.pi * x)) * t.volumes
    cfg = SchemeConfig.sg(0.1, t_end=0.5, dt=dt)
    return solve(t, dp, rho / rho.sum(), cfg)


def test_c05_edb_heat_flow(verdict):
    t, dp = make(1, 64)
    rho0 = np.full(64, 1 / 64)
    dt0 = stable_dt(t, dp, rho0, SchemeConfig.sg(0.1, safety=1.0))
    res, mono = [], []
    for k in range(3):
        tr = _heat(dt0 / 2**k)
        _TRAJ[f"c05_dt{k}"] = tr
        a = audit(tr)
        res.append(abs(a.residual))
        mono.append(a.energy_monotone())
    ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
    ok = res[0] <= 5e-3 and all(1.5 <= r <= 2.5 for r in ratios) and all(mono)
    verdict(5, ok, f"|residual| at stable_dt {res[0]:.3e} (<=5e-3), halving ratios "
                   f"{', '.join(f'{r:.3f}' for r in ratios)} (in [1.5,2.5]), monotone={all(mono)}")
    assert ok


def _study7():
    return StudySpec(study="converge_eps_discrete", V="linear g=1", levels=(16,), T=1.0,
                     eps_list=(0.4, 0.2, 0.1, 0.05), sample_every=0.05, rho0="uniform")


def _study8():
    return StudySpec(study="converge_h", V="quadratic center=0.5 k=1",
                     W="morse Cr=2 lr=0.1 Ca=1 la=0.3", levels=(16, 32, 64, 128), eps=0.1,
                     T=0.5, rho0="cosine amp=0.8 k=1")


def test_c07_eps_limit_discrete(verdict):
    t0 = time.perf_counter()
    rep = run_study(_study7())
    dt = time.perf_counter() - t0
    for i, tr in enumerate(rep.trajectories):
        _TRAJ[f"c07_{i}"] = tr
    e = rep.errors
    ratio = e[-1] / e[0]
    dec = bool(np.all(np.diff(e) < 0))
    ok = dec and ratio <= 0.25 and dt < 300
    verdict(7, ok, f"sup-TV errors {', '.join(f'{v:.4f}' for v in e)}; decreasing={dec}; "
                   f"final/initial {ratio:.4f} (<=0.25); {dt:.1f}s (<300s)")
    assert ok


def test_c08_h_limit(verdict):
    rep = run_study(_study8())
    for i, tr in enumerate(rep.trajectories):
        _TRAJ[f"c08_{i}"] = tr
    e = rep.errors[:-1]
    o = rep.orders[1:-1]
    dec = bool(np.all(np.diff(e) < 0))
    ok = dec and bool(np.all(o >= 0.8)) and rep.checks["edb_bounded"]
    verdict(8, ok, f"L1 errors {', '.join(f'{v:.3e}' for v in e)}; orders "
                   f"{', '.join(f'{v:.3f}' for v in o)} (>=0.8); EDB bounded={rep.checks['edb_bounded']}")
    assert ok


def test_c09_upwind_to_aggregation(verdict):
    spec = StudySpec(study="upwind_to_aggregation", dim=2, box=((0, 1), (0, 1)), levels=(8, 16, 32),
                     W="gaussian amplitude=1 width=0.25", rho0="gaussian center=0.45,0.55 width=0.15",
                     T=1.0)
    rep = run_study(spec)
    gaps = [r.extra["fisher_gap"] for r in rep.rows]
    weak = rep.errors[:-1]
    ok = rep.checks["fisher_gap_decreasing"] and rep.checks["weak_errors_decreasing"]
    verdict(9, ok, f"Fisher gaps {', '.join(f'{g:.3e}' for g in gaps)}; weak-* errors "
                   f"{', '.join(f'{w:.3e}' for w in weak)}; both decreasing={ok}")
    assert ok


def test_c10_diffusion_tensor(verdict):
    worst = 0.0
    for dim, n in ((1, 16), (2, 8), (3, 5)):
        t, _ = make(dim, n)
        nb = np.bincount(t.faces.ravel(), minlength=t.n_cells)
        T = diffusion_tensor(t)[nb == 2 * dim]
        worst = max(worst, float(np.max(np.abs(T - 2 * np.eye(dim)))))
    ok = worst <= 1e-14
    verdict(10, ok, f"max |T - 2 Id| on interior Cartesian cells (1D/2D/3D) = {worst:.1e} (<=1e-14)")
    assert ok


def test_c12_cosh(verdict, rng):
    db, ident = 0.0, 0.0
    for t, dp in _meshes():
        for _ in range(500):
            rho = random_state(t, rng, 0.05, 5.0)
            c = cosh_diagnostics(t, dp, rho, float(rng.choice([0.05, 0.2, 1.0])))
            db = max(db, c.detailed_balance_residual)
            ident = max(ident, c.identity_residual_rel)
    bounds = []
    for n in (8, 16, 32, 64):
        t, dp = make(2, n, "quadratic center=0.5,0.5 k=1", "gaussian amplitude=0.5 width=0.3")
        bounds.append(cosh_diagnostics(t, dp, np.full(t.n_cells, 1 / t.n_cells), 0.2).kernel_bound)
    ch = [abs(bounds[i + 1] / bounds[i] - 1) for i in range(len(bounds) - 1)]
    stable = all(math.isfinite(b) for b in bounds) and max(ch) <= 0.1
    ok = db <= 1e-12 and ident <= 1e-10 and stable
    verdict(12, ok, f"detailed balance {db:.1e} (<=1e-12); J_SG identity rel {ident:.1e} (<=1e-10); "
                    f"kernel bounds {', '.join(f'{b:.4f}' for b in bounds)} (stable={stable})")
    assert ok


def _ensure_trajectories():
    if not any(k.startswith("c05") for k in _TRAJ):
        for k in range(2):
            t, dp = make(1, 64)
            dt0 = stable_dt(t, dp, np.full(64, 1 / 64), SchemeConfig.sg(0.1, safety=1.0))
            _TRAJ[f"c05_dt{k}"] = _heat(dt0 / 2**k)
    if not any(k.startswith("c07") for k in _TRAJ):
        for i, tr in enumerate(run_study(_study7()).trajectories):
            _TRAJ[f"c07_{i}"] = tr
    if not any(k.startswith("c08") for k in _TRAJ):
        for i, tr in enumerate(run_study(_study8()).trajectories):
            _TRAJ[f"c08_{i}"] = tr


def test_c06_conservation_positivity(verdict, rng):
    _ensure_trajectories()
    trajs = list(_TRAJ.values())
    # randomized auto-dt sweep on top of the study trajectories
    for seed in range(12):
        r = np.random.default_rng(seed)
        dim = 1 + seed % 2
        t, dp = make(dim, 24 if dim == 1 else 7, "quadratic center=" + ",".join(["0.3"] * dim) + " k=3",
                     "morse Cr=2 lr=0.1 Ca=1 la=0.3" if seed % 3 else "gaussian amplitude=-1 width=0.2")
        cfg = SchemeConfig.sg(float(r.choice([0.02, 0.1, 0.5])), t_end=0.05) if seed % 4 else \
            SchemeConfig.upwind(t_end=0.05)
        trajs.append(solve(t, dp, random_state(t, r, 0.0, 2.0), cfg))
    drift = max(float(np.max(np.abs(tr.masses - tr.masses[0]))) for tr in trajs)
    neg = min(float(tr.states.min()) for tr in trajs)
    ok = drift <= 1e-12 and neg >= 0
    verdict(6, ok, f"max mass drift {drift:.1e} (<=1e-12); min mass {neg:.2e} (>=0) over "
                   f"{len(trajs)} trajectories")
    assert ok


def test_c11_bv_bound(verdict):
    _ensure_trajectories()
    n_states, worst = 0, 0.0
    for key, tr in _TRAJ.items():
        eps = tr.config.eps
        if eps == 0:
            continue  # the BV estimate needs diffusion
        t = tr.tess
        for rho in tr.states:
            bound = bv_bound(t, rho, eps)
            bv = bv_seminorm(t, rho)
            worst = max(worst, bv / bound if bound > 0 else (0.0 if bv == 0 else math.inf))
            n_states += 1
    ok = n_states > 0 and worst <= 1 + 1e-12
    verdict(11, ok, f"max BV / bound = {worst:.4f} (<=1) over {n_states} recorded SG states "
                    f"of criteria 5, 7, 8")
    assert ok
