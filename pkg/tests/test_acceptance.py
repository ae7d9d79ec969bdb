"""The fifteen acceptance criteria at their stated tolerances and runtime limits.

Run alone with ``pytest tests/test_acceptance.py`` (or ``python
tests/test_acceptance.py``); a PASS/FAIL line per criterion is printed in
the terminal summary. Every test is marked ``slow``.
"""
import time

import numpy as np
import pytest
from scipy.linalg import expm

from parahyp.averaging import degenerate_model, multiplier_decomposition, nondegeneracy_scan
from parahyp.kinetic import Bump1D, TestFunction, entropy_residual, kinetic_measure, \
    kinetic_residual, l1_contraction
from parahyp.model import default_model, linear_model
from parahyp.noise import path_seed, sample_noise
from parahyp.solver_eps import SchemeParams, comparison_check, solve_second_approx
from parahyp.solver_mu import SpectralSetup, ensemble_noise, relative_energy_check, \
    solve_first_approx
from parahyp.spectral import build_modes_1d, smoothing_sup
from parahyp.trace import BoundaryLayer, DMField, gauss_green, graph_deformation, \
    strong_trace_gamma_prime, weak_normal_trace

pytestmark = pytest.mark.slow

MODEL = default_model()


@pytest.fixture
def record(acceptance_log):
    """Log one line for a criterion and assert its verdict and runtime."""
    def _record(number, title, passed, elapsed, limit, detail=""):
        ok = bool(passed) and elapsed < limit
        line = (f"C{number} {'PASS' if ok else 'FAIL'} {title}: {detail} "
                f"({elapsed:.1f} s, limit {limit:g} s)")
        acceptance_log.append(line)
        print(line)
        assert passed, line
        assert elapsed < limit, line
    return _record


def _l1_space_time(a, b):
    """Per-path ``int_0^T int |a - b| dx dt`` on a unit box."""
    return np.trapezoid(np.abs(a.values - b.values).mean(axis=(2, 3)), a.times, axis=1)


def _bisect(f, lo, hi, tol=1e-14):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_c01_clamped_beam_spectrum(record):
    t0 = time.perf_counter()
    oracle = [_bisect(lambda k: np.exp(-k) * (np.cos(k) * np.cosh(k) - 1.0), lo, hi)
              for lo, hi in ((4.0, 5.5), (7.0, 8.5))]
    modes = build_modes_1d("clamped", 0.0, 1.0, 1.0, 2)
    err = float(np.max(np.abs(modes.wavenumbers - oracle)))
    x = np.linspace(0.0, 1.0, 201)
    phi, phi4 = modes.values(x), modes.derivative(x, 4)
    k4 = modes.wavenumbers[:, None] ** 4
    resid = float(np.max(np.abs(phi4 - k4 * phi)) / np.max(k4 * np.abs(phi)))
    el = time.perf_counter() - t0
    record(1, "clamped-beam spectrum", err <= 1e-8 and resid <= 1e-6, el, 1,
           f"k = {modes.wavenumbers[0]:.9f}, {modes.wavenumbers[1]:.9f}; "
           f"|k - oracle| = {err:.1e}; ODE residual {resid:.1e}")


def test_c02_smoothing_bound(record):
    t0 = time.perf_counter()
    lam = SpectralSetup.build(MODEL, 0.1, 0.01, (32, 32)).lam
    worst = 0.0
    for s in (0.25, 0.5, 1.0):
        for t in np.logspace(-4, 0, 10):
            bound = (s / np.e) ** s * t ** (-s)
            worst = max(worst, smoothing_sup(lam, s, t) / bound)
    el = time.perf_counter() - t0
    record(2, "smoothing bound", worst <= 1 + 1e-12, el, 1,
           f"max sup/bound = {worst:.6f}")


def _series_solution(model, eps, c, T, x1, x2, terms=30):
    xg, wg = np.polynomial.legendre.leggauss(200)
    xg, wg = (xg + 1) / 2, wg / 2
    U = model.u0(xg[:, None], xg[None, :])
    out = np.zeros((x1.size, x2.size))
    for j in range(terms):
        nj = 1.0 if j == 0 else np.sqrt(2)
        for k in range(1, terms):
            a = (wg * nj * np.cos(j * np.pi * xg)) @ U @ (wg * np.sqrt(2) * np.sin(k * np.pi * xg))
            decay = np.exp(-T * (eps * (j * np.pi) ** 2 + (c + eps) * (k * np.pi) ** 2))
            out += a * decay * np.outer(nj * np.cos(j * np.pi * x1),
                                        np.sqrt(2) * np.sin(k * np.pi * x2))
    return out


def test_c03_linear_oracle(record):
    t0 = time.perf_counter()
    eps, mu, c, T = 0.1, 0.01, 0.5, 0.25
    lin = linear_model(diffusion=c)
    sc = SchemeParams(n1=128, n2=128, dt=1.25e-4, T=T)
    run = solve_second_approx(lin, eps, sample_noise(0, 0, sc.times()), sc, stride=sc.steps)
    exact = _series_solution(lin, eps, c, T, run.x1, run.x2)
    l2 = float(np.sqrt(np.mean((run.values[0, -1] - exact) ** 2)))
    # heat-only fixed point against the matrix exponential of each x' block
    times = np.linspace(0, T, 251)
    fp, rep = solve_first_approx(lin, eps, mu, sample_noise(1, 0, times), modes=(16, 16),
                                 stride=250)
    op = SpectralSetup.build(lin, eps, mu, (16, 16)).op
    x1, x2 = op.grid
    c0 = op.from_grid(lin.u0(x1[:, None], x2[None, :]))
    Q = op.second.quadrature_matrix(1) * op.second.weights
    stiff = -(Q @ op.second.quadrature_matrix(1).T)
    ref = np.stack([expm(T * (-op.first.eigenvalues[k] * np.eye(16)
                              - np.diag(op.second.eigenvalues) + c * stiff)) @ c0[k]
                    for k in range(16)])
    heat = float(np.abs(fp.coeffs[0, -1] - ref).max())
    el = time.perf_counter() - t0
    record(3, "linear oracle", l2 <= 1e-4 and heat <= 1e-6 and rep.converged, el, 60,
           f"finite-volume L2 error {l2:.2e}; heat-only fixed point error {heat:.2e}")


def test_c04_maximum_principle(record):
    t0 = time.perf_counter()
    overshoot = []
    for n, dt in ((32, 1e-3), (64, 5e-4)):
        sc = SchemeParams(n1=n, n2=n, dt=dt, T=0.25)
        bounds = [np.inf, -np.inf]

        def watch(k, ta, tb, u, new, sl):
            bounds[0] = min(bounds[0], float(new.min()))
            bounds[1] = max(bounds[1], float(new.max()))
        solve_second_approx(MODEL, 0.1, ensemble_noise(3, 200, MODEL.K, sc.times()), sc,
                            stride=sc.steps, observer=watch, chunk=50)
        overshoot.append(max(0.0, -bounds[0], bounds[1] - 1.0))
    el = time.perf_counter() - t0
    ok = overshoot[0] <= 1e-3 and overshoot[1] <= 1e-3 and overshoot[1] <= overshoot[0]
    record(4, "maximum principle", ok, el, 600,
           f"overshoot {overshoot[0]:.1e} (n = 32), {overshoot[1]:.1e} (n = 64)")


def test_c05_comparison(record):
    t0 = time.perf_counter()
    sc = SchemeParams(n1=32, n2=32, dt=1e-3, T=0.25)
    noise = ensemble_noise(5, 100, MODEL.K, sc.times())
    lower = lambda x1, x2: 0.5 * MODEL.u0(x1, x2)
    res = comparison_check(MODEL, 0.1, noise, sc, lower, None, stride=10)
    bound = res.initial.mean() + res.ci95() + 1e-3
    ok = res.sup_violation <= 1e-3 and bool(np.all(res.mean_integral() <= bound))
    el = time.perf_counter() - t0
    record(5, "comparison principle", ok, el, 600,
           f"sup (u - v)+ = {res.sup_violation:.1e}; "
           f"max E int (u - v)+ = {res.mean_integral().max():.1e}")


def test_c06_l1_contraction(record):
    t0 = time.perf_counter()
    sc = SchemeParams(n1=32, n2=32, dt=1e-3, T=0.25)
    noise = ensemble_noise(6, 200, MODEL.K, sc.times())
    mirrored = lambda x1, x2: MODEL.u0(1.0 - x1, x2)      # crosses u0
    res = l1_contraction(MODEL, 0.1, noise, sc, None, mirrored, stride=10, chunk=50)
    el = time.perf_counter() - t0
    record(6, "L1 contraction", res.holds(0.02), el, 600,
           f"E|u0 - v0| = {res.rhs:.4f}, E|u(T) - v(T)| = {res.lhs[-1]:.4f}, "
           f"min margin {res.margin(0.02).min():.1e}")


def test_c07_picard_contraction(record):
    t0 = time.perf_counter()
    times = np.linspace(0, 0.25, 251)
    factors, residuals, ok = [], [], True
    for seed in (1, 2, 3):
        _, rep = solve_first_approx(MODEL, 0.1, 0.01, ensemble_noise(seed, 1, MODEL.K, times),
                                    window=0.05, stride=50)
        factors.append(rep.contraction)
        residuals.append(rep.terminal_residual)
        ok &= rep.converged and rep.contraction < 1 and rep.terminal_residual < 1e-8
    el = time.perf_counter() - t0
    record(7, "Picard contraction", ok, el, 300,
           f"contraction {max(factors):.3f}; terminal residual {max(residuals):.1e}")


def test_c08_relative_energy(record):
    t0 = time.perf_counter()
    setup = SpectralSetup.build(MODEL, 0.1, 0.01, (16, 16))
    x1, x2 = setup.op.grid
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")

    def v(times, amp):
        # differences vanish with their x'' derivative on the clamped faces
        return np.stack([0.5 + 0.1 * np.cos(np.pi * X1)
                         + amp * np.sin(np.pi * X2) ** 4 * np.cos(np.pi * X1 + 3 * t)
                         for t in times])
    fine = [sample_noise(path_seed(11, p), MODEL.K, np.linspace(0, 0.1, 51))
            for p in range(20000)]
    defects, bare = [], []
    for f in (2, 1):
        noise = [nz.coarsen(f) for nz in fine]
        t = noise[0].times
        terms = relative_energy_check(MODEL, setup, v(t, 0.3), v(t, -0.2), noise, on_grid=True)
        defects.append(abs(terms.mean_defect(True)))
        bare.append(abs(terms.mean_defect(False)))
    ratio = defects[0] / defects[1]
    inflation = bare[1] / defects[1]
    el = time.perf_counter() - t0
    record(8, "relative energy identity", 1.5 <= ratio <= 3 and inflation >= 10, el, 300,
           f"defect {defects[0]:.2e} -> {defects[1]:.2e} (ratio {ratio:.2f}); "
           f"without Ito correction x{inflation:.0f}")


def test_c09_kinetic_measure(record):
    t0 = time.perf_counter()
    sc = SchemeParams(n1=32, n2=32, dt=1e-3, T=0.25)
    noise = ensemble_noise(8, 20, MODEL.K, sc.times())
    totals, ok = [], True
    for eps in (0.1, 0.05, 0.025):
        _, meas = kinetic_measure(MODEL, eps, noise, sc)
        ok &= bool(np.all(meas.hist >= 0)) and meas.dominates_n1()
        totals.append(meas.mean_total())
    spread = (max(totals) - min(totals)) / max(totals)
    el = time.perf_counter() - t0
    record(9, "kinetic measure", ok and spread < 0.5, el, 600,
           "E[m] = " + ", ".join(f"{m:.4f}" for m in totals) + f" (spread {spread:.0%})")


TF_KINETIC = TestFunction(Bump1D(0.02, 0.2), Bump1D(0.2, 0.8), Bump1D(0.2, 0.8),
                          Bump1D(0.1, 0.7))
TF_ENTROPY = TestFunction(Bump1D(0.02, 0.2), Bump1D(0.2, 0.8), Bump1D(0.2, 0.8))


def test_c10_kinetic_and_entropy_residuals(record):
    t0 = time.perf_counter()
    # joint refinement dt ~ h on 48 paths driven by one fine noise each
    fine_N = 512
    fine = [sample_noise(path_seed(9, p), MODEL.K, np.linspace(0, 0.25, fine_N + 1))
            for p in range(48)]
    hs, rms = [], []
    for n, f in ((8, 32), (16, 16), (32, 8), (64, 4)):
        sc = SchemeParams(n1=n, n2=n, dt=f * 0.25 / fine_N, T=0.25)
        r = kinetic_residual(MODEL, 0.1, [z.coarsen(f) for z in fine], sc, TF_KINETIC)
        hs.append(1.0 / n)
        rms.append(float(np.sqrt(np.mean(r.defect ** 2))))
    order = float(np.polyfit(np.log(hs), np.log(rms), 1)[0])
    # entropy: convex defect against the linear-entropy discretisation error
    quad = (lambda u: 0.5 * u ** 2, lambda u: u, lambda u: np.ones_like(u))
    linear = (lambda u: u, lambda u: np.ones_like(u), lambda u: np.zeros_like(u))
    sc = SchemeParams(n1=32, n2=32, dt=0.25 / 128, T=0.25)
    worst = np.inf
    for seed in (1, 2, 3):
        nz = sample_noise(path_seed(seed, 0), MODEL.K, sc.times())
        e = entropy_residual(MODEL, 0.1, nz, sc, quad, TF_ENTROPY).defect[0]
        tol = abs(entropy_residual(MODEL, 0.1, nz, sc, linear, TF_ENTROPY,
                                   require_convex=False).defect[0])
        worst = min(worst, e + 10 * tol)
    el = time.perf_counter() - t0
    record(10, "kinetic/entropy residuals", order >= 0.5 and worst >= 0, el, 600,
           f"kinetic order {order:.2f}; min entropy margin {worst:.1e}")


def test_c11_strong_trace(record):
    t0 = time.perf_counter()
    sc = SchemeParams(n1=128, n2=32, dt=1e-3, T=0.25)
    noise = [sample_noise(path_seed(s, 0), MODEL.K, sc.times()) for s in (1, 2, 3)]
    run = solve_second_approx(MODEL, 0.1, noise, sc, stride=10)
    s = 0.25 * 0.5 ** np.arange(5)
    rec = strong_trace_gamma_prime(run, s)
    succ = rec.successive()
    bent = strong_trace_gamma_prime(run, s, graph_deformation)
    h2 = run.x2[1] - run.x2[0]
    gap = np.trapezoid(np.abs(rec.trace - bent.trace).sum(axis=(2, 3)) * h2, run.times, axis=1)
    tolerance = rec.cauchy[:, -2, -1]
    ok = bool(np.all(np.diff(succ) < 0)) and bool(np.all(gap <= tolerance))
    el = time.perf_counter() - t0
    record(11, "strong trace", ok, el, 300,
           "d(2s, s) = " + ", ".join(f"{d:.2e}" for d in succ)
           + f"; deformation gap {gap.max():.1e} <= {tolerance.min():.1e}")


def test_c12_weak_normal_trace(record):
    t0 = time.perf_counter()
    pairs = [
        # F = (x^2 y, y^2 + x), g = 1 + x y on [0,1] x [0,2]
        (lambda x: np.stack([x[..., 0] ** 2 * x[..., 1], x[..., 1] ** 2 + x[..., 0]], -1),
         lambda x: 2 * x[..., 0] * x[..., 1] + 2 * x[..., 1],
         lambda x: 1 + x[..., 0] * x[..., 1],
         lambda x: np.stack([x[..., 1], x[..., 0]], -1), (0.0, 0.0), (1.0, 2.0), 40 / 3),
        # F = (x y^2, -x^3), g = x^2 on [0,1]^2: boundary flux int_0^1 y^2 dy = 1/3
        (lambda x: np.stack([x[..., 0] * x[..., 1] ** 2, -x[..., 0] ** 3], -1),
         lambda x: x[..., 1] ** 2,
         lambda x: x[..., 0] ** 2,
         lambda x: np.stack([2 * x[..., 0], 0 * x[..., 1]], -1), (0.0, 0.0), (1.0, 1.0), 1 / 3),
    ]
    worst = 0.0
    for field, div, g, grad, lo, hi, exact in pairs:
        F = DMField(field, div, lo, hi)
        limit = weak_normal_trace(F, BoundaryLayer.whole(0.25, lo, hi), g).limit
        worst = max(worst, abs(limit - exact), abs(gauss_green(F, g, grad) - exact))
    el = time.perf_counter() - t0
    record(12, "weak normal trace", worst <= 1e-6, el, 1, f"Gauss-Green defect {worst:.1e}")


def test_c13_averaging_decomposition(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    xi = np.linspace(-1, 1, 16)
    w = np.full(16, 2 / 16)
    f = rng.uniform(-1, 1, (96, 96, 96, 16))
    coeffs = (lambda x: np.ones_like(x), lambda x: x[:, None], lambda x: (x ** 2)[:, None, None])
    gammas = np.array([1.0, 2.0, 4.0, 8.0])
    recon, v1 = 0.0, []
    for g in gammas:
        d = multiplier_decomposition(f, xi, w, *coeffs, g, 0.1, 16.0, n_prime=1)
        recon = max(recon, d.reconstruction_error())
        v1.append(d.norms_sq()[0])
    slope = float(np.polyfit(np.log(gammas), np.log(v1), 1)[0])
    v23 = []
    for delta in (0.4, 0.2, 0.1, 0.05):
        d = multiplier_decomposition(f, xi, w, *coeffs, 1.0, delta, 16.0, n_prime=1)
        recon = max(recon, d.reconstruction_error())
        v23.append(d.norms_sq()[1:3])
    monotone = bool(np.all(np.diff(np.array(v23), axis=0) < 0))
    el = time.perf_counter() - t0
    record(13, "averaging decomposition", recon <= 1e-12 and abs(slope - 3) <= 0.2 and monotone,
           el, 120, f"reconstruction {recon:.1e}; gamma slope {slope:.3f}; "
           f"v2, v3 decreasing in delta: {monotone}")


def test_c14_nondegeneracy_scan(record):
    t0 = time.perf_counter()
    base = nondegeneracy_scan(MODEL)
    doubled = nondegeneracy_scan(MODEL, samples=512, xi_points=8192)
    drift = max(abs(doubled.alpha - base.alpha) / base.alpha,
                abs(doubled.beta - base.beta) / base.beta)
    degenerate = nondegeneracy_scan(degenerate_model(MODEL))
    ok = (0 < base.alpha < 1 and base.beta > 0 and drift <= 0.1 and base.nondeg_passed
          and not degenerate.nondeg_passed)
    el = time.perf_counter() - t0
    record(14, "nondegeneracy scan", ok, el, 120,
           f"alpha {base.alpha:.3f}, beta {base.beta:.3f}; drift {drift:.1%}; "
           f"degenerate model passes: {degenerate.nondeg_passed}")


def test_c15_vanishing_viscosity(record):
    t0 = time.perf_counter()
    sc = SchemeParams(n1=32, n2=32, dt=1e-3, T=0.25)
    noise = [sample_noise(path_seed(7, p), MODEL.K, sc.times()) for p in range(50)]
    runs = [solve_second_approx(MODEL, e, noise, sc, stride=10)
            for e in (0.1, 0.05, 0.025, 0.0125)]
    eps_diff = [float(_l1_space_time(a, b).mean()) for a, b in zip(runs, runs[1:])]
    # mu consistency: spectral u^{eps,mu} against the finite-volume u^eps
    noise = [sample_noise(path_seed(5, p), MODEL.K, sc.times()) for p in range(8)]
    ref = solve_second_approx(MODEL, 0.1, noise, sc, stride=10)
    mu_diff = []
    for mu in (1e-1, 1e-2, 1e-3):
        run, _ = solve_first_approx(MODEL, 0.1, mu, noise, stride=10, output_grid=(32, 32))
        mu_diff.append(float(_l1_space_time(run, ref).mean()))
    ok = bool(np.all(np.diff(eps_diff) < 0)) and bool(np.all(np.diff(mu_diff) < 0))
    el = time.perf_counter() - t0
    record(15, "vanishing viscosity", ok, el, 1200,
           "eps: " + ", ".join(f"{d:.2e}" for d in eps_diff)
           + "; mu: " + ", ".join(f"{d:.2e}" for d in mu_diff))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
