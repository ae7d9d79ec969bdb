import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from parahyp.model import default_model, linear_model
from parahyp.noise import sample_noise
from parahyp.solver_mu import (
    AdaptednessError,
    BoundaryData,
    CompatibilityError,
    SpectralSetup,
    duhamel_map,
    ensemble_noise,
    etd_weights,
    initial_coeffs,
    relative_energy_check,
    solve_boundary_lift,
    solve_first_approx,
    star_norm,
    uniform_energy,
)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.0, 400.0), h=st.floats(1e-4, 0.1))
def test_etd_weights_match_quadrature(lam, h):
    e, w0, w1 = etd_weights(np.array([lam]), h)
    ref0 = quad(lambda s: np.exp(-lam * (h - s)) * (1 - s / h), 0, h, epsabs=1e-15)[0]
    ref1 = quad(lambda s: np.exp(-lam * (h - s)) * (s / h), 0, h, epsabs=1e-15)[0]
    assert e[0] == pytest.approx(np.exp(-lam * h), rel=1e-14)
    assert w0[0] == pytest.approx(ref0, rel=1e-10, abs=1e-15)
    assert w1[0] == pytest.approx(ref1, rel=1e-10, abs=1e-15)


def test_etd_series_branch_continuous():
    # the series and closed form must agree at the switch point z = 0.2
    h = 1.0
    z = np.array([0.2 - 1e-12, 0.2 + 1e-12])
    _, w0, w1 = etd_weights(z, h)
    assert abs(w0[0] - w0[1]) < 1e-11
    assert abs(w1[0] - w1[1]) < 1e-11


def test_heat_only_matches_matrix_exponential():
    # linear flux-free model with constant diffusion: the mild solution is
    # exp(T (-A + c d''^2)) u0 on every x' mode
    eps, mu, c = 0.1, 0.01, 0.5
    m = linear_model(diffusion=c)
    t = np.linspace(0, 0.25, 251)
    run, rep = solve_first_approx(m, eps, mu, sample_noise(1, 0, t), modes=(16, 16),
                                  stride=250)
    assert rep.converged
    op = SpectralSetup.build(m, eps, mu, (16, 16)).op
    x1, x2 = op.grid
    c0 = op.from_grid(m.u0(x1[:, None], x2[None, :]))
    Q = op.second.quadrature_matrix(1) * op.second.weights
    second_stiff = -(Q @ op.second.quadrature_matrix(1).T)
    ref = np.empty_like(c0)
    for k in range(16):
        gen = -op.first.eigenvalues[k] * np.eye(16) - np.diag(op.second.eigenvalues) \
            + c * second_stiff
        ref[k] = expm(0.25 * gen) @ c0[k]
    assert np.abs(run.coeffs[0, -1] - ref).max() < 1e-6


def _data(ramp=lambda t: t, dramp=lambda t: np.ones_like(np.asarray(t, float))):
    return BoundaryData(lambda x: np.cos(np.pi * x), lambda x: -np.pi * np.sin(np.pi * x),
                        ramp, dramp)


def test_lift_compatibility(model):
    setup = SpectralSetup.build(model, 0.1, 0.01, (8, 8))
    t = np.linspace(0, 0.1, 11)
    bad = _data(ramp=lambda t: 1.0 + 0 * t, dramp=lambda t: 0 * t)
    with pytest.raises(CompatibilityError):
        solve_boundary_lift(setup, bad, t)
    lift = solve_boundary_lift(setup, bad, t, strict=False)
    assert np.isfinite(lift.z).all()
    good = solve_boundary_lift(setup, _data(), t)
    assert np.all(good.z[0] == 0.0)
    # the lift reproduces the boundary data on the clamped faces
    x1 = np.linspace(0, 1, 7)
    vals = good.values(10, x1, np.array([0.0, 1.0]))
    np.testing.assert_allclose(vals, np.outer(0.1 * np.cos(np.pi * x1), [1.0, 1.0]),
                               atol=1e-12)


def test_duhamel_map_is_adapted(model):
    # perturbing increments after step n leaves samples 0..n bit-identical
    setup = SpectralSetup.build(model, 0.1, 0.01, (8, 8))
    t = np.linspace(0, 0.05, 51)
    nz = sample_noise(3, model.K, t)
    v = np.broadcast_to(initial_coeffs(model, setup), (t.size,) + setup.shape)
    base = duhamel_map(model, setup, v, nz, v_times=t)
    n = 20
    inc = nz.increments.copy()
    inc[:, n:] += np.random.default_rng(0).normal(size=inc[:, n:].shape)
    moved = duhamel_map(model, setup, v, nz.with_increments(inc), v_times=t)
    np.testing.assert_array_equal(base[:, :n + 1], moved[:, :n + 1])
    assert not np.array_equal(base[:, n + 1:], moved[:, n + 1:])


def test_duhamel_map_rejects_foreign_grid(model):
    setup = SpectralSetup.build(model, 0.1, 0.01, (8, 8))
    t = np.linspace(0, 0.05, 51)
    nz = sample_noise(3, model.K, t)
    v = np.zeros((t.size,) + setup.shape)
    with pytest.raises(AdaptednessError):
        duhamel_map(model, setup, v, nz, v_times=t * 1.01)
    with pytest.raises(AdaptednessError):
        duhamel_map(model, setup, v[:-1], nz)


def test_picard_converges_and_is_a_fixed_point(model):
    t = np.linspace(0, 0.1, 101)
    noise = ensemble_noise(2, 2, model.K, t)
    setup = SpectralSetup.build(model, 0.1, 0.01, (12, 12))
    run, rep = solve_first_approx(model, 0.1, 0.01, noise, setup=setup, window=0.05,
                                  output_grid=(8, 8))
    assert rep.converged and rep.contraction < 1.0
    assert rep.windows == 2
    # the stored coefficients are a fixed point of the Duhamel map
    image = duhamel_map(model, setup, run.coeffs, noise, v_times=t)
    assert np.abs(image - run.coeffs).max() < 1e-8
    assert np.isfinite(uniform_energy(run))


def test_star_norm_zero_and_scaling(rng):
    setup = SpectralSetup.build(default_model(), 0.1, 0.01, (6, 6))
    t = np.linspace(0, 0.1, 11)
    assert star_norm(setup, np.zeros((2, 11, 6, 6)), t) == 0.0
    d = rng.normal(size=(2, 11, 6, 6))
    assert star_norm(setup, 3 * d, t) == pytest.approx(3 * star_norm(setup, d, t), rel=1e-12)


def test_relative_energy_identity_small(model):
    setup = SpectralSetup.build(model, 0.1, 0.01, (8, 8))
    t = np.linspace(0, 0.05, 51)
    noise = ensemble_noise(4, 200, model.K, t)
    x1, x2 = setup.op.grid
    u0 = model.u0(x1[:, None], x2[None, :])
    v1 = np.broadcast_to(u0, (t.size,) + u0.shape)
    v2 = 0.5 * v1
    terms = relative_energy_check(model, setup, v1, v2, noise, on_grid=True)
    mean_lhs = np.mean(terms.lhs)
    with_corr = abs(terms.mean_defect(True))
    without = abs(terms.mean_defect(False))
    assert with_corr < 0.2 * mean_lhs
    assert without > with_corr
