import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahyp.spectral import (SpectralField, build_modes_1d, intermediate_norm, semigroup_apply,
                              smoothing_sup, tensorize)


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


# independent oracle: plain bisection on cos(k) cosh(k) - 1, scaled by exp(-k)
BEAM = [_bisect(lambda k: np.exp(-k) * (np.cos(k) * np.cosh(k) - 1.0), lo, hi)
        for lo, hi in ((4.0, 5.5), (7.0, 8.5))]


def test_beam_oracle_values_frozen():
    assert BEAM[0] == pytest.approx(4.730040745, abs=1e-9)
    assert BEAM[1] == pytest.approx(7.853204624, abs=1e-9)


def test_clamped_wavenumbers_match_oracle():
    modes = build_modes_1d("clamped", 0.0, 1.0, 1.0, 2)
    np.testing.assert_allclose(modes.wavenumbers, BEAM, atol=1e-8)


def test_clamped_boundary_conditions_and_ode_residual():
    eps, mu = 0.1, 0.01
    m = build_modes_1d("clamped", eps, mu, 1.0, 6)
    ends = np.array([0.0, 1.0])
    assert np.abs(m.values(ends)).max() < 1e-8
    assert np.abs(m.derivative(ends, 1)).max() < 1e-8 * m.wavenumbers.max()
    x = np.linspace(0.05, 0.95, 41)
    res = mu * m.derivative(x, 4) - eps * m.derivative(x, 2) - m.eigenvalues[:, None] * m.values(x)
    assert np.abs(res).max() / m.eigenvalues.max() < 1e-6


@pytest.mark.parametrize("kind,eps,mu", [("neumann", 0.1, 0.0), ("dirichlet", 0.1, 0.0),
                                         ("clamped", 0.1, 0.01)])
def test_modes_are_orthonormal(kind, eps, mu):
    m = build_modes_1d(kind, eps, mu, 1.0, 12)
    np.testing.assert_allclose(m.gram(), np.eye(12), atol=1e-10)
    assert np.all(np.diff(m.eigenvalues) >= 0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_modes_1d("periodic", 0.1, 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        build_modes_1d("clamped", 0.1, 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        build_modes_1d("neumann", 0.1, 0.0, 1.0, 0)


@pytest.mark.parametrize("s", [0.25, 0.5, 1.0])
def test_smoothing_bound(s):
    op = tensorize(build_modes_1d("neumann", 0.1, 0.0, 1.0, 24),
                   build_modes_1d("clamped", 0.1, 0.01, 1.0, 24))
    for t in np.logspace(-4, 0, 10):
        assert smoothing_sup(op.eigenvalues, s, t) <= (s / np.e) ** s * t ** (-s) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_semigroup_property(t1, t2):
    op = tensorize(build_modes_1d("neumann", 0.1, 0.0, 1.0, 6),
                   build_modes_1d("dirichlet", 0.1, 0.0, 1.0, 6))
    c = SpectralField(np.random.default_rng(0).normal(size=op.shape), op)
    a = semigroup_apply(op, t1 + t2, c).coeffs
    b = semigroup_apply(op, t2, semigroup_apply(op, t1, c)).coeffs
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    # contraction in every intermediate norm
    assert intermediate_norm(semigroup_apply(op, t1, c), 0.5) <= intermediate_norm(c, 0.5) + 1e-12


def test_grid_roundtrip():
    op = tensorize(build_modes_1d("neumann", 0.1, 0.0, 1.0, 8),
                   build_modes_1d("clamped", 0.1, 0.01, 1.0, 8))
    c = np.random.default_rng(1).normal(size=op.shape)
    np.testing.assert_allclose(op.from_grid(op.to_grid(c)), c, atol=1e-10)


def test_semigroup_rejects_negative_time():
    op = tensorize(build_modes_1d("neumann", 0.1, 0.0, 1.0, 2),
                   build_modes_1d("dirichlet", 0.1, 0.0, 1.0, 2))
    with pytest.raises(ValueError):
        semigroup_apply(op, -1.0, SpectralField(np.zeros(op.shape), op))
