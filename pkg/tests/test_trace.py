import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from parahyp.fields import FieldPath
from parahyp.kinetic import Bump1D, TestFunction
from parahyp.noise import sample_noise
from parahyp.trace import (
    BoundaryLayer,
    DMField,
    ResolutionError,
    chi_gap,
    dirichlet_condition_functional,
    dirichlet_trace_check,
    gauss_green,
    graph_deformation,
    strong_trace_gamma_prime,
    translation,
    weak_normal_trace,
)


def _run(values, n1=32, n2=16, T=0.1):
    times = np.linspace(0, T, values.shape[1])
    x1 = (np.arange(n1) + 0.5) / n1
    x2 = (np.arange(n2) + 0.5) / n2
    return FieldPath(times, x1, x2, values, {"h1": 1 / n1, "h2": 1 / n2})


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(0.01, 0.5), L1=st.floats(1.0, 3.0), L2=st.floats(1.0, 3.0))
def test_layer_total_variation(delta, L1, L2):
    # along separated faces the layer has |grad zeta| = 1/delta on a strip of width delta
    for layer in (BoundaryLayer.gamma_prime(delta, (L1, L2)),
                  BoundaryLayer.gamma_dprime(delta, (L1, L2))):
        assert layer.total_variation() == pytest.approx(layer.piece_area(), rel=1e-12)


def test_whole_boundary_total_variation_loses_corners():
    # on the unit square every strip narrows by 2t, giving 4 (1 - delta)
    for delta in (0.05, 0.2, 0.5):
        layer = BoundaryLayer.whole(delta, (0.0, 0.0), (1.0, 1.0))
        assert layer.total_variation() == pytest.approx(4 * (1 - delta), rel=1e-12)


def test_layer_profile_and_gradient():
    layer = BoundaryLayer.gamma_prime(0.1)
    x = np.array([[0.05, 0.5], [0.5, 0.5], [0.97, 0.01]])
    np.testing.assert_allclose(layer.zeta(x), [0.5, 1.0, 0.3])
    np.testing.assert_allclose(layer.grad_zeta(x), [[10, 0], [0, 0], [-10, 0]])
    with pytest.raises(ValueError):
        BoundaryLayer.gamma_prime(0.6)


# F = (x^2 y, y^2 + x), div F = 2xy + 2y on [0,1] x [0,2]; g = 1 + xy
FIELD = DMField(lambda x: np.stack([x[..., 0] ** 2 * x[..., 1], x[..., 1] ** 2 + x[..., 0]], -1),
                lambda x: 2 * x[..., 0] * x[..., 1] + 2 * x[..., 1], (0.0, 0.0), (1.0, 2.0))
G = lambda x: 1 + x[..., 0] * x[..., 1]
G_GRAD = lambda x: np.stack([x[..., 1], x[..., 0]], -1)


def test_gauss_green_matches_independent_quadrature():
    def integrand(y, x):
        p = np.array([x, y])
        return G_GRAD(p) @ FIELD(p) + G(p) * FIELD.divergence(p)
    ref = dblquad(integrand, 0, 1, 0, 2, epsabs=1e-13)[0]
    assert gauss_green(FIELD, G, G_GRAD) == pytest.approx(ref, rel=1e-12)


def test_weak_normal_trace_limit_is_boundary_flux():
    layer = BoundaryLayer.whole(0.4, FIELD.lower, FIELD.upper)
    tr = weak_normal_trace(FIELD, layer, G)
    assert tr.limit == pytest.approx(gauss_green(FIELD, G, G_GRAD), rel=1e-9)
    assert np.all(np.diff(tr.deltas) < 0)


def test_constant_field_trace_is_exact():
    vals = np.broadcast_to(np.linspace(0, 1, 16)[None, None, None, :], (2, 5, 32, 16)).copy()
    run = _run(vals)
    rec = strong_trace_gamma_prime(run, [0.25, 0.125, 0.0625])
    assert np.all(rec.cauchy == 0.0)
    np.testing.assert_allclose(rec.trace[:, :, 0], vals[:, :, 0])
    rec2 = strong_trace_gamma_prime(run, [0.2, 0.1], graph_deformation)
    assert np.all(rec2.cauchy == 0.0)
    assert np.all(chi_gap(run, [0.25, 0.0625]) == 0.0)


def test_linear_profile_cauchy_distance():
    # u = x', the trace at depth s is s on one side and 1 - s on the other
    x1 = (np.arange(32) + 0.5) / 32
    vals = np.broadcast_to(x1[None, None, :, None], (1, 3, 32, 16)).copy()
    rec = strong_trace_gamma_prime(_run(vals), [0.25, 0.125])
    # both sides contribute |0.25 - 0.125| over x'' in (0,1) and t in (0, 0.1)
    assert rec.cauchy[0, 0, 1] == pytest.approx(2 * 0.125 * 0.1, rel=1e-12)
    np.testing.assert_allclose(translation(0.3, np.zeros(4)), 0.3)


def test_trace_argument_checks():
    run = _run(np.zeros((1, 3, 32, 16)))
    with pytest.raises(ValueError):
        strong_trace_gamma_prime(run, [0.1, 0.2])
    with pytest.raises(ValueError):
        strong_trace_gamma_prime(run, [0.5, 0.1])
    with pytest.raises(ResolutionError):
        strong_trace_gamma_prime(run, [0.2, 0.05])


def test_dirichlet_checks_vanish_on_matching_data(model):
    vals = np.ones((2, 11, 32, 16))
    run = _run(vals)
    bc = lambda t, x1: np.ones_like(np.asarray(x1, float))
    assert dirichlet_trace_check(run, model, bc) == 0.0
    noise = [sample_noise(s, model.K, run.times) for s in (1, 2)]
    phi = TestFunction(Bump1D(0.01, 0.09), None, Bump1D(-0.5, 0.5))
    out = dirichlet_condition_functional(model, run, 1.0, phi, noise)
    np.testing.assert_array_equal(out, 0.0)
