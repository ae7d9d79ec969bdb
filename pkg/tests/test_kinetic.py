import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from parahyp.kinetic import (
    Bump1D,
    ConvexityError,
    SupportError,
    TestFunction,
    _PrimitiveTable,
    chi,
    entropy_residual,
    kinetic_measure,
    kinetic_residual,
    l1_contraction,
)
from parahyp.noise import sample_noise
from parahyp.solver_eps import SchemeParams
from parahyp.solver_mu import ensemble_noise

TF = TestFunction(Bump1D(0.02, 0.2), Bump1D(0.2, 0.8), Bump1D(0.2, 0.8), Bump1D(0.1, 0.7))


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-2.0, 2.0))
def test_chi_integrates_to_state(u):
    xi = np.linspace(-3, 3, 600001)
    integral = np.sum(chi(xi, u)) * (xi[1] - xi[0])
    assert integral == pytest.approx(u, abs=2e-5)
    assert set(np.unique(chi(xi, u))) <= {-1, 0, 1}


@settings(max_examples=30, deadline=None)
@given(lo=st.floats(-1.0, 1.0), width=st.floats(0.05, 2.0), x=st.floats(-2.0, 4.0))
def test_bump_antiderivative(lo, width, x):
    b = Bump1D(lo, lo + width)
    ref = quad(b, lo - 1.0, x, points=[lo, lo + width], limit=200)[0]
    assert b.antiderivative(x) == pytest.approx(ref, abs=1e-10)


def test_bump_derivatives_and_cell_averages():
    b = Bump1D(0.2, 0.8)
    x = np.linspace(0.0, 1.0, 20001)
    for order in range(3):
        num = np.gradient(b(x, order), x)
        np.testing.assert_allclose(num[1:-1], b(x, order + 1)[1:-1],
                                   atol=1e-3 * np.abs(b(x, order + 1)).max())
    edges = np.linspace(0, 1, 11)
    avg = b.cell_average(edges)
    ref = [quad(b, a, c)[0] / (c - a) for a, c in zip(edges[:-1], edges[1:])]
    np.testing.assert_allclose(avg, ref, atol=1e-12)
    assert b(0.2, 3) == 0.0 and b(0.8, 2) == 0.0


def test_primitive_table_accuracy():
    f = lambda u: np.sin(3 * u) * u ** 2
    tab = _PrimitiveTable(f, -1.0, 2.0)
    u = np.linspace(-1, 2, 37)
    ref = np.array([quad(f, -1.0, v)[0] for v in u])
    np.testing.assert_allclose(tab(u), ref, atol=1e-10)


def test_constant_state_has_zero_defect(model):
    sc = SchemeParams(T=0.25)
    z = sample_noise(0, model.K, sc.times())
    r = kinetic_residual(model, 0.1, z, sc, TF, u0=lambda a, b: 1.0 + 0 * a,
                         boundary=lambda t, x: 1.0 + 0 * x)
    # g_k(1) = 0 and a constant state has no parabolic flux
    assert np.abs(r.defect).max() < 1e-12


def test_measure_dominates_parabolic_part(model):
    sc = SchemeParams(n1=16, n2=16, T=0.1)
    _, meas = kinetic_measure(model, 0.1, ensemble_noise(1, 2, model.K, sc.times()), sc)
    assert meas.dominates_n1()
    assert np.all(meas.hist >= 0) and meas.mean_total() > 0


def test_support_and_convexity_checks(model):
    sc = SchemeParams(n1=8, n2=8, T=0.01)
    z = sample_noise(0, model.K, sc.times())
    with pytest.raises(SupportError):
        kinetic_residual(model, 0.1, z, sc, TestFunction(None, None, Bump1D(0.2, 0.8),
                                                         Bump1D(0.1, 0.7)))
    with pytest.raises(SupportError):
        kinetic_residual(model, 0.1, z, sc, TestFunction(None, Bump1D(0.2, 0.8),
                                                         Bump1D(-0.1, 0.8), Bump1D(0.1, 0.7)))
    concave = (lambda u: -u ** 2, lambda u: -2 * u, lambda u: -2 + 0 * u)
    with pytest.raises(ConvexityError):
        entropy_residual(model, 0.1, z, sc, concave, TestFunction(None, None, Bump1D(0.2, 0.8)))


def test_kinetic_defect_decreases_under_refinement(model):
    # fine noise coarsened to each level, dt proportional to h
    fine = SchemeParams(n1=32, n2=32, dt=0.1 / 256, T=0.1)
    noise = ensemble_noise(9, 2, model.K, fine.times())
    rms = []
    for n, f in [(8, 4), (16, 2), (32, 1)]:
        sc = SchemeParams(n1=n, n2=n, dt=f * 0.1 / 256, T=0.1)
        r = kinetic_residual(model, 0.1, [z.coarsen(f) for z in noise], sc, TF)
        rms.append(np.sqrt(np.mean(r.defect ** 2)))
    assert rms[2] < rms[0]


def test_l1_contraction_holds(model):
    sc = SchemeParams(n1=16, n2=16, T=0.1)
    res = l1_contraction(model, 0.1, ensemble_noise(2, 4, model.K, sc.times()), sc,
                         None, lambda a, b: 0.5 * model.u0(a, b))
    assert res.holds() and res.nonincreasing()
