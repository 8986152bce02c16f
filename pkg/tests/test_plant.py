import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maglev_dfc.linmodel import is_hurwitz, is_singular
from maglev_dfc.plant import (PRINTED_A, PRINTED_B, MaglevParams, MaglevPlant, MaglevState,
                              MagnetCollisionError, OperatingPoint, dynamics, equilibrium_currents,
                              linear_coefficients, linearize, nominal_operating_point, printed_model)

P = MaglevParams()


def test_params_positive():
    with pytest.raises(ValueError):
        MaglevParams(M=-1.0)
    assert P.scaled(c1=2.0).c1 == 2 * P.c1


def test_equilibrium_currents_match_published():
    u10, u20 = equilibrium_currents(P, 0.01, -0.02)
    assert abs(u10 - 1.1396) < 1e-3
    assert abs(u20 - 0.1168) < 1e-3


def test_equilibrium_currents_without_magnet_force():
    p = P.scaled(c=1e-30)
    u10, u20 = equilibrium_currents(p, 0.01, -0.02)
    assert u10 == pytest.approx(p.a * (0.01 + p.b) ** 4 * p.M * p.g, rel=1e-12)
    assert u20 == pytest.approx(p.a * (-0.02 + p.b) ** 4 * p.M * p.g, rel=1e-12)


def test_equilibrium_currents_direct_formula():
    # frozen from a hand evaluation of the balance at y10 = 0.02
    y10, y20 = 0.02, -0.02
    fm = 4.4408e-08 / (0.133 + y20 - y10 + 0.042) ** 4
    u10 = 40442.0 * (y10 + 0.0591) ** 4 * (fm + 0.126 * 9.81)
    assert equilibrium_currents(P, y10, y20)[0] == pytest.approx(u10, rel=1e-12)
    assert u10 == pytest.approx(1.957154, abs=1e-6)


def test_simplified_dynamics_at_rest_balance():
    op = nominal_operating_point(P)
    s = MaglevState.from_gaps(op.y10, op.y20)
    acc = dynamics(P, s, op.u10, op.u20, cross_forces=False)
    assert np.abs(acc[[1, 3]]).max() < 1e-9
    # the far-coil forces are dropped by the linear model but not by the plant
    full = dynamics(P, s, op.u10, op.u20)
    assert 1e-3 < np.abs(full[[1, 3]]).max() < 0.5


def test_far_apart_zero_currents_free_fall():
    p = P.scaled(c=1e-30)
    s = MaglevState.from_gaps(0.02, -0.02, y1dot=-0.3)
    acc = dynamics(p, s, 0.0, 0.0)
    assert acc[1] == pytest.approx(-p.g - p.c1 / p.M * s.h1dot, rel=1e-9)


def test_collision_detected():
    with pytest.raises(MagnetCollisionError):
        dynamics(P, MaglevState.from_gaps(-P.b, -0.02), 1.0, 0.1)


def test_operating_point_invariants():
    with pytest.raises(ValueError):
        OperatingPoint(-0.1, -0.02).check(P)
    with pytest.raises(ValueError):
        OperatingPoint(0.01, -0.02, u10=-1.0).check(P)


def test_linearize_matches_published_entries():
    m = linearize(P, nominal_operating_point(P))
    for idx in [(1, 0), (1, 1), (3, 2), (3, 3)]:
        assert m.A[idx] == pytest.approx(PRINTED_A[idx], rel=5e-3)
    for idx in [(1, 0), (3, 1)]:
        assert m.B[idx] == pytest.approx(PRINTED_B[idx], rel=5e-3)


def test_linearize_coupling_symmetry():
    op = nominal_operating_point(P)
    m = linearize(P, op)
    k12 = linear_coefficients(P, op)["k12"]
    assert m.A[1, 2] == m.A[3, 0] == -k12 / P.M
    assert not is_singular(m.A)


def test_linearize_against_finite_differences():
    op = nominal_operating_point(P)
    m = linearize(P, op)
    plant = MaglevPlant(P, op, cross_forces=False)
    x0 = np.zeros(4)
    h = 1e-6
    J = np.column_stack([(plant.drift(x0 + h * e) - plant.drift(x0 - h * e)) / (2 * h)
                         for e in np.eye(4)])
    big = np.abs(m.A) > 1.0
    assert np.allclose(J[big], m.A[big], rtol=1e-4)
    assert np.allclose(J[~big], m.A[~big], atol=1e-4 * np.abs(m.A).max())
    assert np.allclose(plant.input_matrix(x0), m.B, rtol=1e-12)


def test_printed_model_verbatim():
    m = printed_model()
    assert np.array_equal(m.A, PRINTED_A) and np.array_equal(m.B, PRINTED_B)
    assert m.A[1, 2] == 0.0 and not is_hurwitz(m.A)


def test_plant_rest_point_near_nominal():
    plant = MaglevPlant(P)
    xe = plant.equilibrium()
    assert np.abs(xe).max() < 1e-3
    assert np.abs(plant.drift(xe)).max() < 1e-8
    assert MaglevPlant(P, cross_forces=False).equilibrium() == pytest.approx(np.zeros(4), abs=1e-10)


def test_plant_jacobian_close_to_model():
    plant = MaglevPlant(P, cross_forces=False)
    J = plant.jacobian(np.zeros(4))
    m = linearize(P, plant.op)
    assert np.allclose(J.A, m.A, rtol=1e-5, atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.03), st.floats(-0.03, 0.0))
def test_balance_holds_over_operating_range(y10, y20):
    op = OperatingPoint.at_equilibrium(P, y10, y20)
    acc = dynamics(P, MaglevState.from_gaps(y10, y20), op.u10, op.u20, cross_forces=False)
    assert np.abs(acc).max() < 1e-9
    m = linearize(P, op)
    assert m.A[1, 2] == m.A[3, 0]
