import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fanreg.model import (ContinuousBuildingParams, DiscreteBuildingModel, InvalidParameterError,
                          closed_loop_stable, discretize, simulate, step, table_model)


def eig2(M):
    """Eigenvalue moduli of a real 2x2 matrix from the characteristic polynomial."""
    tr = M[0][0] + M[1][1]
    det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    disc = tr * tr / 4 - det
    if disc >= 0:
        r = math.sqrt(disc)
        return sorted([abs(tr / 2 + r), abs(tr / 2 - r)], reverse=True)
    return [math.sqrt(det)] * 2


def typical_params(**kw):
    base = dict(C_r=2e6, C_m=2e7, R_ra=5e-3, R_rm=2e-3, gamma=3.0)
    base.update(kw)
    return ContinuousBuildingParams(**base)


positive = st.floats(1e-3, 1e3)


def test_step_hand_evaluated():
    m = table_model("new")
    x = step(m, (24.0, 24.0), 0.5, (20.0, 0.0, 0.0))
    # T_r: (a11 + a12) 24 + b u (T_s - 24) + d11 20; T_m: (a21 + a22) 24
    assert x.T_r == pytest.approx(0.9005 * 24 + 0.4716 * 0.5 * (14 - 24) + 0.0405 * 20, abs=1e-12)
    assert x.T_r == pytest.approx(20.064, abs=1e-9)
    assert x.T_m == pytest.approx(24.4584, abs=1e-9)


def test_zero_fixed_point():
    assert tuple(step(table_model(), (0.0, 0.0), 0.0, (0.0, 0.0, 0.0))) == (0.0, 0.0)


def test_free_response_decays():
    m = table_model()
    moduli = eig2(m.A)
    assert moduli[0] == pytest.approx(0.9928, abs=1e-3)
    assert moduli[1] == pytest.approx(0.5586, abs=1e-3)
    X = simulate(m, (25.0, 25.0), np.zeros(2000), np.zeros((2000, 3)))
    assert np.max(np.abs(X[-1])) < 1e-4 * 25


def test_negative_flow_rejected():
    with pytest.raises(ValueError):
        step(table_model(), (20, 20), -0.1, (0, 0, 0))


def test_simulate_empty_and_one_step():
    m = table_model()
    X = simulate(m, (22.0, 23.0), [], np.zeros((0, 3)))
    assert X.shape == (1, 2) and tuple(X[0]) == (22.0, 23.0)
    X = simulate(m, (22.0, 23.0), [0.4], [(25.0, 300.0, 2000.0)])
    assert tuple(X[1]) == tuple(step(m, (22.0, 23.0), 0.4, (25.0, 300.0, 2000.0)))


def test_simulate_length_mismatch():
    with pytest.raises(ValueError):
        simulate(table_model(), (22, 22), [0.3, 0.3], np.zeros((3, 3)))


def test_simulate_matches_affine_closed_form():
    m = table_model()
    u, v = 0.6, np.array([28.0, 400.0, 3000.0])
    M = np.array(m.A) + np.array(m.B_xu) * u
    c = np.array(m.B_u) * u + np.array(m.B_v) @ v
    x0 = np.array([24.0, 25.0])
    X = simulate(m, x0, np.full(96, u), np.tile(v, (96, 1)))
    # x_k = M^k x0 + sum_{j<k} M^j c
    Mk, acc = np.eye(2), np.zeros(2)
    for k in range(1, 97):
        acc = acc + Mk @ c
        Mk = Mk @ M
        np.testing.assert_allclose(X[k], Mk @ x0 + acc, rtol=0, atol=1e-10)


def test_simulate_is_composition_of_step():
    m = table_model("older")
    rng = np.random.default_rng(3)
    u = rng.uniform(0.2, 1.0, 50)
    v = np.column_stack([rng.uniform(15, 30, 50), rng.uniform(0, 800, 50), rng.uniform(0, 4000, 50)])
    X = simulate(m, (22.0, 22.0), u, v)
    x = (22.0, 22.0)
    for k in range(50):
        x = step(m, x, u[k], v[k])
        assert tuple(X[k + 1]) == tuple(x)


def test_closed_loop_stability_examples():
    m = table_model()
    assert closed_loop_stable(m, 0.5)
    moduli = eig2(np.array(m.A) + np.array(m.B_xu) * 0.5)
    assert moduli == pytest.approx([0.965, 0.351], abs=2e-3)
    ident = DiscreteBuildingModel(1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    assert closed_loop_stable(ident, 0.7)
    doubled = DiscreteBuildingModel(2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0)
    assert not closed_loop_stable(doubled, 0.0)


def test_discretize_zero_step_is_identity():
    d = discretize(typical_params(), 0.0)
    np.testing.assert_array_equal(d.A, np.eye(2))
    assert d.b == 0 and d.d11 == 0 and d.d12 == 0 and d.d13 == 0


def test_discretize_doubling_step_doubles_increment():
    p = typical_params()
    a, b = discretize(p, 300.0), discretize(p, 600.0)
    np.testing.assert_allclose(b.A - np.eye(2), 2 * (a.A - np.eye(2)), rtol=1e-14)


@pytest.mark.parametrize("field", ["C_r", "C_m", "R_ra", "R_rm"])
@pytest.mark.parametrize("value", [0.0, -1.0])
def test_invalid_continuous_params(field, value):
    with pytest.raises(InvalidParameterError):
        typical_params(**{field: value})


@settings(max_examples=200, deadline=None)
@given(C_r=positive, C_m=positive, R_ra=positive, R_rm=positive, gamma=st.floats(0, 10),
       dt=st.floats(1e-3, 1e4))
def test_discretize_sign_pattern_and_small_step_stability(C_r, C_m, R_ra, R_rm, gamma, dt):
    p = ContinuousBuildingParams(C_r * 1e4, C_m * 1e4, R_ra * 1e-3, R_rm * 1e-3, gamma)
    assert discretize(p, dt).sign_pattern_ok()
    Ac = p.matrices()[0]
    # Euler is stable for dt below 2 / |lambda_max(A^c)| (real negative eigenvalues)
    lam = max(abs(x) for x in np.linalg.eigvals(Ac))
    small = discretize(p, 1.0 / lam)
    assert max(eig2(np.array(small.A))) <= 1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(tr=st.floats(14.0, 35.0), tm=st.floats(10.0, 40.0), u1=st.floats(0, 2), u2=st.floats(0, 2),
       ta=st.floats(0, 40), g=st.floats(0, 1000), ig=st.floats(0, 5000))
def test_cooling_monotone_in_flow(tr, tm, u1, u2, ta, g, ig):
    m = table_model()
    lo, hi = sorted((u1, u2))
    assert step(m, (tr, tm), hi, (ta, g, ig)).T_r <= step(m, (tr, tm), lo, (ta, g, ig)).T_r + 1e-12


def test_json_roundtrip(tmp_path):
    m = table_model("older")
    m.save(tmp_path / "m.json")
    assert DiscreteBuildingModel.load(tmp_path / "m.json") == m
