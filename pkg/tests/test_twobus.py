import math

import numpy as np
import pytest

from acopf_escape import twobus
from acopf_escape.globalcheck import grid_certify_twobus
from acopf_escape.twobus import (
    DegenerateRootError,
    TwoBusParams,
    balance_residual,
    dual_at_root,
    lagrangian_minimizer,
    objective,
    partial_lagrangian,
    penalized,
    sample,
)

P = TwoBusParams()
# closed form of cos t + 5 sin t = 4: sqrt(26) sin(t + atan2(1, 5)) = 4
_A, _PHI = math.asin(4 / math.sqrt(26)), math.atan2(1, 5)
GLOBAL_ROOT, WORSE_ROOT = _A - _PHI, math.pi - _A - _PHI


def test_roots_frozen():
    # frozen from the grid oracle; bisection width 1e-12
    assert GLOBAL_ROOT == pytest.approx(0.7044366926766155, abs=1e-12)
    assert WORSE_ROOT == pytest.approx(2.042364841213284, abs=1e-12)


def test_objective_values():
    assert objective(0.0, P) == 0.0
    assert objective(math.pi / 2, P) == pytest.approx(6.0, abs=1e-15)
    assert objective(GLOBAL_ROOT, P) == pytest.approx(3.4760470537814228, abs=1e-12)
    assert objective(WORSE_ROOT, P) == pytest.approx(5.908568330834184, abs=1e-12)


def test_balance_residual():
    assert balance_residual(0.0, P) == 3.0
    for root in (GLOBAL_ROOT, WORSE_ROOT):
        assert abs(balance_residual(root, P)) <= 1e-10
    flat = TwoBusParams(g=0.0, b=5.0, l=2.0)
    assert balance_residual(math.asin(0.4), flat) == pytest.approx(0.0, abs=1e-15)


def test_penalized():
    assert penalized(0.0, P) == 450.0
    assert penalized(GLOBAL_ROOT, P) == pytest.approx(objective(GLOBAL_ROOT, P), abs=1e-12)


def test_partial_lagrangian_at_roots():
    for mu in (-3.0, 0.0, 0.4, 7.0):
        q = P.with_mu(mu)
        for root in (GLOBAL_ROOT, WORSE_ROOT):
            assert partial_lagrangian(root, q) == pytest.approx(objective(root, q), abs=1e-9)
    t = np.linspace(-3, 3, 7)
    np.testing.assert_array_equal(partial_lagrangian(t, P), objective(t, P))


def test_duals_at_roots():
    worse, better = dual_at_root(WORSE_ROOT, P), dual_at_root(GLOBAL_ROOT, P)
    assert worse == pytest.approx(0.43657266766640274, abs=1e-9)
    assert better == pytest.approx(1.409581178487443, abs=1e-9)
    h = 1e-6
    for root, mu in ((WORSE_ROOT, worse), (GLOBAL_ROOT, better)):
        q = P.with_mu(mu)
        slope = (partial_lagrangian(root + h, q) - partial_lagrangian(root - h, q)) / (2 * h)
        assert abs(slope) <= 1e-9


def test_dual_rejects_bad_roots():
    with pytest.raises(ValueError):
        dual_at_root(0.0, P)
    tangent = TwoBusParams(l=math.sqrt(26) - 1)
    with pytest.raises(DegenerateRootError):
        dual_at_root(math.atan2(5, 1), tangent)


def test_penalized_landscape_two_minima():
    s = sample(penalized, P, 1e-4)
    assert s.minima.size == 2
    found = np.sort(s.theta[s.minima])
    assert found[0] == pytest.approx(GLOBAL_ROOT, abs=0.02)
    assert found[1] == pytest.approx(WORSE_ROOT, abs=0.02)
    assert np.all(np.diff(s.theta) > 0)


def test_lagrangian_landscape_single_minimum():
    q = P.with_mu(dual_at_root(WORSE_ROOT, P))
    s = sample(partial_lagrangian, q, 1e-4)
    assert s.minima.size == 1
    t = lagrangian_minimizer(q)
    assert s.theta[s.minima[0]] == pytest.approx(t, abs=2e-4)
    # stationarity tan t = -(1 - mu) b / ((1 + mu) g)
    assert math.tan(t) == pytest.approx(-(1 - q.mu) * 5 / (1 + q.mu), rel=1e-12)
    assert t == pytest.approx(-1.0992278123763706, abs=1e-12)


def test_grid_certificate():
    cert = grid_certify_twobus(1.0, 5.0, 3.0)
    assert cert.feasible
    assert cert.roots == pytest.approx((GLOBAL_ROOT, WORSE_ROOT), abs=1e-11)
    assert cert.theta_star == pytest.approx(GLOBAL_ROOT, abs=1e-11)
    for r in cert.roots:
        assert abs(balance_residual(r, P)) <= 1e-10


def test_grid_tangent_and_infeasible():
    l_max = math.sqrt(26) - 1
    cert = grid_certify_twobus(1.0, 5.0, l_max)
    assert cert.feasible and len(cert.roots) == 1
    assert cert.roots[0] == pytest.approx(1.373400766945016, abs=1e-9)
    assert abs(balance_residual(cert.roots[0], TwoBusParams(l=l_max))) <= 1e-10
    assert not grid_certify_twobus(1.0, 5.0, l_max + 1e-6).feasible


def test_params_validation():
    with pytest.raises(ValueError):
        TwoBusParams(g=-1.0)
    with pytest.raises(ValueError):
        TwoBusParams(rho=0.0)


def test_landscape_csv():
    lines = twobus.landscape_csv(P.with_mu(0.4), 0.1).splitlines()
    assert lines[0] == "theta,L_rho,L_mu"
    assert all(len(row.split(",")) == 3 for row in lines)
    theta, lr, lm = (float(v) for v in lines[1].split(","))
    assert lr == penalized(theta, P) and lm == partial_lagrangian(theta, P.with_mu(0.4))
