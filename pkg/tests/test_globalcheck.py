import math

import numpy as np
import pytest

from acopf_escape import globalcheck
from acopf_escape.globalcheck import cluster_solutions, multistart, random_starts

GLOBAL_ROOT, WORSE_ROOT = 0.7044366926766155, 2.042364841213284
GLOBAL_OBJ = 3.4760470537814228


def test_cluster_basics():
    p = np.array([0.0, 0.5, 1.0, 1.0])
    assert cluster_solutions([]) == []
    assert len(cluster_solutions([(p, 1.0), (p.copy(), 1.0)])) == 1
    roots = [(np.array([0.0, -WORSE_ROOT, 1, 1]), 5.9), (np.array([0.0, -GLOBAL_ROOT, 1, 1]), 3.5)]
    clusters = cluster_solutions(roots)
    assert [c.objective for c in clusters] == [3.5, 5.9]


def test_cluster_angles_modulo_two_pi():
    a = np.array([0.0, math.pi - 1e-4, 1.0, 1.0])
    b = np.array([0.0, -math.pi + 1e-4, 1.0, 1.0])
    assert len(cluster_solutions([(a, 1.0), (b, 1.0)])) == 1


def test_representative_is_cheapest():
    a = np.array([0.0, 0.1, 1.0, 1.0])
    clusters = cluster_solutions([(a, 2.0), (a + 1e-4, 1.0)])
    assert len(clusters) == 1 and clusters[0].objective == 1.0 and clusters[0].members == 2


def test_random_start_layout(case9):
    starts = random_starts(case9, 5, seed=11)
    again = random_starts(case9, 3, seed=11)
    for a, b in zip(starts, again):
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.v, b.v)
    ref = case9.reference_index
    for s in starts:
        assert s.theta[ref] == 0.0
        assert np.all(np.abs(s.theta) <= math.pi)
        assert all(b.v_min <= v <= b.v_max for b, v in zip(case9.buses, s.v))
    # documented stream: V first, then theta, from child i of SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(11).spawn(5)[2]))
    v = rng.uniform([b.v_min for b in case9.buses], [b.v_max for b in case9.buses])
    np.testing.assert_array_equal(starts[2].v, v)


def test_two_bus_single_start(twobus_case, monkeypatch):
    monkeypatch.setattr(
        globalcheck, "random_starts",
        lambda case, n, seed, angle_range: [globalcheck.StartPoint(np.array([0.0, -2.0]), np.ones(2))],
    )
    rep = multistart(twobus_case, 1, 0, max_outer=3)
    assert rep.fraction_global_after_k[0] == 0.0
    assert rep.fraction_global_after_k[1:] == [1.0, 1.0, 1.0]
    assert rep.best_objective == pytest.approx(GLOBAL_OBJ, abs=1e-6)
    assert rep.best_objective == min(c.objective for c in rep.clusters)
    assert len(rep.clusters) == 2


def test_case9_ensemble(case9):
    rep = multistart(case9, 12, 5, max_outer=3)
    f = rep.fraction_global_after_k
    assert all(b >= a for a, b in zip(f, f[1:]))
    assert rep.n_converged + rep.n_failed == 12
    assert rep.best_objective == min(c.objective for c in rep.clusters)
    assert rep.best_objective == pytest.approx(5296.686523629813, rel=1e-5)
    rows = globalcheck.ensemble_csv(rep).splitlines()
    assert rows[0] == "start,iteration,objective,accepted,distance_to_best,status"
    assert globalcheck.cluster_csv(rep).splitlines()[0] == "cluster,objective,members,is_best_known"


def test_parallel_matches_serial(case9):
    a = multistart(case9, 6, 2, max_outer=2)
    b = multistart(case9, 6, 2, max_outer=2, jobs=2)
    assert globalcheck.write_ensemble(a) == globalcheck.write_ensemble(b)


def test_multistart_validation(case9):
    with pytest.raises(ValueError):
        multistart(case9, 0, 1)
