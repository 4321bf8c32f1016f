import math

import pytest

import bilevelmp as bm


def pigou_network():
    edges = [bm.DirectedEdge(0, 1), bm.DirectedEdge(0, 1)]
    return bm.DirectedNetwork(2, edges, [1.0, 0.0], [1])


def test_pigou_equilibrium():
    net = pigou_network()
    rep = bm.convex_equilibrium(net)
    assert rep["certified"]
    # identical links split the unit demand evenly
    assert rep["flows"] == pytest.approx([0.5, 0.5], abs=1e-9)


def test_mp_matches_oracle_on_rrg():
    raw = bm.generate_rrg(30, 3, seed=5)
    lam = [0.5 if i != raw.destination else 0.0 for i in range(raw.num_nodes)]
    raw.set_lambda(lam)
    net = bm.preprocess(raw)
    oracle = bm.convex_equilibrium(net)
    res = bm.mp_equilibrium(net, seed=7)
    assert res["converged"]
    err = max(abs(a - b) for a, b in zip(res["flows"], oracle["flows"]))
    assert err < 1e-6


def test_marginal_cost_tolls_reach_social_optimum():
    raw = bm.generate_rrg(20, 3, seed=3)
    raw.set_lambda([0.4 if i != raw.destination else 0.0 for i in range(raw.num_nodes)])
    net = bm.preprocess(raw)
    tolls = bm.marginal_cost_tolls(net)
    soc = bm.social_optimum(net)
    res = bm.mp_equilibrium(net, tolls=tolls, seed=2)
    err = max(abs(a - b) for a, b in zip(res["flows"], soc["flows"]))
    assert err < 1e-6


def test_atomic_integer_flows():
    edges = [bm.DirectedEdge(0, 1), bm.DirectedEdge(0, 1)]
    net = bm.DirectedNetwork(2, edges, [2.0, 0.0], [1])
    res = bm.atomic_equilibrium(net, seed=4)
    assert sorted(res["flows"]) == [1, 1]


def test_triangle_flow_equilibrium():
    edges = [bm.UndirectedEdge(0, 1), bm.UndirectedEdge(1, 2), bm.UndirectedEdge(0, 2)]
    net = bm.UndirectedNetwork(3, edges, [1.0, 0.0, 0.0], 2)
    exact = bm.laplacian_solve(net)["flows"]
    assert exact == pytest.approx([1 / 3, 1 / 3, 2 / 3], abs=1e-12)
    res = bm.flow_equilibrium(net, method=1, seed=1)
    assert res["converged"]
    assert res["flows"] == pytest.approx(exact, abs=1e-7)


def test_gradients_agree():
    net = bm.generate_rrg_undirected(50, 3, seed=2)
    lam = [0.0] * net.num_nodes
    for i in (1, 2, 3):
        lam[i] = 1.0
    lam[net.reference] = 0.0
    net.set_lambda(lam)
    base = bm.laplacian_solve(net)["flows"]
    targets = [e for e, x in enumerate(base) if abs(x) > 1e-6][:5]
    tbase = [base[t] for t in targets]
    g_mp = bm.mp_gradient(net, targets, tbase, theta=0.1, seed=3)
    g_ex = bm.ggd_gradient(net, targets, tbase, theta=0.1)
    mse = sum((a - b) ** 2 for a, b in zip(g_mp, g_ex)) / len(g_mp)
    assert mse < 1e-10


def test_flow_control_success():
    net = bm.generate_rrg_undirected(50, 3, seed=2)
    lam = [0.0] * net.num_nodes
    for i in (1, 2, 3):
        lam[i] = 1.0
    lam[net.reference] = 0.0
    net.set_lambda(lam)
    base = bm.laplacian_solve(net)["flows"]
    targets = [e for e, x in enumerate(base) if abs(x) > 1e-6][:5]
    res = bm.flow_control(net, targets, theta=0.05, seed=6, max_sweeps=4000)
    assert res["success"]
    assert all(0.9 - 1e-12 <= r <= 1.1 + 1e-12 for r in res["r"])
    assert math.isclose(res["objective"], 0.0, abs_tol=1e-12)
