#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bilevelmp/flow_control.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

UndirectedNetwork triangle() {
    return UndirectedNetwork(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}}, {1.0, 0.0, 0.0}, 2);
}

UndirectedNetwork sourced_rrg(int n, unsigned seed, std::vector<EdgeId>* targets,
                              std::vector<double>* baseline) {
    RngForker forker(seed);
    auto rng0 = forker.fork("net");
    UndirectedNetwork net = generate_rrg_undirected(n, 3, rng0);
    auto rngs = forker.fork("setup");
    std::vector<NodeId> nodes(net.num_nodes());
    std::iota(nodes.begin(), nodes.end(), 0);
    std::shuffle(nodes.begin(), nodes.end(), rngs);
    net.set_reference(nodes[0]);
    for (int k = 1; k <= 3; ++k) net.lambda()[nodes[k]] = 1.0;
    auto base = laplacian_solve(net).flows;
    if (baseline) *baseline = base;
    if (targets) {
        std::vector<EdgeId> edges(net.num_edges());
        std::iota(edges.begin(), edges.end(), 0);
        std::shuffle(edges.begin(), edges.end(), rngs);
        targets->clear();
        for (EdgeId e : edges) {
            if (std::abs(base[e]) > 1e-6) targets->push_back(e);
            if (targets->size() == 5) break;
        }
    }
    return net;
}

}  // namespace

TEST_CASE("triangle flows from grounded reference messages") {
    auto net = triangle();
    FlowControlConfig cfg;
    cfg.method = 1;
    cfg.seed = 1;
    auto res = solve_flow_equilibrium(net, cfg);
    REQUIRE(res.converged);
    CHECK(res.flows[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(res.flows[1] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(res.flows[2] == doctest::Approx(2.0 / 3).epsilon(1e-9));
}

TEST_CASE("triangle stiffness fixed point") {
    auto net = triangle();
    FlowControlConfig cfg;
    cfg.method = 1;
    cfg.seed = 2;
    FlowMp mp(net, cfg);
    std::mt19937_64 rng(cfg.seed);
    mp.init(rng);
    auto res = mp.solve(rng);
    REQUIRE(res.converged);
    // Converged stiffness per slot: reference slots pinned at r, interior
    // slots at 1/S + r of their cavity.
    std::vector<double> expected = {2, 2, 3, 1, 3, 1};
    for (int s = 0; s < mp.num_slots(); ++s)
        CHECK(mp.alpha(s) == doctest::Approx(expected[s]).epsilon(1e-7));
}

TEST_CASE("both methods match the laplacian on a random graph") {
    std::vector<double> base;
    auto net = sourced_rrg(60, 3, nullptr, &base);
    for (int method = 1; method <= 2; ++method) {
        FlowControlConfig cfg;
        cfg.method = method;
        cfg.seed = 4 + method;
        auto res = solve_flow_equilibrium(net, cfg);
        REQUIRE(res.converged);
        double err = 0;
        for (int e = 0; e < net.num_edges(); ++e)
            err = std::max(err, std::abs(res.flows[e] - base[e]));
        CHECK(err < 1e-6);
    }
}

TEST_CASE("exact gradient matches finite differences on the triangle") {
    auto net = triangle();
    auto base = laplacian_solve(net).flows;
    std::vector<EdgeId> targets = {2};
    std::vector<double> tbase = {base[2]};
    double theta = 0.1;
    auto grad = ggd_gradient(net, targets, tbase, theta);
    auto objective = [&](const std::vector<double>& r) {
        UndirectedNetwork pert = net;
        for (EdgeId e = 0; e < net.num_edges(); ++e) pert.set_r(e, r[e]);
        auto flows = laplacian_solve(pert).flows;
        double obj = 0;
        for (EdgeId t : targets) {
            double rho = (std::abs(flows[t]) - std::abs(base[t])) / std::abs(base[t]) - theta;
            if (rho < 0) obj -= rho;
        }
        return obj;
    };
    std::vector<double> r0 = {1.0, 1.0, 1.0};
    auto fd = finite_difference(objective, r0, 1e-6);
    for (int e = 0; e < 3; ++e) {
        double scale = std::max(std::abs(fd[e]), 1e-12);
        CHECK(std::abs(grad[e] - fd[e]) / scale < 1e-8);
    }
}

TEST_CASE("message gradients agree with the exact field") {
    for (unsigned seed = 1; seed <= 2; ++seed) {
        std::vector<EdgeId> targets;
        std::vector<double> base;
        auto net = sourced_rrg(80, seed, &targets, &base);
        REQUIRE(targets.size() == 5);
        std::vector<double> tbase;
        for (EdgeId t : targets) tbase.push_back(base[t]);
        FlowControlConfig cfg;
        cfg.seed = seed * 3 + 1;
        auto g_mp = mp_gradient(net, targets, tbase, cfg);
        auto g_ex = ggd_gradient(net, targets, tbase, cfg.theta);
        double mse = 0;
        for (int e = 0; e < net.num_edges(); ++e)
            mse += (g_mp[e] - g_ex[e]) * (g_mp[e] - g_ex[e]);
        mse /= net.num_edges();
        CHECK(mse < 1e-10);
    }
}

TEST_CASE("interleaved descent reaches zero objective") {
    std::vector<EdgeId> targets;
    auto net = sourced_rrg(60, 5, &targets, nullptr);
    FlowControlConfig cfg;
    cfg.seed = 9;
    cfg.theta = 0.05;
    cfg.max_sweeps = 4000;
    auto res = run_flow_control(net, targets, cfg);
    CHECK(res.success);
    CHECK(res.objective == 0.0);
    for (double r : res.r) {
        CHECK(r >= cfg.r_min - 1e-12);
        CHECK(r <= cfg.r_max + 1e-12);
    }
    REQUIRE(!res.trace.empty());
    CHECK(res.trace.back().second <= res.trace.front().second + 1e-9);
}

TEST_CASE("exact descent baseline also succeeds") {
    std::vector<EdgeId> targets;
    auto net = sourced_rrg(60, 5, &targets, nullptr);
    FlowControlConfig cfg;
    cfg.seed = 9;
    cfg.theta = 0.05;
    auto res = run_flow_control_ggd(net, targets, cfg);
    CHECK(res.success);
    for (double r : res.r) {
        CHECK(r >= cfg.r_min - 1e-12);
        CHECK(r <= cfg.r_max + 1e-12);
    }
}

TEST_CASE("unreachable demand raises an error on zero baseline targets") {
    auto net = triangle();
    FlowControlConfig cfg;
    CHECK_THROWS_AS(mp_gradient(net, {0}, {0.0}, cfg), std::invalid_argument);
}
