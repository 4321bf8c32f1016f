#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "bilevelmp/mp_equilibrium.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

DirectedNetwork random_instance(unsigned seed, int n, int degree) {
    RngForker forker(seed);
    auto rng = forker.fork("net");
    DirectedNetwork raw = generate_rrg(n, degree, rng);
    std::uniform_real_distribution<double> ul(0.0, 1.0);
    for (NodeId i = 0; i < raw.num_nodes(); ++i)
        if (!raw.is_destination(i)) raw.lambda()[i] = ul(rng);
    return preprocess(raw).net;
}

double flow_error(const std::vector<double>& a, const std::vector<double>& b) {
    double err = 0;
    for (size_t e = 0; e < a.size(); ++e) err = std::max(err, std::abs(a[e] - b[e]));
    return err;
}

}  // namespace

TEST_CASE("symmetric diamond splits evenly") {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {1, 3, 1, 1}, {0, 2, 1, 1}, {2, 3, 1, 1}};
    DirectedNetwork net(4, edges, {2.0, 0.0, 0.0, 0.0}, {3});
    CostModel cost(std::vector<Latency>(4, Latency{0.0, 1.0}));
    EquilibriumConfig cfg;
    cfg.seed = 2;
    MpEquilibrium mp(net, cost, {}, cfg);
    auto res = mp.run();
    REQUIRE(res.converged);
    for (int e = 0; e < 4; ++e) CHECK(res.flows[e] == doctest::Approx(1.0).epsilon(1e-8));
    auto w = verify_wardrop(net, cost, {}, res.flows, 1e-6);
    CHECK(w.pass);
}

TEST_CASE("pigou sends everything through the congestible link") {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {0, 1, 1, 1}};
    DirectedNetwork net(2, edges, {1.0, 0.0}, {1});
    CostModel cost({Latency{1.0, 0.0}, Latency{0.0, 1.0}});
    EquilibriumConfig cfg;
    cfg.seed = 3;
    MpEquilibrium mp(net, cost, {}, cfg);
    auto res = mp.run();
    REQUIRE(res.converged);
    CHECK(std::abs(res.flows[0]) < 1e-8);
    CHECK(res.flows[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("both destination methods match the oracle on a random graph") {
    auto net = random_instance(1, 100, 3);
    CostModel cost(net, 1.0);
    auto oracle = convex_equilibrium(net, cost, {});
    REQUIRE(oracle.certified);
    for (int method = 1; method <= 2; ++method) {
        EquilibriumConfig cfg;
        cfg.seed = 101;
        cfg.method = method;
        cfg.max_sweeps = 1000;
        MpEquilibrium mp(net, cost, {}, cfg);
        auto res = mp.run();
        REQUIRE(res.converged);
        CHECK(flow_error(res.flows, oracle.flows) < 1e-6);
        auto w = verify_wardrop(net, cost, {}, res.flows, 1e-6);
        CHECK(w.pass);
    }
}

TEST_CASE("flow error decreases along the sweep history") {
    auto net = random_instance(5, 30, 3);
    CostModel cost(net, 1.0);
    auto oracle = convex_equilibrium(net, cost, {});
    EquilibriumConfig cfg;
    cfg.seed = 21;
    cfg.max_sweeps = 600;
    MpEquilibrium mp(net, cost, {}, cfg);
    std::vector<double> errs;
    std::mt19937_64 rng(cfg.seed);
    auto res = mp.run(rng, [&](int, double) {
        errs.push_back(flow_error(mp.total_flows(), oracle.flows));
    });
    REQUIRE(res.converged);
    CHECK(errs.back() < 1e-6);
    // Non-increasing within a 10% noise band, on 5-sweep block minima so the
    // combinatorial transient of the first sweeps does not count as a trend.
    std::vector<double> blocks;
    for (size_t k = 0; k < errs.size(); k += 5) {
        double m = errs[k];
        for (size_t j = k; j < std::min(errs.size(), k + 5); ++j) m = std::min(m, errs[j]);
        blocks.push_back(m);
    }
    double running = blocks.front();
    for (double b : blocks) {
        CHECK(b <= 1.1 * running + 1e-12);
        running = std::min(running, b);
    }
}

TEST_CASE("equilibrium under tolls shifts flow away") {
    auto net = random_instance(6, 20, 3);
    CostModel cost(net, 1.0);
    EquilibriumConfig cfg;
    cfg.seed = 31;
    MpEquilibrium mp0(net, cost, {}, cfg);
    auto base = mp0.run();
    REQUIRE(base.converged);
    EdgeId busiest = 0;
    for (int e = 0; e < net.num_edges(); ++e)
        if (base.flows[e] > base.flows[busiest]) busiest = e;
    std::vector<double> tolls(net.num_edges(), 0.0);
    tolls[busiest] = 0.5;
    auto oracle = convex_equilibrium(net, cost, tolls);
    MpEquilibrium mp1(net, cost, tolls, cfg);
    auto res = mp1.run();
    REQUIRE(res.converged);
    CHECK(flow_error(res.flows, oracle.flows) < 1e-6);
    CHECK(res.flows[busiest] <= base.flows[busiest] + 1e-9);
}

TEST_CASE("two classes with disjoint supports decouple") {
    // Two separate diamonds joined in one network, one class per diamond.
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {1, 3, 1, 1}, {0, 2, 1, 1}, {2, 3, 1, 1},
                                       {4, 5, 1, 1}, {5, 7, 1, 1}, {4, 6, 1, 1}, {6, 7, 1, 1}};
    DirectedNetwork net(8, edges, {2.0, 0, 0, 0, 2.0, 0, 0, 0}, {3, 7});
    CostModel cost(std::vector<Latency>(8, Latency{0.0, 1.0}));
    std::vector<std::vector<double>> cl(2, std::vector<double>(8, 0.0));
    cl[0][0] = 2.0;
    cl[1][4] = 2.0;
    EquilibriumConfig cfg;
    cfg.seed = 8;
    MpEquilibrium mp(net, cost, {}, cl, {3, 7}, cfg);
    auto res = mp.run();
    REQUIRE(res.converged);
    for (int e = 0; e < 4; ++e) {
        CHECK(res.class_flows[0][e] == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(std::abs(res.class_flows[1][e]) < 1e-7);
        CHECK(res.class_flows[1][e + 4] == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(std::abs(res.class_flows[0][e + 4]) < 1e-7);
    }
}

TEST_CASE("multi destination flows match the multiclass oracle") {
    RngForker forker(42);
    auto rng = forker.fork("mc");
    DirectedNetwork raw = generate_rrg(16, 4, rng);
    DirectedNetwork net = preprocess(raw).net;
    int n = net.num_nodes();
    std::uniform_real_distribution<double> ul(0.0, 1.0);
    std::vector<std::vector<double>> cl(2, std::vector<double>(n, 0.0));
    std::vector<NodeId> cd = {net.destination(), (net.destination() + 1) % n};
    for (int a = 0; a < 2; ++a)
        for (NodeId i = 0; i < n; ++i)
            if (i != cd[a]) cl[a][i] = ul(rng) * 0.5;
    CostModel cost(net, 1.0);
    auto mc = convex_equilibrium_multiclass(net, cost, {}, cl, cd);
    REQUIRE(mc.certified);
    EquilibriumConfig cfg;
    cfg.seed = 9;
    cfg.max_sweeps = 600;
    MpEquilibrium mp(net, cost, {}, cl, cd, cfg);
    auto res = mp.run();
    REQUIRE(res.converged);
    double err = 0;
    for (int e = 0; e < net.num_edges(); ++e)
        err = std::max(err, std::abs(res.flows[e] - mc.total_flows[e]));
    CHECK(err < 1e-5);
    auto w = verify_wardrop_multiclass(net, cost, {}, res.class_flows, cl, cd, 1e-6);
    CHECK(w.pass);
}
