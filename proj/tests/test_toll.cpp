#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <random>

#include "bilevelmp/bilevel_toll.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

DirectedNetwork pigou() {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {0, 1, 1, 1}};
    return DirectedNetwork(2, edges, {1.0, 0.0}, {1});
}
CostModel pigou_cost() { return CostModel({Latency{1.0, 0.0}, Latency{0.0, 1.0}}); }

DirectedNetwork random_instance(unsigned seed, int n) {
    RngForker forker(seed);
    auto rng = forker.fork("net");
    DirectedNetwork raw = generate_rrg(n, 3, rng);
    std::uniform_real_distribution<double> ul(0.0, 1.0);
    for (NodeId i = 0; i < raw.num_nodes(); ++i)
        if (!raw.is_destination(i)) raw.lambda()[i] = ul(rng);
    return preprocess(raw).net;
}

}  // namespace

TEST_CASE("pigou toll closes the gap") {
    auto net = pigou();
    auto cost = pigou_cost();
    TollConfig cfg;
    cfg.tau_max = 1.0;
    cfg.max_sweeps = 30;
    cfg.mp.seed = 11;
    BilevelToll bt(net, cost, cfg);
    auto res = bt.run();
    CHECK(res.h_nash == doctest::Approx(1.0));
    CHECK(res.h_social == doctest::Approx(0.75));
    CHECK(res.best_cost == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(std::abs(res.trace.back().fraction) < 1e-4);
    // The best tolls re-solve to the social split.
    auto check = convex_equilibrium(net, cost, res.tolls);
    CHECK(check.flows[0] == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(check.flows[1] == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("zero toll cap leaves the trace flat at one") {
    auto net = pigou();
    auto cost = pigou_cost();
    TollConfig cfg;
    cfg.tau_max = 0.0;
    cfg.max_sweeps = 5;
    cfg.mp.seed = 11;
    BilevelToll bt(net, cost, cfg);
    auto res = bt.run();
    for (const auto& p : res.trace) {
        CHECK(p.fraction == doctest::Approx(1.0));
        CHECK(p.cost == doctest::Approx(res.h_nash));
        CHECK(p.nonzero == 0);
    }
}

TEST_CASE("recorded costs stay inside the nash-social window") {
    auto net = random_instance(7, 60);
    CostModel cost(net, 1.0);
    TollConfig cfg;
    cfg.tau_max = 1.0;
    cfg.max_sweeps = 25;
    cfg.mp.seed = 4;
    BilevelToll bt(net, cost, cfg);
    auto res = bt.run();
    for (const auto& p : res.trace) {
        CHECK(p.cost >= res.h_social - 1e-6);
        CHECK(p.cost <= res.h_nash + 1e-6);
    }
    // Best-so-far recording makes the trace monotone.
    for (size_t k = 1; k < res.trace.size(); ++k)
        CHECK(res.trace[k].cost <= res.trace[k - 1].cost + 1e-12);
}

TEST_CASE("marginal cost tolls steer mp to the social optimum") {
    auto net = random_instance(3, 50);
    CostModel cost(net, 1.0);
    auto mct = marginal_cost_tolls(net, cost);
    auto soc = social_optimum(net, cost);
    EquilibriumConfig ecfg;
    ecfg.seed = 2;
    MpEquilibrium mp(net, cost, mct, ecfg);
    auto res = mp.run();
    REQUIRE(res.converged);
    double err = 0;
    for (int e = 0; e < net.num_edges(); ++e)
        err = std::max(err, std::abs(res.flows[e] - soc.flows[e]));
    CHECK(err < 1e-6);
}

TEST_CASE("per edge toll inversion picks the smallest steering toll") {
    auto net = pigou();
    auto cost = pigou_cost();
    TollConfig cfg;
    cfg.mp.seed = 5;
    BilevelToll bt(net, cost, cfg);
    std::mt19937_64 rng(cfg.mp.seed);
    bt.init(rng);
    double delta = 1;
    for (int sw = 0; sw < 200 && delta > 1e-9; ++sw) delta = bt.run_sweep(rng);
    REQUIRE(delta < 1e-9);
    // At the converged no-toll state the marginal flow reproduces the
    // equilibrium and responds monotonically to an explicit toll.
    CHECK(bt.toll_dependent_flow(1, 0.0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(bt.toll_dependent_flow(1, 0.6) <= bt.toll_dependent_flow(1, 0.3) + 1e-12);
    CHECK(bt.toll_dependent_flow(1, 0.3) <= bt.toll_dependent_flow(1, 0.0) + 1e-12);
    CHECK(bt.social_target_flow(1) == doctest::Approx(0.5).epsilon(1e-4));
    double tau = bt.optimize_edge_toll(1);
    CHECK(tau >= 0.0);
    CHECK(tau <= 1.0);
    CHECK(bt.toll_dependent_flow(1, tau) <= bt.toll_dependent_flow(1, 0.0));
}

TEST_CASE("tollable selection ranks by achievable reduction") {
    auto net = random_instance(9, 50);
    CostModel cost(net, 1.0);
    TollConfig cfg;
    cfg.mp.seed = 6;
    BilevelToll bt(net, cost, cfg);
    std::mt19937_64 rng(cfg.mp.seed);
    bt.init(rng);
    double delta = 1;
    for (int sw = 0; sw < 300 && delta > 1e-8; ++sw) delta = bt.run_sweep(rng);
    auto top = bt.select_tollable_edges(0.2);
    CHECK(top.size() == (size_t)std::lround(0.2 * net.num_edges()));
    double worst_selected = 1e300;
    for (EdgeId e : top) worst_selected = std::min(worst_selected, bt.full_cost_reduction(e));
    std::vector<char> in_top(net.num_edges(), 0);
    for (EdgeId e : top) in_top[e] = 1;
    for (EdgeId e = 0; e < net.num_edges(); ++e)
        if (!in_top[e]) CHECK(bt.full_cost_reduction(e) <= worst_selected + 1e-9);
}
