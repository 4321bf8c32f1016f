#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "bilevelmp/atomic_mp.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

DirectedNetwork pigou(double users) {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {0, 1, 1, 1}};
    return DirectedNetwork(2, edges, {users, 0.0}, {1});
}
CostModel pigou_cost() { return CostModel({Latency{1.0, 0.0}, Latency{0.0, 1.0}}); }

DirectedNetwork diamond() {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {1, 3, 1, 1}, {0, 2, 1, 1}, {2, 3, 1, 1}};
    return DirectedNetwork(4, edges, {2.0, 0.0, 0.0, 0.0}, {3});
}

void check_conservation(const DirectedNetwork& net, const std::vector<long long>& flows) {
    for (NodeId i = 0; i < net.num_nodes(); ++i) {
        if (net.is_destination(i)) continue;
        long long r = (long long)std::llround(net.lambda(i));
        for (EdgeId e = 0; e < net.num_edges(); ++e) r += net.incidence(i, e) * flows[e];
        CHECK(r == 0);
    }
}

}  // namespace

TEST_CASE("single user pigou attains the brute force minimum") {
    auto net = pigou(1.0);
    auto cost = pigou_cost();
    auto bf = atomic_bruteforce(net, cost, {});
    AtomicConfig cfg;
    cfg.seed = 7;
    auto res = run_atomic_equilibrium(net, cost, {}, cfg);
    CHECK(res.potential == doctest::Approx(bf.min_potential));
    check_conservation(net, res.flows);
}

TEST_CASE("diamond users avoid each other") {
    auto net = diamond();
    CostModel cost(std::vector<Latency>(4, Latency{0.0, 1.0}));
    AtomicConfig cfg;
    cfg.seed = 5;
    auto res = run_atomic_equilibrium(net, cost, {}, cfg);
    CHECK(res.potential == doctest::Approx(4.0));
    CHECK(res.flows == std::vector<long long>{1, 1, 1, 1});
    check_conservation(net, res.flows);
}

TEST_CASE("random small instances stay feasible and near optimal") {
    int hit = 0;
    for (unsigned seed = 1; seed <= 8; ++seed) {
        RngForker forker(seed);
        auto rng = forker.fork("atom");
        DirectedNetwork raw = generate_rrg(8, 3, rng);
        std::uniform_int_distribution<int> un(0, 2);
        long long tot = 0;
        for (NodeId i = 0; i < raw.num_nodes(); ++i) {
            if (raw.is_destination(i)) {
                raw.lambda()[i] = 0;
                continue;
            }
            long long u = std::min<long long>(un(rng), 6 - tot);
            tot += u;
            raw.lambda()[i] = (double)u;
        }
        auto net = preprocess(raw).net;
        CostModel cost(net, 1.0);
        auto bf = atomic_bruteforce(net, cost, {});
        AtomicConfig cfg;
        cfg.seed = seed * 13 + 1;
        auto res = run_atomic_equilibrium(net, cost, {}, cfg);
        check_conservation(net, res.flows);
        if (res.potential <= bf.min_potential + 1e-9) ++hit;
    }
    CHECK(hit >= 6);
}

TEST_CASE("repair restores exact integer conservation") {
    auto net = diamond();
    std::vector<long long> broken = {2, 0, 0, 2};  // surplus at 1, deficit at 2
    auto fixed = repair_integer_flows(net, broken);
    check_conservation(net, fixed);
}

TEST_CASE("atomic tolls never leave the solver worse than nash") {
    RngForker forker(2);
    auto rng = forker.fork("ab");
    DirectedNetwork raw = generate_rrg(50, 3, rng);
    for (NodeId i = 0; i < raw.num_nodes(); ++i) raw.lambda()[i] = 0;
    std::vector<NodeId> nodes;
    for (NodeId i = 1; i < raw.num_nodes(); ++i) nodes.push_back(i);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    for (int k = 0; k < 3; ++k) raw.lambda()[nodes[k]] = 4;
    auto net = preprocess(raw).net;
    CostModel cost(net, 1.0);
    AtomicBilevelConfig cfg;
    cfg.mp.seed = 2 * 9 + 2;
    cfg.max_sweeps = 40;
    cfg.restarts = 3;
    auto res = run_atomic_bilevel(net, cost, cfg);
    CHECK(res.social_cost <= res.nash_cost + 1e-9);
    // This seed has a real integer nash-social gap the tolls close.
    CHECK(res.social_cost < res.nash_cost - 1e-9);
    check_conservation(net, res.flows);
    for (double t : res.tolls) {
        CHECK(t >= 0.0);
        CHECK(t <= cfg.tau_max + 1e-12);
    }
}

TEST_CASE("toll thresholding never increases the cost") {
    auto net = pigou(3.0);
    auto cost = pigou_cost();
    AtomicBilevelConfig cfg;
    cfg.mp.seed = 3;
    cfg.max_sweeps = 20;
    cfg.restarts = 2;
    auto res = run_atomic_bilevel(net, cost, cfg);
    auto thin = threshold_tolls(net, cost, res.tolls, 0.25, cfg.mp);
    auto after = run_atomic_equilibrium(net, cost, thin, cfg.mp);
    CHECK(after.social_cost <= res.social_cost + 1e-9);
}

TEST_CASE("sioux falls cases end at or below nash") {
    DirectedNetwork base = load_network(std::string(DATA_DIR) + "/siouxfalls.txt");
    REQUIRE(base.num_nodes() == 24);
    REQUIRE(base.num_edges() == 76);
    // Case with 4 users per source; seeds fixed by the fixture.
    DirectedNetwork inst = base;
    std::mt19937_64 rng(11);
    std::vector<NodeId> nodes;
    for (NodeId i = 0; i < inst.num_nodes(); ++i)
        if (i != inst.destination()) nodes.push_back(i);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    for (int k = 0; k < 3; ++k) inst.lambda()[nodes[k]] = 4;
    CostModel cost(inst, 1.0);
    AtomicBilevelConfig cfg;
    cfg.mp.seed = 9;
    cfg.restarts = 2;
    cfg.max_sweeps = 20;
    auto res = run_atomic_bilevel(inst, cost, cfg);
    CHECK(res.social_cost <= res.nash_cost + 1e-9);
    check_conservation(inst, res.flows);
}
