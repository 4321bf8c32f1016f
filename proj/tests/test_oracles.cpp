#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "bilevelmp/cost.hpp"
#include "bilevelmp/network.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

// Two parallel links 0 -> 1: constant latency 1 versus latency x.
DirectedNetwork pigou() {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {0, 1, 1, 1}};
    return DirectedNetwork(2, edges, {1.0, 0.0}, {1});
}
CostModel pigou_cost() { return CostModel({Latency{1.0, 0.0}, Latency{0.0, 1.0}}); }

// Two disjoint 2-edge paths 0 -> 3, latency x on every edge.
DirectedNetwork diamond() {
    std::vector<DirectedEdge> edges = {{0, 1, 1, 1}, {1, 3, 1, 1}, {0, 2, 1, 1}, {2, 3, 1, 1}};
    return DirectedNetwork(4, edges, {2.0, 0.0, 0.0, 0.0}, {3});
}
CostModel diamond_cost() {
    return CostModel(std::vector<Latency>(4, Latency{0.0, 1.0}));
}

}  // namespace

TEST_CASE("pigou equilibrium and social optimum") {
    auto net = pigou();
    auto cost = pigou_cost();
    auto eq = convex_equilibrium(net, cost, {});
    REQUIRE(eq.certified);
    CHECK(std::abs(eq.flows[0]) < 1e-9);
    CHECK(eq.flows[1] == doctest::Approx(1.0));
    auto so = social_optimum(net, cost);
    REQUIRE(so.certified);
    CHECK(so.flows[0] == doctest::Approx(0.5));
    CHECK(so.flows[1] == doctest::Approx(0.5));
    CHECK(cost.social_cost(so.flows) == doctest::Approx(0.75));
    auto w = verify_wardrop(net, cost, {}, eq.flows, 1e-6);
    CHECK(w.pass);
}

TEST_CASE("symmetric diamond splits evenly") {
    auto net = diamond();
    auto cost = diamond_cost();
    auto eq = convex_equilibrium(net, cost, {});
    REQUIRE(eq.certified);
    for (int e = 0; e < 4; ++e) CHECK(eq.flows[e] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("oracle certifies random instances and conserves flow") {
    for (unsigned seed = 1; seed <= 3; ++seed) {
        RngForker forker(seed);
        auto rng = forker.fork("net");
        DirectedNetwork raw = generate_rrg(30, 3, rng);
        std::uniform_real_distribution<double> ul(0.0, 1.0);
        for (NodeId i = 0; i < raw.num_nodes(); ++i)
            if (!raw.is_destination(i)) raw.lambda()[i] = ul(rng);
        auto net = preprocess(raw).net;
        CostModel cost(net, 1.0);
        auto eq = convex_equilibrium(net, cost, {});
        REQUIRE(eq.certified);
        CHECK(eq.feasibility_residual < 1e-8);
        auto w = verify_wardrop(net, cost, {}, eq.flows, 1e-6);
        CHECK(w.pass);
        auto so = social_optimum(net, cost);
        REQUIRE(so.certified);
        CHECK(cost.social_cost(so.flows) <= cost.social_cost(eq.flows) + 1e-9);
    }
}

TEST_CASE("multiclass oracle reduces to single class") {
    RngForker forker(4);
    auto rng = forker.fork("net");
    DirectedNetwork raw = generate_rrg(20, 3, rng);
    std::uniform_real_distribution<double> ul(0.0, 1.0);
    for (NodeId i = 0; i < raw.num_nodes(); ++i)
        if (!raw.is_destination(i)) raw.lambda()[i] = ul(rng);
    auto net = preprocess(raw).net;
    CostModel cost(net, 1.0);
    auto eq = convex_equilibrium(net, cost, {});
    auto mc = convex_equilibrium_multiclass(net, cost, {}, {net.lambda_vec()},
                                            {net.destination()});
    REQUIRE(mc.certified);
    for (int e = 0; e < net.num_edges(); ++e)
        CHECK(mc.total_flows[e] == doctest::Approx(eq.flows[e]).epsilon(1e-8));
}

TEST_CASE("atomic brute force on small fixtures") {
    auto pn = pigou();
    pn.lambda()[0] = 1.0;
    auto pr = atomic_bruteforce(pn, pigou_cost(), {});
    CHECK(pr.min_potential == doctest::Approx(1.0));
    auto dr = atomic_bruteforce(diamond(), diamond_cost(), {});
    CHECK(dr.min_potential == doctest::Approx(4.0));
    bool found = false;
    for (const auto& f : dr.argmin_flows)
        if (f == std::vector<long long>{1, 1, 1, 1}) found = true;
    CHECK(found);
}

TEST_CASE("triangle laplacian flows") {
    UndirectedNetwork net(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}}, {1.0, 0.0, 0.0}, 2);
    auto rep = laplacian_solve(net);
    CHECK(rep.flows[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(rep.flows[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(rep.flows[2] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(rep.potentials[net.reference()] == 0.0);
}

TEST_CASE("finite differences match an analytic gradient") {
    auto f = [](const std::vector<double>& x) {
        return x[0] * x[0] + 3.0 * x[0] * x[1] + std::sin(x[1]);
    };
    std::vector<double> p = {0.7, -0.4};
    auto g = finite_difference(f, p, 1e-6);
    CHECK(g[0] == doctest::Approx(2 * p[0] + 3 * p[1]).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(3 * p[0] + std::cos(p[1])).epsilon(1e-8));
}
