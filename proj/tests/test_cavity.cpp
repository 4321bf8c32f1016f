#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "bilevelmp/cavity.hpp"
#include "doctest.h"

using namespace bilevelmp;

namespace {

UpstreamBranch incoming_unit_branch() {
    UpstreamBranch b;
    b.sign = 1;
    b.xt = 0.0;
    b.phi1 = 0.0;
    b.phi2 = 1.0;
    b.msg.alpha = 1.0;
    b.msg.beta = 0.0;
    return b;
}

}  // namespace

TEST_CASE("single upstream edge root") {
    auto root = solve_cavity_root({incoming_unit_branch()}, 0.0, -1, 1.0);
    REQUIRE(root.feasible);
    REQUIRE(!root.degenerate);
    CHECK(root.mu == doctest::Approx(-2.0).epsilon(1e-12));
    REQUIRE(root.flows.size() == 1);
    CHECK(root.flows[0] == doctest::Approx(1.0).epsilon(1e-12));
    auto msg = message_from_root(root, -1);
    CHECK(msg.f == 0);
    CHECK(msg.beta == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(msg.alpha == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("zero required flow degenerates onto a plateau") {
    auto root = solve_cavity_root({incoming_unit_branch()}, 0.0, -1, 0.0);
    REQUIRE(root.feasible);
    CHECK(root.degenerate);
    CHECK(root.mu_lo == doctest::Approx(0.0));
    CHECK(std::isinf(root.mu_hi));
    CHECK(root.flows[0] == doctest::Approx(0.0));
}

TEST_CASE("two identical upstream edges split by symmetry") {
    std::vector<UpstreamBranch> up = {incoming_unit_branch(), incoming_unit_branch()};
    auto root = solve_cavity_root(up, 0.0, -1, 2.0);
    REQUIRE(root.feasible);
    REQUIRE(!root.degenerate);
    CHECK(root.mu == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(root.flows[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(root.flows[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conservation residual closes at the root") {
    // Mixed-sign branches with a resource term.
    UpstreamBranch in = incoming_unit_branch();
    in.msg.alpha = 0.7;
    in.msg.beta = 0.2;
    in.xt = 0.3;
    UpstreamBranch out = incoming_unit_branch();
    out.sign = -1;
    out.msg.alpha = 1.4;
    out.msg.beta = -0.1;
    out.xt = 0.6;
    out.phi2 = 0.5;
    auto root = solve_cavity_root({in, out}, 0.8, -1, 0.4);
    REQUIRE(root.feasible);
    double resid = 0.8 - 1.0 * 0.4;
    resid += 1 * root.flows[0] + (-1) * root.flows[1];
    CHECK(std::abs(resid) < 1e-10);
}

TEST_CASE("beta matches a numeric derivative of the cavity value") {
    // The message slope must equal d/dx_e of the minimized upstream energy.
    UpstreamBranch in = incoming_unit_branch();
    in.msg.alpha = 0.9;
    in.msg.beta = 0.15;
    in.xt = 0.25;
    auto energy = [&](double xe) {
        auto r = solve_cavity_root({in}, 0.3, -1, xe);
        double x = r.flows[0];
        double dx = x - in.xt;
        return in.msg.beta * dx + 0.5 * in.msg.alpha * dx * dx + in.phi1 * dx +
               0.5 * in.phi2 * dx * dx;
    };
    double xe = 1.1, h = 1e-5;
    auto root = solve_cavity_root({in}, 0.3, -1, xe);
    auto msg = message_from_root(root, -1);
    double numeric = (energy(xe + h) - energy(xe - h)) / (2 * h);
    CHECK(msg.beta == doctest::Approx(numeric).epsilon(1e-4));
}

TEST_CASE("edge energy minimization") {
    EdgeSide si, sj;
    si.msg.alpha = 1.0;
    sj.msg.alpha = 1.0;
    si.xt = sj.xt = 1.0;
    CHECK(minimize_edge_energy(si, sj, 0.0) == doctest::Approx(1.0));
    // A dominating positive slope clamps the flow at zero.
    EdgeSide pi = si, pj = sj;
    pi.msg.beta = 5.0;
    pj.msg.beta = 5.0;
    pi.xt = pj.xt = 0.2;
    CHECK(minimize_edge_energy(pi, pj, 0.0) == doctest::Approx(0.0));
    // A toll acts as an extra linear slope.
    double x0 = minimize_edge_energy(si, sj, 0.0);
    double x1 = minimize_edge_energy(si, sj, 0.5);
    CHECK(x1 < x0);
    CHECK(edge_energy_right_deriv(si, sj, x0) >= -1e-12);
}
