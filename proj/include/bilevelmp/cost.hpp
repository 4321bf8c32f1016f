#pragma once

#include <stdexcept>
#include <vector>

#include "bilevelmp/network.hpp"

namespace bilevelmp {

// Latency ell(x) = l0 + l1*x, stored in raw coefficients. The (t, c, s)
// parametrization of road networks maps to l0 = t, l1 = t*s/c.
struct Latency {
    double l0 = 0.0;
    double l1 = 0.0;

    double operator()(double x) const { return l0 + l1 * x; }
    double deriv() const { return l1; }
};

class CostModel {
public:
    CostModel() = default;
    // Build from per-edge (t, c) and a global sensitivity s.
    CostModel(const DirectedNetwork& net, double s) {
        lat_.reserve(net.num_edges());
        for (const auto& ed : net.edges()) lat_.push_back({ed.t, ed.t * s / ed.c});
    }
    explicit CostModel(std::vector<Latency> lat) : lat_(std::move(lat)) {}

    int num_edges() const { return static_cast<int>(lat_.size()); }
    const Latency& latency(EdgeId e) const { return lat_[e]; }

    // phi_e(x) = integral of (ell + tau), its derivatives.
    double phi(EdgeId e, double x, double tau) const {
        return (lat_[e].l0 + tau) * x + 0.5 * lat_[e].l1 * x * x;
    }
    double phi_d1(EdgeId e, double x, double tau) const { return lat_[e].l0 + tau + lat_[e].l1 * x; }
    double phi_d2(EdgeId e) const { return lat_[e].l1; }

    // sigma_e(x) = x*ell(x), toll-free.
    double sigma(EdgeId e, double x) const { return lat_[e].l0 * x + lat_[e].l1 * x * x; }
    double sigma_d1(EdgeId e, double x) const { return lat_[e].l0 + 2.0 * lat_[e].l1 * x; }
    double sigma_d2(EdgeId e) const { return 2.0 * lat_[e].l1; }

    // Atomic potential phi_e(x) = sum_{y=1..x} (ell(y) + tau), x integer.
    double phi_atomic(EdgeId e, long long x, double tau) const {
        if (x < 0) throw std::domain_error("negative flow");
        double xd = static_cast<double>(x);
        return xd * (lat_[e].l0 + tau) + lat_[e].l1 * xd * (xd + 1.0) / 2.0;
    }
    double sigma_atomic(EdgeId e, long long x) const {
        double xd = static_cast<double>(x);
        return lat_[e].l0 * xd + lat_[e].l1 * xd * xd;
    }

    double potential(const std::vector<double>& flows, const std::vector<double>& tolls) const;
    double social_cost(const std::vector<double>& flows) const;

private:
    std::vector<Latency> lat_;
};

struct WardropReport {
    bool pass = false;
    double max_violation = 0.0;
    bool feasible = false;
    double max_residual = 0.0;
    std::vector<double> node_potentials;
};

// Checks the equilibrium condition: with edge weights ell(x)+tau, node
// potentials from shortest paths to the destination satisfy
// u_head <= w_e + u_tail for all edges, with equality on used edges.
WardropReport verify_wardrop(const DirectedNetwork& net, const CostModel& cost,
                             const std::vector<double>& tolls, const std::vector<double>& flows,
                             double tol = 1e-6);

// Multi-class variant: conservation is checked per class against lambda of
// that class and its destination, Wardrop conditions per class on class flows
// with weights evaluated at total flows.
WardropReport verify_wardrop_multiclass(const DirectedNetwork& net, const CostModel& cost,
                                        const std::vector<double>& tolls,
                                        const std::vector<std::vector<double>>& class_flows,
                                        const std::vector<std::vector<double>>& class_lambda,
                                        const std::vector<NodeId>& class_dest, double tol = 1e-6);

}  // namespace bilevelmp
