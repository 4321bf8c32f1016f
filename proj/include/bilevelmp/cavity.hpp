#pragma once

#include <limits>
#include <vector>

namespace bilevelmp {

constexpr double kInfVal = std::numeric_limits<double>::infinity();

// Piecewise-quadratic cavity energy about a working point. With f == 0 a
// single branch (alpha, beta) applies; with f == 1 the working point is the
// breakpoint and the two branches (aL, bL) / (aR, bR) describe the energy
// left and right of it. Infinite coefficients mark hard walls (the flow
// cannot cross to that side).
struct CavityMessage {
    int f = 0;
    double alpha = 1.0;
    double beta = 0.0;
    double aL = 0.0, bL = 0.0;
    double aR = 0.0, bR = 0.0;
};

// One upstream edge e' seen from the cavity at (i, e): its incidence sign,
// the working point of the message sender, the edge-potential derivatives at
// the expansion point, and the sender's message.
struct UpstreamBranch {
    int sign = 1;        // B(i, e')
    double xt = 0.0;     // working point of k->e'
    double phi1 = 0.0;   // phi' at the expansion point
    double phi2 = 0.0;   // phi'' at the expansion point
    CavityMessage msg;
};

struct CavityRootResult {
    bool degenerate = false;
    double mu = 0.0;
    double inv_sum = 0.0;  // sum of inverse stiffness over active branches
    // Plateau data when degenerate (mu_lo/mu_hi may be +-inf).
    double mu_lo = 0.0, mu_hi = 0.0;
    double inv_below = 0.0, inv_above = 0.0;
    std::vector<double> flows;  // optimal upstream flows (pinned leaves at their breakpoints)
    bool feasible = true;
};

// Solves the cavity conservation problem at node i toward edge e:
// sum_e' B(i,e') x_e' + B(i,e) x_e + Lambda_i = 0 with x_e' >= 0, minimizing
// the quadratic upstream energies. Effective-leaf upstream branches (f == 1)
// are first pinned at their breakpoints; a first-order exchange test then
// activates profitable leaf branches before the final root solve.
CavityRootResult solve_cavity_root(const std::vector<UpstreamBranch>& upstream, double lambda_i,
                                   int b_ie, double x_e);

// Builds the outgoing message from the root result. b_ie is B(i, e).
CavityMessage message_from_root(const CavityRootResult& root, int b_ie);

// One side of an edge in the full-energy minimization: message plus half of
// the edge potential expanded at this side's working point.
struct EdgeSide {
    CavityMessage msg;
    double xt = 0.0;
    double phi1 = 0.0;  // phi' at xt (toll-free)
    double phi2 = 0.0;
};

// argmin_{x>=0} of the combined edge energy, with an explicit linear offset
// tau added to the derivative (the toll of the edge itself).
double minimize_edge_energy(const EdgeSide& si, const EdgeSide& sj, double tau);

// One-sided derivatives of the combined edge energy at x. The right one also
// drives the toll inversion: the smallest toll steering the marginal flow to
// x is -D_right(x).
double edge_energy_right_deriv(const EdgeSide& si, const EdgeSide& sj, double x);
double edge_energy_left_deriv(const EdgeSide& si, const EdgeSide& sj, double x);

// Combined edge energy at x up to an additive constant (each side is zeroed
// at its own working point). Differences at two points are exact; +inf past
// a wall.
double edge_energy_value(const EdgeSide& si, const EdgeSide& sj, double x);

}  // namespace bilevelmp
