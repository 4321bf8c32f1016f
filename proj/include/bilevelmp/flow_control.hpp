#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "bilevelmp/network.hpp"

namespace bilevelmp {

struct FlowControlConfig {
    int method = 2;           // 1: grounded reference, 2: constrained reference
    int max_sweeps = 2000;
    double tol = 1e-8;        // max message change per sweep
    int sweep_factor = 4;     // updates per sweep = factor * |E|
    double step = 0.05;       // gradient descent step on r
    double r_min = 0.9;
    double r_max = 1.1;
    double theta = 0.1;       // relative flow increment demanded on targets
    long long descent_interval = 0;  // steps between r updates; 0 = 4|E|/10
    std::uint64_t seed = 1;
};

struct FlowEquilibriumResult {
    std::vector<double> flows;  // per edge, positive along the canonical a -> b
    bool converged = false;
    int sweeps = 0;
    double final_delta = 0.0;
};

struct FlowControlResult {
    std::vector<double> r;
    std::vector<double> flows;
    std::vector<double> rho;  // per target
    double objective = 0.0;
    bool success = false;
    bool converged = false;
    int sweeps = 0;
    std::vector<std::pair<int, double>> trace;  // (sweep, objective)
};

// Quadratic-message solver for the minimum-dissipation flow problem on an
// undirected network, with backward gradient messages that track how the
// hinge objective on the targeted edges responds to every control parameter.
class FlowMp {
public:
    FlowMp(UndirectedNetwork net, FlowControlConfig cfg);

    // Targets are edge ids; baseline flows must be nonzero on them.
    void set_targets(std::vector<EdgeId> targets, std::vector<double> baseline);

    int num_slots() const { return 2 * net_.num_edges(); }
    int slot(NodeId i, EdgeId e) const { return 2 * e + (net_.edge(e).a == i ? 0 : 1); }

    void init(std::mt19937_64& rng);
    // Value message from i over e; returns the message change.
    double update_value(NodeId i, EdgeId e);
    // Gradient messages tied to the slot from i over e (boundary form on
    // targeted edges, chain-rule propagation otherwise).
    double update_gradient(NodeId i, EdgeId e);
    // One random (value, gradient) update.
    double update_random(std::mt19937_64& rng);
    double run_sweep(std::mt19937_64& rng);
    // Value messages only, to convergence; flows from the final messages.
    FlowEquilibriumResult solve(std::mt19937_64& rng);

    double flow(EdgeId e) const;
    std::vector<double> flows() const;
    double rho(int t, double x) const;
    double objective(const std::vector<double>& x) const;
    // dO/dr of one edge assembled from the current gradient state.
    double full_gradient(EdgeId e) const;
    std::vector<double> full_gradients() const;

    double alpha(int s) const { return alpha_[s]; }
    double xhat(int s) const { return xhat_[s]; }
    UndirectedNetwork& network() { return net_; }
    const UndirectedNetwork& network() const { return net_; }
    const FlowControlConfig& config() const { return cfg_; }
    const std::vector<EdgeId>& targets() const { return targets_; }

private:
    double lambda_eff(NodeId i) const;
    // Harmonic sum over incoming stiffnesses at i excluding edge skip;
    // infinite when an upstream message is grounded (zero stiffness).
    double harmonic_sum(NodeId i, EdgeId skip) const;

    UndirectedNetwork net_;
    FlowControlConfig cfg_;
    std::vector<double> alpha_, xhat_;  // per slot
    std::vector<EdgeId> targets_;
    std::vector<double> x0_;               // baseline flow per target
    std::vector<int> target_of_edge_;      // -1 when not targeted
    std::vector<std::vector<double>> ga_, gx_, gr_;  // [target][slot]
};

// Lower-level equilibrium flows by message passing only.
FlowEquilibriumResult solve_flow_equilibrium(const UndirectedNetwork& net,
                                             const FlowControlConfig& cfg);

// Full gradient field dO/dr at the joint (value, gradient) message fixed
// point, with r held fixed. Baseline flows define the targets' rho.
std::vector<double> mp_gradient(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                                const std::vector<double>& baseline,
                                const FlowControlConfig& cfg);

// Exact gradient via the grounded Laplacian: one solve for the potentials,
// one adjoint solve, then a closed form per edge.
std::vector<double> ggd_gradient(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                                 const std::vector<double>& baseline, double theta);

// Interleaved message passing and descent on r (box constrained); success
// means the hinge objective of the exactly re-solved flows reaches zero.
FlowControlResult run_flow_control(const UndirectedNetwork& net,
                                   const std::vector<EdgeId>& targets,
                                   const FlowControlConfig& cfg);

// Baseline driver: full descent with exact gradients and exact flow solves.
FlowControlResult run_flow_control_ggd(const UndirectedNetwork& net,
                                       const std::vector<EdgeId>& targets,
                                       const FlowControlConfig& cfg);

}  // namespace bilevelmp
