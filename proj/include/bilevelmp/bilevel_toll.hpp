#pragma once

#include <random>
#include <vector>

#include "bilevelmp/mp_equilibrium.hpp"

namespace bilevelmp {

struct TollConfig {
    double tau_max = 1.0;
    std::vector<double> tau_max_edge;  // per-edge caps; empty = uniform tau_max
    int warmup_sweeps = 5;
    int max_sweeps = 50;
    long long toll_interval = 0;  // MP steps per toll move; 0 = (2/5)*Nd*|E|
    int tolls_per_sweep = 0;      // alternative cadence preset; overrides interval
    double record_tol = 1e-6;     // slack on the cost window during recording
    EquilibriumConfig mp;         // shared message-passing parameters
};

struct TollTracePoint {
    int sweep = 0;
    double cost = 0.0;      // social cost under the best tolls so far
    double fraction = 0.0;  // (cost - H_S) / (H_N - H_S)
    int nonzero = 0;        // entries above 1e-12 in the best toll vector
};

struct BilevelResult {
    std::vector<double> tolls;       // best vector found
    std::vector<double> last_tolls;  // state at exit
    std::vector<double> flows;       // equilibrium flows under the best tolls
    std::vector<TollTracePoint> trace;
    double h_nash = 0.0;
    double h_social = 0.0;
    double best_cost = 0.0;
    bool mp_converged = false;
};

// Marginal equilibrium flow of one edge as a piecewise-linear function of its
// toll: knots at increasing tau with non-increasing flow, constant beyond the
// last knot.
struct TollFlowCurve {
    std::vector<double> tau;
    std::vector<double> x;
    double eval(double t) const;
};

// Toll optimizer: runs the equilibrium message layer together with a second
// layer over the social cost (same algebra, toll-free derivatives, shared
// working points that only the equilibrium layer moves), and periodically
// retunes a random edge toll so the marginal equilibrium flow tracks the
// social-cost minimizer of that edge.
class BilevelToll {
public:
    BilevelToll(const DirectedNetwork& net, const CostModel& cost, TollConfig cfg);
    BilevelToll(const DirectedNetwork& net, const CostModel& cost,
                std::vector<std::vector<double>> class_lambda, std::vector<NodeId> class_dest,
                TollConfig cfg);

    MpEquilibrium& mp() { return mp_; }
    const MpEquilibrium& mp() const { return mp_; }
    CavityLayer& upper() { return upper_; }

    void init(std::mt19937_64& rng);
    // Joint refresh of one random slot in both layers plus the working point.
    double update_random(std::mt19937_64& rng);
    // One sweep of joint updates without toll moves.
    double run_sweep(std::mt19937_64& rng);

    double edge_cap(EdgeId e) const;
    // Marginal equilibrium flow of e under an explicit toll, summed over
    // classes; at the current toll it reproduces the marginal flow.
    double toll_dependent_flow(EdgeId e, double tau) const;
    TollFlowCurve toll_flow_curve(int cls, EdgeId e) const;
    // Minimizer of the full social-cost energy of e, summed over classes.
    double social_target_flow(EdgeId e) const;
    // Smallest toll in [0, cap] steering the marginal flow closest to the
    // social target.
    double optimize_edge_toll(EdgeId e) const;

    // Drop in the full social-cost energy of e achievable by its toll alone.
    double full_cost_reduction(EdgeId e) const;
    // Top edges by achievable reduction; ties by edge id.
    std::vector<EdgeId> select_tollable_edges(double fraction) const;

    BilevelResult run();

private:
    EdgeSide lower_side(int cls, NodeId i, EdgeId e) const;  // toll of e excluded
    EdgeSide upper_side(int cls, NodeId i, EdgeId e) const;
    long long steps_per_sweep() const;
    long long toll_interval() const;

    const DirectedNetwork& net_;
    const CostModel& cost_;
    TollConfig cfg_;
    MpEquilibrium mp_;
    CavityLayer upper_;
};

// Reference tolls x_S * l'(x_S) from the social-optimum oracle; unbounded.
std::vector<double> marginal_cost_tolls(const DirectedNetwork& net, const CostModel& cost);

}  // namespace bilevelmp
