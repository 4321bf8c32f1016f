#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "bilevelmp/cavity.hpp"
#include "bilevelmp/cost.hpp"
#include "bilevelmp/network.hpp"

namespace bilevelmp {

struct EquilibriumConfig {
    int method = 1;                // 1: grounded destination, 2: constrained destination
    double damping = 0.1;          // working-point step toward the marginal flow
    int max_sweeps = 2000;
    double tol = 1e-8;             // max message/working-point change per sweep
    double leaf_threshold = 1e-3;  // relative closeness of the working point to Lambda_eff
    double zero_flow_tol = 1e-7;   // working points below this count as unused
    bool confirm_leaves = true;    // verify the breakpoint minimizes the full edge energy
    int sweep_factor = 40;         // updates per sweep = factor * |E| (per class)
    std::uint64_t seed = 1;
};

struct EquilibriumResult {
    std::vector<std::vector<double>> class_flows;
    std::vector<double> flows;  // class totals
    bool converged = false;
    int sweeps = 0;
    double final_delta = 0.0;
    std::vector<double> delta_history;
};

// One set of cavity messages. The equilibrium solver owns the lower layer;
// the toll layer allocates a second one over the social cost, sharing the
// working points.
struct CavityLayer {
    std::vector<std::vector<CavityMessage>> msg;  // [class][slot]
};

// Decentralized equilibrium solver: each directed slot (node i, incident edge
// e) carries a quadratic cavity message and a working point; messages are
// refreshed by local conservation solves and working points relax toward the
// per-edge marginal flows.
class MpEquilibrium {
public:
    MpEquilibrium(const DirectedNetwork& net, const CostModel& cost, std::vector<double> tolls,
                  EquilibriumConfig cfg);
    MpEquilibrium(const DirectedNetwork& net, const CostModel& cost, std::vector<double> tolls,
                  std::vector<std::vector<double>> class_lambda, std::vector<NodeId> class_dest,
                  EquilibriumConfig cfg);

    int num_classes() const { return static_cast<int>(class_lambda_.size()); }
    int num_slots() const { return 2 * net_.num_edges(); }
    // Slot of the message from i over e; side 0 is the head of the edge.
    int slot(NodeId i, EdgeId e) const { return 2 * e + (net_.edge(e).head == i ? 0 : 1); }
    NodeId slot_node(int s) const {
        const auto& ed = net_.edge(s / 2);
        return s % 2 == 0 ? ed.head : ed.tail;
    }

    void init(std::mt19937_64& rng);
    CavityLayer make_layer() const;
    void init_layer(CavityLayer& layer, std::mt19937_64& rng) const;

    // Refreshes the message of one slot in the given layer; social selects
    // the social-cost derivatives (toll-free) instead of the potential.
    // Returns the message change.
    double update_message(CavityLayer& layer, bool social, int cls, NodeId i, EdgeId e);
    // Damped working-point move toward the marginal flow of the edge.
    double update_working_point(int cls, NodeId i, EdgeId e);
    // One full lower-layer update of a random slot.
    double update_random(std::mt19937_64& rng);
    double run_sweep(std::mt19937_64& rng);
    EquilibriumResult run(std::mt19937_64& rng,
                          const std::function<void(int, double)>& on_sweep = {});
    EquilibriumResult run();

    double marginal_flow(int cls, EdgeId e) const;
    std::vector<double> marginal_flows(int cls) const;
    std::vector<double> total_flows() const;

    // Message-plus-half-edge view of one side, for full-energy minimization.
    // With include_toll false the toll of e must be supplied separately.
    EdgeSide make_side(const CavityLayer& layer, bool social, bool include_toll, int cls, NodeId i,
                       EdgeId e) const;

    const DirectedNetwork& network() const { return net_; }
    const CostModel& cost_model() const { return cost_; }
    const std::vector<std::vector<double>>& class_lambda() const { return class_lambda_; }
    const std::vector<NodeId>& class_dest() const { return class_dest_; }
    const std::vector<double>& tolls() const { return tolls_; }
    void set_toll(EdgeId e, double tau) { tolls_[e] = tau; }
    const EquilibriumConfig& config() const { return cfg_; }

    CavityLayer& lower_layer() { return lower_; }
    const CavityLayer& lower_layer() const { return lower_; }
    double working_point(int cls, int s) const { return xt_[cls][s]; }

private:
    double class_total(int s) const;
    double node_lambda(int cls, NodeId i) const;
    std::vector<UpstreamBranch> gather_upstream(const CavityLayer& layer, bool social, int cls,
                                                NodeId i, EdgeId e) const;

    const DirectedNetwork& net_;
    const CostModel& cost_;
    std::vector<double> tolls_;
    std::vector<std::vector<double>> class_lambda_;
    std::vector<NodeId> class_dest_;
    EquilibriumConfig cfg_;
    CavityLayer lower_;
    std::vector<std::vector<double>> xt_;  // [class][slot], shared across layers
};

}  // namespace bilevelmp
