#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "bilevelmp/cost.hpp"
#include "bilevelmp/network.hpp"

namespace bilevelmp {

struct AtomicConfig {
    int window = 1;         // half-width M of the flow grid around the working point
    int max_sweeps = 300;
    int sweep_factor = 40;  // updates per sweep = factor * |E|
    double tol = 1e-9;      // message change threshold for convergence
    bool bias_field = false;      // xi_e * x degeneracy breaking instead of the
    double bias_scale = 1e-6;     // residual-consistency rule
    std::uint64_t seed = 1;
};

struct AtomicResult {
    std::vector<long long> flows;  // integer, exactly conserving
    double potential = 0.0;        // Phi at the flows, tolls included
    double social_cost = 0.0;
    bool converged = false;
    int sweeps = 0;
    bool repaired = false;  // extraction needed a conservation repair
};

// Message values on the integer grid around the sender working point;
// entries are offsets m in [-M, M], infeasible ones are +inf. A voided
// message (every entry infeasible) is skipped in downstream sums until the
// neighborhood moves.
struct GridMessage {
    std::vector<double> h;
    bool voided = false;
};

// Min-sum solver for integer flows: grid messages updated by exhaustive
// search over the joint windows of the upstream edges under exact integer
// conservation, working points stepped by +-1 toward the edge minimizers.
class AtomicMp {
public:
    AtomicMp(const DirectedNetwork& net, const CostModel& cost, std::vector<double> tolls,
             AtomicConfig cfg);

    int num_slots() const { return 2 * net_.num_edges(); }
    int slot(NodeId i, EdgeId e) const { return 2 * e + (net_.edge(e).head == i ? 0 : 1); }

    void init(std::mt19937_64& rng);
    // Grid-message refresh; social selects the social-cost layer over sigma.
    // Returns the largest entry change.
    double update_message(std::vector<GridMessage>& layer, bool social, NodeId i, EdgeId e);
    // Steps the working point of (i, e) toward the edge minimizer, or toward
    // the opposite working point when the windows do not overlap. Returns the
    // absolute move (0 or 1).
    long long update_working_point(NodeId i, EdgeId e);
    double update_random(std::mt19937_64& rng);
    double run_sweep(std::mt19937_64& rng);
    AtomicResult run();

    // Minimizer over the window overlap of the full edge cost; ok reports
    // whether the overlap was usable. Lower layer with tolls and bias.
    long long marginal_flow(EdgeId e, bool& ok) const;
    // Same minimization over the social-cost layer (toll-free).
    long long social_target_flow(EdgeId e, bool& ok) const;

    std::vector<GridMessage>& lower_layer() { return lower_; }
    std::vector<GridMessage>& upper_layer() { return upper_; }
    long long working_point(int s) const { return xt_[s]; }
    const std::vector<double>& tolls() const { return tolls_; }
    void set_toll(EdgeId e, double tau) { tolls_[e] = tau; }
    const AtomicConfig& config() const { return cfg_; }

    // Feasible integer flows from the current state: edge minimizers where
    // available, then unit augmentations until conservation is exact.
    std::vector<long long> extract_flows(bool& repaired) const;

private:
    void cancel_negative_cycles(std::vector<long long>& flows) const;
    double edge_phi(EdgeId e, long long x) const;  // with toll and bias
    double grid_value(const std::vector<GridMessage>& layer, int s, long long x) const;
    long long pick_minimizer(NodeId i, EdgeId e, const std::vector<long long>& cands,
                             const std::vector<double>& vals) const;

    const DirectedNetwork& net_;
    const CostModel& cost_;
    std::vector<double> tolls_;
    AtomicConfig cfg_;
    std::vector<GridMessage> lower_, upper_;
    std::vector<long long> xt_;  // per slot, shared by both layers
    std::vector<double> bias_;
};

AtomicResult run_atomic_equilibrium(const DirectedNetwork& net, const CostModel& cost,
                                    const std::vector<double>& tolls, const AtomicConfig& cfg);

// Exact unit-augmentation repair: returns flows satisfying integer
// conservation at every non-destination node, changed as little as possible
// from the input.
std::vector<long long> repair_integer_flows(const DirectedNetwork& net,
                                            std::vector<long long> flows);

struct AtomicBilevelConfig {
    AtomicConfig mp;
    double tau_max = 1.0;
    double dtau_fraction = 0.1;   // toll increment as a fraction of tau_max
    long long toll_interval = 0;  // MP steps per toll move; 0 = (2/5)|E|
    int warmup_sweeps = 5;
    int max_sweeps = 60;
    int restarts = 5;
};

struct AtomicBilevelResult {
    std::vector<double> tolls;     // best vector over restarts
    std::vector<long long> flows;  // equilibrium estimate under the best tolls
    double social_cost = 0.0;      // under the best tolls
    double nash_cost = 0.0;        // no-toll reference from the same solver
    std::vector<std::pair<int, double>> trace;  // (sweep, best cost) of the best restart
};

AtomicBilevelResult run_atomic_bilevel(const DirectedNetwork& net, const CostModel& cost,
                                       const AtomicBilevelConfig& cfg);

// Keeps only tolls >= eps if that does not increase the social cost of the
// re-solved equilibrium; otherwise returns the input tolls.
std::vector<double> threshold_tolls(const DirectedNetwork& net, const CostModel& cost,
                                    const std::vector<double>& tolls, double eps,
                                    const AtomicConfig& cfg);

}  // namespace bilevelmp
