#include "bilevelmp/mp_equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bilevelmp {

namespace {

double comp_delta(double a, double b) {
    bool fa = std::isfinite(a), fb = std::isfinite(b);
    if (fa && fb) return std::abs(a - b);
    if (!fa && !fb && (a > 0) == (b > 0)) return 0.0;
    return 1.0;
}

double msg_delta(const CavityMessage& o, const CavityMessage& n) {
    if (o.f != n.f) return 1.0;
    if (n.f == 0) return std::max(comp_delta(o.alpha, n.alpha), comp_delta(o.beta, n.beta));
    return std::max({comp_delta(o.aL, n.aL), comp_delta(o.bL, n.bL), comp_delta(o.aR, n.aR),
                     comp_delta(o.bR, n.bR)});
}

}  // namespace

MpEquilibrium::MpEquilibrium(const DirectedNetwork& net, const CostModel& cost,
                             std::vector<double> tolls, EquilibriumConfig cfg)
    : MpEquilibrium(net, cost, std::move(tolls), {net.lambda_vec()}, {net.destination()},
                    std::move(cfg)) {}

MpEquilibrium::MpEquilibrium(const DirectedNetwork& net, const CostModel& cost,
                             std::vector<double> tolls,
                             std::vector<std::vector<double>> class_lambda,
                             std::vector<NodeId> class_dest, EquilibriumConfig cfg)
    : net_(net),
      cost_(cost),
      tolls_(std::move(tolls)),
      class_lambda_(std::move(class_lambda)),
      class_dest_(std::move(class_dest)),
      cfg_(std::move(cfg)) {
    if (tolls_.empty()) tolls_.assign(net_.num_edges(), 0.0);
    lower_ = make_layer();
    xt_.assign(num_classes(), std::vector<double>(num_slots(), 0.0));
}

CavityLayer MpEquilibrium::make_layer() const {
    CavityLayer layer;
    layer.msg.assign(num_classes(), std::vector<CavityMessage>(num_slots()));
    return layer;
}

void MpEquilibrium::init_layer(CavityLayer& layer, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> ua(0.5, 1.5), ub(-0.1, 0.1);
    for (int a = 0; a < num_classes(); ++a) {
        for (int s = 0; s < num_slots(); ++s) {
            CavityMessage m;
            m.f = 0;
            m.alpha = ua(rng);
            m.beta = ub(rng);
            if (cfg_.method == 1 && slot_node(s) == class_dest_[a]) m.alpha = m.beta = 0.0;
            layer.msg[a][s] = m;
        }
    }
}

void MpEquilibrium::init(std::mt19937_64& rng) {
    init_layer(lower_, rng);
    for (int a = 0; a < num_classes(); ++a) {
        double lam_tot = 0.0;
        for (NodeId i = 0; i < net_.num_nodes(); ++i)
            if (i != class_dest_[a]) lam_tot += class_lambda_[a][i];
        std::uniform_real_distribution<double> ux(0.0, lam_tot / std::max(1, net_.num_edges()));
        for (int s = 0; s < num_slots(); ++s) xt_[a][s] = ux(rng);
    }
}

double MpEquilibrium::class_total(int s) const {
    double tot = 0.0;
    for (int a = 0; a < num_classes(); ++a) tot += xt_[a][s];
    return tot;
}

double MpEquilibrium::node_lambda(int cls, NodeId i) const {
    if (cfg_.method == 2 && i == class_dest_[cls]) {
        double tot = 0.0;
        for (NodeId k = 0; k < net_.num_nodes(); ++k)
            if (k != class_dest_[cls]) tot += class_lambda_[cls][k];
        return -tot;
    }
    if (i == class_dest_[cls]) return 0.0;
    return class_lambda_[cls][i];
}

std::vector<UpstreamBranch> MpEquilibrium::gather_upstream(const CavityLayer& layer, bool social,
                                                           int cls, NodeId i, EdgeId e) const {
    std::vector<UpstreamBranch> up;
    up.reserve(net_.adj(i).size());
    for (EdgeId ep : net_.adj(i)) {
        if (ep == e) continue;
        const auto& ed = net_.edge(ep);
        NodeId k = ed.head == i ? ed.tail : ed.head;
        int s = slot(k, ep);
        UpstreamBranch b;
        b.sign = net_.incidence(i, ep);
        b.xt = xt_[cls][s];
        double x_tot = std::max(class_total(s), 0.0);
        if (social) {
            b.phi1 = cost_.sigma_d1(ep, x_tot);
            b.phi2 = cost_.sigma_d2(ep);
        } else {
            b.phi1 = cost_.phi_d1(ep, x_tot, tolls_[ep]);
            b.phi2 = cost_.phi_d2(ep);
        }
        b.msg = layer.msg[cls][s];
        up.push_back(b);
    }
    return up;
}

EdgeSide MpEquilibrium::make_side(const CavityLayer& layer, bool social, bool include_toll,
                                  int cls, NodeId i, EdgeId e) const {
    int s = slot(i, e);
    EdgeSide side;
    side.msg = layer.msg[cls][s];
    side.xt = xt_[cls][s];
    double x_tot = std::max(class_total(s), 0.0);
    if (social) {
        side.phi1 = cost_.sigma_d1(e, x_tot);
        side.phi2 = cost_.sigma_d2(e);
    } else {
        side.phi1 = cost_.phi_d1(e, x_tot, include_toll ? tolls_[e] : 0.0);
        side.phi2 = cost_.phi_d2(e);
    }
    return side;
}

double MpEquilibrium::update_message(CavityLayer& layer, bool social, int cls, NodeId i,
                                     EdgeId e) {
    int s = slot(i, e);
    CavityMessage& cur = layer.msg[cls][s];
    if (cfg_.method == 1 && i == class_dest_[cls]) {
        CavityMessage grounded;
        grounded.alpha = grounded.beta = 0.0;
        double d = msg_delta(cur, grounded);
        cur = grounded;
        return d;
    }

    int b_ie = net_.incidence(i, e);
    double lam = node_lambda(cls, i);
    std::vector<UpstreamBranch> up = gather_upstream(layer, social, cls, i, e);

    double lam_eff = lam;
    bool all_settled = true;
    for (const auto& b : up) {
        if (b.msg.f == 1)
            lam_eff += b.sign * b.xt;
        else if (std::abs(b.xt) > cfg_.zero_flow_tol)
            all_settled = false;
    }

    double xt_self = xt_[cls][s];
    bool is_lower = &layer == &lower_;
    // Flow forced onto e when every other branch sits at its pinned value.
    // For an outgoing edge that is the residual supply, for an incoming one
    // (a constrained destination) the residual absorption.
    double x_forced = b_ie < 0 ? lam_eff : -lam_eff;
    bool near_breakpoint =
        std::abs(xt_self - x_forced) <= cfg_.leaf_threshold * std::max(1.0, std::abs(x_forced));
    bool leaf_candidate = x_forced >= 0.0 && (all_settled || near_breakpoint);

    CavityMessage next;
    bool have_next = false;
    if (leaf_candidate) {
        CavityRootResult probe = solve_cavity_root(up, lam, b_ie, x_forced);
        if (probe.feasible && probe.degenerate) {
            CavityMessage cand = message_from_root(probe, b_ie);
            bool accept = true;
            if (cfg_.confirm_leaves) {
                // The breakpoint must minimize the full edge energy, seen
                // with the candidate message on this side.
                const auto& ed = net_.edge(e);
                NodeId j = ed.head == i ? ed.tail : ed.head;
                EdgeSide ci;
                ci.msg = cand;
                ci.xt = x_forced;
                double x_tot = std::max(class_total(s) - xt_self + x_forced, 0.0);
                if (social) {
                    ci.phi1 = cost_.sigma_d1(e, x_tot);
                    ci.phi2 = cost_.sigma_d2(e);
                } else {
                    ci.phi1 = cost_.phi_d1(e, x_tot, tolls_[e]);
                    ci.phi2 = cost_.phi_d2(e);
                }
                EdgeSide cj = make_side(layer, social, !social, cls, j, e);
                double dl = edge_energy_left_deriv(ci, cj, x_forced);
                double dr = edge_energy_right_deriv(ci, cj, x_forced);
                double ctol = 1e-9 * (1.0 + std::abs(ci.phi1));
                accept = dl <= ctol && dr >= -ctol;
            }
            if (accept) {
                next = cand;
                have_next = true;
                if (is_lower) xt_[cls][s] = x_forced;
            }
        }
    }
    if (!have_next) {
        CavityRootResult root = solve_cavity_root(up, lam, b_ie, xt_self);
        if (!root.feasible && x_forced >= 0.0) {
            // Every upstream edge is pinned: the flow on e is forced.
            root = solve_cavity_root(up, lam, b_ie, x_forced);
            if (root.feasible && root.degenerate && is_lower) xt_[cls][s] = x_forced;
        }
        if (!root.feasible) return 0.0;
        next = message_from_root(root, b_ie);
    }

    double d = msg_delta(cur, next);
    cur = next;
    return d;
}

double MpEquilibrium::marginal_flow(int cls, EdgeId e) const {
    const auto& ed = net_.edge(e);
    EdgeSide si = make_side(lower_, false, true, cls, ed.head, e);
    EdgeSide sj = make_side(lower_, false, true, cls, ed.tail, e);
    return minimize_edge_energy(si, sj, 0.0);
}

double MpEquilibrium::update_working_point(int cls, NodeId i, EdgeId e) {
    int s = slot(i, e);
    double x_star = marginal_flow(cls, e);
    double old = xt_[cls][s];
    double next = (1.0 - cfg_.damping) * old + cfg_.damping * x_star;
    xt_[cls][s] = next;
    return std::abs(next - old);
}

double MpEquilibrium::update_random(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ue(0, net_.num_edges() - 1);
    std::uniform_int_distribution<int> us(0, 1);
    std::uniform_int_distribution<int> uc(0, num_classes() - 1);
    int cls = num_classes() == 1 ? 0 : uc(rng);
    EdgeId e = ue(rng);
    const auto& ed = net_.edge(e);
    NodeId i = us(rng) == 0 ? ed.head : ed.tail;
    double d1 = update_message(lower_, false, cls, i, e);
    double d2 = update_working_point(cls, i, e);
    return std::max(d1, d2);
}

double MpEquilibrium::run_sweep(std::mt19937_64& rng) {
    long long steps = static_cast<long long>(cfg_.sweep_factor) * net_.num_edges() * num_classes();
    double delta = 0.0;
    for (long long t = 0; t < steps; ++t) delta = std::max(delta, update_random(rng));
    return delta;
}

EquilibriumResult MpEquilibrium::run(std::mt19937_64& rng,
                                     const std::function<void(int, double)>& on_sweep) {
    init(rng);
    EquilibriumResult res;
    for (int sw = 1; sw <= cfg_.max_sweeps; ++sw) {
        double delta = run_sweep(rng);
        res.sweeps = sw;
        res.final_delta = delta;
        res.delta_history.push_back(delta);
        if (on_sweep) on_sweep(sw, delta);
        if (delta < cfg_.tol) {
            res.converged = true;
            break;
        }
    }
    res.class_flows.resize(num_classes());
    for (int a = 0; a < num_classes(); ++a) res.class_flows[a] = marginal_flows(a);
    res.flows.assign(net_.num_edges(), 0.0);
    for (int a = 0; a < num_classes(); ++a)
        for (EdgeId e = 0; e < net_.num_edges(); ++e) res.flows[e] += res.class_flows[a][e];
    return res;
}

EquilibriumResult MpEquilibrium::run() {
    std::mt19937_64 rng(cfg_.seed);
    return run(rng);
}

std::vector<double> MpEquilibrium::marginal_flows(int cls) const {
    std::vector<double> out(net_.num_edges());
    for (EdgeId e = 0; e < net_.num_edges(); ++e) out[e] = marginal_flow(cls, e);
    return out;
}

std::vector<double> MpEquilibrium::total_flows() const {
    std::vector<double> out(net_.num_edges(), 0.0);
    for (int a = 0; a < num_classes(); ++a) {
        auto f = marginal_flows(a);
        for (EdgeId e = 0; e < net_.num_edges(); ++e) out[e] += f[e];
    }
    return out;
}

}  // namespace bilevelmp
