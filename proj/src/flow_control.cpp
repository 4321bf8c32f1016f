#include "bilevelmp/flow_control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Sparse>

#include "bilevelmp/cavity.hpp"
#include "bilevelmp/oracles.hpp"

namespace bilevelmp {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

FlowMp::FlowMp(UndirectedNetwork net, FlowControlConfig cfg)
    : net_(std::move(net)), cfg_(std::move(cfg)) {
    alpha_.assign(num_slots(), 1.0);
    xhat_.assign(num_slots(), 0.0);
    target_of_edge_.assign(net_.num_edges(), -1);
}

void FlowMp::set_targets(std::vector<EdgeId> targets, std::vector<double> baseline) {
    if (targets.size() != baseline.size())
        throw std::invalid_argument("one baseline flow per target required");
    for (size_t t = 0; t < targets.size(); ++t)
        if (baseline[t] == 0.0)
            throw std::invalid_argument("targeted edge carries zero baseline flow");
    targets_ = std::move(targets);
    x0_ = std::move(baseline);
    target_of_edge_.assign(net_.num_edges(), -1);
    for (size_t t = 0; t < targets_.size(); ++t) target_of_edge_[targets_[t]] = static_cast<int>(t);
    int nt = static_cast<int>(targets_.size());
    ga_.assign(nt, std::vector<double>(num_slots(), 0.0));
    gx_.assign(nt, std::vector<double>(num_slots(), 0.0));
    gr_.assign(nt, std::vector<double>(num_slots(), 0.0));
}

void FlowMp::init(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ua(0.5, 1.5);
    std::uniform_real_distribution<double> ux(-0.1, 0.1);
    for (int s = 0; s < num_slots(); ++s) {
        alpha_[s] = ua(rng);
        xhat_[s] = ux(rng);
    }
    if (cfg_.method == 1) {
        // The reference absorbs everything: its subtree cost is flat, so the
        // message reduces to the edge's own quadratic term.
        NodeId ref = net_.reference();
        for (auto [e, k] : net_.adj(ref)) {
            alpha_[slot(ref, e)] = net_.r(e);
            xhat_[slot(ref, e)] = 0.0;
        }
    }
    for (auto& g : ga_) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : gx_) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : gr_) std::fill(g.begin(), g.end(), 0.0);
}

double FlowMp::lambda_eff(NodeId i) const {
    if (cfg_.method == 2 && i == net_.reference()) {
        double tot = 0.0;
        for (NodeId k = 0; k < net_.num_nodes(); ++k)
            if (k != net_.reference()) tot += net_.lambda(k);
        return -tot;
    }
    return net_.lambda(i);
}

double FlowMp::harmonic_sum(NodeId i, EdgeId skip) const {
    double s = 0.0;
    for (auto [e, k] : net_.adj(i)) {
        if (e == skip) continue;
        double a = alpha_[slot(k, e)];
        if (a <= 0.0) return kInfVal;  // grounded upstream dominates the sum
        s += 1.0 / a;
    }
    return s;
}

double FlowMp::update_value(NodeId i, EdgeId e) {
    if (cfg_.method == 1 && i == net_.reference()) {
        // Pinned form; refreshed so descent moves on r are picked up.
        int sp = slot(i, e);
        double d = std::abs(net_.r(e) - alpha_[sp]);
        alpha_[sp] = net_.r(e);
        xhat_[sp] = 0.0;
        return d;
    }
    int s = slot(i, e);
    double r = net_.r(e);
    double S = harmonic_sum(i, e);
    double a_new, x_new;
    if (net_.degree(i) == 1) {
        // The only incident edge must carry exactly the node's resource.
        a_new = kInfVal;
        x_new = lambda_eff(i);
    } else if (std::isinf(S)) {
        a_new = r;
        x_new = 0.0;
    } else {
        double c = lambda_eff(i);
        for (auto [ep, k] : net_.adj(i)) {
            if (ep == e) continue;
            c += xhat_[slot(k, ep)];
        }
        a_new = 1.0 / S + r;
        x_new = c / (1.0 + r * S);
    }
    double delta = std::max(std::abs(a_new - alpha_[s]), std::abs(x_new - xhat_[s]));
    if (std::isinf(a_new) && std::isinf(alpha_[s])) delta = std::abs(x_new - xhat_[s]);
    alpha_[s] = a_new;
    xhat_[s] = x_new;
    return delta;
}

double FlowMp::flow(EdgeId e) const {
    const auto& ed = net_.edge(e);
    int sa = slot(ed.a, e), sb = slot(ed.b, e);
    if (std::isinf(alpha_[sa])) return xhat_[sa];
    if (std::isinf(alpha_[sb])) return -xhat_[sb];
    double den = alpha_[sa] + alpha_[sb] - ed.r;
    if (!(den > 0.0)) throw NetworkError("non-positive edge stiffness in flow extraction");
    return (alpha_[sa] * xhat_[sa] - alpha_[sb] * xhat_[sb]) / den;
}

std::vector<double> FlowMp::flows() const {
    std::vector<double> out(net_.num_edges());
    for (EdgeId e = 0; e < net_.num_edges(); ++e) out[e] = flow(e);
    return out;
}

double FlowMp::rho(int t, double x) const {
    return (std::abs(x) - std::abs(x0_[t])) / std::abs(x0_[t]) - cfg_.theta;
}

double FlowMp::objective(const std::vector<double>& x) const {
    double o = 0.0;
    for (size_t t = 0; t < targets_.size(); ++t) {
        double p = rho(static_cast<int>(t), x[targets_[t]]);
        if (p < 0.0) o -= p;
    }
    return o;
}

double FlowMp::update_gradient(NodeId i, EdgeId e) {
    if (targets_.empty()) return 0.0;
    const auto& ed = net_.edge(e);
    NodeId j = ed.a == i ? ed.b : ed.a;
    int s = slot(i, e);
    double delta = 0.0;

    // Chain-rule factors through the outputs of the downstream node j; they
    // are the same for every target.
    struct OutFactors {
        int so;
        double da_da, dxh_da, dxh_dxh;
    };
    std::vector<OutFactors> outs;
    double a_in = alpha_[s];
    bool a_ok = a_in > 0.0 && !std::isinf(a_in);
    for (auto [el, l] : net_.adj(j)) {
        if (el == e) continue;
        int so = slot(j, el);
        double rl = net_.r(el);
        double Sl = harmonic_sum(j, el);
        if (std::isinf(Sl) || !a_ok || (cfg_.method == 1 && j == net_.reference())) {
            outs.push_back({so, 0.0, 0.0, 0.0});
            continue;
        }
        double inv2 = 1.0 / (a_in * a_in);
        outs.push_back({so, inv2 / (Sl * Sl), xhat_[so] * rl * inv2 / (1.0 + rl * Sl),
                        1.0 / (1.0 + rl * Sl)});
    }

    // Boundary contribution when this very edge is targeted: the flow of the
    // edge depends directly on its own two messages.
    int tt_e = target_of_edge_[e];
    double bA = 0.0, bX = 0.0;
    if (tt_e >= 0) {
        int sa = slot(ed.a, e), sb = slot(ed.b, e);
        double den = alpha_[sa] + alpha_[sb] - ed.r;
        double x = flow(e);
        double dodx = rho(tt_e, x) < 0.0 ? -sgn(x) / std::abs(x0_[tt_e]) : 0.0;
        if (s == sa) {
            bA = dodx * (xhat_[sa] - x) / den;
            bX = dodx * alpha_[sa] / den;
        } else {
            bA = dodx * (-xhat_[sb] - x) / den;
            bX = dodx * (-alpha_[sb]) / den;
        }
    }

    double Si = harmonic_sum(i, e);
    double dxh_dr = std::isinf(Si) ? 0.0 : xhat_[s] * (-Si) / (1.0 + net_.r(e) * Si);

    for (int t = 0; t < static_cast<int>(targets_.size()); ++t) {
        double ga_new = t == tt_e ? bA : 0.0;
        double gx_new = t == tt_e ? bX : 0.0;
        for (const auto& o : outs) {
            ga_new += ga_[t][o.so] * o.da_da + gx_[t][o.so] * o.dxh_da;
            gx_new += gx_[t][o.so] * o.dxh_dxh;
        }
        double gr_new = ga_new + gx_new * dxh_dr;
        delta = std::max(delta, std::abs(ga_new - ga_[t][s]));
        delta = std::max(delta, std::abs(gx_new - gx_[t][s]));
        delta = std::max(delta, std::abs(gr_new - gr_[t][s]));
        ga_[t][s] = ga_new;
        gx_[t][s] = gx_new;
        gr_[t][s] = gr_new;
    }
    return delta;
}

double FlowMp::full_gradient(EdgeId e) const {
    const auto& ed = net_.edge(e);
    int sa = slot(ed.a, e), sb = slot(ed.b, e);
    double g = 0.0;
    for (int t = 0; t < static_cast<int>(targets_.size()); ++t) g += gr_[t][sa] + gr_[t][sb];
    int tt = target_of_edge_[e];
    if (tt >= 0) {
        // Explicit dependence of the target flow on its own r through the
        // denominator of the extraction formula.
        double den = alpha_[sa] + alpha_[sb] - ed.r;
        double x = flow(e);
        double dodx = rho(tt, x) < 0.0 ? -sgn(x) / std::abs(x0_[tt]) : 0.0;
        g += dodx * x / den;
    }
    return g;
}

std::vector<double> FlowMp::full_gradients() const {
    std::vector<double> out(net_.num_edges());
    for (EdgeId e = 0; e < net_.num_edges(); ++e) out[e] = full_gradient(e);
    return out;
}

double FlowMp::update_random(std::mt19937_64& rng) {
    std::uniform_int_distribution<NodeId> un(0, net_.num_nodes() - 1);
    NodeId i = un(rng);
    std::uniform_int_distribution<int> ud(0, net_.degree(i) - 1);
    EdgeId e = net_.adj(i)[ud(rng)].first;
    double d1 = update_value(i, e);
    double d2 = update_gradient(i, e);
    return std::max(d1, d2);
}

double FlowMp::run_sweep(std::mt19937_64& rng) {
    double delta = 0.0;
    long long steps = static_cast<long long>(cfg_.sweep_factor) * net_.num_edges();
    for (long long t = 0; t < steps; ++t) delta = std::max(delta, update_random(rng));
    return delta;
}

FlowEquilibriumResult FlowMp::solve(std::mt19937_64& rng) {
    FlowEquilibriumResult out;
    for (int sweep = 1; sweep <= cfg_.max_sweeps; ++sweep) {
        double delta = run_sweep(rng);
        out.sweeps = sweep;
        out.final_delta = delta;
        if (delta < cfg_.tol) {
            out.converged = true;
            break;
        }
    }
    out.flows = flows();
    return out;
}

FlowEquilibriumResult solve_flow_equilibrium(const UndirectedNetwork& net,
                                             const FlowControlConfig& cfg) {
    FlowMp mp(net, cfg);
    std::mt19937_64 rng(cfg.seed);
    mp.init(rng);
    return mp.solve(rng);
}

std::vector<double> mp_gradient(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                                const std::vector<double>& baseline,
                                const FlowControlConfig& cfg) {
    FlowMp mp(net, cfg);
    mp.set_targets(targets, baseline);
    std::mt19937_64 rng(cfg.seed);
    mp.init(rng);
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep)
        if (mp.run_sweep(rng) < cfg.tol) break;
    return mp.full_gradients();
}

std::vector<double> ggd_gradient(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                                 const std::vector<double>& baseline, double theta) {
    const int n = net.num_nodes();
    const int m = net.num_edges();
    const NodeId ref = net.reference();
    std::vector<int> idx(n, -1);
    int nf = 0;
    for (NodeId i = 0; i < n; ++i)
        if (i != ref) idx[i] = nf++;

    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf);
    for (NodeId i = 0; i < n; ++i)
        if (i != ref) rhs[idx[i]] = net.lambda(i);
    for (EdgeId e = 0; e < m; ++e) {
        const auto& ed = net.edge(e);
        double w = 1.0 / ed.r;
        if (ed.a != ref) trip.emplace_back(idx[ed.a], idx[ed.a], w);
        if (ed.b != ref) trip.emplace_back(idx[ed.b], idx[ed.b], w);
        if (ed.a != ref && ed.b != ref) {
            trip.emplace_back(idx[ed.a], idx[ed.b], -w);
            trip.emplace_back(idx[ed.b], idx[ed.a], -w);
        }
    }
    Eigen::SparseMatrix<double> L(nf, nf);
    L.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(L);
    if (ldlt.info() != Eigen::Success) throw NetworkError("singular grounded Laplacian");
    Eigen::VectorXd mu = ldlt.solve(rhs);
    auto pot = [&](NodeId i) { return i == ref ? 0.0 : mu[idx[i]]; };

    std::vector<double> x(m);
    for (EdgeId e = 0; e < m; ++e) {
        const auto& ed = net.edge(e);
        x[e] = (pot(ed.a) - pot(ed.b)) / ed.r;
    }

    // Adjoint: one extra solve gives the sensitivity of the objective to all
    // potentials at once; each edge gradient is then a closed form.
    Eigen::VectorXd w = Eigen::VectorXd::Zero(nf);
    std::vector<double> direct(m, 0.0);
    for (size_t t = 0; t < targets.size(); ++t) {
        EdgeId e = targets[t];
        const auto& ed = net.edge(e);
        if (baseline[t] == 0.0)
            throw std::invalid_argument("targeted edge carries zero baseline flow");
        double p = (std::abs(x[e]) - std::abs(baseline[t])) / std::abs(baseline[t]) - theta;
        double dodx = p < 0.0 ? -sgn(x[e]) / std::abs(baseline[t]) : 0.0;
        double c = dodx / ed.r;
        if (ed.a != ref) w[idx[ed.a]] += c;
        if (ed.b != ref) w[idx[ed.b]] -= c;
        direct[e] += dodx * (-x[e] / ed.r);
    }
    Eigen::VectorXd y = ldlt.solve(w);
    auto yv = [&](NodeId i) { return i == ref ? 0.0 : y[idx[i]]; };

    std::vector<double> grad(m);
    for (EdgeId e = 0; e < m; ++e) {
        const auto& ed = net.edge(e);
        grad[e] = (x[e] / ed.r) * (yv(ed.a) - yv(ed.b)) + direct[e];
    }
    return grad;
}

namespace {

// Exact flows at the current r, for the success check and trajectories.
std::vector<double> exact_flows(const UndirectedNetwork& net) {
    return laplacian_solve(net).flows;
}

FlowControlResult finish(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                         const std::vector<double>& baseline, double theta) {
    FlowControlResult out;
    out.r.resize(net.num_edges());
    for (EdgeId e = 0; e < net.num_edges(); ++e) out.r[e] = net.r(e);
    out.flows = exact_flows(net);
    out.rho.resize(targets.size());
    out.objective = 0.0;
    for (size_t t = 0; t < targets.size(); ++t) {
        double x = out.flows[targets[t]];
        out.rho[t] = (std::abs(x) - std::abs(baseline[t])) / std::abs(baseline[t]) - theta;
        if (out.rho[t] < 0.0) out.objective -= out.rho[t];
    }
    out.success = out.objective == 0.0;
    return out;
}

}  // namespace

FlowControlResult run_flow_control(const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
                                   const FlowControlConfig& cfg) {
    UndirectedNetwork work = net;
    std::vector<double> base_flows = exact_flows(work);
    std::vector<double> baseline(targets.size());
    for (size_t t = 0; t < targets.size(); ++t) baseline[t] = base_flows[targets[t]];

    FlowControlResult out = finish(work, targets, baseline, cfg.theta);
    out.trace.push_back({0, out.objective});
    if (out.success) {
        out.converged = true;
        return out;
    }

    FlowMp mp(work, cfg);
    mp.set_targets(targets, baseline);
    std::mt19937_64 rng(cfg.seed);
    mp.init(rng);

    long long interval = cfg.descent_interval > 0
                             ? cfg.descent_interval
                             : std::max<long long>(1, 4LL * work.num_edges() / 10);
    long long steps_per_sweep = static_cast<long long>(cfg.sweep_factor) * work.num_edges();
    std::uniform_int_distribution<NodeId> un(0, work.num_nodes() - 1);
    long long step = 0;
    double delta = 0.0;
    int sweeps = 0;
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
        delta = 0.0;
        for (long long t = 0; t < steps_per_sweep; ++t) {
            NodeId i = un(rng);
            std::uniform_int_distribution<int> ud(0, mp.network().degree(i) - 1);
            EdgeId e = mp.network().adj(i)[ud(rng)].first;
            delta = std::max(delta, mp.update_value(i, e));
            delta = std::max(delta, mp.update_gradient(i, e));
            if (++step % interval == 0) {
                double r = mp.network().r(e) - cfg.step * mp.full_gradient(e);
                mp.network().set_r(e, std::clamp(r, cfg.r_min, cfg.r_max));
            }
        }
        sweeps = sweep;
        FlowControlResult cur = finish(mp.network(), targets, baseline, cfg.theta);
        out.trace.push_back({sweep, cur.objective});
        if (cur.objective == 0.0) {
            auto trace = std::move(out.trace);
            out = std::move(cur);
            out.trace = std::move(trace);
            break;
        }
        if (sweep == cfg.max_sweeps) {
            auto trace = std::move(out.trace);
            out = std::move(cur);
            out.trace = std::move(trace);
        }
    }
    out.sweeps = sweeps;
    out.converged = delta < cfg.tol;
    return out;
}

FlowControlResult run_flow_control_ggd(const UndirectedNetwork& net,
                                       const std::vector<EdgeId>& targets,
                                       const FlowControlConfig& cfg) {
    UndirectedNetwork work = net;
    std::vector<double> base_flows = exact_flows(work);
    std::vector<double> baseline(targets.size());
    for (size_t t = 0; t < targets.size(); ++t) baseline[t] = base_flows[targets[t]];

    FlowControlResult out = finish(work, targets, baseline, cfg.theta);
    out.trace.push_back({0, out.objective});
    if (out.success) {
        out.converged = true;
        return out;
    }
    for (int it = 1; it <= cfg.max_sweeps; ++it) {
        auto grad = ggd_gradient(work, targets, baseline, cfg.theta);
        for (EdgeId e = 0; e < work.num_edges(); ++e)
            work.set_r(e, std::clamp(work.r(e) - cfg.step * grad[e], cfg.r_min, cfg.r_max));
        FlowControlResult cur = finish(work, targets, baseline, cfg.theta);
        out.trace.push_back({it, cur.objective});
        out.sweeps = it;
        if (cur.objective == 0.0 || it == cfg.max_sweeps) {
            auto trace = std::move(out.trace);
            int sweeps = out.sweeps;
            out = std::move(cur);
            out.trace = std::move(trace);
            out.sweeps = sweeps;
            out.converged = true;
            break;
        }
    }
    return out;
}

}  // namespace bilevelmp
