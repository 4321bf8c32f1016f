#include "bilevelmp/bilevel_toll.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bilevelmp/oracles.hpp"

namespace bilevelmp {

double TollFlowCurve::eval(double t) const {
    if (tau.empty()) return 0.0;
    if (t <= tau.front()) return x.front();
    if (t >= tau.back()) return x.back();
    auto it = std::upper_bound(tau.begin(), tau.end(), t);
    size_t k = static_cast<size_t>(it - tau.begin());
    double w = (t - tau[k - 1]) / (tau[k] - tau[k - 1]);
    return x[k - 1] + w * (x[k] - x[k - 1]);
}

BilevelToll::BilevelToll(const DirectedNetwork& net, const CostModel& cost, TollConfig cfg)
    : BilevelToll(net, cost, {net.lambda_vec()}, {net.destination()}, std::move(cfg)) {}

BilevelToll::BilevelToll(const DirectedNetwork& net, const CostModel& cost,
                         std::vector<std::vector<double>> class_lambda,
                         std::vector<NodeId> class_dest, TollConfig cfg)
    : net_(net),
      cost_(cost),
      cfg_(std::move(cfg)),
      mp_(net, cost, {}, std::move(class_lambda), std::move(class_dest), cfg_.mp) {
    upper_ = mp_.make_layer();
}

void BilevelToll::init(std::mt19937_64& rng) {
    mp_.init(rng);
    mp_.init_layer(upper_, rng);
}

double BilevelToll::update_random(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ue(0, net_.num_edges() - 1);
    std::uniform_int_distribution<int> us(0, 1);
    std::uniform_int_distribution<int> uc(0, mp_.num_classes() - 1);
    int cls = mp_.num_classes() == 1 ? 0 : uc(rng);
    EdgeId e = ue(rng);
    const auto& ed = net_.edge(e);
    NodeId i = us(rng) == 0 ? ed.head : ed.tail;
    double d1 = mp_.update_message(mp_.lower_layer(), false, cls, i, e);
    double d2 = mp_.update_message(upper_, true, cls, i, e);
    double d3 = mp_.update_working_point(cls, i, e);
    return std::max({d1, d2, d3});
}

double BilevelToll::run_sweep(std::mt19937_64& rng) {
    double delta = 0.0;
    for (long long t = 0; t < steps_per_sweep(); ++t)
        delta = std::max(delta, update_random(rng));
    return delta;
}

long long BilevelToll::steps_per_sweep() const {
    return static_cast<long long>(cfg_.mp.sweep_factor) * net_.num_edges() * mp_.num_classes();
}

long long BilevelToll::toll_interval() const {
    if (cfg_.tolls_per_sweep > 0)
        return std::max<long long>(1, steps_per_sweep() / cfg_.tolls_per_sweep);
    if (cfg_.toll_interval > 0) return cfg_.toll_interval;
    return std::max<long long>(1, 2LL * mp_.num_classes() * net_.num_edges() / 5);
}

double BilevelToll::edge_cap(EdgeId e) const {
    if (!cfg_.tau_max_edge.empty()) return cfg_.tau_max_edge[e];
    return cfg_.tau_max;
}

EdgeSide BilevelToll::lower_side(int cls, NodeId i, EdgeId e) const {
    return mp_.make_side(mp_.lower_layer(), false, false, cls, i, e);
}

EdgeSide BilevelToll::upper_side(int cls, NodeId i, EdgeId e) const {
    return mp_.make_side(upper_, true, false, cls, i, e);
}

double BilevelToll::toll_dependent_flow(EdgeId e, double tau) const {
    const auto& ed = net_.edge(e);
    double total = 0.0;
    for (int a = 0; a < mp_.num_classes(); ++a)
        total += minimize_edge_energy(lower_side(a, ed.head, e), lower_side(a, ed.tail, e), tau);
    return total;
}

double BilevelToll::social_target_flow(EdgeId e) const {
    const auto& ed = net_.edge(e);
    double total = 0.0;
    for (int a = 0; a < mp_.num_classes(); ++a)
        total += minimize_edge_energy(upper_side(a, ed.head, e), upper_side(a, ed.tail, e), 0.0);
    return total;
}

TollFlowCurve BilevelToll::toll_flow_curve(int cls, EdgeId e) const {
    const auto& ed = net_.edge(e);
    EdgeSide si = lower_side(cls, ed.head, e);
    EdgeSide sj = lower_side(cls, ed.tail, e);
    // Knots sit where the minimizer crosses a kink of the energy derivative.
    std::vector<double> xs = {0.0};
    if (si.msg.f == 1 && si.xt > 0.0) xs.push_back(si.xt);
    if (sj.msg.f == 1 && sj.xt > 0.0) xs.push_back(sj.xt);
    std::vector<double> knots = {0.0};
    for (double x : xs) {
        double tl = -edge_energy_right_deriv(si, sj, x);
        double tr = -edge_energy_left_deriv(si, sj, x);
        if (std::isfinite(tl) && tl > 0.0) knots.push_back(tl);
        if (std::isfinite(tr) && tr > 0.0) knots.push_back(tr);
    }
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-14; }),
                knots.end());
    TollFlowCurve curve;
    for (double t : knots) {
        curve.tau.push_back(t);
        curve.x.push_back(minimize_edge_energy(si, sj, t));
    }
    return curve;
}

double BilevelToll::optimize_edge_toll(EdgeId e) const {
    double cap = edge_cap(e);
    if (cap <= 0.0) return 0.0;
    double xg = social_target_flow(e);
    double tie = 1e-12 * (1.0 + std::abs(xg));
    if (toll_dependent_flow(e, 0.0) <= xg + tie) return 0.0;
    if (toll_dependent_flow(e, cap) > xg + tie) return cap;
    // The marginal flow is non-increasing in the toll; take the smallest toll
    // reaching the target.
    double lo = 0.0, hi = cap;
    for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        if (toll_dependent_flow(e, mid) <= xg + tie)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

double BilevelToll::full_cost_reduction(EdgeId e) const {
    double t = optimize_edge_toll(e);
    if (t <= 0.0) return 0.0;
    const auto& ed = net_.edge(e);
    double red = 0.0;
    for (int a = 0; a < mp_.num_classes(); ++a) {
        EdgeSide li = lower_side(a, ed.head, e), lj = lower_side(a, ed.tail, e);
        EdgeSide ui = upper_side(a, ed.head, e), uj = upper_side(a, ed.tail, e);
        double x0 = minimize_edge_energy(li, lj, 0.0);
        double x1 = minimize_edge_energy(li, lj, t);
        double v0 = edge_energy_value(ui, uj, x0);
        double v1 = edge_energy_value(ui, uj, x1);
        if (std::isfinite(v0) && std::isfinite(v1)) red += v0 - v1;
    }
    return red;
}

std::vector<EdgeId> BilevelToll::select_tollable_edges(double fraction) const {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("fraction must be in (0, 1]");
    int m = net_.num_edges();
    int k = std::min<int>(m, std::max<int>(1, static_cast<int>(std::lround(fraction * m))));
    std::vector<double> red(m);
    for (EdgeId e = 0; e < m; ++e) red[e] = full_cost_reduction(e);
    std::vector<EdgeId> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](EdgeId a, EdgeId b) { return red[a] > red[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

BilevelResult BilevelToll::run() {
    BilevelResult out;
    int m = net_.num_edges();
    bool single = mp_.num_classes() == 1 && mp_.class_dest()[0] == net_.destination() &&
                  mp_.class_lambda()[0] == net_.lambda_vec();

    auto cost_under = [&](const std::vector<double>& tolls, std::vector<double>& flows) {
        if (single) {
            auto rep = convex_equilibrium(net_, cost_, tolls);
            flows = rep.flows;
            return cost_.social_cost(rep.flows);
        }
        auto rep = convex_equilibrium_multiclass(net_, cost_, tolls, mp_.class_lambda(),
                                                 mp_.class_dest());
        flows = rep.total_flows;
        return cost_.social_cost(rep.total_flows);
    };

    std::vector<double> nash_flows;
    out.h_nash = cost_under(std::vector<double>(m, 0.0), nash_flows);
    auto soc = social_optimum(net_, cost_);
    out.h_social = cost_.social_cost(soc.flows);
    // A gap below the recording tolerance leaves nothing to reduce; the
    // fractional trace stays at 1 by convention instead of dividing noise.
    double span = out.h_nash - out.h_social;
    bool degenerate = span <= cfg_.record_tol;

    std::mt19937_64 rng(cfg_.mp.seed);
    init(rng);
    out.tolls.assign(m, 0.0);
    out.best_cost = out.h_nash;
    out.flows = nash_flows;
    // Warm-up sweeps run with zero tolls, so the recorded cost is the nash
    // cost and the fractional gap sits at one.
    out.trace.push_back({0, out.best_cost, 1.0, 0});
    for (int w = 1; w <= cfg_.warmup_sweeps; ++w) {
        run_sweep(rng);
        out.trace.push_back({w, out.best_cost, 1.0, 0});
    }

    std::vector<EdgeId> tollable;
    for (EdgeId e = 0; e < m; ++e)
        if (edge_cap(e) > 0.0) tollable.push_back(e);

    long long interval = toll_interval();
    long long step = 0;
    double delta = 0.0;
    for (int sweep = 1; sweep <= cfg_.max_sweeps; ++sweep) {
        delta = 0.0;
        for (long long t = 0; t < steps_per_sweep(); ++t) {
            delta = std::max(delta, update_random(rng));
            if (!tollable.empty() && ++step % interval == 0) {
                std::uniform_int_distribution<size_t> ut(0, tollable.size() - 1);
                EdgeId e = tollable[ut(rng)];
                mp_.set_toll(e, optimize_edge_toll(e));
            }
        }
        std::vector<double> flows;
        double h = cost_under(mp_.tolls(), flows);
        if (h >= out.h_social - cfg_.record_tol && h <= out.h_nash + cfg_.record_tol &&
            h < out.best_cost) {
            out.best_cost = h;
            out.tolls = mp_.tolls();
            out.flows = flows;
        }
        int nnz = 0;
        for (double t : out.tolls)
            if (t > 1e-12) ++nnz;
        double frac = degenerate ? 1.0 : (out.best_cost - out.h_social) / span;
        out.trace.push_back({cfg_.warmup_sweeps + sweep, out.best_cost, frac, nnz});
    }
    out.last_tolls = mp_.tolls();
    out.mp_converged = delta < cfg_.mp.tol;
    return out;
}

std::vector<double> marginal_cost_tolls(const DirectedNetwork& net, const CostModel& cost) {
    auto soc = social_optimum(net, cost);
    std::vector<double> tolls(net.num_edges());
    for (EdgeId e = 0; e < net.num_edges(); ++e)
        tolls[e] = soc.flows[e] * cost.latency(e).deriv();
    return tolls;
}

}  // namespace bilevelmp
