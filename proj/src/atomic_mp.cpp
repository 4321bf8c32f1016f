#include "bilevelmp/atomic_mp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>

#include "bilevelmp/cavity.hpp"

namespace bilevelmp {

namespace {

double entry_delta(double a, double b) {
    bool fa = std::isfinite(a), fb = std::isfinite(b);
    if (fa && fb) return std::abs(a - b);
    if (!fa && !fb) return 0.0;
    return 1.0;
}

long long sign_of(long long v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

}  // namespace

AtomicMp::AtomicMp(const DirectedNetwork& net, const CostModel& cost, std::vector<double> tolls,
                   AtomicConfig cfg)
    : net_(net), cost_(cost), tolls_(std::move(tolls)), cfg_(std::move(cfg)) {
    if (tolls_.empty()) tolls_.assign(net_.num_edges(), 0.0);
    for (NodeId i = 0; i < net_.num_nodes(); ++i) {
        if (net_.is_destination(i)) continue;
        double l = net_.lambda(i);
        if (l < 0 || std::abs(l - std::llround(l)) > 1e-9)
            throw NetworkError("atomic solver requires non-negative integer resources");
    }
    int w = 2 * cfg_.window + 1;
    lower_.assign(num_slots(), GridMessage{std::vector<double>(w, 0.0), false});
    upper_.assign(num_slots(), GridMessage{std::vector<double>(w, 0.0), false});
    xt_.assign(num_slots(), 0);
    bias_.assign(net_.num_edges(), 0.0);
}

void AtomicMp::init(std::mt19937_64& rng) {
    long long tot = std::llround(net_.total_lambda());
    std::uniform_int_distribution<long long> ux(0, std::max<long long>(tot, 1));
    std::uniform_real_distribution<double> uh(0.0, 0.1);
    int w = 2 * cfg_.window + 1;
    for (int s = 0; s < num_slots(); ++s) {
        xt_[s] = ux(rng);
        for (int k = 0; k < w; ++k) {
            lower_[s].h[k] = uh(rng);
            upper_[s].h[k] = uh(rng);
        }
        lower_[s].voided = upper_[s].voided = false;
    }
    if (cfg_.bias_field) {
        std::uniform_real_distribution<double> ub(0.0, cfg_.bias_scale);
        for (EdgeId e = 0; e < net_.num_edges(); ++e) bias_[e] = ub(rng);
    }
}

double AtomicMp::edge_phi(EdgeId e, long long x) const {
    double v = cost_.phi_atomic(e, x, tolls_[e]);
    if (cfg_.bias_field) v += bias_[e] * static_cast<double>(x);
    return v;
}

double AtomicMp::grid_value(const std::vector<GridMessage>& layer, int s, long long x) const {
    long long m = x - xt_[s];
    if (m < -cfg_.window || m > cfg_.window) return kInfVal;
    if (layer[s].voided) return 0.0;
    return layer[s].h[m + cfg_.window];
}

double AtomicMp::update_message(std::vector<GridMessage>& layer, bool social, NodeId i,
                                EdgeId e) {
    int M = cfg_.window;
    int w = 2 * M + 1;
    int s = slot(i, e);
    GridMessage next{std::vector<double>(w, kInfVal), false};

    if (i == net_.destination()) {
        std::fill(next.h.begin(), next.h.end(), 0.0);
    } else {
        struct Branch {
            int sign;
            int s2;
            EdgeId ep;
            const GridMessage* msg;
        };
        std::vector<Branch> up;
        for (EdgeId ep : net_.adj(i)) {
            if (ep == e) continue;
            const auto& ed = net_.edge(ep);
            NodeId k = ed.head == i ? ed.tail : ed.head;
            up.push_back({net_.incidence(i, ep), slot(k, ep), ep, &layer[slot(k, ep)]});
        }
        long long lam = std::llround(net_.lambda(i));
        int b_ie = net_.incidence(i, e);
        int nb = static_cast<int>(up.size());
        std::vector<int> off(nb, -M);

        for (int m = -M; m <= M; ++m) {
            long long xe = xt_[s] + m;
            if (xe < 0) continue;
            double best = kInfVal;
            // odometer over the joint upstream window
            std::fill(off.begin(), off.end(), -M);
            while (true) {
                long long res = lam + b_ie * xe;
                double val = 0.0;
                bool okc = true;
                for (int k = 0; k < nb && okc; ++k) {
                    long long x2 = xt_[up[k].s2] + off[k];
                    if (x2 < 0) {
                        okc = false;
                        break;
                    }
                    double hv = up[k].msg->voided ? 0.0 : up[k].msg->h[off[k] + M];
                    if (!std::isfinite(hv)) {
                        okc = false;
                        break;
                    }
                    double pv = social ? cost_.sigma_atomic(up[k].ep, x2)
                                       : edge_phi(up[k].ep, x2);
                    val += hv + pv;
                    res += up[k].sign * x2;
                }
                if (okc && res == 0 && val < best) best = val;
                int k = 0;
                for (; k < nb; ++k) {
                    if (++off[k] <= M) break;
                    off[k] = -M;
                }
                if (k == nb) break;
            }
            next.h[m + M] = best;
        }
        double mn = kInfVal;
        for (double v : next.h) mn = std::min(mn, v);
        if (std::isfinite(mn)) {
            for (double& v : next.h)
                if (std::isfinite(v)) v -= mn;
        } else {
            next.voided = true;
        }
    }

    GridMessage& cur = layer[s];
    double delta = cur.voided != next.voided ? 1.0 : 0.0;
    for (int k = 0; k < w; ++k) delta = std::max(delta, entry_delta(cur.h[k], next.h[k]));
    cur = std::move(next);
    return delta;
}

long long AtomicMp::pick_minimizer(NodeId i, EdgeId e, const std::vector<long long>& cands,
                                   const std::vector<double>& vals) const {
    double best = kInfVal;
    for (double v : vals) best = std::min(best, v);
    double tol = 1e-9 * (1.0 + std::abs(best));
    long long pick = -1;
    long long pick_res = 0;
    bool have = false;
    long long lam = net_.is_destination(i) ? 0 : std::llround(net_.lambda(i));
    int b_ie = net_.incidence(i, e);
    long long base = lam;
    for (EdgeId ep : net_.adj(i)) {
        if (ep == e) continue;
        const auto& ed = net_.edge(ep);
        NodeId k = ed.head == i ? ed.tail : ed.head;
        base += net_.incidence(i, ep) * xt_[slot(k, ep)];
    }
    for (size_t k = 0; k < cands.size(); ++k) {
        if (vals[k] > best + tol) continue;
        long long r = std::llabs(base + b_ie * cands[k]);
        if (cfg_.bias_field) r = 0;  // bias already broke the tie in vals
        if (!have || r < pick_res || (r == pick_res && cands[k] < pick)) {
            pick = cands[k];
            pick_res = r;
            have = true;
        }
    }
    return pick;
}

long long AtomicMp::marginal_flow(EdgeId e, bool& ok) const {
    const auto& ed = net_.edge(e);
    int si = slot(ed.head, e), sj = slot(ed.tail, e);
    long long pick = -1;
    double best = kInfVal;
    for (int m = -cfg_.window; m <= cfg_.window; ++m) {
        long long x = xt_[si] + m;
        if (x < 0) continue;
        double v = grid_value(lower_, si, x) + grid_value(lower_, sj, x) + edge_phi(e, x);
        if (v < best - 1e-12 || (v < best + 1e-12 && (pick < 0 || x < pick))) {
            best = v;
            pick = x;
        }
    }
    ok = std::isfinite(best);
    return ok ? pick : 0;
}

long long AtomicMp::social_target_flow(EdgeId e, bool& ok) const {
    const auto& ed = net_.edge(e);
    int si = slot(ed.head, e), sj = slot(ed.tail, e);
    long long pick = -1;
    double best = kInfVal;
    for (int m = -cfg_.window; m <= cfg_.window; ++m) {
        long long x = xt_[si] + m;
        if (x < 0) continue;
        double v = grid_value(upper_, si, x) + grid_value(upper_, sj, x) + cost_.sigma_atomic(e, x);
        if (v < best - 1e-12 || (v < best + 1e-12 && (pick < 0 || x < pick))) {
            best = v;
            pick = x;
        }
    }
    ok = std::isfinite(best);
    return ok ? pick : 0;
}

long long AtomicMp::update_working_point(NodeId i, EdgeId e) {
    int si = slot(i, e);
    const auto& ed = net_.edge(e);
    NodeId j = ed.head == i ? ed.tail : ed.head;
    int sj = slot(j, e);

    std::vector<long long> cands;
    std::vector<double> vals;
    for (int m = -cfg_.window; m <= cfg_.window; ++m) {
        long long x = xt_[si] + m;
        if (x < 0) continue;
        double v = grid_value(lower_, si, x) + grid_value(lower_, sj, x) + edge_phi(e, x);
        if (std::isfinite(v)) {
            cands.push_back(x);
            vals.push_back(v);
        }
    }
    long long step;
    if (cands.empty()) {
        step = sign_of(xt_[sj] - xt_[si]);
    } else {
        long long x_star = pick_minimizer(i, e, cands, vals);
        step = sign_of(x_star - xt_[si]);
    }
    if (step != 0) {
        // shift the stored windows so entries keep addressing the same flows
        xt_[si] += step;
        for (auto* layer : {&lower_, &upper_}) {
            GridMessage& g = (*layer)[si];
            std::vector<double> nh(g.h.size(), kInfVal);
            int w = static_cast<int>(g.h.size());
            for (int k = 0; k < w; ++k) {
                int src = k + static_cast<int>(step);
                if (src >= 0 && src < w) nh[k] = g.h[src];
            }
            g.h = std::move(nh);
        }
    }
    return std::llabs(step);
}

double AtomicMp::update_random(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ue(0, net_.num_edges() - 1);
    std::uniform_int_distribution<int> us(0, 1);
    EdgeId e = ue(rng);
    const auto& ed = net_.edge(e);
    NodeId i = us(rng) == 0 ? ed.head : ed.tail;
    double d1 = update_message(lower_, false, i, e);
    double d2 = update_message(upper_, true, i, e);
    double d3 = static_cast<double>(update_working_point(i, e));
    return std::max({d1, d2, d3});
}

double AtomicMp::run_sweep(std::mt19937_64& rng) {
    long long steps = static_cast<long long>(cfg_.sweep_factor) * net_.num_edges();
    double delta = 0.0;
    for (long long t = 0; t < steps; ++t) delta = std::max(delta, update_random(rng));
    return delta;
}

std::vector<long long> AtomicMp::extract_flows(bool& repaired) const {
    std::vector<long long> flows(net_.num_edges(), 0);
    for (EdgeId e = 0; e < net_.num_edges(); ++e) {
        const auto& ed = net_.edge(e);
        int si = slot(ed.head, e), sj = slot(ed.tail, e);
        std::vector<long long> cands;
        std::vector<double> vals;
        for (int m = -cfg_.window; m <= cfg_.window; ++m) {
            long long x = xt_[si] + m;
            if (x < 0) continue;
            double v = grid_value(lower_, si, x) + grid_value(lower_, sj, x) + edge_phi(e, x);
            if (std::isfinite(v)) {
                cands.push_back(x);
                vals.push_back(v);
            }
        }
        long long x = cands.empty() ? (xt_[si] + xt_[sj] + 1) / 2
                                    : pick_minimizer(ed.head, e, cands, vals);
        flows[e] = std::max<long long>(x, 0);
    }
    auto fixed = repair_integer_flows(net_, flows);
    // Cancel residual cycles that lower the potential: a unit reroute of any
    // player is such a cycle, so the result is stable under single-player
    // deviations.
    cancel_negative_cycles(fixed);
    repaired = fixed != flows;
    return fixed;
}

void AtomicMp::cancel_negative_cycles(std::vector<long long>& flows) const {
    int n = net_.num_nodes();
    int m = net_.num_edges();
    struct Arc {
        NodeId u, v;
        EdgeId e;
        int dir;
        double cost;
    };
    for (int round = 0; round < 64 * (m + 1); ++round) {
        std::vector<Arc> arcs;
        arcs.reserve(2 * m);
        for (EdgeId e = 0; e < m; ++e) {
            const auto& ed = net_.edge(e);
            double step_up = cost_.latency(e)(static_cast<double>(flows[e] + 1)) + tolls_[e];
            arcs.push_back({ed.head, ed.tail, e, 1, step_up});
            if (flows[e] > 0) {
                double step_dn = cost_.latency(e)(static_cast<double>(flows[e])) + tolls_[e];
                arcs.push_back({ed.tail, ed.head, e, -1, -step_dn});
            }
        }
        std::vector<double> dist(n, 0.0);
        std::vector<int> parent(n, -1);
        int touched = -1;
        for (int it = 0; it < n; ++it) {
            touched = -1;
            for (int a = 0; a < static_cast<int>(arcs.size()); ++a) {
                const Arc& ar = arcs[a];
                if (dist[ar.u] + ar.cost < dist[ar.v] - 1e-12) {
                    dist[ar.v] = dist[ar.u] + ar.cost;
                    parent[ar.v] = a;
                    touched = ar.v;
                }
            }
            if (touched < 0) break;
        }
        if (touched < 0) return;
        // walk back into the cycle, then collect and push one unit around it
        NodeId x = touched;
        for (int it = 0; it < n; ++it) x = arcs[parent[x]].u;
        std::vector<int> cyc;
        NodeId y = x;
        do {
            int a = parent[y];
            cyc.push_back(a);
            y = arcs[a].u;
        } while (y != x && static_cast<int>(cyc.size()) <= n);
        for (int a : cyc) flows[arcs[a].e] += arcs[a].dir;
        for (long long f : flows)
            if (f < 0) throw NetworkError("cycle canceling produced negative flow");
    }
}

AtomicResult AtomicMp::run() {
    std::mt19937_64 rng(cfg_.seed);
    init(rng);
    AtomicResult res;
    for (int sw = 1; sw <= cfg_.max_sweeps; ++sw) {
        double delta = run_sweep(rng);
        res.sweeps = sw;
        if (delta < cfg_.tol) {
            res.converged = true;
            break;
        }
    }
    res.flows = extract_flows(res.repaired);
    std::vector<double> xf(res.flows.begin(), res.flows.end());
    res.potential = 0.0;
    for (EdgeId e = 0; e < net_.num_edges(); ++e)
        res.potential += cost_.phi_atomic(e, res.flows[e], tolls_[e]);
    res.social_cost = cost_.social_cost(xf);
    return res;
}

std::vector<long long> repair_integer_flows(const DirectedNetwork& net,
                                            std::vector<long long> flows) {
    int n = net.num_nodes();
    NodeId dest = net.destination();
    // Residuals with the destination demanding the whole supply, so they sum
    // to zero and every unit of surplus has a matching deficit somewhere.
    std::vector<long long> res(n, 0);
    long long total = 0;
    for (NodeId i = 0; i < n; ++i) {
        if (i == dest) continue;
        res[i] = std::llround(net.lambda(i));
        total += res[i];
    }
    res[dest] = -total;
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        const auto& ed = net.edge(e);
        res[ed.head] -= flows[e];
        res[ed.tail] += flows[e];
    }
    // Residual arcs: the edge direction always admits one more unit; the
    // reverse admits removal while the flow is positive. A surplus node is
    // connected to some deficit node in this graph because a feasible flow
    // exists and the difference to it decomposes into residual paths.
    auto bfs = [&](NodeId from, std::vector<std::pair<EdgeId, int>>& path) -> NodeId {
        std::vector<int> prev_edge(n, -1), prev_dir(n, 0);
        std::vector<char> seen(n, 0);
        std::deque<NodeId> q{from};
        seen[from] = 1;
        NodeId hit = -1;
        while (!q.empty() && hit < 0) {
            NodeId u = q.front();
            q.pop_front();
            for (EdgeId e : net.adj(u)) {
                const auto& ed = net.edge(e);
                NodeId v;
                int dir;
                if (ed.head == u) {
                    v = ed.tail;
                    dir = 1;  // push one more unit along the edge
                } else {
                    v = ed.head;
                    dir = -1;  // remove one unit of existing flow
                    if (flows[e] <= 0) continue;
                }
                if (seen[v]) continue;
                seen[v] = 1;
                prev_edge[v] = e;
                prev_dir[v] = dir;
                if (res[v] < 0) {
                    hit = v;
                    break;
                }
                q.push_back(v);
            }
        }
        if (hit < 0) return -1;
        path.clear();
        for (NodeId v = hit; v != from;) {
            EdgeId e = prev_edge[v];
            int dir = prev_dir[v];
            path.push_back({e, dir});
            const auto& ed = net.edge(e);
            v = dir > 0 ? ed.head : ed.tail;
        }
        return hit;
    };

    for (NodeId i = 0; i < n; ++i) {
        while (res[i] > 0) {
            std::vector<std::pair<EdgeId, int>> path;
            NodeId d = bfs(i, path);
            if (d < 0) throw NetworkError("integer flow repair failed");
            for (auto [e, dir] : path) flows[e] += dir;
            --res[i];
            ++res[d];
        }
    }
    for (EdgeId e = 0; e < net.num_edges(); ++e)
        if (flows[e] < 0) throw NetworkError("integer flow repair produced negative flow");
    return flows;
}

AtomicResult run_atomic_equilibrium(const DirectedNetwork& net, const CostModel& cost,
                                    const std::vector<double>& tolls, const AtomicConfig& cfg) {
    AtomicMp mp(net, cost, tolls, cfg);
    return mp.run();
}

AtomicBilevelResult run_atomic_bilevel(const DirectedNetwork& net, const CostModel& cost,
                                       const AtomicBilevelConfig& cfg) {
    AtomicBilevelResult out;
    {
        AtomicConfig ncfg = cfg.mp;
        auto nash = run_atomic_equilibrium(net, cost, {}, ncfg);
        out.nash_cost = nash.social_cost;
        out.social_cost = nash.social_cost;
        out.flows = nash.flows;
        out.tolls.assign(net.num_edges(), 0.0);
    }
    double dtau = cfg.dtau_fraction * cfg.tau_max;
    long long interval = cfg.toll_interval > 0
                             ? cfg.toll_interval
                             : std::max<long long>(1, 2LL * net.num_edges() / 5);

    for (int trial = 0; trial < cfg.restarts; ++trial) {
        AtomicConfig mcfg = cfg.mp;
        mcfg.seed = cfg.mp.seed + 7919ULL * trial;
        AtomicMp mp(net, cost, {}, mcfg);
        std::mt19937_64 rng(mcfg.seed);
        mp.init(rng);
        for (int w = 0; w < cfg.warmup_sweeps; ++w) mp.run_sweep(rng);

        double best = out.nash_cost;
        std::vector<double> best_tolls(net.num_edges(), 0.0);
        std::vector<long long> best_flows = out.flows;
        std::vector<std::pair<int, double>> trace{{0, best}};

        long long steps_per_sweep =
            static_cast<long long>(mcfg.sweep_factor) * net.num_edges();
        long long step = 0;
        std::uniform_int_distribution<int> ue(0, net.num_edges() - 1);
        for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
            for (long long t = 0; t < steps_per_sweep; ++t) {
                mp.update_random(rng);
                if (++step % interval == 0) {
                    EdgeId e = ue(rng);
                    bool ok1 = false, ok2 = false;
                    long long xn = mp.marginal_flow(e, ok1);
                    long long xs = mp.social_target_flow(e, ok2);
                    if (ok1 && ok2 && xn != xs) {
                        double tau = mp.tolls()[e] + (xn > xs ? dtau : -dtau);
                        mp.set_toll(e, std::clamp(tau, 0.0, cfg.tau_max));
                    }
                }
            }
            bool repaired = false;
            auto flows = mp.extract_flows(repaired);
            std::vector<double> xf(flows.begin(), flows.end());
            double h = cost.social_cost(xf);
            if (h < best) {
                best = h;
                best_tolls = mp.tolls();
                best_flows = flows;
            }
            trace.push_back({sweep, best});
        }
        if (best < out.social_cost) {
            out.social_cost = best;
            out.tolls = best_tolls;
            out.flows = best_flows;
            out.trace = trace;
        } else if (out.trace.empty()) {
            out.trace = trace;
        }
    }
    return out;
}

std::vector<double> threshold_tolls(const DirectedNetwork& net, const CostModel& cost,
                                    const std::vector<double>& tolls, double eps,
                                    const AtomicConfig& cfg) {
    std::vector<double> kept(tolls);
    for (double& t : kept)
        if (t < eps) t = 0.0;
    if (kept == tolls) return kept;
    auto full = run_atomic_equilibrium(net, cost, tolls, cfg);
    auto thin = run_atomic_equilibrium(net, cost, kept, cfg);
    return thin.social_cost <= full.social_cost + 1e-9 ? kept : tolls;
}

}  // namespace bilevelmp
