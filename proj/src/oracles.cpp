#include "bilevelmp/oracles.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace bilevelmp {

namespace {

constexpr double kCurvatureFloor = 1e-10;

// Quadratic edge objective sum_e a_e x_e + b_e x_e^2 / 2 minimized over the
// flow polytope. Solved in the dual: node potentials u (u_dest = 0) maximize
// sum Lambda_i u_i - sum_e (max(d_e - a_e, 0))^2 / (2 b_e) with
// d_e = u_head - u_tail; the primal flow is x_e = max(d_e - a_e, 0) / b_e.
struct QpResult {
    std::vector<double> flows;
    std::vector<double> u;
    int iterations = 0;
    double grad_residual = 0.0;
    bool converged = false;
};

std::vector<double> shortest_path_potentials(const DirectedNetwork& net,
                                             const std::vector<double>& w, NodeId dest) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(net.num_nodes(), inf);
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    u[dest] = 0.0;
    pq.push({0.0, dest});
    while (!pq.empty()) {
        auto [d, i] = pq.top();
        pq.pop();
        if (d > u[i]) continue;
        for (EdgeId e : net.in_adj(i)) {
            NodeId j = net.edge(e).head;
            double nd = d + w[e];
            if (nd < u[j] - 1e-15) {
                u[j] = nd;
                pq.push({nd, j});
            }
        }
    }
    for (double& v : u)
        if (!std::isfinite(v)) v = 0.0;
    return u;
}

// Re-solves the QP restricted to the active edges as an equality-constrained
// problem with the true curvatures. The dual Newton step degenerates on edges
// with (near) zero curvature, where the flow is set by conservation rather
// than by the potentials; the KKT solve recovers it exactly.
void primal_polish(const DirectedNetwork& net, const std::vector<double>& a,
                   const std::vector<double>& b, const std::vector<double>& lambda, NodeId dest,
                   QpResult& res) {
    const int n = net.num_nodes();
    const int m = net.num_edges();
    std::vector<int> idx(n, -1);
    int nf = 0;
    for (NodeId i = 0; i < n; ++i)
        if (i != dest) idx[i] = nf++;

    std::vector<char> active(m, 0);
    for (EdgeId e = 0; e < m; ++e) {
        double d = res.u[net.edge(e).head] - res.u[net.edge(e).tail];
        if (d - a[e] > -1e-9 * (1.0 + std::abs(a[e])) || res.flows[e] > 1e-9) active[e] = 1;
    }

    std::vector<double> best_flows, best_u;
    for (int round = 0; round < 30; ++round) {
        std::vector<int> aidx(m, -1);
        int na = 0;
        for (EdgeId e = 0; e < m; ++e)
            if (active[e]) aidx[e] = na++;

        int dim = na + nf;
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
        for (EdgeId e = 0; e < m; ++e) {
            if (!active[e]) continue;
            int k = aidx[e];
            K(k, k) = b[e];
            rhs[k] = -a[e];
            NodeId h = net.edge(e).head, t = net.edge(e).tail;
            if (t != dest) {
                K(k, na + idx[t]) = 1.0;
                K(na + idx[t], k) = 1.0;
            }
            if (h != dest) {
                K(k, na + idx[h]) = -1.0;
                K(na + idx[h], k) = -1.0;
            }
        }
        for (NodeId i = 0; i < n; ++i)
            if (i != dest) rhs[na + idx[i]] = -lambda[i];

        Eigen::VectorXd sol = K.colPivHouseholderQr().solve(rhs);
        double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
        if (!sol.allFinite() || (K * sol - rhs).cwiseAbs().maxCoeff() > 1e-8 * scale) return;

        // Potentials from the constraint multipliers (destination grounded).
        std::vector<double> u(n, 0.0);
        for (NodeId i = 0; i < n; ++i)
            if (i != dest) u[i] = sol[na + idx[i]];

        bool changed = false;
        for (EdgeId e = 0; e < m; ++e) {
            if (active[e] && sol[aidx[e]] < -1e-10) {
                active[e] = 0;
                changed = true;
            }
        }
        if (!changed) {
            for (EdgeId e = 0; e < m; ++e) {
                if (active[e]) continue;
                double slack = a[e] - (u[net.edge(e).head] - u[net.edge(e).tail]);
                if (slack < -1e-9 * (1.0 + std::abs(a[e]))) {
                    active[e] = 1;
                    changed = true;
                }
            }
        }
        if (!changed) {
            best_flows.assign(m, 0.0);
            for (EdgeId e = 0; e < m; ++e)
                if (active[e]) best_flows[e] = std::max(sol[aidx[e]], 0.0);
            best_u = u;
            break;
        }
    }
    if (best_flows.empty()) return;

    res.flows = best_flows;
    res.u = best_u;
    double gmax = 0.0;
    for (NodeId i = 0; i < n; ++i) {
        if (i == dest) continue;
        double r = lambda[i];
        for (EdgeId e : net.adj(i)) r += net.incidence(i, e) * res.flows[e];
        gmax = std::max(gmax, std::abs(r));
    }
    res.grad_residual = gmax;
    res.converged = true;
}

QpResult solve_flow_qp(const DirectedNetwork& net, const std::vector<double>& a,
                       const std::vector<double>& b_in, const std::vector<double>& lambda,
                       NodeId dest, const std::vector<double>* u_init) {
    const int n = net.num_nodes();
    const int m = net.num_edges();
    std::vector<double> b(b_in);
    for (double& v : b) v = std::max(v, kCurvatureFloor);

    QpResult res;
    res.u = u_init ? *u_init : shortest_path_potentials(net, a, dest);
    res.u[dest] = 0.0;

    // Dense index of free nodes (all but dest).
    std::vector<int> idx(n, -1);
    int nf = 0;
    for (NodeId i = 0; i < n; ++i)
        if (i != dest) idx[i] = nf++;

    auto flows_of = [&](const std::vector<double>& u, std::vector<double>& x) {
        for (EdgeId e = 0; e < m; ++e) {
            double d = u[net.edge(e).head] - u[net.edge(e).tail];
            x[e] = std::max(d - a[e], 0.0) / b[e];
        }
    };
    auto dual_value = [&](const std::vector<double>& u) {
        double val = 0.0;
        for (NodeId i = 0; i < n; ++i)
            if (i != dest) val += lambda[i] * u[i];
        for (EdgeId e = 0; e < m; ++e) {
            double s = std::max(u[net.edge(e).head] - u[net.edge(e).tail] - a[e], 0.0);
            val -= s * s / (2.0 * b[e]);
        }
        return val;
    };

    std::vector<double> x(m), grad(nf);
    double lam_scale = 1.0;
    for (NodeId i = 0; i < n; ++i)
        if (i != dest) lam_scale = std::max(lam_scale, std::abs(lambda[i]));

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    const int max_iter = 300;
    for (int it = 0; it < max_iter; ++it) {
        flows_of(res.u, x);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (NodeId i = 0; i < n; ++i)
            if (i != dest) grad[idx[i]] = lambda[i];
        for (EdgeId e = 0; e < m; ++e) {
            NodeId h = net.edge(e).head, t = net.edge(e).tail;
            if (h != dest) grad[idx[h]] -= x[e];
            if (t != dest) grad[idx[t]] += x[e];
        }
        double gmax = 0.0;
        for (double g : grad) gmax = std::max(gmax, std::abs(g));
        res.grad_residual = gmax;
        res.iterations = it;
        if (gmax < 1e-12 * lam_scale) {
            res.converged = true;
            break;
        }

        // Hessian: weighted Laplacian over the edges active at the current u
        // (kinks counted as active so that tight shortest-path edges enter).
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(4 * m + nf);
        for (EdgeId e = 0; e < m; ++e) {
            NodeId h = net.edge(e).head, t = net.edge(e).tail;
            double d = res.u[h] - res.u[t];
            if (d - a[e] < -1e-12) continue;
            double w = 1.0 / b[e];
            if (h != dest) trip.emplace_back(idx[h], idx[h], w);
            if (t != dest) trip.emplace_back(idx[t], idx[t], w);
            if (h != dest && t != dest) {
                trip.emplace_back(idx[h], idx[t], -w);
                trip.emplace_back(idx[t], idx[h], -w);
            }
        }
        for (int i = 0; i < nf; ++i) trip.emplace_back(i, i, 1e-10);
        Eigen::SparseMatrix<double> H(nf, nf);
        H.setFromTriplets(trip.begin(), trip.end());
        ldlt.compute(H);
        Eigen::VectorXd g(nf);
        for (int i = 0; i < nf; ++i) g[i] = grad[i];
        Eigen::VectorXd step = ldlt.solve(g);
        if (!step.allFinite()) break;

        double base = dual_value(res.u);
        double slope = g.dot(step);
        double t_step = 1.0;
        std::vector<double> trial(res.u);
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (NodeId i = 0; i < n; ++i)
                if (i != dest) trial[i] = res.u[i] + t_step * step[idx[i]];
            if (dual_value(trial) >= base + 1e-4 * t_step * slope) {
                accepted = true;
                break;
            }
            t_step *= 0.5;
        }
        if (!accepted) break;
        res.u = trial;
        if (t_step * step.cwiseAbs().maxCoeff() < 1e-13) break;
    }
    res.flows.assign(m, 0.0);
    flows_of(res.u, res.flows);
    primal_polish(net, a, b_in, lambda, dest, res);
    return res;
}

OracleReport report_from_qp(const DirectedNetwork& net, const std::vector<double>& a,
                            const std::vector<double>& b, const QpResult& qp,
                            double objective) {
    OracleReport rep;
    rep.flows = qp.flows;
    rep.objective = objective;
    rep.iterations = qp.iterations;
    rep.feasibility_residual = qp.grad_residual;
    double viol = 0.0;
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        double w = a[e] + b[e] * qp.flows[e];
        double slack = w + qp.u[net.edge(e).tail] - qp.u[net.edge(e).head];
        viol = std::max(viol, -slack);
        if (qp.flows[e] > 1e-12) viol = std::max(viol, std::abs(slack));
    }
    rep.optimality_residual = viol;
    rep.certified = qp.converged && qp.grad_residual < 1e-10 && viol < 1e-9;
    return rep;
}

}  // namespace

OracleReport convex_equilibrium(const DirectedNetwork& net, const CostModel& cost,
                                const std::vector<double>& tolls) {
    int m = net.num_edges();
    std::vector<double> a(m), b(m);
    for (EdgeId e = 0; e < m; ++e) {
        a[e] = cost.latency(e).l0 + (tolls.empty() ? 0.0 : tolls[e]);
        b[e] = cost.latency(e).l1;
    }
    QpResult qp = solve_flow_qp(net, a, b, net.lambda_vec(), net.destination(), nullptr);
    return report_from_qp(net, a, b, qp, cost.potential(qp.flows, tolls));
}

OracleReport social_optimum(const DirectedNetwork& net, const CostModel& cost) {
    int m = net.num_edges();
    std::vector<double> a(m), b(m);
    for (EdgeId e = 0; e < m; ++e) {
        a[e] = cost.latency(e).l0;
        b[e] = 2.0 * cost.latency(e).l1;
    }
    QpResult qp = solve_flow_qp(net, a, b, net.lambda_vec(), net.destination(), nullptr);
    return report_from_qp(net, a, b, qp, cost.social_cost(qp.flows));
}

MulticlassOracleReport convex_equilibrium_multiclass(
    const DirectedNetwork& net, const CostModel& cost, const std::vector<double>& tolls,
    const std::vector<std::vector<double>>& class_lambda, const std::vector<NodeId>& class_dest) {
    const int m = net.num_edges();
    const int nc = static_cast<int>(class_lambda.size());
    MulticlassOracleReport rep;
    rep.class_flows.assign(nc, std::vector<double>(m, 0.0));
    rep.total_flows.assign(m, 0.0);
    std::vector<std::vector<double>> u(nc);

    std::vector<double> base_a(m), b(m);
    for (EdgeId e = 0; e < m; ++e) {
        base_a[e] = cost.latency(e).l0 + (tolls.empty() ? 0.0 : tolls[e]);
        b[e] = cost.latency(e).l1;
    }

    const int max_passes = 4000;
    for (int pass = 0; pass < max_passes; ++pass) {
        double max_change = 0.0;
        for (int c = 0; c < nc; ++c) {
            // Other classes fixed: class-c potential has its linear coefficient
            // shifted by the congestion of the remaining flow.
            std::vector<double> a(m);
            for (EdgeId e = 0; e < m; ++e)
                a[e] = base_a[e] + b[e] * (rep.total_flows[e] - rep.class_flows[c][e]);
            QpResult qp = solve_flow_qp(net, a, b, class_lambda[c], class_dest[c],
                                        u[c].empty() ? nullptr : &u[c]);
            u[c] = qp.u;
            for (EdgeId e = 0; e < m; ++e) {
                double delta = qp.flows[e] - rep.class_flows[c][e];
                max_change = std::max(max_change, std::abs(delta));
                rep.total_flows[e] += delta;
                rep.class_flows[c][e] = qp.flows[e];
            }
        }
        rep.passes = pass + 1;
        if (max_change < 1e-12) break;
    }

    // Alternating QP rounds can leave round-off residue just below zero.
    for (int c = 0; c < nc; ++c)
        for (EdgeId e = 0; e < m; ++e)
            if (rep.class_flows[c][e] < 0.0 && rep.class_flows[c][e] > -1e-9)
                rep.class_flows[c][e] = 0.0;
    for (EdgeId e = 0; e < m; ++e) {
        rep.total_flows[e] = 0.0;
        for (int c = 0; c < nc; ++c) rep.total_flows[e] += rep.class_flows[c][e];
    }
    WardropReport wr = verify_wardrop_multiclass(net, cost, tolls, rep.class_flows, class_lambda,
                                                 class_dest, 1e-8);
    rep.certified = wr.pass;
    rep.objective = cost.potential(rep.total_flows, tolls);
    return rep;
}

namespace {

void enumerate_paths(const DirectedNetwork& net, NodeId cur, NodeId dest,
                     std::vector<char>& visited, std::vector<EdgeId>& stack,
                     std::vector<std::vector<EdgeId>>& out) {
    if (cur == dest) {
        out.push_back(stack);
        return;
    }
    if (out.size() > 5000) throw NetworkError("path enumeration exploded");
    visited[cur] = 1;
    for (EdgeId e : net.out_adj(cur)) {
        NodeId nxt = net.edge(e).tail;
        if (visited[nxt]) continue;
        stack.push_back(e);
        enumerate_paths(net, nxt, dest, visited, stack, out);
        stack.pop_back();
    }
    visited[cur] = 0;
}

// Multisets of size k over p items, as count vectors.
void enumerate_counts(int p, int k, int pos, std::vector<int>& cur,
                      std::vector<std::vector<int>>& out) {
    if (pos == p - 1) {
        cur[pos] = k;
        out.push_back(cur);
        return;
    }
    for (int c = 0; c <= k; ++c) {
        cur[pos] = c;
        enumerate_counts(p, k - c, pos + 1, cur, out);
    }
}

}  // namespace

AtomicOracleReport atomic_bruteforce(const DirectedNetwork& net, const CostModel& cost,
                                     const std::vector<double>& tolls) {
    double tot = net.total_lambda();
    if (tot > 8.0 + 1e-9 || net.num_edges() > 14)
        throw NetworkError("instance too large for brute-force enumeration");

    struct SourceChoices {
        std::vector<std::vector<EdgeId>> paths;
        std::vector<std::vector<int>> splits;
    };
    std::vector<SourceChoices> sources;
    for (NodeId i = 0; i < net.num_nodes(); ++i) {
        if (net.is_destination(i) || net.lambda(i) <= 0) continue;
        long long users = std::llround(net.lambda(i));
        if (std::abs(net.lambda(i) - users) > 1e-9)
            throw NetworkError("atomic instance requires integer resources");
        SourceChoices sc;
        std::vector<char> visited(net.num_nodes(), 0);
        std::vector<EdgeId> stack;
        enumerate_paths(net, i, net.destination(), visited, stack, sc.paths);
        if (sc.paths.empty()) throw NetworkError("source cannot reach destination");
        std::vector<int> cur(sc.paths.size(), 0);
        enumerate_counts(static_cast<int>(sc.paths.size()), static_cast<int>(users), 0, cur,
                         sc.splits);
        sources.push_back(std::move(sc));
    }

    AtomicOracleReport rep;
    rep.min_potential = std::numeric_limits<double>::infinity();
    std::vector<long long> flows(net.num_edges(), 0);

    std::function<void(size_t)> recurse = [&](size_t s) {
        if (s == sources.size()) {
            ++rep.configurations;
            double phi = 0.0;
            for (EdgeId e = 0; e < net.num_edges(); ++e)
                phi += cost.phi_atomic(e, flows[e], tolls.empty() ? 0.0 : tolls[e]);
            if (phi < rep.min_potential - 1e-12) {
                rep.min_potential = phi;
                rep.argmin_flows.clear();
                rep.argmin_flows.push_back(flows);
            } else if (phi < rep.min_potential + 1e-12) {
                bool dup = false;
                for (const auto& f : rep.argmin_flows)
                    if (f == flows) dup = true;
                if (!dup) rep.argmin_flows.push_back(flows);
            }
            return;
        }
        const auto& sc = sources[s];
        for (const auto& split : sc.splits) {
            for (size_t p = 0; p < sc.paths.size(); ++p)
                for (EdgeId e : sc.paths[p]) flows[e] += split[p];
            recurse(s + 1);
            for (size_t p = 0; p < sc.paths.size(); ++p)
                for (EdgeId e : sc.paths[p]) flows[e] -= split[p];
        }
    };
    recurse(0);
    if (sources.empty()) {
        rep.configurations = 1;
        rep.min_potential = 0.0;
        rep.argmin_flows.push_back(flows);
    }
    return rep;
}

LaplacianReport laplacian_solve(const UndirectedNetwork& net) {
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

    LaplacianReport rep;
    rep.potentials.assign(n, 0.0);
    for (NodeId i = 0; i < n; ++i)
        if (i != ref) rep.potentials[i] = mu[idx[i]];
    rep.flows.assign(m, 0.0);
    for (EdgeId e = 0; e < m; ++e) {
        const auto& ed = net.edge(e);
        // Flow sent from endpoint a toward endpoint b.
        rep.flows[e] = (rep.potentials[ed.a] - rep.potentials[ed.b]) / ed.r;
    }
    return rep;
}

std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& point, double h) {
    std::vector<double> grad(point.size());
    std::vector<double> p(point);
    for (size_t i = 0; i < point.size(); ++i) {
        p[i] = point[i] + h;
        double fp = f(p);
        p[i] = point[i] - h;
        double fm = f(p);
        p[i] = point[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace bilevelmp
