#include "bilevelmp/cost.hpp"

#include <cmath>
#include <limits>
#include <queue>

namespace bilevelmp {

double CostModel::potential(const std::vector<double>& flows,
                            const std::vector<double>& tolls) const {
    double val = 0.0;
    for (EdgeId e = 0; e < num_edges(); ++e) {
        if (flows[e] < 0) throw std::domain_error("negative flow");
        val += phi(e, flows[e], tolls.empty() ? 0.0 : tolls[e]);
    }
    return val;
}

double CostModel::social_cost(const std::vector<double>& flows) const {
    double val = 0.0;
    for (EdgeId e = 0; e < num_edges(); ++e) {
        if (flows[e] < 0) throw std::domain_error("negative flow");
        val += sigma(e, flows[e]);
    }
    return val;
}

namespace {

// Dijkstra on reversed edges from the destination: u[i] = shortest cost from
// node i to dest under the given edge weights.
std::vector<double> potentials_to_dest(const DirectedNetwork& net, const std::vector<double>& w,
                                       NodeId dest) {
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
    return u;
}

}  // namespace

WardropReport verify_wardrop(const DirectedNetwork& net, const CostModel& cost,
                             const std::vector<double>& tolls, const std::vector<double>& flows,
                             double tol) {
    WardropReport rep;
    rep.feasible = true;
    for (NodeId i = 0; i < net.num_nodes(); ++i) {
        if (net.is_destination(i)) continue;
        double r = net.lambda(i);
        for (EdgeId e : net.adj(i)) r += net.incidence(i, e) * flows[e];
        rep.max_residual = std::max(rep.max_residual, std::abs(r));
    }
    for (double x : flows)
        if (x < -tol) rep.feasible = false;
    if (rep.max_residual > std::sqrt(tol)) rep.feasible = false;
    if (!rep.feasible) return rep;

    std::vector<double> w(net.num_edges());
    for (EdgeId e = 0; e < net.num_edges(); ++e)
        w[e] = cost.phi_d1(e, std::max(flows[e], 0.0), tolls.empty() ? 0.0 : tolls[e]);
    std::vector<double> u = potentials_to_dest(net, w, net.destination());
    rep.node_potentials = u;
    rep.pass = true;
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        NodeId i = net.edge(e).head, j = net.edge(e).tail;
        double slack = w[e] + u[j] - u[i];
        if (slack < -tol) rep.pass = false;
        if (flows[e] > tol) {
            rep.max_violation = std::max(rep.max_violation, std::abs(slack));
            if (std::abs(slack) > tol) rep.pass = false;
        }
    }
    return rep;
}

WardropReport verify_wardrop_multiclass(const DirectedNetwork& net, const CostModel& cost,
                                        const std::vector<double>& tolls,
                                        const std::vector<std::vector<double>>& class_flows,
                                        const std::vector<std::vector<double>>& class_lambda,
                                        const std::vector<NodeId>& class_dest, double tol) {
    WardropReport rep;
    rep.feasible = true;
    rep.pass = true;
    int nc = static_cast<int>(class_flows.size());
    std::vector<double> total(net.num_edges(), 0.0);
    for (const auto& xf : class_flows)
        for (EdgeId e = 0; e < net.num_edges(); ++e) total[e] += xf[e];

    std::vector<double> w(net.num_edges());
    for (EdgeId e = 0; e < net.num_edges(); ++e)
        w[e] = cost.phi_d1(e, std::max(total[e], 0.0), tolls.empty() ? 0.0 : tolls[e]);

    for (int a = 0; a < nc; ++a) {
        for (NodeId i = 0; i < net.num_nodes(); ++i) {
            if (i == class_dest[a]) continue;
            double r = class_lambda[a][i];
            for (EdgeId e : net.adj(i)) r += net.incidence(i, e) * class_flows[a][e];
            rep.max_residual = std::max(rep.max_residual, std::abs(r));
        }
        for (double x : class_flows[a])
            if (x < -tol) rep.feasible = false;
        std::vector<double> u = potentials_to_dest(net, w, class_dest[a]);
        for (EdgeId e = 0; e < net.num_edges(); ++e) {
            NodeId i = net.edge(e).head, j = net.edge(e).tail;
            double slack = w[e] + u[j] - u[i];
            if (slack < -tol) rep.pass = false;
            if (class_flows[a][e] > tol) {
                rep.max_violation = std::max(rep.max_violation, std::abs(slack));
                if (std::abs(slack) > tol) rep.pass = false;
            }
        }
    }
    if (rep.max_residual > std::sqrt(tol)) rep.feasible = false;
    if (!rep.feasible) rep.pass = false;
    return rep;
}

}  // namespace bilevelmp
