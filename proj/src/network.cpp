#include "bilevelmp/network.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_set>

namespace bilevelmp {

DirectedNetwork::DirectedNetwork(int n_nodes, std::vector<DirectedEdge> edges,
                                 std::vector<double> lambda, std::vector<NodeId> destinations)
    : n_(n_nodes), edges_(std::move(edges)), lambda_(std::move(lambda)),
      destinations_(std::move(destinations)) {
    if (n_ <= 0) throw NetworkError("network must have at least one node");
    if (static_cast<int>(lambda_.size()) != n_)
        throw NetworkError("lambda size does not match node count");
    if (destinations_.empty()) throw NetworkError("at least one destination required");
    for (const auto& e : edges_) {
        if (e.head < 0 || e.head >= n_ || e.tail < 0 || e.tail >= n_)
            throw NetworkError("edge endpoint out of range");
        if (e.head == e.tail) throw NetworkError("self-loop edges are not allowed");
    }
    for (NodeId d : destinations_) {
        if (d < 0 || d >= n_) throw NetworkError("destination out of range");
    }
    build_adjacency();
}

void DirectedNetwork::build_adjacency() {
    out_adj_.assign(n_, {});
    in_adj_.assign(n_, {});
    adj_.assign(n_, {});
    for (EdgeId e = 0; e < num_edges(); ++e) {
        out_adj_[edges_[e].head].push_back(e);
        in_adj_[edges_[e].tail].push_back(e);
    }
    for (NodeId i = 0; i < n_; ++i) {
        adj_[i] = in_adj_[i];
        adj_[i].insert(adj_[i].end(), out_adj_[i].begin(), out_adj_[i].end());
    }
}

double DirectedNetwork::total_lambda() const {
    double tot = 0.0;
    for (NodeId i = 0; i < n_; ++i)
        if (!is_destination(i)) tot += lambda_[i];
    return tot;
}

bool DirectedNetwork::is_destination(NodeId i) const {
    return std::find(destinations_.begin(), destinations_.end(), i) != destinations_.end();
}

bool DirectedNetwork::connected() const {
    if (n_ == 1) return true;
    std::vector<char> seen(n_, 0);
    std::queue<NodeId> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
        NodeId i = q.front();
        q.pop();
        for (EdgeId e : adj_[i]) {
            NodeId j = edges_[e].head == i ? edges_[e].tail : edges_[e].head;
            if (!seen[j]) {
                seen[j] = 1;
                ++count;
                q.push(j);
            }
        }
    }
    return count == n_;
}

bool DirectedNetwork::strongly_usable() const {
    // Reverse BFS from each destination along edge directions.
    for (NodeId d : destinations_) {
        std::vector<char> seen(n_, 0);
        std::queue<NodeId> q;
        q.push(d);
        seen[d] = 1;
        int count = 1;
        while (!q.empty()) {
            NodeId i = q.front();
            q.pop();
            for (EdgeId e : in_adj_[i]) {
                NodeId j = edges_[e].head;
                if (!seen[j]) {
                    seen[j] = 1;
                    ++count;
                    q.push(j);
                }
            }
        }
        if (count != n_) return false;
    }
    return true;
}

UndirectedNetwork::UndirectedNetwork(int n_nodes, std::vector<UndirectedEdge> edges,
                                     std::vector<double> lambda, NodeId reference)
    : n_(n_nodes), edges_(std::move(edges)), lambda_(std::move(lambda)), reference_(reference) {
    if (n_ <= 0) throw NetworkError("network must have at least one node");
    if (static_cast<int>(lambda_.size()) != n_)
        throw NetworkError("lambda size does not match node count");
    if (reference_ < 0 || reference_ >= n_) throw NetworkError("reference node out of range");
    adj_.assign(n_, {});
    for (EdgeId e = 0; e < num_edges(); ++e) {
        const auto& ed = edges_[e];
        if (ed.a < 0 || ed.a >= n_ || ed.b < 0 || ed.b >= n_ || ed.a == ed.b)
            throw NetworkError("invalid undirected edge");
        if (ed.r <= 0) throw NetworkError("edge control parameter must be positive");
        adj_[ed.a].emplace_back(e, ed.b);
        adj_[ed.b].emplace_back(e, ed.a);
    }
}

bool UndirectedNetwork::connected() const {
    if (n_ == 1) return true;
    std::vector<char> seen(n_, 0);
    std::queue<NodeId> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
        NodeId i = q.front();
        q.pop();
        for (auto [e, j] : adj_[i]) {
            (void)e;
            if (!seen[j]) {
                seen[j] = 1;
                ++count;
                q.push(j);
            }
        }
    }
    return count == n_;
}

PreprocessResult preprocess(const DirectedNetwork& net) {
    if (net.destinations().size() != 1)
        throw NetworkError("preprocess supports a single destination");
    int n = net.num_nodes();
    std::vector<char> removed_node(n, 0);
    std::vector<char> removed_edge(net.num_edges(), 0);
    std::vector<double> lambda(net.lambda_vec());
    NodeId dest = net.destination();

    auto live_degrees = [&](NodeId i, int& din, int& dout) {
        din = dout = 0;
        for (EdgeId e : net.in_adj(i))
            if (!removed_edge[e]) ++din;
        for (EdgeId e : net.out_adj(i))
            if (!removed_edge[e]) ++dout;
    };

    bool changed = true;
    while (changed) {
        changed = false;
        for (NodeId i = 0; i < n; ++i) {
            if (removed_node[i]) continue;
            int din, dout;
            live_degrees(i, din, dout);
            if (din + dout == 0) continue;
            if (din == 0 && dout == 1 && i != dest) {
                // Pure source leaf: push its resource downstream.
                EdgeId e = -1;
                for (EdgeId cand : net.out_adj(i))
                    if (!removed_edge[cand]) e = cand;
                NodeId j = net.edge(e).tail;
                lambda[j] += lambda[i];
                lambda[i] = 0;
                removed_node[i] = 1;
                removed_edge[e] = 1;
                changed = true;
            } else if (dout == 0 && din == 1 && i == dest) {
                // Leaf destination: relocate it to the neighbour.
                EdgeId e = -1;
                for (EdgeId cand : net.in_adj(i))
                    if (!removed_edge[cand]) e = cand;
                NodeId j = net.edge(e).head;
                dest = j;
                removed_node[i] = 1;
                removed_edge[e] = 1;
                changed = true;
            } else if (din + dout == 1 && i != dest) {
                // Dead-end leaf: a lone incoming edge at a non-destination, or
                // a lone outgoing edge carrying no resource. Any flow through
                // it is infeasible or zero, so it can be dropped.
                if (lambda[i] > 0 && dout == 0)
                    throw NetworkError("leaf source cannot reach the destination");
                EdgeId e = -1;
                for (EdgeId cand : net.adj(i))
                    if (!removed_edge[cand]) e = cand;
                removed_node[i] = 1;
                removed_edge[e] = 1;
                changed = true;
            }
        }
    }

    PreprocessResult res;
    res.node_map.assign(n, -1);
    res.edge_map.assign(net.num_edges(), -1);
    int nn = 0;
    for (NodeId i = 0; i < n; ++i)
        if (!removed_node[i]) res.node_map[i] = nn++;
    if (nn <= 1) {
        res.trivial = true;
        std::vector<double> lam{0.0};
        res.net = DirectedNetwork(1, {}, lam, {0});
        return res;
    }
    std::vector<DirectedEdge> edges;
    std::vector<double> new_lambda(nn, 0.0);
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        if (removed_edge[e]) continue;
        res.edge_map[e] = static_cast<EdgeId>(edges.size());
        DirectedEdge ed = net.edge(e);
        ed.head = res.node_map[ed.head];
        ed.tail = res.node_map[ed.tail];
        edges.push_back(ed);
    }
    for (NodeId i = 0; i < n; ++i)
        if (!removed_node[i]) new_lambda[res.node_map[i]] = lambda[i];
    res.net = DirectedNetwork(nn, std::move(edges), std::move(new_lambda), {res.node_map[dest]});
    return res;
}

UndirectedNetwork trim_leaves(const UndirectedNetwork& net) {
    int n = net.num_nodes();
    std::vector<char> removed_node(n, 0);
    std::vector<char> removed_edge(net.num_edges(), 0);
    std::vector<double> lambda(net.lambda_vec());
    NodeId ref = net.reference();

    bool changed = true;
    while (changed) {
        changed = false;
        for (NodeId i = 0; i < n; ++i) {
            if (removed_node[i]) continue;
            EdgeId last = -1;
            NodeId nbr = -1;
            int deg = 0;
            for (auto [e, j] : net.adj(i)) {
                if (!removed_edge[e]) {
                    ++deg;
                    last = e;
                    nbr = j;
                }
            }
            if (deg == 1) {
                lambda[nbr] += lambda[i];
                lambda[i] = 0;
                if (i == ref) ref = nbr;
                removed_node[i] = 1;
                removed_edge[last] = 1;
                changed = true;
            }
        }
    }

    std::vector<NodeId> node_map(n, -1);
    int nn = 0;
    for (NodeId i = 0; i < n; ++i)
        if (!removed_node[i]) node_map[i] = nn++;
    if (nn == 0) throw NetworkError("network trimmed to nothing");
    std::vector<UndirectedEdge> edges;
    std::vector<double> new_lambda(nn, 0.0);
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        if (removed_edge[e]) continue;
        UndirectedEdge ed = net.edge(e);
        ed.a = node_map[ed.a];
        ed.b = node_map[ed.b];
        edges.push_back(ed);
    }
    for (NodeId i = 0; i < n; ++i)
        if (!removed_node[i]) new_lambda[node_map[i]] = lambda[i];
    return UndirectedNetwork(nn, std::move(edges), std::move(new_lambda), node_map[ref]);
}

namespace {

std::vector<std::pair<NodeId, NodeId>> rrg_pairing(int n, int degree, std::mt19937_64& rng) {
    // Configuration model with rejection until simple.
    const int max_tries = 2000;
    std::vector<int> stubs;
    stubs.reserve(n * degree);
    for (int t = 0; t < max_tries; ++t) {
        stubs.clear();
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < degree; ++d) stubs.push_back(i);
        std::shuffle(stubs.begin(), stubs.end(), rng);
        std::vector<std::pair<NodeId, NodeId>> pairs;
        std::unordered_set<long long> seen;
        bool ok = true;
        for (size_t s = 0; s + 1 < stubs.size(); s += 2) {
            int a = stubs[s], b = stubs[s + 1];
            if (a == b) {
                ok = false;
                break;
            }
            long long key = static_cast<long long>(std::min(a, b)) * n + std::max(a, b);
            if (!seen.insert(key).second) {
                ok = false;
                break;
            }
            pairs.emplace_back(a, b);
        }
        if (ok) return pairs;
    }
    throw NetworkError("random regular graph generation exhausted retries");
}

}  // namespace

UndirectedNetwork generate_rrg_undirected(int n, int degree, std::mt19937_64& rng) {
    if ((static_cast<long long>(n) * degree) % 2 != 0)
        throw NetworkError("n*degree must be even");
    if (degree < 3) throw NetworkError("degree must be at least 3");
    for (int attempt = 0; attempt < 200; ++attempt) {
        auto pairs = rrg_pairing(n, degree, rng);
        std::vector<UndirectedEdge> edges;
        edges.reserve(pairs.size());
        for (auto [a, b] : pairs) edges.push_back({a, b, 1.0});
        UndirectedNetwork net(n, std::move(edges), std::vector<double>(n, 0.0), 0);
        if (net.connected()) return net;
    }
    throw NetworkError("could not generate a connected regular graph");
}

namespace {

// Orients an undirected graph so that every node can reach the destination:
// random directions first, then edges crossing from the unreachable side into
// the reachable one are flipped at random until usability holds. Blind
// re-sampling of all directions has vanishing success probability already at
// a few dozen nodes.
DirectedNetwork orient_usable(const UndirectedNetwork& und, NodeId dest, std::mt19937_64& rng) {
    int n = und.num_nodes();
    std::vector<DirectedEdge> edges;
    edges.reserve(und.num_edges());
    std::uniform_int_distribution<int> coin(0, 1);
    for (const auto& ed : und.edges()) {
        DirectedEdge de;
        if (coin(rng)) {
            de.head = ed.a;
            de.tail = ed.b;
        } else {
            de.head = ed.b;
            de.tail = ed.a;
        }
        edges.push_back(de);
    }
    for (int pass = 0; pass <= n; ++pass) {
        // Nodes that can reach dest along current directions.
        std::vector<char> seen(n, 0);
        std::vector<NodeId> q = {dest};
        seen[dest] = 1;
        while (!q.empty()) {
            NodeId i = q.back();
            q.pop_back();
            for (int e = 0; e < und.num_edges(); ++e) {
                if (edges[e].tail != i || seen[edges[e].head]) continue;
                seen[edges[e].head] = 1;
                q.push_back(edges[e].head);
            }
        }
        std::vector<int> boundary;
        for (int e = 0; e < und.num_edges(); ++e)
            if (seen[edges[e].head] && !seen[edges[e].tail]) boundary.push_back(e);
        if (boundary.empty()) {
            bool all = true;
            for (char c : seen) all = all && c;
            if (all) return DirectedNetwork(n, std::move(edges), std::vector<double>(n, 0.0),
                                            {dest});
            break;  // disconnected component, caller resamples the graph
        }
        std::uniform_int_distribution<int> pick(0, static_cast<int>(boundary.size()) - 1);
        int e = boundary[pick(rng)];
        std::swap(edges[e].head, edges[e].tail);
    }
    throw NetworkError("could not orient graph with reachable destination");
}

}  // namespace

DirectedNetwork generate_rrg(int n, int degree, std::mt19937_64& rng) {
    UndirectedNetwork und = generate_rrg_undirected(n, degree, rng);
    return orient_usable(und, 0, rng);
}

UndirectedNetwork generate_small_world_undirected(int side, double p_rw, std::mt19937_64& rng) {
    if (side < 3) throw NetworkError("lattice side must be at least 3");
    if (p_rw < 0 || p_rw > 1) throw NetworkError("rewiring probability out of range");
    int n = side * side;
    auto id = [side](int r, int c) { return r * side + c; };
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int attempt = 0; attempt < 500; ++attempt) {
        std::vector<std::pair<NodeId, NodeId>> base;
        for (int r = 0; r < side; ++r) {
            for (int c = 0; c < side; ++c) {
                if (c + 1 < side) base.emplace_back(id(r, c), id(r, c + 1));
                if (r + 1 < side) base.emplace_back(id(r, c), id(r + 1, c));
            }
        }
        std::unordered_set<long long> seen;
        auto key = [n](int a, int b) {
            return static_cast<long long>(std::min(a, b)) * n + std::max(a, b);
        };
        std::vector<std::pair<NodeId, NodeId>> pairs;
        for (auto [a, b] : base) {
            int aa = a, bb = b;
            if (p_rw > 0 && unif(rng) < p_rw) {
                // Rewire one endpoint to a random node, keeping the graph simple.
                for (int t = 0; t < 50; ++t) {
                    int cand = pick(rng);
                    if (cand != aa && !seen.count(key(aa, cand))) {
                        bb = cand;
                        break;
                    }
                }
            }
            if (seen.insert(key(aa, bb)).second) pairs.emplace_back(aa, bb);
        }
        std::vector<UndirectedEdge> edges;
        for (auto [a, b] : pairs) edges.push_back({a, b, 1.0});
        UndirectedNetwork net(n, std::move(edges), std::vector<double>(n, 0.0), 0);
        if (net.connected()) return net;
    }
    throw NetworkError("could not generate a connected small-world network");
}

DirectedNetwork generate_small_world(int side, double p_rw, std::mt19937_64& rng) {
    UndirectedNetwork und = generate_small_world_undirected(side, p_rw, rng);
    return orient_usable(und, 0, rng);
}

DirectedNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NetworkError("cannot open network file: " + path);
    std::string word;
    int n = 0, m = 0;
    NodeId dest = -1;
    if (!(in >> word) || word != "nodes" || !(in >> n) || !(in >> word) || word != "edges" ||
        !(in >> m) || !(in >> word) || word != "destination" || !(in >> dest))
        throw NetworkError("malformed network header in " + path);
    if (m <= 0) throw NetworkError("network file has no edges");
    std::vector<DirectedEdge> edges(m);
    std::vector<char> filled(m, 0);
    for (int row = 0; row < m; ++row) {
        int eid;
        DirectedEdge ed;
        if (!(in >> eid >> ed.head >> ed.tail >> ed.t >> ed.c))
            throw NetworkError("malformed edge row " + std::to_string(row + 1));
        if (eid < 0 || eid >= m) throw NetworkError("edge id out of range: " + std::to_string(eid));
        if (filled[eid]) throw NetworkError("duplicate edge id: " + std::to_string(eid));
        filled[eid] = 1;
        edges[eid] = ed;
    }
    std::vector<double> lambda(n, 0.0);
    if (in >> word) {
        if (word != "lambda") throw NetworkError("unexpected token: " + word);
        NodeId node;
        double value;
        while (in >> node >> value) {
            if (node < 0 || node >= n) throw NetworkError("lambda node out of range");
            lambda[node] = value;
        }
    }
    return DirectedNetwork(n, std::move(edges), std::move(lambda), {dest});
}

void save_network(const DirectedNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw NetworkError("cannot write network file: " + path);
    out << "nodes " << net.num_nodes() << " edges " << net.num_edges() << " destination "
        << net.destination() << "\n";
    char buf[128];
    for (EdgeId e = 0; e < net.num_edges(); ++e) {
        const auto& ed = net.edge(e);
        std::snprintf(buf, sizeof(buf), "%d %d %d %.17g %.17g\n", e, ed.head, ed.tail, ed.t, ed.c);
        out << buf;
    }
    out << "lambda\n";
    for (NodeId i = 0; i < net.num_nodes(); ++i) {
        if (net.lambda(i) != 0.0) {
            std::snprintf(buf, sizeof(buf), "%d %.17g\n", i, net.lambda(i));
            out << buf;
        }
    }
}

}  // namespace bilevelmp
