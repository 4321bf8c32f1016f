#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace bilevelmp {

using NodeId = int;
using EdgeId = int;

struct NetworkError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Directed edge carrying its latency parameters. Flow runs head -> tail.
struct DirectedEdge {
    NodeId head = -1;
    NodeId tail = -1;
    double t = 1.0;  // free travel time
    double c = 1.0;  // capacity
};

// Directed routing network. Node ids are dense in [0, n) after construction.
class DirectedNetwork {
public:
    DirectedNetwork() = default;
    DirectedNetwork(int n_nodes, std::vector<DirectedEdge> edges,
                    std::vector<double> lambda, std::vector<NodeId> destinations);

    int num_nodes() const { return n_; }
    int num_edges() const { return static_cast<int>(edges_.size()); }
    const std::vector<DirectedEdge>& edges() const { return edges_; }
    const DirectedEdge& edge(EdgeId e) const { return edges_[e]; }

    const std::vector<EdgeId>& out_adj(NodeId i) const { return out_adj_[i]; }
    const std::vector<EdgeId>& in_adj(NodeId i) const { return in_adj_[i]; }
    // All incident edges of i (incoming then outgoing).
    const std::vector<EdgeId>& adj(NodeId i) const { return adj_[i]; }

    // Incidence operator: +1 if e flows into i, -1 if out of i, 0 otherwise.
    int incidence(NodeId i, EdgeId e) const {
        const auto& ed = edges_[e];
        if (ed.tail == i) return 1;
        if (ed.head == i) return -1;
        return 0;
    }

    double lambda(NodeId i) const { return lambda_[i]; }
    std::vector<double>& lambda() { return lambda_; }
    const std::vector<double>& lambda_vec() const { return lambda_; }
    double total_lambda() const;

    const std::vector<NodeId>& destinations() const { return destinations_; }
    NodeId destination() const { return destinations_.front(); }
    bool is_destination(NodeId i) const;

    bool connected() const;
    // Every node can reach every destination along directed edges.
    bool strongly_usable() const;

private:
    void build_adjacency();

    int n_ = 0;
    std::vector<DirectedEdge> edges_;
    std::vector<std::vector<EdgeId>> out_adj_, in_adj_, adj_;
    std::vector<double> lambda_;
    std::vector<NodeId> destinations_;
};

// Undirected flow network with one control parameter r per edge.
// Each edge is stored once with a canonical orientation (a, b); the flow
// variable x_ab is the flow sent from a toward b (x_ba = -x_ab).
struct UndirectedEdge {
    NodeId a = -1;
    NodeId b = -1;
    double r = 1.0;
};

class UndirectedNetwork {
public:
    UndirectedNetwork() = default;
    UndirectedNetwork(int n_nodes, std::vector<UndirectedEdge> edges,
                      std::vector<double> lambda, NodeId reference);

    int num_nodes() const { return n_; }
    int num_edges() const { return static_cast<int>(edges_.size()); }
    const std::vector<UndirectedEdge>& edges() const { return edges_; }
    const UndirectedEdge& edge(EdgeId e) const { return edges_[e]; }
    double r(EdgeId e) const { return edges_[e].r; }
    void set_r(EdgeId e, double value) { edges_[e].r = value; }

    // Neighbours of i as (edge id, other endpoint).
    const std::vector<std::pair<EdgeId, NodeId>>& adj(NodeId i) const { return adj_[i]; }
    int degree(NodeId i) const { return static_cast<int>(adj_[i].size()); }

    double lambda(NodeId i) const { return lambda_[i]; }
    std::vector<double>& lambda() { return lambda_; }
    const std::vector<double>& lambda_vec() const { return lambda_; }
    NodeId reference() const { return reference_; }
    void set_reference(NodeId d) { reference_ = d; }

    bool connected() const;

private:
    int n_ = 0;
    std::vector<UndirectedEdge> edges_;
    std::vector<std::vector<std::pair<EdgeId, NodeId>>> adj_;
    std::vector<double> lambda_;
    NodeId reference_ = 0;
};

struct PreprocessResult {
    DirectedNetwork net;
    std::vector<NodeId> node_map;  // old node id -> new id (or -1 if removed)
    std::vector<EdgeId> edge_map;  // old edge id -> new id (or -1 if removed)
    bool trivial = false;          // network reduced to a single node
};

// Recursively trims leaf nodes: a pure source leaf pushes its resource to its
// neighbour; a leaf destination is relocated to its neighbour. Conserves the
// total resource.
PreprocessResult preprocess(const DirectedNetwork& net);

UndirectedNetwork trim_leaves(const UndirectedNetwork& net);

// Random d-regular simple graph on n nodes (configuration model with
// rejection). Throws NetworkError on parity violation or exhausted retries.
UndirectedNetwork generate_rrg_undirected(int n, int degree, std::mt19937_64& rng);

// Directed variant: each undirected edge gets a uniformly random orientation,
// re-sampled until every node can reach the destination (node 0).
DirectedNetwork generate_rrg(int n, int degree, std::mt19937_64& rng);

// side x side square lattice with every edge rewired to a random shortcut
// with probability p_rw; resampled until connected.
UndirectedNetwork generate_small_world_undirected(int side, double p_rw, std::mt19937_64& rng);
DirectedNetwork generate_small_world(int side, double p_rw, std::mt19937_64& rng);

// Text format:
//   nodes N edges M destination D
//   <edge_id> <head> <tail> <t> <c>     (M rows)
//   lambda                              (optional block)
//   <node> <value>
DirectedNetwork load_network(const std::string& path);
void save_network(const DirectedNetwork& net, const std::string& path);

}  // namespace bilevelmp
