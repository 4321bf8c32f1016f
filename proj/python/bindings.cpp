#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bilevelmp/atomic_mp.hpp"
#include "bilevelmp/bilevel_toll.hpp"
#include "bilevelmp/flow_control.hpp"
#include "bilevelmp/mp_equilibrium.hpp"
#include "bilevelmp/oracles.hpp"
#include "bilevelmp/rng.hpp"

namespace py = pybind11;
using namespace bilevelmp;

namespace {

DirectedNetwork make_rrg(int n, int degree, std::uint64_t seed) {
    auto rng = RngForker(seed).fork("net");
    return generate_rrg(n, degree, rng);
}

UndirectedNetwork make_rrg_undirected(int n, int degree, std::uint64_t seed) {
    auto rng = RngForker(seed).fork("net");
    return generate_rrg_undirected(n, degree, rng);
}

}  // namespace

PYBIND11_MODULE(bilevelmp, m) {
    m.doc() = "decentralized solvers for routing games and flow control";

    py::register_exception<NetworkError>(m, "NetworkError");

    py::class_<DirectedEdge>(m, "DirectedEdge")
        .def(py::init([](NodeId head, NodeId tail, double t, double c) {
                 return DirectedEdge{head, tail, t, c};
             }),
             py::arg("head"), py::arg("tail"), py::arg("t") = 1.0, py::arg("c") = 1.0)
        .def_readonly("head", &DirectedEdge::head)
        .def_readonly("tail", &DirectedEdge::tail)
        .def_readonly("t", &DirectedEdge::t)
        .def_readonly("c", &DirectedEdge::c);

    py::class_<DirectedNetwork>(m, "DirectedNetwork")
        .def(py::init<int, std::vector<DirectedEdge>, std::vector<double>, std::vector<NodeId>>(),
             py::arg("n_nodes"), py::arg("edges"), py::arg("lambda_"), py::arg("destinations"))
        .def_property_readonly("num_nodes", &DirectedNetwork::num_nodes)
        .def_property_readonly("num_edges", &DirectedNetwork::num_edges)
        .def_property_readonly("destination", &DirectedNetwork::destination)
        .def("lambda_", [](const DirectedNetwork& n) { return n.lambda_vec(); })
        .def("set_lambda",
             [](DirectedNetwork& n, const std::vector<double>& lam) {
                 if ((int)lam.size() != n.num_nodes()) throw NetworkError("lambda size mismatch");
                 n.lambda() = lam;
             })
        .def("strongly_usable", &DirectedNetwork::strongly_usable);

    py::class_<UndirectedEdge>(m, "UndirectedEdge")
        .def(py::init([](NodeId a, NodeId b, double r) {
                 return UndirectedEdge{a, b, r};
             }),
             py::arg("a"), py::arg("b"), py::arg("r") = 1.0)
        .def_readonly("a", &UndirectedEdge::a)
        .def_readonly("b", &UndirectedEdge::b)
        .def_readonly("r", &UndirectedEdge::r);

    py::class_<UndirectedNetwork>(m, "UndirectedNetwork")
        .def(py::init<int, std::vector<UndirectedEdge>, std::vector<double>, NodeId>(),
             py::arg("n_nodes"), py::arg("edges"), py::arg("lambda_"), py::arg("reference"))
        .def_property_readonly("num_nodes", &UndirectedNetwork::num_nodes)
        .def_property_readonly("num_edges", &UndirectedNetwork::num_edges)
        .def_property_readonly("reference", &UndirectedNetwork::reference)
        .def("set_lambda",
             [](UndirectedNetwork& n, const std::vector<double>& lam) {
                 if ((int)lam.size() != n.num_nodes()) throw NetworkError("lambda size mismatch");
                 n.lambda() = lam;
             })
        .def("r", [](const UndirectedNetwork& n) {
            std::vector<double> out;
            for (const auto& e : n.edges()) out.push_back(e.r);
            return out;
        });

    m.def("load_network", &load_network, py::arg("path"));
    m.def("generate_rrg", &make_rrg, py::arg("n"), py::arg("degree"), py::arg("seed"));
    m.def("generate_rrg_undirected", &make_rrg_undirected, py::arg("n"), py::arg("degree"),
          py::arg("seed"));
    m.def("preprocess", [](const DirectedNetwork& net) { return preprocess(net).net; },
          py::arg("net"));

    m.def(
        "convex_equilibrium",
        [](const DirectedNetwork& net, double s, const std::vector<double>& tolls) {
            CostModel cost(net, s);
            auto rep = convex_equilibrium(net, cost, tolls);
            return py::dict(py::arg("flows") = rep.flows, py::arg("objective") = rep.objective,
                            py::arg("certified") = rep.certified);
        },
        py::arg("net"), py::arg("s") = 1.0, py::arg("tolls") = std::vector<double>{});

    m.def(
        "social_optimum",
        [](const DirectedNetwork& net, double s) {
            CostModel cost(net, s);
            auto rep = social_optimum(net, cost);
            return py::dict(py::arg("flows") = rep.flows,
                            py::arg("social_cost") = cost.social_cost(rep.flows),
                            py::arg("certified") = rep.certified);
        },
        py::arg("net"), py::arg("s") = 1.0);

    m.def(
        "mp_equilibrium",
        [](const DirectedNetwork& net, double s, const std::vector<double>& tolls, int method,
           std::uint64_t seed, int max_sweeps) {
            CostModel cost(net, s);
            EquilibriumConfig cfg;
            cfg.method = method;
            cfg.seed = seed;
            if (max_sweeps > 0) cfg.max_sweeps = max_sweeps;
            MpEquilibrium mp(net, cost, tolls, cfg);
            auto res = mp.run();
            return py::dict(py::arg("flows") = res.flows, py::arg("converged") = res.converged,
                            py::arg("sweeps") = res.sweeps);
        },
        py::arg("net"), py::arg("s") = 1.0, py::arg("tolls") = std::vector<double>{},
        py::arg("method") = 1, py::arg("seed") = 1, py::arg("max_sweeps") = 0);

    m.def(
        "bilevel_toll",
        [](const DirectedNetwork& net, double s, double tau_max, int max_sweeps,
           std::uint64_t seed) {
            CostModel cost(net, s);
            TollConfig cfg;
            cfg.tau_max = tau_max;
            if (max_sweeps > 0) cfg.max_sweeps = max_sweeps;
            cfg.mp.seed = seed;
            BilevelToll bt(net, cost, cfg);
            auto res = bt.run();
            std::vector<double> frac;
            for (const auto& p : res.trace) frac.push_back(p.fraction);
            return py::dict(py::arg("tolls") = res.tolls, py::arg("h_nash") = res.h_nash,
                            py::arg("h_social") = res.h_social,
                            py::arg("best_cost") = res.best_cost, py::arg("fraction") = frac);
        },
        py::arg("net"), py::arg("s") = 1.0, py::arg("tau_max") = 1.0, py::arg("max_sweeps") = 0,
        py::arg("seed") = 1);

    m.def(
        "marginal_cost_tolls",
        [](const DirectedNetwork& net, double s) {
            CostModel cost(net, s);
            return marginal_cost_tolls(net, cost);
        },
        py::arg("net"), py::arg("s") = 1.0);

    m.def(
        "atomic_equilibrium",
        [](const DirectedNetwork& net, double s, const std::vector<double>& tolls,
           std::uint64_t seed, int max_sweeps) {
            CostModel cost(net, s);
            AtomicConfig cfg;
            cfg.seed = seed;
            if (max_sweeps > 0) cfg.max_sweeps = max_sweeps;
            auto res = run_atomic_equilibrium(net, cost, tolls, cfg);
            return py::dict(py::arg("flows") = res.flows, py::arg("potential") = res.potential,
                            py::arg("social_cost") = res.social_cost,
                            py::arg("converged") = res.converged);
        },
        py::arg("net"), py::arg("s") = 1.0, py::arg("tolls") = std::vector<double>{},
        py::arg("seed") = 1, py::arg("max_sweeps") = 0);

    m.def(
        "laplacian_solve",
        [](const UndirectedNetwork& net) {
            auto rep = laplacian_solve(net);
            return py::dict(py::arg("potentials") = rep.potentials, py::arg("flows") = rep.flows);
        },
        py::arg("net"));

    m.def(
        "flow_equilibrium",
        [](const UndirectedNetwork& net, int method, std::uint64_t seed, int max_sweeps) {
            FlowControlConfig cfg;
            cfg.method = method;
            cfg.seed = seed;
            if (max_sweeps > 0) cfg.max_sweeps = max_sweeps;
            auto res = solve_flow_equilibrium(net, cfg);
            return py::dict(py::arg("flows") = res.flows, py::arg("converged") = res.converged,
                            py::arg("sweeps") = res.sweeps);
        },
        py::arg("net"), py::arg("method") = 2, py::arg("seed") = 1, py::arg("max_sweeps") = 0);

    m.def(
        "mp_gradient",
        [](const UndirectedNetwork& net, const std::vector<EdgeId>& targets,
           const std::vector<double>& baseline, double theta, std::uint64_t seed) {
            FlowControlConfig cfg;
            cfg.theta = theta;
            cfg.seed = seed;
            return mp_gradient(net, targets, baseline, cfg);
        },
        py::arg("net"), py::arg("targets"), py::arg("baseline"), py::arg("theta") = 0.1,
        py::arg("seed") = 1);

    m.def("ggd_gradient", &ggd_gradient, py::arg("net"), py::arg("targets"), py::arg("baseline"),
          py::arg("theta") = 0.1);

    m.def(
        "flow_control",
        [](const UndirectedNetwork& net, const std::vector<EdgeId>& targets, double theta,
           std::uint64_t seed, int max_sweeps, bool exact) {
            FlowControlConfig cfg;
            cfg.theta = theta;
            cfg.seed = seed;
            if (max_sweeps > 0) cfg.max_sweeps = max_sweeps;
            auto res = exact ? run_flow_control_ggd(net, targets, cfg)
                             : run_flow_control(net, targets, cfg);
            return py::dict(py::arg("r") = res.r, py::arg("flows") = res.flows,
                            py::arg("objective") = res.objective,
                            py::arg("success") = res.success, py::arg("sweeps") = res.sweeps);
        },
        py::arg("net"), py::arg("targets"), py::arg("theta") = 0.1, py::arg("seed") = 1,
        py::arg("max_sweeps") = 0, py::arg("exact") = false);
}
