#pragma once

#include <functional>
#include <vector>

#include "bilevelmp/cost.hpp"
#include "bilevelmp/network.hpp"

namespace bilevelmp {

struct OracleReport {
    std::vector<double> flows;
    double objective = 0.0;
    int iterations = 0;
    double feasibility_residual = 0.0;
    double optimality_residual = 0.0;
    bool certified = false;
};

// Centralized solver for min sum_e phi_e(x_e) over the flow polytope
// (conservation + non-negativity). Used as ground truth for the MP solvers.
OracleReport convex_equilibrium(const DirectedNetwork& net, const CostModel& cost,
                                const std::vector<double>& tolls);

// Same machinery with the social cost sigma as objective.
OracleReport social_optimum(const DirectedNetwork& net, const CostModel& cost);

struct MulticlassOracleReport {
    std::vector<std::vector<double>> class_flows;
    std::vector<double> total_flows;
    double objective = 0.0;
    int passes = 0;
    bool certified = false;
};

// Joint convex program over per-class flows sharing the edge potential,
// solved by block coordinate descent over classes.
MulticlassOracleReport convex_equilibrium_multiclass(
    const DirectedNetwork& net, const CostModel& cost, const std::vector<double>& tolls,
    const std::vector<std::vector<double>>& class_lambda, const std::vector<NodeId>& class_dest);

struct AtomicOracleReport {
    double min_potential = 0.0;
    std::vector<std::vector<long long>> argmin_flows;
    long long configurations = 0;
};

// Exhaustive enumeration of integer routings (per-source simple paths).
// Refuses instances above the size caps.
AtomicOracleReport atomic_bruteforce(const DirectedNetwork& net, const CostModel& cost,
                                     const std::vector<double>& tolls);

struct LaplacianReport {
    std::vector<double> potentials;  // mu, reference pinned to 0
    std::vector<double> flows;       // x_ab = (mu_a - mu_b)/r per stored edge
};

// Direct grounded-Laplacian solve of the undirected flow problem.
LaplacianReport laplacian_solve(const UndirectedNetwork& net);

// Central finite differences of a scalar function.
std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& point, double h);

}  // namespace bilevelmp
