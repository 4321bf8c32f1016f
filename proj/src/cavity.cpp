#include "bilevelmp/cavity.hpp"

#include <algorithm>
#include <cmath>

namespace bilevelmp {

namespace {

// One active optimization variable of the root problem. The optimal flow at
// chemical potential mu is max(xt - (mu*sign + d0)/c, 0).
struct Var {
    int idx;
    int sign;
    double c;   // curvature, >= 0, may be inf (pinned) or 0 (free direction)
    double d0;  // energy derivative at xt
    double xt;
};

struct RootInfo {
    bool degenerate = false;
    bool feasible = true;
    double mu = 0.0, inv = 0.0;
    double mu_lo = 0.0, mu_hi = 0.0;
    double inv_below = 0.0, inv_above = 0.0;
    std::vector<double> x;
};

RootInfo solve_root(const std::vector<Var>& vars, double constant, double scale) {
    RootInfo out;
    out.x.assign(vars.size(), 0.0);
    const double tol_r = 1e-11 * scale;

    double lo = -kInfVal, hi = kInfVal;
    int lo_var = -1, hi_var = -1;
    std::vector<int> act;
    for (int v = 0; v < static_cast<int>(vars.size()); ++v) {
        const Var& w = vars[v];
        if (std::isinf(w.c)) {
            constant += w.sign * w.xt;
            out.x[v] = w.xt;
        } else if (w.c <= 0.0) {
            // Zero stiffness: the flow diverges beyond a critical mu, which
            // bounds the feasible interval; at the bound the branch supplies
            // any non-negative amount.
            if (w.sign > 0) {
                if (-w.d0 > lo) lo = -w.d0, lo_var = v;
            } else {
                if (w.d0 < hi) hi = w.d0, hi_var = v;
            }
        } else {
            act.push_back(v);
        }
    }
    if (lo > hi) {
        double mid = 0.5 * (lo + hi);
        lo = hi = mid;
    }

    auto x_of = [&](int v, double mu) {
        const Var& w = vars[v];
        double val = w.xt - (mu * w.sign + w.d0) / w.c;
        return val > 0.0 ? val : 0.0;
    };
    auto r_of = [&](double mu) {
        double r = constant;
        for (int v : act) r += vars[v].sign * x_of(v, mu);
        return r;
    };
    auto inv_at = [&](double mu) {
        double s = 0.0;
        for (int v : act)
            if (x_of(v, mu) > 0.0) s += 1.0 / vars[v].c;
        return s;
    };
    auto fill_flows = [&](double mu) {
        for (int v : act) out.x[v] = x_of(v, mu);
    };

    std::vector<double> cands;
    for (int v : act) {
        const Var& w = vars[v];
        double mc = w.sign * (w.c * w.xt - w.d0);
        if (mc > lo && mc < hi) cands.push_back(mc);
    }
    if (std::isfinite(lo)) cands.push_back(lo);
    if (std::isfinite(hi)) cands.push_back(hi);
    std::sort(cands.begin(), cands.end());

    if (cands.empty()) {
        // No breakpoints anywhere: the residual is constant in mu.
        if (std::abs(constant) <= tol_r) {
            out.degenerate = true;
            out.mu_lo = -kInfVal;
            out.mu_hi = kInfVal;
        } else {
            out.feasible = false;
        }
        return out;
    }

    int n = static_cast<int>(cands.size());
    std::vector<double> vals(n);
    for (int k = 0; k < n; ++k) vals[k] = r_of(cands[k]);

    // Residual still short at the left end of the candidate range.
    if (vals[0] < -tol_r) {
        if (std::isfinite(lo) && cands[0] == lo) {
            out.mu = lo;
            out.inv = kInfVal;
            fill_flows(lo);
            if (lo_var >= 0) out.x[lo_var] = -vals[0];
            return out;
        }
        double rep = cands[0] - std::max(1.0, std::abs(cands[0]));
        double s = inv_at(rep);
        if (s <= 0.0) {
            out.feasible = false;
            return out;
        }
        out.mu = cands[0] + vals[0] / s;
        out.inv = inv_at(out.mu);
        fill_flows(out.mu);
        return out;
    }
    // Residual still in excess at the right end.
    if (vals[n - 1] > tol_r) {
        if (std::isfinite(hi) && cands[n - 1] == hi) {
            out.mu = hi;
            out.inv = kInfVal;
            fill_flows(hi);
            if (hi_var >= 0) out.x[hi_var] = vals[n - 1];
            return out;
        }
        double rep = cands[n - 1] + std::max(1.0, std::abs(cands[n - 1]));
        double s = inv_at(rep);
        if (s <= 0.0) {
            out.feasible = false;
            return out;
        }
        out.mu = cands[n - 1] + vals[n - 1] / s;
        out.inv = inv_at(out.mu);
        fill_flows(out.mu);
        return out;
    }

    int i1 = -1;  // last candidate with residual clearly positive
    while (i1 + 1 < n && vals[i1 + 1] > tol_r) ++i1;
    int i2 = n;  // first candidate with residual clearly negative
    while (i2 - 1 > i1 && vals[i2 - 1] < -tol_r) --i2;

    if (i2 == i1 + 1) {
        // Simple crossing strictly between two candidates.
        double rep = 0.5 * (cands[i1] + cands[i2]);
        double s = inv_at(rep);
        if (s <= 0.0) {
            out.mu = rep;
            out.inv = 0.0;
        } else {
            out.mu = cands[i1] + vals[i1] / s;
            out.inv = inv_at(out.mu);
        }
        fill_flows(out.mu);
        return out;
    }

    // A run of (near-)zero candidates: locate the exact zero interval.
    double zl = cands[i1 + 1], zr = cands[i2 - 1];
    double mu_lo, mu_hi, inv_below, inv_above;
    if (i1 >= 0) {
        double s = inv_at(0.5 * (cands[i1] + zl));
        if (s > 0.0) {
            mu_lo = cands[i1] + vals[i1] / s;
            inv_below = s;
        } else {
            mu_lo = zl;
            inv_below = 0.0;
        }
    } else if (std::isfinite(lo) && zl == lo) {
        mu_lo = lo;
        inv_below = kInfVal;
    } else {
        double rep = zl - std::max(1.0, std::abs(zl));
        double s = inv_at(rep);
        if (s > 0.0) {
            mu_lo = zl;
            inv_below = s;
        } else {
            mu_lo = -kInfVal;
            inv_below = 0.0;
        }
    }
    if (i2 <= n - 1) {
        double s = inv_at(0.5 * (zr + cands[i2]));
        if (s > 0.0) {
            mu_hi = cands[i2] + vals[i2] / s;
            inv_above = s;
        } else {
            mu_hi = zr;
            inv_above = 0.0;
        }
    } else if (std::isfinite(hi) && zr == hi) {
        mu_hi = hi;
        inv_above = kInfVal;
    } else {
        double rep = zr + std::max(1.0, std::abs(zr));
        double s = inv_at(rep);
        if (s > 0.0) {
            mu_hi = zr;
            inv_above = s;
        } else {
            mu_hi = kInfVal;
            inv_above = 0.0;
        }
    }

    double span_scale = std::max({1.0, std::abs(mu_lo), std::abs(mu_hi)});
    if (std::isfinite(mu_lo) && std::isfinite(mu_hi) && mu_hi - mu_lo <= 1e-12 * span_scale) {
        out.mu = 0.5 * (mu_lo + mu_hi);
        out.inv = inv_at(out.mu);
        fill_flows(out.mu);
        return out;
    }
    out.degenerate = true;
    out.mu_lo = mu_lo;
    out.mu_hi = mu_hi;
    out.inv_below = inv_below;
    out.inv_above = inv_above;
    if (std::isfinite(mu_lo) && std::isfinite(mu_hi))
        out.mu = 0.5 * (mu_lo + mu_hi);
    else if (std::isfinite(mu_lo))
        out.mu = mu_lo;
    else if (std::isfinite(mu_hi))
        out.mu = mu_hi;
    fill_flows(out.mu);
    return out;
}

Var make_var(int idx, const UpstreamBranch& b) {
    return {idx, b.sign, b.msg.alpha + b.phi2, b.msg.beta + b.phi1, b.xt};
}

Var make_leaf_var(int idx, const UpstreamBranch& b, int eta) {
    double a = eta > 0 ? b.msg.aR : b.msg.aL;
    double bb = eta > 0 ? b.msg.bR : b.msg.bL;
    return {idx, b.sign, a + b.phi2, bb + b.phi1, b.xt};
}

}  // namespace

CavityRootResult solve_cavity_root(const std::vector<UpstreamBranch>& upstream, double lambda_i,
                                   int b_ie, double x_e) {
    int n = static_cast<int>(upstream.size());
    double constant = lambda_i + b_ie * x_e;
    double scale = std::max(1.0, std::abs(lambda_i) + std::abs(x_e));
    for (const auto& b : upstream) scale += std::abs(b.xt);

    std::vector<Var> vars;
    std::vector<int> var_of(n, -1);
    bool any_leaf = false;
    for (int k = 0; k < n; ++k) {
        const auto& b = upstream[k];
        if (b.msg.f == 1) {
            // Effective leaves are pinned at their breakpoints first.
            constant += b.sign * b.xt;
            any_leaf = true;
        } else {
            var_of[k] = static_cast<int>(vars.size());
            vars.push_back(make_var(k, b));
        }
    }

    RootInfo info = solve_root(vars, constant, scale);

    if (any_leaf && info.feasible) {
        // First-order exchange test: can moving a unit of flow through a
        // pinned leaf branch (balanced by an opposite move elsewhere) lower
        // the energy? Costs of the two balanced directions per upstream edge.
        std::vector<double> cost_a(n, kInfVal), cost_b(n, kInfVal);
        for (int k = 0; k < n; ++k) {
            const auto& b = upstream[k];
            double plus, minus;
            if (b.msg.f == 1) {
                plus = b.msg.bR + b.phi1;
                minus = -(b.msg.bL + b.phi1);
            } else {
                const Var& w = vars[var_of[k]];
                double x = info.x[var_of[k]];
                if (std::isinf(w.c)) {
                    plus = minus = kInfVal;
                } else {
                    double g = w.d0 + w.c * (x - w.xt);
                    plus = g;
                    minus = x > 1e-12 * scale ? -g : kInfVal;
                }
            }
            if (b.sign > 0) {
                cost_a[k] = plus;
                cost_b[k] = minus;
            } else {
                cost_a[k] = minus;
                cost_b[k] = plus;
            }
        }
        double best = kInfVal;
        int best_k1 = -1, best_k2 = -1;
        for (int k1 = 0; k1 < n; ++k1) {
            for (int k2 = 0; k2 < n; ++k2) {
                if (k1 == k2) continue;
                if (upstream[k1].msg.f != 1 && upstream[k2].msg.f != 1) continue;
                if (std::isinf(cost_a[k1]) || std::isinf(cost_b[k2])) continue;
                double c = cost_a[k1] + cost_b[k2];
                if (c < best) best = c, best_k1 = k1, best_k2 = k2;
            }
        }
        if (best_k1 >= 0 && best < -1e-10 * scale) {
            // Activate the leaves of the winning pair on the selected branch
            // and solve again with them as variables.
            double constant2 = lambda_i + b_ie * x_e;
            std::vector<Var> vars2;
            for (int k = 0; k < n; ++k) {
                const auto& b = upstream[k];
                if (b.msg.f != 1) {
                    var_of[k] = static_cast<int>(vars2.size());
                    vars2.push_back(make_var(k, b));
                    continue;
                }
                int eta = 0;
                if (k == best_k1) eta = b.sign > 0 ? 1 : -1;
                if (k == best_k2) eta = b.sign > 0 ? -1 : 1;
                if (eta == 0) {
                    constant2 += b.sign * b.xt;
                    var_of[k] = -1;
                } else {
                    var_of[k] = static_cast<int>(vars2.size());
                    vars2.push_back(make_leaf_var(k, b, eta));
                }
            }
            RootInfo info2 = solve_root(vars2, constant2, scale);
            if (info2.feasible) {
                vars = std::move(vars2);
                info = std::move(info2);
            }
        }
    }

    CavityRootResult out;
    out.degenerate = info.degenerate;
    out.feasible = info.feasible;
    out.mu = info.mu;
    out.inv_sum = info.inv;
    out.mu_lo = info.mu_lo;
    out.mu_hi = info.mu_hi;
    out.inv_below = info.inv_below;
    out.inv_above = info.inv_above;
    out.flows.assign(n, 0.0);
    for (int k = 0; k < n; ++k) out.flows[k] = upstream[k].msg.f == 1 ? upstream[k].xt : 0.0;
    for (size_t v = 0; v < vars.size(); ++v) out.flows[vars[v].idx] = info.x[v];
    return out;
}

namespace {

double inv_to_alpha(double inv) {
    if (inv <= 0.0) return kInfVal;
    if (std::isinf(inv)) return 0.0;
    return 1.0 / inv;
}

}  // namespace

CavityMessage message_from_root(const CavityRootResult& root, int b_ie) {
    CavityMessage m;
    if (!root.degenerate) {
        m.f = 0;
        m.beta = b_ie * root.mu;
        m.alpha = inv_to_alpha(root.inv_sum);
        return m;
    }
    if (b_ie < 0) {
        m.f = 1;
        m.bL = -root.mu_hi;
        m.aL = inv_to_alpha(root.inv_above);
        m.bR = -root.mu_lo;
        m.aR = inv_to_alpha(root.inv_below);
        if (std::isinf(m.bL)) m.aL = kInfVal;
        if (std::isinf(m.bR)) m.aR = kInfVal;
        return m;
    }
    // Incoming edge: growing flow pushes the root up, so the plateau top is
    // the right branch and the plateau bottom the left one.
    m.f = 1;
    m.bL = root.mu_lo;
    m.aL = inv_to_alpha(root.inv_below);
    m.bR = root.mu_hi;
    m.aR = inv_to_alpha(root.inv_above);
    if (std::isinf(m.bL)) m.aL = kInfVal;
    if (std::isinf(m.bR)) m.aR = kInfVal;
    return m;
}

namespace {

// Derivative contribution of one edge side at x; dir selects the branch at
// the breakpoint itself. Pinned sides contribute through the domain instead.
double side_deriv(const EdgeSide& s, double x, int dir) {
    double p1 = 0.5 * s.phi1, p2 = 0.5 * s.phi2;
    if (s.msg.f == 0) {
        if (std::isinf(s.msg.alpha)) return 0.0;
        return (s.msg.beta + p1) + (s.msg.alpha + p2) * (x - s.xt);
    }
    bool left = x < s.xt || (x == s.xt && dir < 0);
    double a = left ? s.msg.aL : s.msg.aR;
    double b = left ? s.msg.bL : s.msg.bR;
    if (std::isinf(a) || std::isinf(b)) return left ? -kInfVal : kInfVal;
    return (b + p1) + (a + p2) * (x - s.xt);
}

void side_domain(const EdgeSide& s, double& lo, double& hi) {
    if (s.msg.f == 0) {
        if (std::isinf(s.msg.alpha)) {
            lo = std::max(lo, s.xt);
            hi = std::min(hi, s.xt);
        }
        return;
    }
    if (std::isinf(s.msg.aL)) lo = std::max(lo, s.xt);
    if (std::isinf(s.msg.aR)) hi = std::min(hi, s.xt);
}

}  // namespace

double minimize_edge_energy(const EdgeSide& si, const EdgeSide& sj, double tau) {
    double lo = 0.0, hi = kInfVal;
    side_domain(si, lo, hi);
    side_domain(sj, lo, hi);
    if (lo >= hi) return std::max(0.5 * (lo + hi), 0.0);

    auto d_at = [&](double x, int dir) {
        return side_deriv(si, x, dir) + side_deriv(sj, x, dir) + tau;
    };

    std::vector<double> pts;
    pts.push_back(lo);
    if (si.msg.f == 1 && si.xt > lo && si.xt < hi) pts.push_back(si.xt);
    if (sj.msg.f == 1 && sj.xt > lo && sj.xt < hi) pts.push_back(sj.xt);
    if (std::isfinite(hi)) pts.push_back(hi);
    std::sort(pts.begin(), pts.end());

    int np = static_cast<int>(pts.size());
    for (int k = 0; k < np; ++k) {
        double x = pts[k];
        double dl = k == 0 ? -kInfVal : d_at(x, -1);
        double dr = x == hi ? kInfVal : d_at(x, 1);
        if (dl <= 0.0 && dr >= 0.0) return x;
        if (k + 1 < np) {
            double x2 = pts[k + 1];
            double d1 = d_at(x, 1), d2 = d_at(x2, -1);
            if (d1 < 0.0 && d2 > 0.0) return x + (x2 - x) * (-d1) / (d2 - d1);
        }
    }
    // Unbounded tail: follow the last linear piece if it still descends.
    double x = pts.back();
    double d1 = d_at(x, 1);
    if (d1 >= 0.0) return x;
    double x2 = x + std::max(1.0, std::abs(x));
    double d2 = d_at(x2, 1);
    if (d2 > d1) return x + (x2 - x) * (-d1) / (d2 - d1);
    // Flat negative derivative: no finite minimizer, cap at the last point.
    return x2;
}

double edge_energy_right_deriv(const EdgeSide& si, const EdgeSide& sj, double x) {
    return side_deriv(si, x, 1) + side_deriv(sj, x, 1);
}

double edge_energy_left_deriv(const EdgeSide& si, const EdgeSide& sj, double x) {
    return side_deriv(si, x, -1) + side_deriv(sj, x, -1);
}

namespace {

double side_value(const EdgeSide& s, double x) {
    double d = x - s.xt;
    double p1 = 0.5 * s.phi1, p2 = 0.5 * s.phi2;
    if (s.msg.f == 0) {
        if (std::isinf(s.msg.alpha)) return d == 0.0 ? 0.0 : kInfVal;
        return (s.msg.beta + p1) * d + 0.5 * (s.msg.alpha + p2) * d * d;
    }
    if (d == 0.0) return 0.0;
    double a = d < 0.0 ? s.msg.aL : s.msg.aR;
    double b = d < 0.0 ? s.msg.bL : s.msg.bR;
    if (std::isinf(a) || std::isinf(b)) return kInfVal;
    return (b + p1) * d + 0.5 * (a + p2) * d * d;
}

}  // namespace

double edge_energy_value(const EdgeSide& si, const EdgeSide& sj, double x) {
    return side_value(si, x) + side_value(sj, x);
}

}  // namespace bilevelmp
