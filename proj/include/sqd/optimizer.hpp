#ifndef SQD_OPTIMIZER_HPP
#define SQD_OPTIMIZER_HPP

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "sqd/common.hpp"
#include "sqd/mvn.hpp"
#include "sqd/pattern.hpp"
#include "sqd/zmvln.hpp"

namespace sqd {

struct OptimizerOptions {
    int max_iters = 5000;
    double rel_tol = 1e-10;
    double floor = 1e-12;
    double armijo_c = 1e-4;
    double backtrack = 0.5;
    // Optional symmetry orbits: patterns with the same label are averaged in
    // the returned design (ties on symmetric problems are broken toward the
    // symmetric representative).
    std::optional<std::vector<int>> orbits;
};

struct OptResult {
    VectorXd probs;
    double criterion = 0.0;
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
    int rejected_draws = 0;   // Bayes only
    int worst_index = -1;     // minimax only
};

// Euclidean projection onto {p : p >= lo, sum p = 1}.
inline VectorXd project_simplex(const VectorXd& v, double lo = 0.0) {
    int n = static_cast<int>(v.size());
    double free_mass = 1.0 - lo * n;
    require(free_mass > 0.0, "floor too large for simplex dimension");
    std::vector<double> u(n);
    for (int i = 0; i < n; ++i) u[i] = v(i) - lo;
    std::vector<double> s(u);
    std::sort(s.begin(), s.end(), std::greater<double>());
    double cum = 0.0;
    int rho = 0;
    double cum_rho = 0.0;
    for (int i = 0; i < n; ++i) {
        cum += s[i];
        if (s[i] - (cum - free_mass) / (i + 1) > 0) {
            rho = i + 1;
            cum_rho = cum;
        }
    }
    double tau = (cum_rho - free_mass) / rho;
    VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = std::max(u[i] - tau, 0.0) + lo;
    return p;
}

namespace detail {

// Projected gradient descent with Armijo backtracking. `value` may throw
// when the criterion is undefined; such trial points are rejected.
inline OptResult minimize_on_simplex(
    const std::function<double(const VectorXd&)>& value,
    const std::function<VectorXd(const VectorXd&)>& gradient, int J,
    const OptimizerOptions& opts) {
    VectorXd p = VectorXd::Constant(J, 1.0 / J);
    double f = value(p);  // must be finite at the uniform start
    OptResult res;
    res.trace.push_back(f);
    double step = 1.0;
    bool stationary = false;
    int it = 0;
    for (; it < opts.max_iters; ++it) {
        VectorXd g = gradient(p);
        // Frank-Wolfe gap certifies first-order stationarity on the simplex.
        double gap = g.dot(p) - g.minCoeff();
        if (gap <= 1e-6 * std::abs(f) + 1e-15) {
            stationary = true;
            break;
        }
        // Scale-free initial step: relate step length to gradient size.
        double t = step;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            VectorXd cand = project_simplex(p - t * g, opts.floor);
            VectorXd d = cand - p;
            double gd = g.dot(d);
            if (d.cwiseAbs().maxCoeff() == 0.0) break;
            double fc;
            try {
                fc = value(cand);
            } catch (const std::exception&) {
                t *= opts.backtrack;
                continue;
            }
            if (fc <= f + opts.armijo_c * gd) {
                double rel = std::abs(f - fc) / std::max(std::abs(f), 1e-300);
                p = std::move(cand);
                f = fc;
                res.trace.push_back(f);
                accepted = true;
                step = std::min(t * 2.0, 1e12);
                if (rel < opts.rel_tol) {
                    // Change stalled; confirm with the gap test next round.
                    VectorXd g2 = gradient(p);
                    double gap2 = g2.dot(p) - g2.minCoeff();
                    if (gap2 <= 1e-6 * std::abs(f) + 1e-15) {
                        stationary = true;
                        ++it;
                    }
                }
                break;
            }
            t *= opts.backtrack;
        }
        if (stationary) break;
        if (!accepted) {
            // No descent step found: converged if the gap is already tiny,
            // otherwise flagged unconverged.
            VectorXd g2 = gradient(p);
            double gap2 = g2.dot(p) - g2.minCoeff();
            stationary = gap2 <= 1e-6 * std::abs(f) + 1e-15;
            break;
        }
    }
    // Symmetric tie-breaking: average the iterate over declared orbits.
    if (opts.orbits) {
        const auto& orb = *opts.orbits;
        require(static_cast<int>(orb.size()) == J, "orbit label size mismatch");
        std::map<int, std::pair<double, int>> acc;
        for (int j = 0; j < J; ++j) {
            acc[orb[j]].first += p(j);
            acc[orb[j]].second += 1;
        }
        VectorXd ps(J);
        for (int j = 0; j < J; ++j)
            ps(j) = acc[orb[j]].first / acc[orb[j]].second;
        try {
            double fs = value(ps);
            if (fs <= f + 1e-12 * std::abs(f)) {
                p = ps;
                f = fs;
            }
        } catch (const std::exception&) {
        }
    }
    res.probs = std::move(p);
    res.criterion = f;
    res.iterations = it;
    res.converged = stationary;
    return res;
}

}  // namespace detail

// Local (plug-in) design: minimize the criterion at a point parameter value.
template <class Crit>
OptResult optimize_local(const Crit& crit, const OptimizerOptions& opts = {}) {
    int J = crit.pattern_set().count();
    return detail::minimize_on_simplex(
        [&](const VectorXd& p) { return crit.value(p); },
        [&](const VectorXd& p) { return crit.gradient(p); }, J, opts);
}

// Bayes design: minimize the sample average of the criterion over
// precomputed prior draws (sample-average approximation).
template <class Crit>
OptResult optimize_bayes(const std::vector<Crit>& draws,
                         const OptimizerOptions& opts = {}) {
    require(!draws.empty(), "Bayes design requires at least one draw");
    int J = draws.front().pattern_set().count();
    auto avg = [&](const VectorXd& p) {
        KahanSum s;
        for (const auto& c : draws) s.add(c.value(p));
        return s.value() / draws.size();
    };
    auto avg_grad = [&](const VectorXd& p) {
        VectorXd g = VectorXd::Zero(J);
        for (const auto& c : draws) g += c.gradient(p);
        return VectorXd(g / draws.size());
    };
    return detail::minimize_on_simplex(avg, avg_grad, J, opts);
}

// Minimax design: minimize the worst case over a finite parameter set via
// supergradient steps on the active member.
template <class Crit>
OptResult optimize_minimax(const std::vector<Crit>& members,
                           const OptimizerOptions& opts = {}) {
    require(!members.empty(), "minimax requires a nonempty parameter set");
    int J = members.front().pattern_set().count();
    auto worst = [&](const VectorXd& p) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& c : members) best = std::max(best, c.value(p));
        return best;
    };
    auto worst_grad = [&](const VectorXd& p) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t s = 0; s < members.size(); ++s) {
            double v = members[s].value(p);
            if (v > best) {
                best = v;
                arg = s;
            }
        }
        return members[arg].gradient(p);
    };
    OptResult res = detail::minimize_on_simplex(worst, worst_grad, J, opts);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < members.size(); ++s) {
        double v = members[s].value(res.probs);
        if (v > best) {
            best = v;
            res.worst_index = static_cast<int>(s);
        }
    }
    return res;
}

// Draw criteria from a parameter sampler, rejecting draws whose criterion is
// undefined at the uniform design.
template <class Crit, class Sampler>
std::pair<std::vector<Crit>, int> make_bayes_draws(Sampler&& sample_crit,
                                                   int S, int J) {
    std::vector<Crit> draws;
    draws.reserve(S);
    int rejected = 0;
    VectorXd uniform = VectorXd::Constant(J, 1.0 / J);
    std::uint64_t attempt = 0;
    while (static_cast<int>(draws.size()) < S) {
        require(attempt < static_cast<std::uint64_t>(S) * 100 + 1000,
                "prior sampler keeps producing undefined criteria");
        Crit c = sample_crit(attempt);
        ++attempt;
        try {
            c.value(uniform);
        } catch (const std::exception&) {
            ++rejected;
            continue;
        }
        draws.push_back(std::move(c));
    }
    return {std::move(draws), rejected};
}

// Orbit labels for block-structured problems: patterns are equivalent when
// their group-membership multisets coincide. Used for symmetric tie-breaking.
inline std::vector<int> group_orbit_labels(const PatternSet& ps, int q) {
    require(ps.m == 2, "orbit labels are defined for pair patterns");
    std::vector<int> labels(ps.count());
    for (int j = 0; j < ps.count(); ++j) {
        const auto& it = ps.patterns[j].items;
        int a = it[0] / q, b = it[1] / q;
        if (a > b) std::swap(a, b);
        labels[j] = a * 1000 + b;
    }
    return labels;
}

}  // namespace sqd

#endif  // SQD_OPTIMIZER_HPP
