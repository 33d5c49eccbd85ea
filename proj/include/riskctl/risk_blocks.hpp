#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "riskctl/errors.hpp"
#include "riskctl/simplex.hpp"

namespace riskctl {

/// terms . x + constant + param * z
struct LinearExpr {
    LpTerms terms;
    double constant = 0.0;
    double param = 0.0;
};

/// Convex piecewise-linear penalty on each excess u: slope f_j applies on
/// [breakpoints[j], breakpoints[j+1]), the last slope is unbounded.
struct NormSpec {
    std::vector<double> breakpoints{0.0};
    std::vector<double> slopes{1.0};
    double budget = std::numeric_limits<double>::infinity();

    void validate() const {
        if (breakpoints.empty() || breakpoints.size() != slopes.size()) {
            throw DomainError("norm penalty needs one breakpoint per slope");
        }
        if (breakpoints.front() != 0.0) throw DomainError("first norm breakpoint must be 0");
        for (std::size_t j = 1; j < slopes.size(); ++j) {
            if (!(breakpoints[j] > breakpoints[j - 1])) throw DomainError("norm breakpoints must increase");
            if (slopes[j] < slopes[j - 1]) throw DomainError("norm slopes must be nondecreasing (convex penalty)");
        }
        for (double f : slopes) {
            if (!std::isfinite(f) || f < 0.0) throw DomainError("norm slopes must be finite and nonnegative");
        }
        if (std::isnan(budget)) throw DomainError("norm budget is NaN");
    }

    /// Penalty of one excess value, by direct evaluation of the pieces.
    [[nodiscard]] double penalty(double u) const {
        double total = 0.0;
        for (std::size_t j = 0; j < slopes.size(); ++j) {
            const double hi = j + 1 < breakpoints.size() ? breakpoints[j + 1] : std::numeric_limits<double>::infinity();
            if (u <= breakpoints[j]) break;
            total += slopes[j] * (std::min(u, hi) - breakpoints[j]);
        }
        return total;
    }
};

struct CvarBlock {
    std::size_t var = 0;                ///< free threshold (VaR at the optimum)
    std::vector<std::size_t> excess;    ///< u_k >= 0, one per outcome
    LpTerms value;                      ///< var + sum p_k u_k / (1-c)
};

struct DownsideBlock {
    std::vector<std::size_t> excess;
    LpTerms value;  ///< sum p_k u_k
};

namespace detail {

inline void check_probs(std::size_t n_losses, std::span<const double> probs) {
    if (probs.size() != n_losses) throw DomainError("one probability per loss expected");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw DomainError("negative outcome probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("outcome probabilities do not sum to 1");
}

// u_k - L_k >= 0 with L_k moved to the right-hand side
inline std::size_t excess_row(LpProblem& p, const std::string& name, const LinearExpr& loss, LpTerms lhs) {
    for (const auto& [j, a] : loss.terms) lhs.emplace_back(j, -a);
    return p.add_row(name, std::move(lhs), Relation::ge, loss.constant, loss.param);
}

}  // namespace detail

/// Rockafellar-Uryasev encoding: var + u_k - L_k >= 0, u_k >= 0. The block's
/// value expression is CVaR_c of the losses once minimized.
inline CvarBlock cvar_block(LpProblem& p, const std::vector<LinearExpr>& losses, std::span<const double> probs,
                            double c, const std::string& prefix = "cvar") {
    if (!(c >= 0.0 && c < 1.0)) {
        throw DomainError("CVaR retention level must lie in [0,1); use super-replication for c = 1");
    }
    detail::check_probs(losses.size(), probs);
    CvarBlock b;
    b.var = p.add_free_variable(prefix + ".var");
    b.value.emplace_back(b.var, 1.0);
    for (std::size_t k = 0; k < losses.size(); ++k) {
        const std::size_t u = p.add_variable(prefix + ".u" + std::to_string(k));
        b.excess.push_back(u);
        b.value.emplace_back(u, probs[k] / (1.0 - c));
        detail::excess_row(p, prefix + ".tail" + std::to_string(k), losses[k], {{b.var, 1.0}, {u, 1.0}});
    }
    return b;
}

/// u_k >= L_k, u_k >= 0; value is the expected positive loss.
inline DownsideBlock downside_block(LpProblem& p, const std::vector<LinearExpr>& losses,
                                    std::span<const double> probs, const std::string& prefix = "down") {
    detail::check_probs(losses.size(), probs);
    DownsideBlock b;
    for (std::size_t k = 0; k < losses.size(); ++k) {
        const std::size_t u = p.add_variable(prefix + ".u" + std::to_string(k));
        b.excess.push_back(u);
        b.value.emplace_back(u, probs[k]);
        detail::excess_row(p, prefix + ".pos" + std::to_string(k), losses[k], {{u, 1.0}});
    }
    return b;
}

/// Splits each u into bounded pieces u = sum_j u_j and adds
/// sum_k sum_j f_j u_kj <= budget.
inline std::size_t norm_block(LpProblem& p, std::span<const std::size_t> excess, const NormSpec& spec,
                              const std::string& prefix = "norm") {
    spec.validate();
    const double inf = std::numeric_limits<double>::infinity();
    LpTerms budget;
    for (std::size_t k = 0; k < excess.size(); ++k) {
        LpTerms split{{excess[k], 1.0}};
        for (std::size_t j = 0; j < spec.slopes.size(); ++j) {
            const double width = j + 1 < spec.breakpoints.size() ? spec.breakpoints[j + 1] - spec.breakpoints[j] : inf;
            const std::size_t v =
                p.add_variable(prefix + ".u" + std::to_string(k) + "_" + std::to_string(j), 0.0, width);
            split.emplace_back(v, -1.0);
            if (spec.slopes[j] != 0.0) budget.emplace_back(v, spec.slopes[j]);
        }
        p.add_row(prefix + ".split" + std::to_string(k), std::move(split), Relation::eq, 0.0);
    }
    if (std::isinf(spec.budget)) return static_cast<std::size_t>(-1);  // no budget, nothing binds
    return p.add_row(prefix + ".budget", std::move(budget), Relation::le, spec.budget);
}

/// expression <= bound + bound_param * z
inline std::size_t add_budget_row(LpProblem& p, const std::string& name, const LpTerms& expression, double bound,
                                  double bound_param = 0.0) {
    return p.add_row(name, expression, Relation::le, bound, bound_param);
}

/// Adds weight * expression to the objective.
inline void add_to_objective(LpProblem& p, const LpTerms& expression, double weight = 1.0) {
    for (const auto& [j, a] : expression) p.set_cost(j, p.variables()[j].cost + weight * a);
}

}  // namespace riskctl
