#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"

namespace riskctl {

/// Solver tolerances, kept in one place.
namespace tol {
inline constexpr double feasibility = 1e-9;
inline constexpr double optimality = 1e-9;
inline constexpr double pivot = 1e-9;
inline constexpr double slope_merge = 1e-9;
}  // namespace tol

enum class Relation : std::uint8_t { le, eq, ge };
enum class LpStatus : std::uint8_t { optimal, infeasible, unbounded };

inline const char* to_string(Relation r) {
    switch (r) {
        case Relation::le: return "<=";
        case Relation::eq: return "=";
        case Relation::ge: return ">=";
    }
    return "?";
}

inline const char* to_string(LpStatus s) {
    switch (s) {
        case LpStatus::optimal: return "optimal";
        case LpStatus::infeasible: return "infeasible";
        case LpStatus::unbounded: return "unbounded";
    }
    return "?";
}

struct LpVariable {
    std::string name;
    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    double cost = 0.0;
};

using LpTerms = std::vector<std::pair<std::size_t, double>>;

/// One constraint: sum(terms) rel rhs + param * z.
struct LpRow {
    std::string name;
    LpTerms terms;
    Relation rel = Relation::le;
    double rhs = 0.0;
    double param = 0.0;
};

/// Minimization LP with bounded variables and an optional scalar parameter z
/// entering the right-hand side linearly.
class LpProblem {
public:
    std::size_t add_variable(std::string name, double lower = 0.0,
                             double upper = std::numeric_limits<double>::infinity(), double cost = 0.0) {
        vars_.push_back({std::move(name), lower, upper, cost});
        return vars_.size() - 1;
    }
    std::size_t add_free_variable(std::string name, double cost = 0.0) {
        const double inf = std::numeric_limits<double>::infinity();
        return add_variable(std::move(name), -inf, inf, cost);
    }
    std::size_t add_row(std::string name, LpTerms terms, Relation rel, double rhs, double param = 0.0) {
        rows_.push_back({std::move(name), std::move(terms), rel, rhs, param});
        return rows_.size() - 1;
    }

    void set_cost(std::size_t var, double cost) { vars_.at(var).cost = cost; }
    void set_bounds(std::size_t var, double lower, double upper) {
        vars_.at(var).lower = lower;
        vars_.at(var).upper = upper;
    }
    void set_param_range(double lo, double hi) {
        param_lo_ = lo;
        param_hi_ = hi;
    }
    void scale_objective(double factor) {
        for (auto& v : vars_) v.cost *= factor;
        objective_offset *= factor;
    }

    [[nodiscard]] const std::vector<LpVariable>& variables() const { return vars_; }
    [[nodiscard]] const std::vector<LpRow>& rows() const { return rows_; }
    [[nodiscard]] std::size_t num_variables() const { return vars_.size(); }
    [[nodiscard]] std::size_t num_rows() const { return rows_.size(); }
    [[nodiscard]] double param_lo() const { return param_lo_; }
    [[nodiscard]] double param_hi() const { return param_hi_; }
    [[nodiscard]] bool has_param() const {
        return std::any_of(rows_.begin(), rows_.end(), [](const LpRow& r) { return r.param != 0.0; });
    }

    /// Throws DomainError on dangling indices, NaN data or crossed bounds.
    void validate() const {
        for (const auto& v : vars_) {
            if (std::isnan(v.lower) || std::isnan(v.upper) || !std::isfinite(v.cost)) {
                throw DomainError("LP variable '" + v.name + "' has NaN bound or non-finite cost");
            }
            if (v.lower > v.upper) throw DomainError("LP variable '" + v.name + "' has lower > upper");
            if (v.lower == std::numeric_limits<double>::infinity() || v.upper == -std::numeric_limits<double>::infinity()) {
                throw DomainError("LP variable '" + v.name + "' has an infinite fixed value");
            }
        }
        for (const auto& r : rows_) {
            if (!std::isfinite(r.rhs) || !std::isfinite(r.param)) {
                throw DomainError("LP row '" + r.name + "' has non-finite right-hand side");
            }
            for (const auto& [j, a] : r.terms) {
                if (j >= vars_.size()) throw DomainError("LP row '" + r.name + "' references a missing variable");
                if (!std::isfinite(a)) throw DomainError("LP row '" + r.name + "' has a non-finite coefficient");
            }
        }
        if (param_lo_ > param_hi_) throw DomainError("empty parameter range");
    }

    double objective_offset = 0.0;

private:
    std::vector<LpVariable> vars_;
    std::vector<LpRow> rows_;
    double param_lo_ = 0.0;
    double param_hi_ = 0.0;
};

struct LpSolution {
    LpStatus status = LpStatus::infeasible;
    double param = 0.0;  ///< z the problem was solved at
    std::vector<double> x;
    std::vector<double> duals;  ///< d objective / d rhs, one per row
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::size_t pivots = 0;

    // Right-hand-side ranging of the optimal basis: for z in [range_lo, range_hi]
    // the basis stays optimal, x(z) = x + (z - param) * x_rate and the
    // objective moves with `slope`.
    double range_lo = 0.0;
    double range_hi = 0.0;
    double slope = 0.0;
    std::vector<double> x_rate;

    [[nodiscard]] bool optimal() const { return status == LpStatus::optimal; }
    [[nodiscard]] double value_at(double z) const { return objective + slope * (z - param); }
    [[nodiscard]] std::vector<double> x_at(double z) const {
        std::vector<double> out(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] + (z - param) * x_rate[j];
        return out;
    }
};

namespace detail {

/// Dense two-phase tableau simplex on the standard form min c'y, Ay = b(z), y >= 0.
class SimplexEngine {
public:
    SimplexEngine(const LpProblem& p, double z) : prob_(p), z_(z) { build(); }

    LpSolution run() {
        LpSolution sol;
        sol.param = z_;
        if (!phase_one()) {
            sol.status = LpStatus::infeasible;
            sol.pivots = pivots_;
            return sol;
        }
        drive_out_artificials();
        load_phase_two_objective();
        if (!iterate(false)) {
            sol.status = LpStatus::unbounded;
            sol.pivots = pivots_;
            return sol;
        }
        // Rounding in the tableau can leave the final basis slightly primal
        // infeasible; recomputing the rhs exposes it and the dual pass repairs it.
        refresh_rhs();
        if (auto s = finish()) return *s;
        throw NumericalError("simplex could not restore primal feasibility");
    }

    /// Re-solves at a new z starting from the last optimal basis. Reduced
    /// costs do not depend on z, so the basis stays dual feasible and a dual
    /// simplex restores primal feasibility. Returns nullopt when the warm
    /// start gives up; the caller should then solve from scratch.
    std::optional<LpSolution> resolve(double z) {
        z_ = z;
        refresh_rhs();
        return finish();
    }

private:
    enum class Kind : std::uint8_t { fixed, lower, upper, free, boxed };
    struct VarMap {
        Kind kind;
        std::size_t col = 0;
        std::size_t col2 = 0;  // negative part for free variables
        double shift = 0.0;
    };

    double& at(std::size_t i, std::size_t j) { return t_[i * stride_ + j]; }
    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return t_[i * stride_ + j]; }

    void build() {
        const auto& vars = prob_.variables();
        const auto& rows = prob_.rows();
        const std::size_t nv = vars.size();
        map_.resize(nv);
        std::size_t ncols = 0;
        std::vector<std::size_t> boxed;
        for (std::size_t j = 0; j < nv; ++j) {
            const auto& v = vars[j];
            const bool lo = std::isfinite(v.lower);
            const bool hi = std::isfinite(v.upper);
            VarMap& m = map_[j];
            if (lo && hi && v.lower == v.upper) {
                m = {Kind::fixed, 0, 0, v.lower};
            } else if (lo && hi) {
                m = {Kind::boxed, ncols++, 0, v.lower};
                boxed.push_back(j);
            } else if (lo) {
                m = {Kind::lower, ncols++, 0, v.lower};
            } else if (hi) {
                m = {Kind::upper, ncols++, 0, v.upper};
            } else {
                m = {Kind::free, ncols, ncols + 1, 0.0};
                ncols += 2;
            }
        }
        n_struct_ = ncols;
        m_orig_ = rows.size();
        m_ = m_orig_ + boxed.size();

        // Row data in structural columns, before slacks.
        std::vector<double> a(m_ * n_struct_, 0.0);
        std::vector<double> b(m_, 0.0);
        std::vector<double> d(m_, 0.0);
        std::vector<int> slack_sign(m_, 0);  // +1 for <=, -1 for >=, 0 for =
        for (std::size_t i = 0; i < m_orig_; ++i) {
            const auto& r = rows[i];
            double rhs = r.rhs;
            for (const auto& [j, coef] : r.terms) {
                const VarMap& m = map_[j];
                rhs -= coef * m.shift;
                switch (m.kind) {
                    case Kind::fixed: break;
                    case Kind::lower:
                    case Kind::boxed: a[i * n_struct_ + m.col] += coef; break;
                    case Kind::upper: a[i * n_struct_ + m.col] -= coef; break;
                    case Kind::free:
                        a[i * n_struct_ + m.col] += coef;
                        a[i * n_struct_ + m.col2] -= coef;
                        break;
                }
            }
            b[i] = rhs;
            d[i] = r.param;
            slack_sign[i] = r.rel == Relation::le ? 1 : (r.rel == Relation::ge ? -1 : 0);
        }
        for (std::size_t k = 0; k < boxed.size(); ++k) {
            const std::size_t i = m_orig_ + k;
            const auto& v = vars[boxed[k]];
            a[i * n_struct_ + map_[boxed[k]].col] = 1.0;
            b[i] = v.upper - v.lower;
            slack_sign[i] = 1;
        }

        flip_.assign(m_, 1.0);
        for (std::size_t i = 0; i < m_; ++i) {
            if (b[i] + z_ * d[i] < 0.0) flip_[i] = -1.0;
        }

        // Column layout: structural | slacks | artificials
        std::size_t col = n_struct_;
        unit_col_.assign(m_, 0);
        unit_sign_.assign(m_, 0.0);
        std::vector<std::size_t> slack_col(m_, SIZE_MAX);
        for (std::size_t i = 0; i < m_; ++i) {
            if (slack_sign[i] != 0) {
                slack_col[i] = col++;
                unit_col_[i] = slack_col[i];
                unit_sign_[i] = slack_sign[i];
            }
        }
        first_art_ = col;
        basis_.assign(m_, 0);
        std::vector<std::size_t> art_col(m_, SIZE_MAX);
        for (std::size_t i = 0; i < m_; ++i) {
            if (slack_sign[i] != 0 && slack_sign[i] * flip_[i] > 0) {
                basis_[i] = slack_col[i];
            } else {
                art_col[i] = col++;
                basis_[i] = art_col[i];
                if (slack_sign[i] == 0) {
                    unit_col_[i] = art_col[i];
                    unit_sign_[i] = flip_[i];
                }
            }
        }
        n_ = col;
        init_basis_ = basis_;
        stride_ = n_ + 2;
        rhs_col_ = n_;
        par_col_ = n_ + 1;
        t_.assign((m_ + 1) * stride_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            const double f = flip_[i];
            for (std::size_t j = 0; j < n_struct_; ++j) at(i, j) = f * a[i * n_struct_ + j];
            if (slack_col[i] != SIZE_MAX) at(i, slack_col[i]) = f * slack_sign[i];
            if (art_col[i] != SIZE_MAX) at(i, art_col[i]) = 1.0;
            at(i, rhs_col_) = f * (b[i] + z_ * d[i]);
            at(i, par_col_) = f * d[i];
        }
        a0_.assign(m_ * n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) a0_[i * n_ + j] = at(i, j);
        }
        b0_.resize(m_);
        d0_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            b0_[i] = flip_[i] * b[i];
            d0_[i] = flip_[i] * d[i];
        }
        bscale_ = 1.0;
        for (std::size_t i = 0; i < m_; ++i) bscale_ = std::max(bscale_, std::abs(at(i, rhs_col_)));

        cost_.assign(n_, 0.0);
        for (std::size_t j = 0; j < nv; ++j) {
            const double c = vars[j].cost;
            const VarMap& m = map_[j];
            switch (m.kind) {
                case Kind::fixed: break;
                case Kind::lower:
                case Kind::boxed: cost_[m.col] = c; break;
                case Kind::upper: cost_[m.col] = -c; break;
                case Kind::free:
                    cost_[m.col] = c;
                    cost_[m.col2] = -c;
                    break;
            }
        }
        max_iter_ = 200 * (m_ + n_) + 1000;
    }

    [[nodiscard]] bool is_artificial(std::size_t j) const { return j >= first_art_ && j < n_; }

    bool phase_one() {
        if (first_art_ == n_) return true;
        const std::size_t obj = m_;
        for (std::size_t j = 0; j < stride_; ++j) at(obj, j) = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (!is_artificial(basis_[i])) continue;
            for (std::size_t j = 0; j < stride_; ++j) {
                if (!is_artificial(j)) at(obj, j) -= at(i, j);
            }
        }
        iterate(true);
        if (-at(obj, rhs_col_) <= tol::feasibility * bscale_) return true;
        // confirm on a rebuilt tableau before calling the problem infeasible
        if (!reinvert(true)) return false;
        iterate(true);
        return -at(obj, rhs_col_) <= tol::feasibility * bscale_;
    }

    // Pivot zero-level artificials out of the basis; rows where that is
    // impossible are redundant and keep their artificial at zero.
    void drive_out_artificials() {
        for (std::size_t i = 0; i < m_; ++i) {
            if (!is_artificial(basis_[i])) continue;
            std::size_t best = SIZE_MAX;
            double best_abs = 1e-7;
            for (std::size_t j = 0; j < first_art_; ++j) {
                if (std::abs(at(i, j)) > best_abs) {
                    best_abs = std::abs(at(i, j));
                    best = j;
                }
            }
            if (best == SIZE_MAX) continue;
            at(i, rhs_col_) = 0.0;
            pivot(i, best);
        }
    }

    void load_phase_two_objective() {
        const std::size_t obj = m_;
        for (std::size_t j = 0; j < n_; ++j) at(obj, j) = cost_[j];
        at(obj, rhs_col_) = 0.0;
        at(obj, par_col_) = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost_[basis_[i]];
            if (cb == 0.0) continue;
            for (std::size_t j = 0; j < stride_; ++j) at(obj, j) -= cb * at(i, j);
        }
    }

    /// Returns false when the objective is unbounded below.
    bool iterate(bool phase1) {
        const std::size_t obj = m_;
        bool bland = false;
        std::size_t stall = 0;
        double last = at(obj, rhs_col_);
        // columns whose entries are all below the pivot tolerance cannot
        // enter; they are skipped until the next pivot changes the tableau
        std::vector<char> blocked(first_art_, 0);
        for (std::size_t it = 0;; ++it) {
            if (it > max_iter_) throw NumericalError("simplex iteration limit reached");
            // once the artificials are at zero, further phase-one pivots only risk tiny pivots
            if (phase1 && at(obj, rhs_col_) >= -tol::feasibility * bscale_) return true;
            std::size_t enter = SIZE_MAX;
            double best = -tol::optimality;
            for (std::size_t j = 0; j < first_art_; ++j) {
                const double r = at(obj, j);
                if (r < best && !blocked[j]) {
                    enter = j;
                    if (bland) break;
                    best = r;
                }
            }
            if (enter == SIZE_MAX) return true;

            const std::size_t leave = ratio_test(enter, phase1, bland);
            if (leave == SIZE_MAX) {
                if (!phase1 && at(obj, enter) < -1e-6) return false;
                blocked[enter] = 1;
                continue;
            }
            std::fill(blocked.begin(), blocked.end(), 0);
            pivot(leave, enter);

            const double now = at(obj, rhs_col_);
            // rhs entry of the objective row holds -objective; it grows on progress
            if (now > last + 1e-12 * (1.0 + std::abs(last))) {
                stall = 0;
                last = now;
            } else if (++stall > 50) {
                bland = true;
            }
        }
    }

    // Harris two-pass test: the first pass bounds the step with rhs relaxed
    // by the feasibility tolerance, the second takes the largest pivot within
    // that step. In phase two a zero-level artificial leaves on any nonzero entry.
    std::size_t ratio_test(std::size_t enter, bool phase1, bool bland) {
        const double relax = tol::feasibility * bscale_;
        double step = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m_; ++i) {
            const double a = at(i, enter);
            if (!phase1 && is_artificial(basis_[i])) {
                if (std::abs(a) > 1e-7) step = 0.0;
                continue;
            }
            if (a > tol::pivot) step = std::min(step, (std::max(at(i, rhs_col_), 0.0) + relax) / a);
        }
        if (!std::isfinite(step)) return SIZE_MAX;
        std::size_t leave = SIZE_MAX;
        double best = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            double a = at(i, enter);
            if (!phase1 && is_artificial(basis_[i])) {
                if (std::abs(a) <= 1e-7) continue;
                at(i, rhs_col_) = 0.0;
                a = std::abs(a);
            } else if (a <= tol::pivot || std::max(at(i, rhs_col_), 0.0) / a > step) {
                continue;
            }
            const bool take = leave == SIZE_MAX || (bland ? basis_[i] < basis_[leave] : a > best);
            if (take) {
                leave = i;
                best = a;
            }
        }
        return leave;
    }

    void pivot(std::size_t r, std::size_t e) {
        ++pivots_;
        double* prow = &t_[r * stride_];
        const double inv = 1.0 / prow[e];
        for (std::size_t j = 0; j < stride_; ++j) prow[j] *= inv;
        prow[e] = 1.0;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == r) continue;
            double* row = &t_[i * stride_];
            const double f = row[e];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < stride_; ++j) row[j] -= f * prow[j];
            row[e] = 0.0;
            if (i < m_ && row[rhs_col_] < 0.0 && row[rhs_col_] > -tol::feasibility * bscale_) row[rhs_col_] = 0.0;
        }
        basis_[r] = e;
    }

    enum class Repair : std::uint8_t { done, infeasible, stalled };

    // Dual simplex from a dual feasible basis until every basic variable is
    // back within its bounds (artificials must sit at zero).
    Repair dual_repair() {
        const double ftol = tol::feasibility * bscale_;
        const std::size_t limit = 4 * m_ + 100;
        for (std::size_t it = 0; it <= limit; ++it) {
            std::size_t r = SIZE_MAX;
            double worst = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const double v = at(i, rhs_col_);
                const double viol = is_artificial(basis_[i]) ? std::abs(v) : -v;
                if (viol > ftol && viol > worst) {
                    worst = viol;
                    r = i;
                }
            }
            if (r == SIZE_MAX) return Repair::done;
            // an artificial above zero leaves through its upper bound
            const double dir = at(r, rhs_col_) < 0.0 ? -1.0 : 1.0;
            // Harris: bound the step with a relaxed test, then take the largest pivot
            double step = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < first_art_; ++j) {
                const double a = dir * at(r, j);
                if (a > tol::pivot) step = std::min(step, (std::max(at(m_, j), 0.0) + tol::optimality) / a);
            }
            if (!std::isfinite(step)) return Repair::infeasible;
            std::size_t enter = SIZE_MAX;
            double best_piv = 0.0;
            for (std::size_t j = 0; j < first_art_; ++j) {
                const double a = dir * at(r, j);
                if (a > tol::pivot && std::max(at(m_, j), 0.0) / a <= step && a > best_piv) {
                    enter = j;
                    best_piv = a;
                }
            }
            pivot(r, enter);
            refresh_rhs();
        }
        return Repair::stalled;
    }

    std::optional<LpSolution> finish() {
        bool reinverted = false;
        for (int round = 0; round < 4; ++round) {
            const Repair rep = dual_repair();
            if (rep == Repair::stalled) return std::nullopt;
            if (rep == Repair::infeasible) {
                LpSolution sol;
                sol.param = z_;
                sol.status = LpStatus::infeasible;
                sol.pivots = pivots_;
                return sol;
            }
            if (!iterate(false)) return std::nullopt;
            refresh_rhs();
            if (primal_feasible()) {
                LpSolution sol;
                sol.param = z_;
                extract(sol);
                if (satisfies_rows(sol.x)) return sol;
                // the tableau drifted away from the data; rebuild it once
                if (reinverted || !reinvert()) return std::nullopt;
                reinverted = true;
            }
        }
        return std::nullopt;
    }

    // Checks x against the original rows and bounds, not the tableau.
    [[nodiscard]] bool satisfies_rows(const std::vector<double>& x) const {
        const auto& vars = prob_.variables();
        const double tol = 1e-7;
        for (std::size_t j = 0; j < vars.size(); ++j) {
            const double scale = 1.0 + std::abs(x[j]);
            if (x[j] < vars[j].lower - tol * scale || x[j] > vars[j].upper + tol * scale) return false;
        }
        for (const auto& r : prob_.rows()) {
            double lhs = 0.0;
            double mag = std::abs(r.rhs + z_ * r.param);
            for (const auto& [j, a] : r.terms) {
                lhs += a * x[j];
                mag = std::max(mag, std::abs(a * x[j]));
            }
            const double gap = lhs - (r.rhs + z_ * r.param);
            const double lim = tol * (1.0 + mag);
            if ((r.rel == Relation::le && gap > lim) || (r.rel == Relation::ge && gap < -lim) ||
                (r.rel == Relation::eq && std::abs(gap) > lim)) {
                return false;
            }
        }
        return true;
    }

    [[nodiscard]] double cost_of(std::size_t j, bool phase1) const {
        return phase1 ? (is_artificial(j) ? 1.0 : 0.0) : cost_[j];
    }

    // Recomputes B^-1 [A | d] for the current basis from the original data by
    // Gauss-Jordan elimination with partial pivoting, then the reduced costs
    // and the rhs. Returns false if the basis matrix is numerically singular.
    bool reinvert(bool phase1 = false) {
        const std::size_t w = m_ + n_ + 1;
        std::vector<double> g(m_ * w, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t k = 0; k < m_; ++k) g[i * w + k] = a0_[i * n_ + basis_[k]];
            for (std::size_t j = 0; j < n_; ++j) g[i * w + m_ + j] = a0_[i * n_ + j];
            g[i * w + m_ + n_] = d0_[i];
        }
        for (std::size_t k = 0; k < m_; ++k) {
            std::size_t p = k;
            for (std::size_t i = k + 1; i < m_; ++i) {
                if (std::abs(g[i * w + k]) > std::abs(g[p * w + k])) p = i;
            }
            if (std::abs(g[p * w + k]) < 1e-12) return false;
            if (p != k) std::swap_ranges(g.begin() + p * w, g.begin() + (p + 1) * w, g.begin() + k * w);
            const double inv = 1.0 / g[k * w + k];
            for (std::size_t j = k; j < w; ++j) g[k * w + j] *= inv;
            for (std::size_t i = 0; i < m_; ++i) {
                const double f = g[i * w + k];
                if (i == k || f == 0.0) continue;
                for (std::size_t j = k; j < w; ++j) g[i * w + j] -= f * g[k * w + j];
            }
        }
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) at(i, j) = g[i * w + m_ + j];
            at(i, basis_[i]) = 1.0;
            at(i, par_col_) = g[i * w + m_ + n_];
        }
        for (std::size_t j = 0; j < n_; ++j) {
            double r = cost_of(j, phase1);
            for (std::size_t i = 0; i < m_; ++i) r -= cost_of(basis_[i], phase1) * at(i, j);
            at(m_, j) = r;
        }
        double slope = 0.0;
        for (std::size_t i = 0; i < m_; ++i) slope += cost_of(basis_[i], phase1) * at(i, par_col_);
        at(m_, par_col_) = -slope;
        refresh_rhs(phase1);
        return true;
    }

    [[nodiscard]] bool primal_feasible() const {
        const double ftol = tol::feasibility * bscale_;
        for (std::size_t i = 0; i < m_; ++i) {
            const double v = at(i, rhs_col_);
            if (is_artificial(basis_[i]) ? std::abs(v) > ftol : v < -ftol) return false;
        }
        return true;
    }

    // Columns of the starting identity hold B^-1; recomputing B^-1 b(z)
    // drops the drift that pivoting and zero-clamping leave in the rhs.
    void refresh_rhs(bool phase1 = false) {
        std::vector<double> beta(m_, 0.0);
        for (std::size_t k = 0; k < m_; ++k) {
            const double bk = b0_[k] + z_ * d0_[k];
            if (bk == 0.0) continue;
            const std::size_t c = init_basis_[k];
            for (std::size_t i = 0; i < m_; ++i) beta[i] += at(i, c) * bk;
        }
        double obj = 0.0;
        bscale_ = 1.0;
        for (std::size_t i = 0; i < m_; ++i) {
            at(i, rhs_col_) = beta[i];
            obj += cost_of(basis_[i], phase1) * beta[i];
            bscale_ = std::max(bscale_, std::abs(beta[i]));
        }
        at(m_, rhs_col_) = -obj;
    }

    void extract(LpSolution& sol) {
        const auto& vars = prob_.variables();
        std::vector<double> y(n_, 0.0);
        std::vector<double> rate(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            y[basis_[i]] = at(i, rhs_col_);
            rate[basis_[i]] = at(i, par_col_);
        }
        sol.status = LpStatus::optimal;
        sol.pivots = pivots_;
        sol.x.resize(vars.size());
        sol.x_rate.resize(vars.size());
        double objective = prob_.objective_offset;
        for (std::size_t j = 0; j < vars.size(); ++j) {
            const VarMap& m = map_[j];
            double x = m.shift;
            double dx = 0.0;
            switch (m.kind) {
                case Kind::fixed: break;
                case Kind::lower:
                case Kind::boxed:
                    x += y[m.col];
                    dx = rate[m.col];
                    break;
                case Kind::upper:
                    x -= y[m.col];
                    dx = -rate[m.col];
                    break;
                case Kind::free:
                    x += y[m.col] - y[m.col2];
                    dx = rate[m.col] - rate[m.col2];
                    break;
            }
            sol.x[j] = x;
            sol.x_rate[j] = dx;
            objective += vars[j].cost * x;
        }
        sol.objective = objective;
        sol.duals.resize(m_orig_);
        for (std::size_t i = 0; i < m_orig_; ++i) sol.duals[i] = -at(m_, unit_col_[i]) / unit_sign_[i];

        double slope = 0.0;
        for (std::size_t i = 0; i < m_; ++i) slope += cost_[basis_[i]] * at(i, par_col_);
        sol.slope = slope;

        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        bool pinned = false;
        for (std::size_t i = 0; i < m_; ++i) {
            const double beta = std::max(at(i, rhs_col_), 0.0);
            const double p = at(i, par_col_);
            if (is_artificial(basis_[i])) {
                pinned = pinned || std::abs(p) > tol::feasibility;
                continue;
            }
            if (p > tol::pivot) {
                lo = std::max(lo, -beta / p);
            } else if (p < -tol::pivot) {
                hi = std::min(hi, beta / -p);
            }
        }
        if (pinned || lo > hi) lo = hi = 0.0;
        sol.range_lo = z_ + lo;
        sol.range_hi = z_ + hi;
    }

    const LpProblem& prob_;
    double z_;
    std::vector<VarMap> map_;
    std::size_t n_struct_ = 0, m_orig_ = 0, m_ = 0, n_ = 0, first_art_ = 0;
    std::size_t stride_ = 0, rhs_col_ = 0, par_col_ = 0;
    std::vector<double> t_;
    std::vector<double> flip_;
    std::vector<std::size_t> basis_;
    std::vector<std::size_t> init_basis_;
    std::vector<double> a0_;  // constraint block as built, before any pivot
    std::vector<double> b0_, d0_;
    std::vector<std::size_t> unit_col_;
    std::vector<double> unit_sign_;
    std::vector<double> cost_;
    double bscale_ = 1.0;
    std::size_t pivots_ = 0;
    std::size_t max_iter_ = 0;
};

}  // namespace detail

/// Solves the LP with the parameter fixed at z (rhs = rhs + z * param).
/// Infeasible and unbounded problems are reported through the status.
inline LpSolution solve(const LpProblem& problem, double z = 0.0) {
    problem.validate();
    return detail::SimplexEngine(problem, z).run();
}

/// Plain-text listing for bug reports; deterministic ordering.
inline void write_lp(std::ostream& out, const LpProblem& p) {
    const auto& vars = p.variables();
    const auto term = [&](double a, std::size_t j) {
        out << ' ' << (a < 0 ? "- " : "+ ") << detail::format_double(std::abs(a)) << ' ' << vars[j].name;
    };
    out << "MINIMIZE\n  obj:";
    for (std::size_t j = 0; j < vars.size(); ++j) {
        if (vars[j].cost != 0.0) term(vars[j].cost, j);
    }
    if (p.objective_offset != 0.0) out << " + " << detail::format_double(p.objective_offset);
    out << "\nSUBJECT TO\n";
    for (const auto& r : p.rows()) {
        out << "  " << r.name << ':';
        for (const auto& [j, a] : r.terms) term(a, j);
        out << ' ' << to_string(r.rel) << ' ' << detail::format_double(r.rhs);
        if (r.param != 0.0) out << " + " << detail::format_double(r.param) << " z";
        out << '\n';
    }
    out << "BOUNDS\n";
    for (const auto& v : vars) {
        out << "  " << detail::format_double(v.lower) << " <= " << v.name << " <= " << detail::format_double(v.upper)
            << '\n';
    }
    if (p.has_param()) {
        out << "PARAM z in [" << detail::format_double(p.param_lo()) << ", " << detail::format_double(p.param_hi())
            << "]\n";
    }
    out << "END\n";
}

}  // namespace riskctl
