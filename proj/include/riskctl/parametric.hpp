#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "riskctl/errors.hpp"
#include "riskctl/pwl.hpp"
#include "riskctl/simplex.hpp"

namespace riskctl {

/// One piece of the value function with optimal primal solutions at both
/// ends; any convex combination is optimal in between because V is affine there.
struct ParametricPiece {
    double z_lo = 0.0;
    double z_hi = 0.0;
    std::vector<double> x_lo;
    std::vector<double> x_hi;
};

struct ParametricResult {
    PiecewiseLinearValue value;
    std::vector<ParametricPiece> pieces;  ///< aligned with value.pieces()
    double requested_lo = 0.0;
    double requested_hi = 0.0;
    std::size_t solves = 0;

    [[nodiscard]] bool truncated() const {
        return value.domain_lo() > requested_lo || value.domain_hi() < requested_hi;
    }

    [[nodiscard]] std::size_t piece_index(double z) const {
        const auto& ps = value.pieces();
        for (std::size_t i = 0; i + 1 < ps.size(); ++i) {
            if (z <= ps[i].z_hi) return i;
        }
        return ps.size() - 1;
    }

    /// Optimal solution at z by interpolation inside its piece.
    [[nodiscard]] std::vector<double> x_at(double z) const {
        const auto& p = pieces[piece_index(z)];
        const double w = p.z_hi > p.z_lo ? std::clamp((z - p.z_lo) / (p.z_hi - p.z_lo), 0.0, 1.0) : 0.0;
        std::vector<double> x(p.x_lo.size());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = (1.0 - w) * p.x_lo[j] + w * p.x_hi[j];
        return x;
    }
};

namespace detail {

/// Smallest or largest z in the requested range for which the rows are satisfiable.
inline std::optional<double> parameter_extreme(const LpProblem& p, bool maximize) {
    LpProblem aux;
    for (const auto& v : p.variables()) aux.add_variable(v.name, v.lower, v.upper, 0.0);
    const std::size_t zeta = aux.add_variable("z", p.param_lo(), p.param_hi(), maximize ? -1.0 : 1.0);
    for (const auto& r : p.rows()) {
        LpTerms terms = r.terms;
        if (r.param != 0.0) terms.emplace_back(zeta, -r.param);
        aux.add_row(r.name, std::move(terms), r.rel, r.rhs);
    }
    const LpSolution s = solve(aux);
    if (!s.optimal()) return std::nullopt;
    return s.x[zeta];
}

struct Segment {
    double z_lo, z_hi, slope, intercept;
    std::vector<double> x_lo, x_hi;
};

class ParametricBuilder {
public:
    explicit ParametricBuilder(const LpProblem& p) : p_(p) {}

    LpSolution at(double z) {
        ++solves;
        LpSolution s = warm(z);
        if (s.status == LpStatus::unbounded) {
            throw NumericalError("parametric LP unbounded over its feasible range (z = " +
                                 detail::format_double(z) + ")");
        }
        if (s.status == LpStatus::infeasible) {
            throw NumericalError("parametric LP infeasible inside its feasible range (z = " +
                                 detail::format_double(z) + ")");
        }
        return s;
    }

    // Covers [A.param, B.param] with exact pieces. Lines are supporting, so a
    // probe that lands on the max of both lines proves a single breakpoint.
    void cover(const LpSolution& a, const LpSolution& b, int depth) {
        const double za = a.param;
        const double zb = b.param;
        const double width_eps = 1e-12 * (1.0 + std::abs(za) + std::abs(zb));
        const auto line = [](const LpSolution& s) { return std::pair{s.slope, s.objective - s.slope * s.param}; };
        if (a.range_hi >= zb - width_eps) {
            push(za, zb, line(a), a.x, a.x_at(zb));
            return;
        }
        if (b.range_lo <= za + width_eps) {
            push(za, zb, line(b), b.x_at(za), b.x);
            return;
        }
        if (std::abs(a.slope - b.slope) <= tol::slope_merge || zb - za <= width_eps) {
            const double slope = (b.objective - a.objective) / std::max(zb - za, width_eps);
            push(za, zb, {slope, a.objective - slope * za}, a.x, b.x);
            return;
        }
        const auto [sa, ia] = line(a);
        const auto [sb, ib] = line(b);
        double zs = std::clamp((ib - ia) / (sa - sb), za, zb);
        if (a.range_hi >= b.range_lo - width_eps) {
            // both bases exact up to a common point: that is the breakpoint
            push(za, zs, {sa, ia}, a.x, a.x_at(zs));
            push(zs, zb, {sb, ib}, b.x_at(zs), b.x);
            return;
        }
        const LpSolution c = at(zs);
        const double vtol = 1e-10 * (1.0 + std::abs(c.objective));
        if (c.objective <= std::max(sa * zs + ia, sb * zs + ib) + vtol || depth > 60) {
            push(za, zs, {sa, ia}, a.x, c.x);
            push(zs, zb, {sb, ib}, c.x, b.x);
            return;
        }
        cover(a, c, depth + 1);
        cover(c, b, depth + 1);
    }

    std::vector<Segment> segments;
    std::size_t solves = 0;

private:
    // Warm starts from the previous optimal basis; a cold solve confirms
    // anything the warm start could not settle.
    LpSolution warm(double z) {
        if (engine_) {
            if (auto s = engine_->resolve(z); s && s->optimal()) return *s;
        }
        engine_ = std::make_unique<SimplexEngine>(p_, z);
        LpSolution s = engine_->run();
        if (!s.optimal()) engine_.reset();
        return s;
    }

    void push(double lo, double hi, std::pair<double, double> ln, std::vector<double> xl, std::vector<double> xh) {
        segments.push_back({lo, hi, ln.first, ln.second, std::move(xl), std::move(xh)});
    }

    const LpProblem& p_;
    std::unique_ptr<SimplexEngine> engine_;
};

}  // namespace detail

/// Exact value function z -> min objective over [param_lo, param_hi], truncated
/// to the feasible sub-range. Throws InfeasibleError if no z is feasible and
/// NumericalError if the problem is unbounded (which does not depend on z).
inline ParametricResult solve_parametric_rhs(const LpProblem& problem) {
    problem.validate();
    ParametricResult out;
    out.requested_lo = problem.param_lo();
    out.requested_hi = problem.param_hi();
    if (!std::isfinite(out.requested_lo) || !std::isfinite(out.requested_hi)) {
        throw DomainError("parametric range must be finite");
    }
    const auto zmin = detail::parameter_extreme(problem, false);
    if (!zmin) {
        throw InfeasibleError("parametric LP infeasible for every z in [" + detail::format_double(out.requested_lo) +
                              ", " + detail::format_double(out.requested_hi) + "]");
    }
    const auto zmax = detail::parameter_extreme(problem, true);
    const double lo = std::clamp(*zmin, out.requested_lo, out.requested_hi);
    const double hi = std::max(lo, std::clamp(zmax.value_or(lo), out.requested_lo, out.requested_hi));

    detail::ParametricBuilder builder(problem);
    const LpSolution a = builder.at(lo);
    if (hi > lo) {
        const LpSolution b = builder.at(hi);
        builder.cover(a, b, 0);
    } else {
        builder.segments.push_back({lo, hi, a.slope, a.objective - a.slope * lo, a.x, a.x});
    }
    out.solves = builder.solves + 2;

    std::vector<LinearPiece> raw;
    for (const auto& s : builder.segments) raw.push_back({s.z_lo, s.z_hi, s.slope, s.intercept});
    out.value = PiecewiseLinearValue(raw);

    // Re-attach endpoint solutions to the merged pieces (segments are sorted).
    const auto& segs = builder.segments;
    const auto seg_x = [](const detail::Segment& s, double z) {
        const double w = s.z_hi > s.z_lo ? std::clamp((z - s.z_lo) / (s.z_hi - s.z_lo), 0.0, 1.0) : 0.0;
        std::vector<double> x(s.x_lo.size());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = (1.0 - w) * s.x_lo[j] + w * s.x_hi[j];
        return x;
    };
    for (const auto& piece : out.value.pieces()) {
        ParametricPiece pp;
        pp.z_lo = piece.z_lo;
        pp.z_hi = piece.z_hi;
        std::size_t first = 0;
        while (first + 1 < segs.size() && segs[first].z_hi <= piece.z_lo) ++first;
        std::size_t last = segs.size() - 1;
        while (last > 0 && segs[last].z_lo >= piece.z_hi) --last;
        pp.x_lo = seg_x(segs[first], piece.z_lo);
        pp.x_hi = seg_x(segs[last], piece.z_hi);
        out.pieces.push_back(std::move(pp));
    }
    return out;
}

}  // namespace riskctl
