#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"
#include "riskctl/simplex.hpp"

namespace riskctl {

struct LinearPiece {
    double z_lo = 0.0;
    double z_hi = 0.0;
    double slope = 0.0;
    double intercept = 0.0;

    [[nodiscard]] double operator()(double z) const { return slope * z + intercept; }
};

struct Hyperplane {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Convex piecewise-linear function on a closed interval, stored as ordered
/// pieces; equivalently the max of the pieces' supporting lines.
class PiecewiseLinearValue {
public:
    PiecewiseLinearValue() = default;

    /// Pieces must tile their union left to right. Slope ties and float-noise
    /// convexity violations between consecutive pieces are merged.
    explicit PiecewiseLinearValue(std::vector<LinearPiece> pieces) {
        if (pieces.empty()) throw DomainError("piecewise-linear function needs at least one piece");
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            const auto& p = pieces[i];
            if (!(p.z_lo <= p.z_hi) || !std::isfinite(p.slope) || !std::isfinite(p.intercept)) {
                throw DomainError("malformed linear piece");
            }
            if (i > 0 && std::abs(p.z_lo - pieces[i - 1].z_hi) > 1e-9 * (1.0 + std::abs(p.z_lo))) {
                throw DomainError("linear pieces do not tile the domain");
            }
        }
        lo_ = pieces.front().z_lo;
        hi_ = pieces.back().z_hi;
        std::vector<LinearPiece> kept;
        for (const auto& p : pieces) {
            if (p.z_hi > p.z_lo) kept.push_back(p);
        }
        if (kept.empty()) kept.push_back(pieces.front());
        kept.front().z_lo = lo_;
        for (auto& p : kept) {
            if (!pieces_.empty()) p.z_lo = pieces_.back().z_hi;
            pieces_.push_back(p);
            while (pieces_.size() >= 2 && merge_last_two()) {
            }
        }
        pieces_.back().z_hi = hi_;
    }

    static PiecewiseLinearValue constant(double lo, double hi, double value) {
        return PiecewiseLinearValue({LinearPiece{lo, hi, 0.0, value}});
    }

    [[nodiscard]] bool empty() const { return pieces_.empty(); }
    [[nodiscard]] double domain_lo() const { return lo_; }
    [[nodiscard]] double domain_hi() const { return hi_; }
    [[nodiscard]] const std::vector<LinearPiece>& pieces() const { return pieces_; }
    [[nodiscard]] std::size_t size() const { return pieces_.size(); }

    [[nodiscard]] bool contains(double z, double slack = 1e-9) const {
        const double pad = slack * (1.0 + std::max(std::abs(lo_), std::abs(hi_)));
        return z >= lo_ - pad && z <= hi_ + pad;
    }

    /// Max over the supporting lines; throws DomainError outside the domain.
    [[nodiscard]] double eval(double z) const {
        if (pieces_.empty()) throw DomainError("evaluating an empty piecewise-linear function");
        if (!contains(z)) {
            throw DomainError("z = " + detail::format_double(z) + " outside [" + detail::format_double(lo_) + ", " +
                              detail::format_double(hi_) + "]");
        }
        double v = -std::numeric_limits<double>::infinity();
        for (const auto& p : pieces_) v = std::max(v, p(z));
        return v;
    }

    [[nodiscard]] std::vector<Hyperplane> hyperplanes() const {
        std::vector<Hyperplane> out;
        out.reserve(pieces_.size());
        for (const auto& p : pieces_) out.push_back({p.slope, p.intercept});
        return out;
    }

    /// inf{ z in domain : f(z) <= level }; throws InfeasibleError if none.
    [[nodiscard]] double min_root(double level) const {
        const double eps = 1e-12 * (1.0 + std::abs(level));
        for (const auto& p : pieces_) {
            if (p(p.z_lo) <= level + eps) return p.z_lo;
            if (p(p.z_hi) <= level + eps) {
                // slope is negative here: the piece crosses the level inside
                return std::clamp((level - p.intercept) / p.slope, p.z_lo, p.z_hi);
            }
        }
        throw InfeasibleError("value never reaches " + detail::format_double(level) + " on [" +
                              detail::format_double(lo_) + ", " + detail::format_double(hi_) + "]");
    }

    /// Minimum value over the domain.
    [[nodiscard]] double min_value() const {
        double v = std::numeric_limits<double>::infinity();
        for (const auto& p : pieces_) v = std::min({v, p(p.z_lo), p(p.z_hi)});
        return v;
    }

    /// Largest jump between adjacent pieces at their shared breakpoint.
    [[nodiscard]] double continuity_gap() const {
        double gap = 0.0;
        for (std::size_t i = 1; i < pieces_.size(); ++i) {
            const double z = pieces_[i].z_lo;
            gap = std::max(gap, std::abs(pieces_[i](z) - pieces_[i - 1](z)));
        }
        return gap;
    }

    /// Convex upper approximation with at most max_pieces pieces: breakpoints
    /// are dropped one at a time, always the one whose chord adds the least
    /// error. The domain and the values at kept breakpoints are unchanged.
    [[nodiscard]] PiecewiseLinearValue upper_chord(std::size_t max_pieces) const {
        if (max_pieces == 0) throw DomainError("piece budget must be positive");
        if (pieces_.size() <= max_pieces) return *this;
        const std::size_t n = pieces_.size();
        std::vector<double> z(n + 1);
        std::vector<double> f(n + 1);
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = pieces_[i].z_lo;
            f[i] = pieces_[i](z[i]);
        }
        z[n] = hi_;
        f[n] = pieces_.back()(hi_);
        std::vector<std::size_t> prev(n + 1);
        std::vector<std::size_t> next(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            prev[i] = i == 0 ? 0 : i - 1;
            next[i] = i + 1;
        }
        const auto chord_error = [&](std::size_t i) {
            const std::size_t l = prev[i];
            const std::size_t r = next[i];
            const double s = (f[r] - f[l]) / (z[r] - z[l]);
            double err = 0.0;
            for (std::size_t j = l + 1; j < r; ++j) err = std::max(err, f[l] + s * (z[j] - z[l]) - f[j]);
            return err;
        };
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<double> cost(n + 1, inf);
        for (std::size_t i = 1; i < n; ++i) cost[i] = chord_error(i);
        for (std::size_t left = n; left > max_pieces; --left) {
            const std::size_t i = static_cast<std::size_t>(std::min_element(cost.begin(), cost.end()) - cost.begin());
            cost[i] = inf;
            next[prev[i]] = next[i];
            prev[next[i]] = prev[i];
            if (prev[i] != 0) cost[prev[i]] = chord_error(prev[i]);
            if (next[i] != n) cost[next[i]] = chord_error(next[i]);
        }
        std::vector<LinearPiece> out;
        for (std::size_t l = 0; l != n; l = next[l]) {
            const std::size_t r = next[l];
            const double s = (f[r] - f[l]) / (z[r] - z[l]);
            out.push_back({z[l], z[r], s, f[l] - s * z[l]});
        }
        return PiecewiseLinearValue(std::move(out));
    }

    [[nodiscard]] bool slopes_increasing() const {
        for (std::size_t i = 1; i < pieces_.size(); ++i) {
            if (!(pieces_[i].slope > pieces_[i - 1].slope)) return false;
        }
        return true;
    }

private:
    // Ties and float noise below the merge thresholds become one piece. A
    // slope drop is noise when it moves values by less than 5e-9 across the
    // narrower of the two pieces.
    bool merge_last_two() {
        LinearPiece& p = pieces_.back();
        LinearPiece& last = pieces_[pieces_.size() - 2];
        const double drop = last.slope - p.slope;
        const double width = std::min(p.z_hi - p.z_lo, last.z_hi - last.z_lo);
        const double v0 = last(last.z_lo);
        const double v1 = p(p.z_hi);
        const bool noise = drop <= 1e-7 || drop * width <= 5e-9 * (1.0 + std::abs(v0));
        if (std::abs(drop) > tol::slope_merge && !(drop > 0.0 && noise)) {
            if (drop > 0.0) {
                throw NumericalError("cost-to-go lost convexity: slope " + detail::format_double(p.slope) +
                                     " follows " + detail::format_double(last.slope));
            }
            return false;
        }
        last.slope = (v1 - v0) / (p.z_hi - last.z_lo);
        last.intercept = v0 - last.slope * last.z_lo;
        last.z_hi = p.z_hi;
        pieces_.pop_back();
        return true;
    }

    double lo_ = 0.0;
    double hi_ = 0.0;
    std::vector<LinearPiece> pieces_;
};

}  // namespace riskctl
