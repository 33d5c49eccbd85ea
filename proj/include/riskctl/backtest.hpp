#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "riskctl/detail/parallel.hpp"
#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"
#include "riskctl/hedging.hpp"
#include "riskctl/lattice.hpp"
#include "riskctl/market.hpp"

namespace riskctl {

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64 (Steele, Lea and Flood). Each path owns a stream whose start
/// state is a hash of (seed, path index), so paths can be drawn in any order
/// and on any number of threads with identical results.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static SplitMix64 substream(std::uint64_t seed, std::uint64_t index) {
        return SplitMix64(mix(mix(seed) ^ mix(index + 0x9E3779B97F4A7C15ULL)));
    }

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

/// Inverse-CDF draw: smallest k with u < p_0 + ... + p_k. The last outcome
/// absorbs any rounding shortfall in the cumulative sum.
inline std::size_t sample_index(std::span<const double> probs, double u) {
    double cdf = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
        cdf += probs[k];
        if (u < cdf) return k;
    }
    return probs.size() - 1;
}

// ---------------------------------------------------------------------------
// Paths

struct SimConfig {
    std::size_t n_paths = 50'000;
    std::uint64_t seed = 42;
    std::size_t histogram_bins = 50;
    unsigned threads = 1;

    void validate() const {
        if (n_paths < 1) throw DomainError("n_paths must be >= 1");
        if (histogram_bins < 1) throw DomainError("histogram_bins must be >= 1");
    }
};

/// One scenario: up moves per period and, for EIA trees, the period of death.
struct SimPath {
    std::vector<std::uint16_t> moves;
    int death_period = 0;  ///< 0 when the holder survives the term (or no mortality)
};

/// Draws path `index` of the stream `seed`. Death month first, from the
/// chained per-period rates; index moves independently after it.
inline SimPath draw_path(const EventTree& tree, std::uint64_t seed, std::uint64_t index) {
    SplitMix64 rng = SplitMix64::substream(seed, index);
    SimPath p;
    if (tree.has_mortality()) {
        const double u = rng.uniform();
        double alive = 1.0;
        double cdf = 0.0;
        for (int t = 1; t <= tree.periods(); ++t) {
            const double q = tree.death_prob(t);
            cdf += alive * q;
            alive *= 1.0 - q;
            if (u < cdf) {
                p.death_period = t;
                break;
            }
        }
    }
    const auto probs = tree.move_probs();
    const int steps = p.death_period > 0 ? p.death_period : tree.periods();
    p.moves.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) p.moves.push_back(static_cast<std::uint16_t>(sample_index(probs, rng.uniform())));
    return p;
}

inline std::vector<SimPath> simulate_paths(const EventTree& tree, const SimConfig& cfg) {
    cfg.validate();
    std::vector<SimPath> out(cfg.n_paths);
    detail::parallel_for(cfg.n_paths, cfg.threads, [&](std::size_t i) { out[i] = draw_path(tree, cfg.seed, i); });
    return out;
}

/// Index of the child a path takes out of a node at period t (children() order).
inline std::size_t child_slot(const EventTree& tree, const SimPath& path, int t) {
    const std::size_t k = path.moves.at(static_cast<std::size_t>(t));
    if (!tree.has_mortality()) return k;
    const bool dies = path.death_period == t + 1;
    return dies ? k : static_cast<std::size_t>(tree.subperiods()) + 1 + k;
}

// ---------------------------------------------------------------------------
// Replay

/// The realized state left the interval a node's policy was built on.
class DomainEscape : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct ReplayResult {
    double mismatch = 0.0;   ///< M: discounted sum of per-transition losses
    double peak_loss = 0.0;  ///< largest discounted running loss along the path, at least 0
};

/// Walks one path through the policy. Holdings are used as stored; the gap
/// between the planned amount G and the realized W is the transition loss.
/// Accumulated-loss policies move z by z' = g z + L and use the holdings of
/// the lowest stored state below their domain (where V is flat); capital
/// policies move to the planned child capital.
inline ReplayResult replay(const EventTree& tree, const HedgePolicy& policy, const AssetMenu& menu,
                           const SimPath& path) {
    ReplayResult out;
    const double g = tree.params().cash_growth();
    double z = policy.initial_state;
    NodeRef at = tree.root().ref();
    for (int t = 0; !tree.is_terminal(tree.node(at)); ++t) {
        const Node& node = tree.node(at);
        const NodePolicy& np = policy.at(at);
        if (np.empty()) throw NumericalError(node_label(node) + " has no stored policy");
        double zc = z;
        if (policy.state != StateKind::none) {
            const double pad = 1e-9 * (1.0 + std::max(std::abs(np.z_lo()), std::abs(np.z_hi())));
            const bool below = z < np.z_lo() - pad;
            if (z > np.z_hi() + pad || (below && policy.state == StateKind::capital) || std::isnan(z)) {
                throw DomainEscape(node_label(node) + ": state " + detail::format_double(z) + " outside [" +
                                   detail::format_double(np.z_lo()) + ", " + detail::format_double(np.z_hi()) + "]");
            }
            zc = std::clamp(z, np.z_lo(), np.z_hi());
        }
        const PolicyPiece& pc = np.piece(zc);
        const auto kids = tree.children(at);
        const std::size_t k = child_slot(tree, path, t);
        const Node& child = tree.node(kids.at(k).node);
        const double l = loss(pc.holdings(zc), tree, node, child, pc.required(k, zc), menu);
        out.mismatch += tree.params().discount(t + 1) * l;
        out.peak_loss = std::max(out.peak_loss, out.mismatch);
        switch (policy.state) {
            case StateKind::none: break;
            case StateKind::accumulated_loss: z = g * z + l; break;
            case StateKind::capital: z = pc.next_state(k, zc); break;
        }
        at = child.ref();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct Histogram {
    std::vector<double> edges;  ///< bins + 1 increasing edges
    std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the last bin is closed.
inline Histogram make_histogram(std::span<const double> samples, std::size_t bins) {
    if (samples.empty() || bins == 0) throw DomainError("histogram needs samples and at least one bin");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    double lo = *mn;
    double hi = *mx;
    if (!(hi > lo)) {
        const double half = 0.5 * std::max(1e-12, 1e-9 * std::abs(lo));
        lo -= half;
        hi += half;
    }
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    h.edges.back() = hi;
    h.counts.assign(bins, 0);
    for (double s : samples) {
        auto b = static_cast<std::size_t>((s - lo) / (hi - lo) * static_cast<double>(bins));
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

struct BacktestReport {
    std::vector<double> samples;  ///< M per path, in path order
    double mean = 0.0;
    double sd = 0.0;
    double var95 = 0.0;
    double cvar95 = 0.0;
    double cr = 0.0;
    double f0 = 0.0;
    Histogram histogram;
    std::size_t escapes = 0;  ///< paths dropped because the state left its stored domain
    double peak_loss = 0.0;   ///< max over paths of the discounted running loss

    /// Premium (1) minus the initial outlay minus the expected mismatch.
    [[nodiscard]] double mean_gain() const { return 1.0 - f0 - mean; }
};

/// Sort-based 95% tail statistics over losses (large M is bad).
/// VaR is the ceil(0.95 n)-th smallest sample; CVaR = VaR + E[(M - VaR)+] / 0.05.
inline BacktestReport cr_statistic(std::vector<double> samples, double f0, std::size_t bins = 50) {
    if (samples.empty()) throw DomainError("CR statistic needs at least one sample");
    BacktestReport r;
    r.f0 = f0;
    const auto n = static_cast<double>(samples.size());
    r.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : samples) ss += (s - r.mean) * (s - r.mean);
    r.sd = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const auto q = static_cast<std::size_t>(std::ceil(0.95 * n - 1e-9));
    r.var95 = sorted[std::max<std::size_t>(q, 1) - 1];
    double excess = 0.0;
    for (double s : sorted) excess += std::max(s - r.var95, 0.0);
    r.cvar95 = r.var95 + excess / (0.05 * n);
    r.cr = r.f0 + r.cvar95 - 1.0;
    r.histogram = make_histogram(sorted, bins);
    r.samples = std::move(samples);
    return r;
}

/// Replays cfg.n_paths paths; each path writes its own slot, so the report
/// does not depend on the thread count.
inline BacktestReport backtest(const EventTree& tree, const HedgePolicy& policy, const AssetMenu& menu,
                               const SimConfig& cfg) {
    cfg.validate();
    std::vector<ReplayResult> res(cfg.n_paths);
    std::vector<char> escaped(cfg.n_paths, 0);
    detail::parallel_for(cfg.n_paths, cfg.threads, [&](std::size_t i) {
        try {
            res[i] = replay(tree, policy, menu, draw_path(tree, cfg.seed, i));
        } catch (const DomainEscape&) {
            escaped[i] = 1;
        }
    });
    std::vector<double> samples;
    samples.reserve(cfg.n_paths);
    double peak = 0.0;
    for (std::size_t i = 0; i < cfg.n_paths; ++i) {
        if (escaped[i]) continue;
        samples.push_back(res[i].mismatch);
        peak = std::max(peak, res[i].peak_loss);
    }
    const auto escapes = static_cast<std::size_t>(std::count(escaped.begin(), escaped.end(), 1));
    if (samples.empty()) {
        throw NumericalError("every simulated path left the stored state domain (" + std::to_string(escapes) +
                             " escapes)");
    }
    BacktestReport r = cr_statistic(std::move(samples), policy.price, cfg.histogram_bins);
    r.escapes = escapes;
    r.peak_loss = peak;
    return r;
}

// ---------------------------------------------------------------------------
// Retention sweep

struct RetentionRow {
    double c = 0.0;
    double f0 = std::numeric_limits<double>::quiet_NaN();
    double cr = std::numeric_limits<double>::quiet_NaN();
    double mean_gain = std::numeric_limits<double>::quiet_NaN();
    std::string error;  ///< empty when the sweep and backtest succeeded

    [[nodiscard]] bool ok() const { return error.empty(); }
};

struct RetentionSweep {
    std::vector<RetentionRow> rows;
    std::optional<std::size_t> best;  ///< smallest CR among successful rows

    [[nodiscard]] const RetentionRow& best_row() const {
        if (!best) throw InfeasibleError("no retention level in the grid produced a result");
        return rows[*best];
    }
};

/// For each c: full backward sweep with risk.retention_c = c, then a backtest.
/// Failures are recorded per row and the sweep continues.
inline RetentionSweep sweep_retention(const EventTree& tree, const Product& product, const AssetMenu& menu,
                                      const AlgorithmSpec& algo, const RiskSpec& risk, std::span<const double> c_grid,
                                      const SimConfig& cfg) {
    if (c_grid.empty()) throw DomainError("retention grid is empty");
    RetentionSweep out;
    for (double c : c_grid) {
        RetentionRow row;
        row.c = c;
        try {
            RiskSpec r = risk;
            r.retention_c = c;
            const HedgeModel model(tree, product, menu, algo, r);
            const SweepResult s = backward_sweep(model, {cfg.threads});
            const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
            row.f0 = rep.f0;
            row.cr = rep.cr;
            row.mean_gain = rep.mean_gain();
        } catch (const InfeasibleError& e) {
            row.error = e.what();
        } catch (const NumericalError& e) {
            row.error = e.what();
        } catch (const DomainError& e) {
            row.error = e.what();
        }
        if (row.ok() && (!out.best || row.cr < out.rows[*out.best].cr)) out.best = out.rows.size();
        out.rows.push_back(std::move(row));
    }
    return out;
}

/// Retention grid lo, lo+step, ..., up to hi inclusive (built from integer
/// multiples so 0.05 steps land on round values).
inline std::vector<double> retention_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo <= hi)) throw DomainError("retention grid needs lo <= hi and a positive step");
    std::vector<double> out;
    const auto n = static_cast<long long>(std::floor((hi - lo) / step + 1e-9));
    for (long long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_report_csv(std::ostream& out, const BacktestReport& r) {
    using detail::format_double;
    out << "statistic,value\n";
    out << "F0," << format_double(r.f0) << '\n';
    out << "mean," << format_double(r.mean) << '\n';
    out << "sd," << format_double(r.sd) << '\n';
    out << "var95," << format_double(r.var95) << '\n';
    out << "cvar95," << format_double(r.cvar95) << '\n';
    out << "cr," << format_double(r.cr) << '\n';
    out << "mean_gain," << format_double(r.mean_gain()) << '\n';
    out << "samples," << r.samples.size() << '\n';
    out << "domain_escapes," << r.escapes << '\n';
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
    using detail::format_double;
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        out << format_double(h.edges[i]) << ',' << format_double(h.edges[i + 1]) << ',' << h.counts[i] << '\n';
    }
}

inline void write_sweep_csv(std::ostream& out, const RetentionSweep& s) {
    using detail::format_double;
    out << "c,F0,cr\n";
    for (const auto& row : s.rows) out << format_double(row.c) << ',' << format_double(row.f0) << ',' << format_double(row.cr) << '\n';
}

}  // namespace riskctl
