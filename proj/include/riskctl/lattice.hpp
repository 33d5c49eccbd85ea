#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"

namespace riskctl {

/// Binomial index lattice observed once per period, with `subperiods` index
/// moves inside each period. A period lasts 1/periods_per_year years
/// (monthly by default).
struct LatticeParams {
    double sigma = 0.20;  ///< annual volatility
    double mu = 0.08;     ///< annual drift
    double r = 0.03;      ///< annual force of interest
    int periods = 12;     ///< T, number of rebalancing periods
    int subperiods = 6;   ///< N, index moves per period
    double s0 = 1.0;
    int periods_per_year = 12;

    [[nodiscard]] double period_years() const { return 1.0 / periods_per_year; }
    [[nodiscard]] double cash_growth() const { return std::exp(r * period_years()); }
    [[nodiscard]] double discount(int t) const { return std::exp(-r * t * period_years()); }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive");
        if (!std::isfinite(mu) || !std::isfinite(r)) throw DomainError("mu and r must be finite");
        if (periods < 1) throw DomainError("periods_T must be >= 1");
        if (subperiods < 1) throw DomainError("subperiods_N must be >= 1");
        if (!(s0 > 0.0)) throw DomainError("s0 must be positive");
        if (periods_per_year < 1) throw DomainError("periods_per_year must be >= 1");
    }
};

struct CrrFactors {
    double up;
    double down;
    double prob_up;  ///< real-world probability of one up move
};

/// u = exp(sigma*sqrt(h/N)), d = 1/u and the up-probability matching the
/// drift: (u*pi + d*(1-pi))^N = exp(mu*h), h the period length in years.
inline CrrFactors crr_factors(const LatticeParams& p) {
    p.validate();
    const double step_years = p.period_years() / p.subperiods;
    const double up = std::exp(p.sigma * std::sqrt(step_years));
    const double down = 1.0 / up;
    const double growth = std::exp(p.mu * step_years);
    const double prob_up = (growth - down) / (up - down);
    if (!(prob_up > 0.0 && prob_up < 1.0)) {
        throw DomainError("up-probability " + detail::format_double(prob_up) +
                          " outside (0,1): need d < exp(mu*h/N) < u");
    }
    return {up, down, prob_up};
}

/// Binomial(N, pi) weights of the N+1 index outcomes of one period, j = number of up moves.
inline std::vector<double> period_transition_probs(double prob_up, int subperiods) {
    if (!(prob_up >= 0.0 && prob_up <= 1.0)) throw DomainError("prob_up outside [0,1]");
    if (subperiods < 1) throw DomainError("subperiods must be >= 1");
    std::vector<double> probs(static_cast<std::size_t>(subperiods) + 1);
    // log-space binomial coefficients keep N in the hundreds accurate
    for (int j = 0; j <= subperiods; ++j) {
        const double log_binom = std::lgamma(subperiods + 1.0) - std::lgamma(j + 1.0) -
                                 std::lgamma(subperiods - j + 1.0);
        const double up_part = j == 0 ? 1.0 : std::pow(prob_up, j);
        const double down_part = j == subperiods ? 1.0 : std::pow(1.0 - prob_up, subperiods - j);
        probs[static_cast<std::size_t>(j)] = std::exp(log_binom) * up_part * down_part;
    }
    return probs;
}

// ---------------------------------------------------------------------------
// Mortality

/// One-year death probabilities indexed by integer age.
struct AnnualMortality {
    int first_age = 0;
    std::vector<double> annual_q;

    [[nodiscard]] int last_age() const { return first_age + static_cast<int>(annual_q.size()) - 1; }
    [[nodiscard]] double q(int age) const {
        if (age < first_age || age > last_age()) {
            throw ConfigError("mortality table has no rate for age " + std::to_string(age));
        }
        return annual_q[static_cast<std::size_t>(age - first_age)];
    }
};

/// Makeham law mu_x = A + B c^x.
struct MakehamLaw {
    double a = 0.0007;
    double b = 5e-5;
    double c = std::pow(10.0, 0.04);
};

inline double makeham_annual_q(double age, const MakehamLaw& law = {}) {
    const double integrated = law.a + law.b * std::pow(law.c, age) * (law.c - 1.0) / std::log(law.c);
    return -std::expm1(-integrated);
}

/// Illustrative table used when no CSV is supplied.
inline AnnualMortality makeham_table(int first_age = 0, int last_age = 110, const MakehamLaw& law = {}) {
    AnnualMortality table;
    table.first_age = first_age;
    for (int age = first_age; age <= last_age; ++age) table.annual_q.push_back(makeham_annual_q(age, law));
    return table;
}

/// Reads `age,annual_q` rows with consecutive integer ages.
inline AnnualMortality parse_mortality_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "age,annual_q") {
        throw ConfigError("mortality CSV must start with header 'age,annual_q'");
    }
    AnnualMortality table;
    int line_no = 1;
    std::optional<int> prev_age;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line, ',');
        const auto where = " (line " + std::to_string(line_no) + ")";
        if (fields.size() != 2) throw ConfigError("mortality CSV expects 2 fields" + where);
        const auto age = detail::parse_int(fields[0]);
        const auto q = detail::parse_double(fields[1]);
        if (!age || !q) throw ConfigError("mortality CSV: malformed number" + where);
        if (!(*q >= 0.0 && *q <= 1.0)) throw ConfigError("mortality CSV: annual_q outside [0,1]" + where);
        if (prev_age && *age != *prev_age + 1) throw ConfigError("mortality CSV: ages must be consecutive" + where);
        if (!prev_age) table.first_age = static_cast<int>(*age);
        prev_age = static_cast<int>(*age);
        table.annual_q.push_back(*q);
    }
    if (table.annual_q.empty()) throw ConfigError("mortality CSV has no rows");
    return table;
}

inline void write_mortality_csv(std::ostream& out, const AnnualMortality& table) {
    out << "age,annual_q\n";
    for (std::size_t i = 0; i < table.annual_q.size(); ++i) {
        out << table.first_age + static_cast<int>(i) << ',' << detail::format_double(table.annual_q[i]) << '\n';
    }
}

/// Per-period death probabilities for one life: period_q[t-1] = Pr[death in period t | alive at t-1].
struct MortalityTable {
    double entry_age = 50.0;
    std::vector<double> period_q;
};

/// Constant force within each year of age: q_period = 1 - (1 - q_year)^(1/periods_per_year).
inline MortalityTable monthly_mortality_from_annual(const AnnualMortality& annual, double entry_age, int periods,
                                                    int periods_per_year = 12) {
    if (periods < 0) throw DomainError("periods must be nonnegative");
    MortalityTable out;
    out.entry_age = entry_age;
    out.period_q.reserve(static_cast<std::size_t>(periods));
    for (int i = 0; i < periods; ++i) {
        // small epsilon keeps exact multiples of a year from flooring down
        const double age = entry_age + static_cast<double>(i) / periods_per_year;
        const double q_year = annual.q(static_cast<int>(std::floor(age + 1e-9)));
        if (q_year >= 1.0) throw DomainError("annual_q = 1 has no constant-force monthly equivalent");
        out.period_q.push_back(-std::expm1(std::log1p(-q_year) / periods_per_year));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Event tree

enum class Survival : std::uint8_t { none, alive, died };

inline const char* to_string(Survival s) {
    switch (s) {
        case Survival::none: return "none";
        case Survival::alive: return "alive";
        case Survival::died: return "died";
    }
    return "?";
}

struct NodeRef {
    int period = 0;
    std::size_t slot = 0;
    friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Node {
    int period = 0;
    int level = 0;  ///< cumulative number of up moves
    double index_value = 1.0;
    Survival survival = Survival::none;
    std::size_t slot = 0;

    [[nodiscard]] NodeRef ref() const { return {period, slot}; }
};

struct Child {
    NodeRef node;
    double prob = 0.0;
    int moves_up = 0;  ///< up moves inside the period, 0..N
};

/// Recombining lattice keyed by (period, level, survival). Immutable after
/// construction; concurrent readers are safe.
///
/// Slot layout per period t: slots [0, N*t] hold the surviving (or GIC) nodes
/// with level = slot; for EIA trees slots [N*t+1, 2*N*t+1] hold the nodes
/// where death occurred during period t.
class EventTree {
public:
    EventTree(const LatticeParams& params, std::optional<MortalityTable> mortality)
        : params_(params), factors_(crr_factors(params)), mortality_(std::move(mortality)) {
        if (mortality_ && static_cast<int>(mortality_->period_q.size()) < params_.periods) {
            throw ConfigError("mortality table covers " + std::to_string(mortality_->period_q.size()) +
                              " periods, contract needs " + std::to_string(params_.periods));
        }
        if (mortality_) {
            for (double q : mortality_->period_q) {
                if (!(q >= 0.0 && q < 1.0)) throw DomainError("period mortality rate outside [0,1)");
            }
        }
        move_probs_ = period_transition_probs(factors_.prob_up, params_.subperiods);
        levels_.resize(static_cast<std::size_t>(params_.periods) + 1);
        const int n = params_.subperiods;
        for (int t = 0; t <= params_.periods; ++t) {
            auto& nodes = levels_[static_cast<std::size_t>(t)];
            const Survival live = mortality_ ? Survival::alive : Survival::none;
            for (int j = 0; j <= n * t; ++j) nodes.push_back(make_node(t, j, live, nodes.size()));
            if (mortality_ && t > 0) {
                for (int j = 0; j <= n * t; ++j) nodes.push_back(make_node(t, j, Survival::died, nodes.size()));
            }
        }
    }

    [[nodiscard]] const LatticeParams& params() const { return params_; }
    [[nodiscard]] const CrrFactors& factors() const { return factors_; }
    [[nodiscard]] int periods() const { return params_.periods; }
    [[nodiscard]] int subperiods() const { return params_.subperiods; }
    [[nodiscard]] bool has_mortality() const { return mortality_.has_value(); }
    [[nodiscard]] const std::optional<MortalityTable>& mortality() const { return mortality_; }
    [[nodiscard]] std::span<const double> move_probs() const { return move_probs_; }

    [[nodiscard]] std::span<const Node> level(int t) const { return levels_.at(static_cast<std::size_t>(t)); }
    [[nodiscard]] const Node& node(NodeRef ref) const { return level(ref.period)[ref.slot]; }
    [[nodiscard]] const Node& root() const { return levels_[0][0]; }

    /// Number of index nodes (one survival state) at period t: N*t + 1.
    [[nodiscard]] std::size_t index_nodes(int t) const {
        return static_cast<std::size_t>(params_.subperiods) * static_cast<std::size_t>(t) + 1;
    }

    [[nodiscard]] std::size_t node_count() const {
        std::size_t total = 0;
        for (const auto& l : levels_) total += l.size();
        return total;
    }

    /// Death probability for the transition into period t (1-based), zero for GIC trees.
    [[nodiscard]] double death_prob(int t) const {
        return mortality_ ? mortality_->period_q.at(static_cast<std::size_t>(t - 1)) : 0.0;
    }

    [[nodiscard]] bool is_terminal(const Node& n) const {
        return n.period == params_.periods || n.survival == Survival::died;
    }

    [[nodiscard]] NodeRef alive_ref(int t, int level) const { return {t, static_cast<std::size_t>(level)}; }
    [[nodiscard]] NodeRef died_ref(int t, int level) const {
        return {t, index_nodes(t) + static_cast<std::size_t>(level)};
    }

    /// Conditional transition set of a non-terminal parent. EIA trees list the
    /// N+1 death children first, then the N+1 survival children.
    [[nodiscard]] std::vector<Child> children(NodeRef parent_ref) const {
        const Node& parent = node(parent_ref);
        std::vector<Child> out;
        if (is_terminal(parent)) return out;
        const int t = parent.period + 1;
        const int n = params_.subperiods;
        if (mortality_) {
            const double q = death_prob(t);
            out.reserve(2 * static_cast<std::size_t>(n + 1));
            for (int k = 0; k <= n; ++k) out.push_back({died_ref(t, parent.level + k), move_probs_[k] * q, k});
            for (int k = 0; k <= n; ++k) out.push_back({alive_ref(t, parent.level + k), move_probs_[k] * (1.0 - q), k});
        } else {
            out.reserve(static_cast<std::size_t>(n + 1));
            for (int k = 0; k <= n; ++k) out.push_back({alive_ref(t, parent.level + k), move_probs_[k], k});
        }
        return out;
    }

    /// S0 * u^level * d^(N*t - level); exact powers rather than products along a path.
    [[nodiscard]] double index_value(int t, int level) const {
        const int net = 2 * level - params_.subperiods * t;
        return params_.s0 * std::pow(factors_.up, net);
    }

private:
    Node make_node(int t, int level, Survival s, std::size_t slot) const {
        return Node{t, level, index_value(t, level), s, slot};
    }

    LatticeParams params_;
    CrrFactors factors_;
    std::optional<MortalityTable> mortality_;
    std::vector<double> move_probs_;
    std::vector<std::vector<Node>> levels_;
};

inline EventTree build_index_tree(const LatticeParams& params) { return EventTree(params, std::nullopt); }

/// Index x single-life tree. Death nodes are absorbing: the benefit is paid at
/// the end of the period of death and no further decisions are taken.
inline EventTree build_eia_tree(const LatticeParams& params, const MortalityTable& mortality) {
    return EventTree(params, mortality);
}

/// Debug dump: period,level,survival,index_value,child_count
inline void write_tree_csv(std::ostream& out, const EventTree& tree) {
    out << "period,level,survival,index_value,child_count\n";
    for (int t = 0; t <= tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            const std::size_t kids = tree.is_terminal(n) ? 0 : tree.children(n.ref()).size();
            out << n.period << ',' << n.level << ',' << to_string(n.survival) << ','
                << detail::format_double(n.index_value) << ',' << kids << '\n';
        }
    }
}

}  // namespace riskctl
