#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "riskctl/errors.hpp"
#include "riskctl/lattice.hpp"

namespace riskctl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Capped and floored index-linked deposit paid at maturity.
struct GicContract {
    double cap_zeta = 0.06;  ///< annual cap rate, +inf when uncapped
    double floor_g = 0.0;    ///< minimum annual guaranteed rate

    void validate() const {
        if (std::isnan(cap_zeta) || !std::isfinite(floor_g)) throw DomainError("GIC rates must be numbers");
        if (cap_zeta < floor_g) throw DomainError("GIC cap below floor: payoff interval is empty");
    }
};

/// Point-to-point equity-indexed annuity paying at death or maturity.
struct EiaContract {
    double participation_alpha = 0.5;
    double floor_beta = 1.0;
    double floor_g = 0.0;
    double cap_zeta = kInf;
    double entry_age = 50.0;

    void validate() const {
        if (!(participation_alpha > 0.0 && participation_alpha <= 1.0)) throw DomainError("alpha must lie in (0,1]");
        if (!(floor_beta > 0.0 && floor_beta <= 1.0)) throw DomainError("beta must lie in (0,1]");
        if (std::isnan(cap_zeta) || !std::isfinite(floor_g)) throw DomainError("EIA rates must be numbers");
    }
};

using Product = std::variant<GicContract, EiaContract>;

inline bool is_eia(const Product& p) { return std::holds_alternative<EiaContract>(p); }

/// max(min(ratio, (1+cap)^years), (1+g)^years)
inline double gic_payoff(double index_ratio, double years, const GicContract& c) {
    const double cap = std::isinf(c.cap_zeta) ? kInf : std::pow(1.0 + c.cap_zeta, years);
    const double floor = std::pow(1.0 + c.floor_g, years);
    return std::max(std::min(index_ratio, cap), floor);
}

/// max(min(1 + alpha (ratio - 1), (1+cap)^years), beta (1+g)^years)
inline double eia_payoff(double index_ratio, double years, const EiaContract& c) {
    const double cap = std::isinf(c.cap_zeta) ? kInf : std::pow(1.0 + c.cap_zeta, years);
    const double credited = 1.0 + c.participation_alpha * (index_ratio - 1.0);
    return std::max(std::min(credited, cap), c.floor_beta * std::pow(1.0 + c.floor_g, years));
}

/// Benefit payable at `node` if the contract ends there.
inline double payoff_at(const Product& product, const EventTree& tree, const Node& node) {
    const double ratio = node.index_value / tree.params().s0;
    const double years = node.period * tree.params().period_years();
    return std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, GicContract>) {
                return gic_payoff(ratio, years, c);
            } else {
                return eia_payoff(ratio, years, c);
            }
        },
        product);
}

/// Amount the issuer must hold at `node`: the benefit where the contract
/// terminates (maturity or death), the continuation value elsewhere.
inline double required_amount(const Node& node, int maturity_period, double payoff, double continuation) {
    if (node.period >= maturity_period || node.survival == Survival::died) return payoff;
    return continuation;
}

// ---------------------------------------------------------------------------

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double bs_call_price(double spot, double strike, double r, double sigma, double tau) {
    if (!(tau > 0.0)) throw DomainError("call tenor must be positive");
    if (!(spot > 0.0) || !(sigma > 0.0) || strike < 0.0) throw DomainError("invalid Black-Scholes inputs");
    if (strike == 0.0) return spot;
    const double vol = sigma * std::sqrt(tau);
    const double d1 = (std::log(spot / strike) + (r + 0.5 * sigma * sigma) * tau) / vol;
    const double d2 = d1 - vol;
    return spot * norm_cdf(d1) - strike * std::exp(-r * tau) * norm_cdf(d2);
}

/// Investment amounts (currency), not unit counts. F(x) = stock + cash + option.
struct Holdings {
    double stock = 0.0;
    double cash = 0.0;
    double option = 0.0;

    [[nodiscard]] double total() const { return stock + cash + option; }
};

/// Hedging instruments available at every node: the index, cash, and the
/// one-period at-the-money call struck at the parent index level.
class AssetMenu {
public:
    bool stock = true;
    bool call = true;
    bool option_long_only = true;

    /// Fills the per-node call price cache (Black-Scholes, tenor one period).
    void price_calls(const EventTree& tree) {
        const auto& p = tree.params();
        call_prices_.assign(static_cast<std::size_t>(tree.periods()) + 1, {});
        for (int t = 0; t < tree.periods(); ++t) {
            auto& level = call_prices_[static_cast<std::size_t>(t)];
            for (const Node& n : tree.level(t)) {
                level.push_back(bs_call_price(n.index_value, n.index_value, p.r, p.sigma, p.period_years()));
            }
        }
    }

    [[nodiscard]] bool priced() const { return !call_prices_.empty(); }

    [[nodiscard]] double call_price(const Node& n) const {
        if (!call) throw DomainError("call option not in the asset menu");
        const auto t = static_cast<std::size_t>(n.period);
        if (t >= call_prices_.size() || n.slot >= call_prices_[t].size()) {
            throw DomainError("call price missing for node (" + std::to_string(n.period) + "," +
                              std::to_string(n.level) + "); call price_calls() first");
        }
        return call_prices_[t][n.slot];
    }

private:
    std::vector<std::vector<double>> call_prices_;
};

/// Per-unit growth of each holding across one transition; W = <holdings, factors>.
struct AccumulationFactors {
    double stock = 0.0;
    double cash = 0.0;
    double option = 0.0;

    [[nodiscard]] double apply(const Holdings& h) const { return h.stock * stock + h.cash * cash + h.option * option; }
};

inline AccumulationFactors accumulation_factors(const EventTree& tree, const Node& parent, const Node& child,
                                                const AssetMenu& menu) {
    AccumulationFactors f;
    f.cash = tree.params().cash_growth();
    if (menu.stock) f.stock = child.index_value / parent.index_value;
    if (menu.call) f.option = std::max(child.index_value - parent.index_value, 0.0) / menu.call_price(parent);
    return f;
}

/// Value at the end of the period of the portfolio set at `parent`.
inline double accumulation(const Holdings& h, const EventTree& tree, const Node& parent, const Node& child,
                           const AssetMenu& menu) {
    return accumulation_factors(tree, parent, child, menu).apply(h);
}

/// L = G - W; negative values are surpluses.
inline double loss(const Holdings& h, const EventTree& tree, const Node& parent, const Node& child,
                   double required, const AssetMenu& menu) {
    return required - accumulation(h, tree, parent, child, menu);
}

}  // namespace riskctl
