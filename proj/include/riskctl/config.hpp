#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "riskctl/backtest.hpp"
#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"
#include "riskctl/hedging.hpp"
#include "riskctl/lattice.hpp"
#include "riskctl/market.hpp"

namespace riskctl {

struct ProductBlock {
    std::string kind = "gic";  ///< gic | eia
    double cap_zeta = 0.06;
    double floor_g = 0.0;
    double participation_alpha = 0.5;
    double floor_beta = 1.0;
    double entry_age = 50.0;
    std::string mortality = "makeham";  ///< built-in illustrative law, or an age,annual_q CSV path
};

/// Retention grid and per-table parameter lists for the `sweep` and `table` commands.
struct GridBlock {
    double c_lo = 0.05;
    double c_hi = 0.95;
    double c_step = 0.05;
    std::vector<double> t_values{2, 4, 6, 8, 12, 24};
    std::vector<double> n_values{2, 4, 6, 8, 12, 24};
    std::vector<double> t_scan{2, 4, 6, 8, 12, 24, 52};
    std::vector<double> n_scan{2, 4, 6, 8, 12, 24, 52};
};

/// Everything a command needs. Every field has a materialized default, so
/// the effective file written next to the outputs reproduces the run.
struct RunConfig {
    LatticeParams lattice;
    ProductBlock product;
    AssetMenu assets;
    AlgorithmSpec algorithm;
    RiskSpec risk;
    bool overlay = false;
    double overlay_c = 0.6;
    double overlay_gamma0 = 0.0;
    SimConfig sim;
    GridBlock grid;
    std::string out_dir = "out";

    /// Baseline for a product kind: 1-year monthly GIC, or 5-year monthly EIA.
    static RunConfig defaults(std::string_view kind) {
        RunConfig c;
        if (kind == "eia") {
            c.product.kind = "eia";
            c.product.cap_zeta = kInf;
            c.lattice.periods = 60;
        } else if (kind != "gic") {
            throw ConfigError("product.kind must be gic or eia, got '" + std::string(kind) + "'");
        }
        return c;
    }

    [[nodiscard]] Product make_product() const {
        if (product.kind == "eia") {
            EiaContract e;
            e.participation_alpha = product.participation_alpha;
            e.floor_beta = product.floor_beta;
            e.floor_g = product.floor_g;
            e.cap_zeta = product.cap_zeta;
            e.entry_age = product.entry_age;
            return e;
        }
        return GicContract{product.cap_zeta, product.floor_g};
    }

    [[nodiscard]] EventTree make_tree() const {
        if (product.kind != "eia") return build_index_tree(lattice);
        AnnualMortality annual;
        if (product.mortality == "makeham") {
            annual = makeham_table();
        } else {
            std::ifstream f(product.mortality);
            if (!f) throw ConfigError("cannot open mortality table '" + product.mortality + "'");
            annual = parse_mortality_csv(f);
        }
        return build_eia_tree(lattice, monthly_mortality_from_annual(annual, product.entry_age, lattice.periods,
                                                                     lattice.periods_per_year));
    }

    [[nodiscard]] AlgorithmSpec make_algorithm() const {
        AlgorithmSpec a = algorithm;
        a.overlay.reset();
        if (overlay) {
            RiskSpec o;
            o.retention_c = overlay_c;
            o.gamma0 = overlay_gamma0;
            a.overlay = o;
        }
        return a;
    }

    [[nodiscard]] std::vector<double> c_grid() const { return retention_grid(grid.c_lo, grid.c_hi, grid.c_step); }

    void validate() const {
        lattice.validate();
        std::visit([](const auto& c) { c.validate(); }, make_product());
        make_algorithm().validate();
        risk.validate();
        sim.validate();
        (void)c_grid();
    }
};

namespace detail {

inline bool parse_bool(const std::string& key, std::string_view v) {
    v = trim(v);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + std::string(v) + "'");
}

inline double parse_number(const std::string& key, std::string_view v) {
    const auto d = parse_double(v);
    if (!d) throw ConfigError(key + ": expected a number, got '" + std::string(trim(v)) + "'");
    return *d;
}

template <class I>
I parse_count(const std::string& key, std::string_view v, long long lo) {
    const auto n = parse_int(v);
    if (!n || *n < lo) {
        throw ConfigError(key + ": expected an integer >= " + std::to_string(lo) + ", got '" + std::string(trim(v)) +
                          "'");
    }
    return static_cast<I>(*n);
}

inline std::uint64_t parse_seed(const std::string& key, std::string_view v) {
    v = trim(v);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected an unsigned 64-bit integer, got '" + std::string(v) + "'");
    }
    return value;
}

// Lists are comma or space separated.
inline std::vector<double> parse_list(const std::string& key, std::string_view v) {
    std::string s(v);
    for (char& ch : s) {
        if (ch == ',') ch = ' ';
    }
    std::istringstream in(s);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_number(key, tok));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
    return s;
}

struct ConfigKey {
    std::string section;
    std::string name;
    std::function<void(RunConfig&, const std::string& key, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;

    [[nodiscard]] std::string full() const { return section + "." + name; }
};

template <class F>
ConfigKey number_key(std::string section, std::string name, F field) {
    return {std::move(section), std::move(name),
            [field](RunConfig& c, const std::string& k, std::string_view v) { field(c) = parse_number(k, v); },
            [field](const RunConfig& c) { return format_double(field(c)); }};
}

template <class F>
ConfigKey bool_key(std::string section, std::string name, F field) {
    return {std::move(section), std::move(name),
            [field](RunConfig& c, const std::string& k, std::string_view v) { field(c) = parse_bool(k, v); },
            [field](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); }};
}

template <class F>
ConfigKey int_key(std::string section, std::string name, F field, long long lo) {
    return {std::move(section), std::move(name),
            [field, lo](RunConfig& c, const std::string& k, std::string_view v) {
                auto& f = field(c);
                f = parse_count<std::remove_cvref_t<decltype(f)>>(k, v, lo);
            },
            [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class F>
ConfigKey list_key(std::string section, std::string name, F field) {
    return {std::move(section), std::move(name),
            [field](RunConfig& c, const std::string& k, std::string_view v) { field(c) = parse_list(k, v); },
            [field](const RunConfig& c) { return format_list(field(c)); }};
}

template <class E, std::size_t K, class F>
ConfigKey enum_key(std::string section, std::string name, const E (&values)[K], F field) {
    return {std::move(section), std::move(name),
            [field, &values](RunConfig& c, const std::string& k, std::string_view v) {
                v = trim(v);
                std::string allowed;
                for (E e : values) {
                    if (v == to_string(e)) {
                        field(c) = e;
                        return;
                    }
                    allowed += (allowed.empty() ? "" : "|") + std::string(to_string(e));
                }
                throw ConfigError(k + ": expected " + allowed + ", got '" + std::string(v) + "'");
            },
            [field](const RunConfig& c) { return std::string(to_string(field(c))); }};
}

inline constexpr Variant kVariants[] = {Variant::constraint, Variant::stochastic_program, Variant::barrier,
                                        Variant::coherent};
inline constexpr RiskMeasure kMeasures[] = {RiskMeasure::cvar, RiskMeasure::downside, RiskMeasure::cvar_plus_norm};

/// The full schema, in the order the effective file is written.
inline const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        k.push_back(number_key("market", "sigma", [](auto& c) -> auto& { return c.lattice.sigma; }));
        k.push_back(number_key("market", "mu", [](auto& c) -> auto& { return c.lattice.mu; }));
        k.push_back(number_key("market", "r", [](auto& c) -> auto& { return c.lattice.r; }));
        k.push_back(number_key("market", "s0", [](auto& c) -> auto& { return c.lattice.s0; }));
        k.push_back(int_key("lattice", "periods", [](auto& c) -> auto& { return c.lattice.periods; }, 1));
        k.push_back(int_key("lattice", "subperiods", [](auto& c) -> auto& { return c.lattice.subperiods; }, 1));
        k.push_back(int_key("lattice", "periods_per_year",
                            [](auto& c) -> auto& { return c.lattice.periods_per_year; }, 1));
        k.push_back({"product", "kind",
                     [](RunConfig& c, const std::string& key, std::string_view v) {
                         v = trim(v);
                         if (v != "gic" && v != "eia") {
                             throw ConfigError(key + ": expected gic|eia, got '" + std::string(v) + "'");
                         }
                         c.product.kind = std::string(v);
                     },
                     [](const RunConfig& c) { return c.product.kind; }});
        k.push_back(number_key("product", "cap_zeta", [](auto& c) -> auto& { return c.product.cap_zeta; }));
        k.push_back(number_key("product", "floor_g", [](auto& c) -> auto& { return c.product.floor_g; }));
        k.push_back(number_key("product", "participation_alpha",
                               [](auto& c) -> auto& { return c.product.participation_alpha; }));
        k.push_back(number_key("product", "floor_beta", [](auto& c) -> auto& { return c.product.floor_beta; }));
        k.push_back(number_key("product", "entry_age", [](auto& c) -> auto& { return c.product.entry_age; }));
        k.push_back({"product", "mortality",
                     [](RunConfig& c, const std::string&, std::string_view v) { c.product.mortality = trim(v); },
                     [](const RunConfig& c) { return c.product.mortality; }});
        k.push_back(bool_key("assets", "stock", [](auto& c) -> auto& { return c.assets.stock; }));
        k.push_back(bool_key("assets", "call", [](auto& c) -> auto& { return c.assets.call; }));
        k.push_back(bool_key("assets", "option_long_only", [](auto& c) -> auto& { return c.assets.option_long_only; }));
        k.push_back(enum_key("algorithm", "variant", kVariants,
                                      [](auto& c) -> auto& { return c.algorithm.variant; }));
        k.push_back(enum_key("algorithm", "measure", kMeasures,
                                          [](auto& c) -> auto& { return c.risk.measure; }));
        k.push_back(number_key("algorithm", "c", [](auto& c) -> auto& { return c.risk.retention_c; }));
        k.push_back(number_key("algorithm", "gamma0", [](auto& c) -> auto& { return c.risk.gamma0; }));
        k.push_back({"algorithm", "gamma3",
                     [](RunConfig& c, const std::string& key, std::string_view v) {
                         if (trim(v) == "none") {
                             c.risk.pathwise_gamma3.reset();
                         } else {
                             c.risk.pathwise_gamma3 = parse_number(key, v);
                         }
                     },
                     [](const RunConfig& c) {
                         return c.risk.pathwise_gamma3 ? format_double(*c.risk.pathwise_gamma3) : std::string("none");
                     }});
        k.push_back(bool_key("algorithm", "super_replication",
                             [](auto& c) -> auto& { return c.risk.super_replication; }));
        k.push_back(list_key("algorithm", "norm_breakpoints",
                             [](auto& c) -> auto& { return c.risk.norm.breakpoints; }));
        k.push_back(list_key("algorithm", "norm_slopes",
                             [](auto& c) -> auto& { return c.risk.norm.slopes; }));
        k.push_back(number_key("algorithm", "norm_budget", [](auto& c) -> auto& { return c.risk.norm.budget; }));
        k.push_back(number_key("algorithm", "lambda", [](auto& c) -> auto& { return c.algorithm.lambda_weight; }));
        k.push_back(number_key("algorithm", "barrier_gamma0",
                               [](auto& c) -> auto& { return c.algorithm.barrier_gamma0; }));
        k.push_back(bool_key("algorithm", "overlay", [](auto& c) -> auto& { return c.overlay; }));
        k.push_back(number_key("algorithm", "overlay_c", [](auto& c) -> auto& { return c.overlay_c; }));
        k.push_back(number_key("algorithm", "overlay_gamma0", [](auto& c) -> auto& { return c.overlay_gamma0; }));
        k.push_back(number_key("algorithm", "state_span", [](auto& c) -> auto& { return c.algorithm.state_span; }));
        k.push_back(number_key("algorithm", "capital_multiple",
                               [](auto& c) -> auto& { return c.algorithm.capital_multiple; }));
        k.push_back(int_key("algorithm", "hyperplane_budget",
                            [](auto& c) -> auto& { return c.algorithm.hyperplane_budget; }, 1));
        k.push_back(int_key("simulation", "n_paths", [](auto& c) -> auto& { return c.sim.n_paths; }, 1));
        k.push_back({"simulation", "seed",
                     [](RunConfig& c, const std::string& key, std::string_view v) { c.sim.seed = parse_seed(key, v); },
                     [](const RunConfig& c) { return std::to_string(c.sim.seed); }});
        k.push_back(int_key("simulation", "bins", [](auto& c) -> auto& { return c.sim.histogram_bins; }, 1));
        k.push_back(number_key("simulation", "c_lo", [](auto& c) -> auto& { return c.grid.c_lo; }));
        k.push_back(number_key("simulation", "c_hi", [](auto& c) -> auto& { return c.grid.c_hi; }));
        k.push_back(number_key("simulation", "c_step", [](auto& c) -> auto& { return c.grid.c_step; }));
        k.push_back(list_key("table", "t_values", [](auto& c) -> auto& { return c.grid.t_values; }));
        k.push_back(list_key("table", "n_values", [](auto& c) -> auto& { return c.grid.n_values; }));
        k.push_back(list_key("table", "t_scan", [](auto& c) -> auto& { return c.grid.t_scan; }));
        k.push_back(list_key("table", "n_scan", [](auto& c) -> auto& { return c.grid.n_scan; }));
        k.push_back({"output", "dir",
                     [](RunConfig& c, const std::string&, std::string_view v) { c.out_dir = trim(v); },
                     [](const RunConfig& c) { return c.out_dir; }});
        return k;
    }();
    return keys;
}

}  // namespace detail

/// Ordered `section.key -> value` assignments; later entries win.
using ConfigAssignments = std::vector<std::pair<std::string, std::string>>;

/// Reads an INI file (sections, `key = value`, `;` or `#` comments).
inline ConfigAssignments read_ini(std::istream& in) {
    ConfigAssignments out;
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    for (const auto& it : items) {
        if (it.name == "++" || it.name == "--") continue;
        std::string value;
        for (std::size_t i = 0; i < it.inputs.size(); ++i) value += (i ? "," : "") + std::string(detail::trim(it.inputs[i]));
        out.emplace_back(it.fullname(), value);
    }
    return out;
}

/// Parses one `section.key=value` override.
inline std::pair<std::string, std::string> parse_assignment(std::string_view s) {
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(s) + "' is not of the form section.key=value");
    const auto key = detail::trim(s.substr(0, eq));
    if (key.find('.') == std::string_view::npos) {
        throw ConfigError("override key '" + std::string(key) + "' needs a section, as in market.sigma");
    }
    return {std::string(key), std::string(detail::trim(s.substr(eq + 1)))};
}

/// Builds a config from assignments. The product kind is applied first since
/// it selects the baseline; unknown keys are errors.
inline RunConfig make_config(const ConfigAssignments& assignments) {
    const auto& schema = detail::config_schema();
    std::string kind = "gic";
    for (const auto& [k, v] : assignments) {
        if (k == "product.kind") kind = std::string(detail::trim(v));
    }
    RunConfig cfg = RunConfig::defaults(kind);
    for (const auto& [k, v] : assignments) {
        const auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& s) { return s.full() == k; });
        if (it == schema.end()) throw ConfigError("unknown config key '" + k + "'");
        it->set(cfg, k, v);
    }
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    ConfigAssignments a;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file '" + path + "'");
        a = read_ini(f);
    }
    for (const auto& o : overrides) a.push_back(parse_assignment(o));
    return make_config(a);
}

/// Every key with its effective value; reading this back yields the same config.
inline void write_config(std::ostream& out, const RunConfig& cfg) {
    std::string section;
    for (const auto& key : detail::config_schema()) {
        if (key.section != section) {
            if (!section.empty()) out << '\n';
            section = key.section;
            out << '[' << section << "]\n";
        }
        out << key.name << " = " << key.get(cfg) << '\n';
    }
}

}  // namespace riskctl
