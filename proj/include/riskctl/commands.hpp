#pragma once

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "riskctl/backtest.hpp"
#include "riskctl/config.hpp"
#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"
#include "riskctl/hedging.hpp"

namespace riskctl {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_infeasible = 3, exit_numerical = 4 };

/// Maps the library's exception families onto process exit codes.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return exit_config;
    if (dynamic_cast<const InfeasibleError*>(&e)) return exit_infeasible;
    if (dynamic_cast<const NumericalError*>(&e)) return exit_numerical;
    return exit_failure;
}

struct CommandEnv {
    unsigned threads = 1;
    std::ostream* out = nullptr;  ///< results; may be null
    std::ostream* log = nullptr;  ///< per-cell failures and progress; may be null
};

namespace detail {

inline std::ofstream open_output(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = std::filesystem::path(cfg.out_dir) / name;
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    return f;
}

inline void write_effective(const RunConfig& cfg) {
    auto f = open_output(cfg, "effective.ini");
    write_config(f, cfg);
}

// Percent with round-off below 1e-9 removed, so a 0.6 grid point prints as 60.
inline std::string percent(double v) {
    if (!std::isfinite(v)) return format_double(v);
    return format_double(std::round(v * 100.0 * 1e9) / 1e9);
}

inline HedgeModel make_model(const RunConfig& cfg, const EventTree& tree) {
    return HedgeModel(tree, cfg.make_product(), cfg.assets, cfg.make_algorithm(), cfg.risk);
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct PriceOutcome {
    double price = 0.0;
    SweepResult sweep;
};

/// Backward sweep; writes policy.csv, costtogo.csv and effective.ini.
inline PriceOutcome cmd_price(const RunConfig& cfg, const CommandEnv& env = {}) {
    const EventTree tree = cfg.make_tree();
    const HedgeModel model = detail::make_model(cfg, tree);
    PriceOutcome o;
    o.sweep = backward_sweep(model, {env.threads});
    o.price = o.sweep.price();
    detail::write_effective(cfg);
    {
        auto f = detail::open_output(cfg, "policy.csv");
        write_policy_csv(f, tree, o.sweep.policy);
    }
    {
        auto f = detail::open_output(cfg, "costtogo.csv");
        write_costtogo_csv(f, tree, o.sweep.store);
    }
    if (env.out) {
        *env.out << "F0 = " << detail::format_double(o.price) << "  (" << o.sweep.lp_solves << " LP solves";
        if (model.state() != StateKind::none) *env.out << ", up to " << o.sweep.max_pieces << " pieces per node";
        *env.out << ")\n";
    }
    return o;
}

/// Sweep at the configured c, then replay simulated paths; writes report.csv,
/// hist.csv and effective.ini.
inline BacktestReport cmd_backtest(const RunConfig& cfg, const CommandEnv& env = {}) {
    const EventTree tree = cfg.make_tree();
    const HedgeModel model = detail::make_model(cfg, tree);
    const SweepResult s = backward_sweep(model, {env.threads});
    SimConfig sim = cfg.sim;
    sim.threads = env.threads;
    const BacktestReport r = backtest(tree, s.policy, model.menu(), sim);
    detail::write_effective(cfg);
    {
        auto f = detail::open_output(cfg, "report.csv");
        write_report_csv(f, r);
    }
    {
        auto f = detail::open_output(cfg, "hist.csv");
        write_histogram_csv(f, r.histogram);
    }
    if (env.out) {
        using detail::percent;
        *env.out << "F0 = " << detail::format_double(r.f0) << "\nmean gain = " << percent(r.mean_gain())
                 << "%\nsd = " << percent(r.sd) << "%\nVaR95 = " << percent(r.var95) << "%\nCVaR95 = "
                 << percent(r.cvar95) << "%\nCR = " << percent(r.cr) << "%\npaths = " << r.samples.size() << '\n';
        if (r.escapes) *env.out << "domain escapes = " << r.escapes << '\n';
    }
    return r;
}

/// CR over the retention grid; writes sweep.csv and effective.ini.
inline RetentionSweep cmd_sweep(const RunConfig& cfg, const CommandEnv& env = {}) {
    const EventTree tree = cfg.make_tree();
    SimConfig sim = cfg.sim;
    sim.threads = env.threads;
    const auto grid = cfg.c_grid();
    const RetentionSweep s =
        sweep_retention(tree, cfg.make_product(), cfg.assets, cfg.make_algorithm(), cfg.risk, grid, sim);
    detail::write_effective(cfg);
    {
        auto f = detail::open_output(cfg, "sweep.csv");
        write_sweep_csv(f, s);
    }
    if (env.log) {
        for (const auto& row : s.rows) {
            if (!row.ok()) *env.log << "c = " << detail::format_double(row.c) << ": " << row.error << '\n';
        }
    }
    if (env.out) {
        const auto& b = s.best_row();
        *env.out << "best c = " << detail::percent(b.c) << "%  F0 = " << detail::format_double(b.f0)
                 << "  CR = " << detail::percent(b.cr) << "%\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// Tables

namespace detail {

struct BestCell {
    double c = std::numeric_limits<double>::quiet_NaN();
    double cr = std::numeric_limits<double>::quiet_NaN();
};

inline BestCell best_cell(const RunConfig& cfg, const CommandEnv& env, const std::string& label) {
    try {
        const EventTree tree = cfg.make_tree();
        SimConfig sim = cfg.sim;
        sim.threads = env.threads;
        const auto grid = cfg.c_grid();
        const auto s = sweep_retention(tree, cfg.make_product(), cfg.assets, cfg.make_algorithm(), cfg.risk, grid, sim);
        const auto& b = s.best_row();
        if (env.log) *env.log << label << ": c = " << percent(b.c) << ", CR = " << percent(b.cr) << '\n';
        return {b.c, b.cr};
    } catch (const std::exception& e) {
        if (env.log) *env.log << label << ": failed: " << e.what() << '\n';
        return {};
    }
}

inline int as_int(double v, const char* what) {
    if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError(std::string(what) + " values must be positive integers");
    return static_cast<int>(v);
}

inline void write_scan(std::ostream& out, const char* head, const std::vector<double>& values,
                       const std::vector<BestCell>& cells) {
    out << head;
    for (double v : values) out << ',' << format_double(v);
    out << "\nc";
    for (const auto& c : cells) out << ',' << percent(c.c);
    out << "\nCR";
    for (const auto& c : cells) out << ',' << percent(c.cr);
    out << '\n';
}

struct Variation {
    std::string parameter;
    std::string value;
    std::function<void(RunConfig&)> apply;
};

inline void write_blocks(std::ostream& out, const RunConfig& base, const std::vector<Variation>& rows,
                         const CommandEnv& env) {
    out << "parameter,value,c,CR\n";
    for (const auto& v : rows) {
        RunConfig cfg = base;
        v.apply(cfg);
        const BestCell b = best_cell(cfg, env, v.parameter + "=" + v.value);
        out << v.parameter << ',' << v.value << ',' << percent(b.c) << ',' << percent(b.cr) << '\n';
    }
}

}  // namespace detail

/// Reproduces one of the five result tables as table{id}.csv in out_dir.
/// Table 1 holds F0 over (T, N) for a one-year contract; tables 2-5 hold the
/// best retention level and its CR, both in percent. Failed cells are NaN.
inline void cmd_table(const RunConfig& base, int id, const CommandEnv& env = {}) {
    using detail::as_int;
    if (id < 1 || id > 5) throw ConfigError("table id must be 1..5, got " + std::to_string(id));
    if (base.product.kind != "gic") throw ConfigError("tables are defined for the GIC product");
    detail::write_effective(base);
    auto f = detail::open_output(base, "table" + std::to_string(id) + ".csv");
    const auto& g = base.grid;
    switch (id) {
        case 1: {
            f << "T\\N";
            for (double n : g.n_values) f << ',' << detail::format_double(n);
            f << '\n';
            for (double t : g.t_values) {
                f << detail::format_double(t);
                for (double n : g.n_values) {
                    RunConfig cfg = base;
                    cfg.lattice.periods = as_int(t, "T");
                    cfg.lattice.periods_per_year = cfg.lattice.periods;
                    cfg.lattice.subperiods = as_int(n, "N");
                    double price = std::numeric_limits<double>::quiet_NaN();
                    try {
                        const EventTree tree = cfg.make_tree();
                        price = backward_sweep(detail::make_model(cfg, tree), {env.threads}).price();
                    } catch (const std::exception& e) {
                        if (env.log) *env.log << "T=" << t << " N=" << n << ": failed: " << e.what() << '\n';
                    }
                    if (env.log && std::isfinite(price)) {
                        *env.log << "T=" << t << " N=" << n << ": F0 = " << detail::format_double(price) << '\n';
                    }
                    f << ',' << detail::format_double(price);
                }
                f << '\n';
            }
            break;
        }
        case 2:
        case 3: {
            const bool by_t = id == 2;
            const auto& values = by_t ? g.t_scan : g.n_scan;
            std::vector<detail::BestCell> cells;
            for (double v : values) {
                RunConfig cfg = base;
                if (by_t) {
                    cfg.lattice.periods = as_int(v, "T");
                    cfg.lattice.periods_per_year = cfg.lattice.periods;
                } else {
                    cfg.lattice.subperiods = as_int(v, "N");
                }
                cells.push_back(detail::best_cell(cfg, env, (by_t ? "T=" : "N=") + detail::format_double(v)));
            }
            detail::write_scan(f, by_t ? "T" : "N", values, cells);
            break;
        }
        case 4: {
            std::vector<detail::Variation> rows;
            for (int t : {24, 36}) rows.push_back({"T", std::to_string(t), [t](RunConfig& c) { c.lattice.periods = t; }});
            for (double z : {0.05, 0.07}) {
                rows.push_back({"zeta", detail::format_double(z), [z](RunConfig& c) { c.product.cap_zeta = z; }});
            }
            for (double gr : {0.01, 0.02}) {
                rows.push_back({"g", detail::format_double(gr), [gr](RunConfig& c) { c.product.floor_g = gr; }});
            }
            detail::write_blocks(f, base, rows, env);
            break;
        }
        case 5: {
            std::vector<detail::Variation> rows;
            for (double m : {0.07, 0.09}) rows.push_back({"mu", detail::format_double(m), [m](RunConfig& c) { c.lattice.mu = m; }});
            for (double s : {0.15, 0.25}) {
                rows.push_back({"sigma", detail::format_double(s), [s](RunConfig& c) { c.lattice.sigma = s; }});
            }
            for (double r : {0.02, 0.04}) rows.push_back({"r", detail::format_double(r), [r](RunConfig& c) { c.lattice.r = r; }});
            rows.push_back({"option", "with", [](RunConfig& c) { c.assets.call = true; }});
            rows.push_back({"option", "without", [](RunConfig& c) { c.assets.call = false; }});
            detail::write_blocks(f, base, rows, env);
            break;
        }
        default: break;
    }
    if (!f) throw NumericalError("failed writing table" + std::to_string(id) + ".csv");
    if (env.out) *env.out << "wrote " << (std::filesystem::path(base.out_dir) / ("table" + std::to_string(id) + ".csv")).string() << '\n';
}

}  // namespace riskctl
