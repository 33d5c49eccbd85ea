// riskctl: price, backtest and sweep lattice hedging strategies from an INI config.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "riskctl/commands.hpp"

namespace {

struct Flags {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::string seed;
    unsigned threads = 1;
    int table = 0;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "INI file; omitted keys take the GIC (or EIA) baseline");
    cmd->add_option("--set", f.sets, "Override a key, e.g. --set algorithm.c=0.59 (repeatable)");
    cmd->add_option("--out", f.out, "Output directory (output.dir)");
    cmd->add_option("--seed", f.seed, "Simulation seed (simulation.seed)");
    cmd->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
}

riskctl::RunConfig load(const Flags& f) {
    std::vector<std::string> sets = f.sets;
    if (!f.out.empty()) sets.push_back("output.dir=" + f.out);
    if (!f.seed.empty()) sets.push_back("simulation.seed=" + f.seed);
    return riskctl::load_config(f.config, sets);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-controlled hedging on index lattices"};
    app.require_subcommand(1);
    Flags flags;

    auto* price = app.add_subcommand("price", "Backward sweep; prints F0, writes policy.csv and costtogo.csv");
    auto* backtest = app.add_subcommand("backtest", "Sweep, then replay simulated paths; writes report.csv and hist.csv");
    auto* sweep = app.add_subcommand("sweep", "Backtest every retention level on the grid; writes sweep.csv");
    auto* table = app.add_subcommand("table", "Reproduce a result table as table<id>.csv");
    for (auto* cmd : {price, backtest, sweep, table}) add_common(cmd, flags);
    table->add_option("id", flags.table, "Table number")->required()->check(CLI::Range(1, 5));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return riskctl::exit_config;
    }

    try {
        const riskctl::RunConfig cfg = load(flags);
        const riskctl::CommandEnv env{flags.threads, &std::cout, &std::cerr};
        if (price->parsed()) riskctl::cmd_price(cfg, env);
        if (backtest->parsed()) riskctl::cmd_backtest(cfg, env);
        if (sweep->parsed()) riskctl::cmd_sweep(cfg, env);
        if (table->parsed()) riskctl::cmd_table(cfg, flags.table, env);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return riskctl::exit_code_for(e);
    }
    return riskctl::exit_ok;
}
