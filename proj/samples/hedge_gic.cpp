// Prices the baseline GIC, then backtests the stored policy on 10,000 paths.

#include <iostream>

#include "riskctl/backtest.hpp"
#include "riskctl/hedging.hpp"

int main() {
    using namespace riskctl;

    const EventTree tree = build_index_tree(LatticeParams{});
    RiskSpec risk;
    risk.retention_c = 0.59;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, risk);
    const SweepResult sweep = backward_sweep(model);

    SimConfig sim;
    sim.n_paths = 10'000;
    const BacktestReport report = backtest(tree, sweep.policy, model.menu(), sim);

    std::cout << "F0        " << report.f0 << '\n'
              << "mean gain " << 100 * report.mean_gain() << "%\n"
              << "sd        " << 100 * report.sd << "%\n"
              << "CR        " << 100 * report.cr << "%\n";
}
