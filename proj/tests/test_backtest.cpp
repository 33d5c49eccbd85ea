#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "riskctl/backtest.hpp"

using namespace riskctl;

namespace {

// Rockafellar-Uryasev form: min over a of a + E[(M - a)+] / 0.05. The
// minimum sits at a sample point, so scanning the samples is exact.
double ru_cvar(const std::vector<double>& s) {
    double best = std::numeric_limits<double>::infinity();
    for (double a : s) {
        double excess = 0.0;
        for (double x : s) excess += std::max(x - a, 0.0);
        best = std::min(best, a + excess / (0.05 * static_cast<double>(s.size())));
    }
    return best;
}

EventTree eia_tree(int periods) {
    std::ifstream f(std::string(RISKCTL_DATA_DIR) + "/makeham_illustrative.csv");
    const AnnualMortality annual = parse_mortality_csv(f);
    LatticeParams p;
    p.periods = periods;
    return build_eia_tree(p, monthly_mortality_from_annual(annual, 50.0, periods));
}

AssetMenu priced_menu(const EventTree& tree, bool with_call = true) {
    AssetMenu m;
    m.call = with_call;
    if (with_call) m.price_calls(tree);
    return m;
}

SweepResult stateless(const EventTree& tree, double c, bool with_call = true) {
    RiskSpec r;
    r.retention_c = c;
    return backward_sweep(HedgeModel(tree, GicContract{}, priced_menu(tree, with_call), AlgorithmSpec{}, r));
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Rng, SplitMixMatchesReferenceSequence) {
    SplitMix64 g(0);
    EXPECT_EQ(g.next(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(g.next(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(g.next(), 0x06C45D188009454FULL);
}

TEST(Rng, UniformStaysInUnitInterval) {
    auto g = SplitMix64::substream(7, 3);
    for (int i = 0; i < 10000; ++i) {
        const double u = g.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, SubstreamsDiffer) {
    auto a = SplitMix64::substream(42, 0);
    auto b = SplitMix64::substream(42, 1);
    auto c = SplitMix64::substream(43, 0);
    const auto x = a.next();
    EXPECT_NE(x, b.next());
    EXPECT_NE(x, c.next());
}

TEST(Sampling, DegenerateUpProbabilityAlwaysPicksAllUp) {
    const std::vector<double> probs = period_transition_probs(1.0, 6);
    for (double u : {0.0, 1e-300, 0.3, 0.999999, std::nextafter(1.0, 0.0)}) EXPECT_EQ(sample_index(probs, u), 6u);
}

TEST(Sampling, InverseCdfBoundaries) {
    const std::vector<double> probs{0.25, 0.5, 0.25};
    EXPECT_EQ(sample_index(probs, 0.0), 0u);
    EXPECT_EQ(sample_index(probs, 0.2499), 0u);
    EXPECT_EQ(sample_index(probs, 0.25), 1u);
    EXPECT_EQ(sample_index(probs, 0.75), 2u);
}

TEST(Paths, ChildFrequenciesMatchTransitionProbabilities) {
    const EventTree tree = build_index_tree(LatticeParams{});
    SimConfig cfg;
    const auto paths = simulate_paths(tree, cfg);
    const auto probs = tree.move_probs();
    // every period has the same conditional law, so pool the transitions
    std::vector<double> freq(probs.size(), 0.0);
    for (const auto& p : paths) {
        ASSERT_EQ(p.moves.size(), 12u);
        for (auto k : p.moves) freq[k] += 1.0;
    }
    const double n = static_cast<double>(paths.size()) * tree.periods();
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double se = std::sqrt(probs[k] * (1.0 - probs[k]) / n);
        EXPECT_NEAR(freq[k] / n, probs[k], 3.0 * se) << "outcome " << k;
    }
}

TEST(Paths, SameSeedSamePathsAcrossThreadCounts) {
    const EventTree tree = build_index_tree(LatticeParams{});
    SimConfig a;
    a.n_paths = 2000;
    SimConfig b = a;
    b.threads = 4;
    const auto pa = simulate_paths(tree, a);
    const auto pb = simulate_paths(tree, b);
    for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i].moves, pb[i].moves);
    SimConfig c = a;
    c.seed = 43;
    const auto pc = simulate_paths(tree, c);
    std::size_t same = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i].moves == pc[i].moves;
    EXPECT_LT(same, pa.size() / 10);
}

TEST(Paths, DeathMonthFollowsChainedMortality) {
    const EventTree tree = eia_tree(60);
    SimConfig cfg;
    const auto paths = simulate_paths(tree, cfg);
    double survive = 1.0;
    for (int t = 1; t <= 60; ++t) survive *= 1.0 - tree.death_prob(t);
    const double p_death = 1.0 - survive;
    double deaths = 0.0;
    for (const auto& p : paths) {
        if (p.death_period > 0) {
            deaths += 1.0;
            EXPECT_EQ(p.moves.size(), static_cast<std::size_t>(p.death_period));
        } else {
            EXPECT_EQ(p.moves.size(), 60u);
        }
    }
    const double n = static_cast<double>(paths.size());
    EXPECT_NEAR(deaths / n, p_death, 3.0 * std::sqrt(p_death * (1.0 - p_death) / n));
}

// ---------------------------------------------------------------------------

TEST(CrStatistic, ConstantSamples) {
    const BacktestReport r = cr_statistic(std::vector<double>(37, 0.02), 1.01);
    EXPECT_DOUBLE_EQ(r.var95, 0.02);
    EXPECT_DOUBLE_EQ(r.cvar95, 0.02);
    EXPECT_NEAR(r.cr, 1.01 + 0.02 - 1.0, 1e-15);
    EXPECT_NEAR(r.sd, 0.0, 1e-15);
}

TEST(CrStatistic, UniformHundredHasTailMeanNinetySeven) {
    std::vector<double> s(100);
    std::iota(s.begin(), s.end(), 0.0);
    std::shuffle(s.begin(), s.end(), std::mt19937(5));
    const BacktestReport r = cr_statistic(s, 1.0);
    EXPECT_DOUBLE_EQ(r.var95, 94.0);
    EXPECT_DOUBLE_EQ(r.cvar95, 97.0);
    EXPECT_DOUBLE_EQ(r.mean, 49.5);
    EXPECT_EQ(r.samples, s);
}

TEST(CrStatistic, SingleSample) {
    const BacktestReport r = cr_statistic({-0.3}, 1.0);
    EXPECT_DOUBLE_EQ(r.cvar95, -0.3);
    EXPECT_DOUBLE_EQ(r.var95, -0.3);
    ASSERT_EQ(r.histogram.counts.size(), 50u);
}

TEST(CrStatistic, SortedTailMatchesMinimizationForm) {
    std::mt19937_64 gen(11);
    std::uniform_int_distribution<int> size(1, 1000);
    std::normal_distribution<double> z(0.0, 0.02);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<double> s(static_cast<std::size_t>(size(gen)));
        for (double& x : s) x = z(gen);
        const BacktestReport r = cr_statistic(s, 1.01);
        EXPECT_NEAR(r.cvar95, ru_cvar(s), 1e-9) << "n = " << s.size();
        EXPECT_GE(r.cvar95, r.var95);
        EXPECT_NEAR(r.cr, r.f0 + r.cvar95 - 1.0, 1e-12);
    }
}

TEST(CrStatistic, HistogramCountsEverySample) {
    std::vector<double> s;
    for (int i = 0; i < 1000; ++i) s.push_back(std::sin(i * 0.37));
    const BacktestReport r = cr_statistic(s, 1.0, 17);
    ASSERT_EQ(r.histogram.edges.size(), 18u);
    EXPECT_EQ(std::accumulate(r.histogram.counts.begin(), r.histogram.counts.end(), std::size_t{0}), s.size());
    EXPECT_TRUE(std::is_sorted(r.histogram.edges.begin(), r.histogram.edges.end()));
    EXPECT_DOUBLE_EQ(r.histogram.edges.front(), *std::min_element(s.begin(), s.end()));
    EXPECT_DOUBLE_EQ(r.histogram.edges.back(), *std::max_element(s.begin(), s.end()));
}

TEST(CrStatistic, RejectsEmpty) { EXPECT_THROW(cr_statistic({}, 1.0), DomainError); }

// ---------------------------------------------------------------------------

TEST(Replay, CompleteMarketReplicationHasNoMismatch) {
    LatticeParams p;
    p.periods = 6;
    p.subperiods = 1;
    const EventTree tree = build_index_tree(p);
    AssetMenu menu;
    menu.call = false;
    RiskSpec r;
    r.super_replication = true;
    const HedgeModel model(tree, GicContract{}, menu, AlgorithmSpec{}, r);
    const SweepResult s = backward_sweep(model);
    SimConfig cfg;
    cfg.n_paths = 500;
    const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
    for (double m : rep.samples) EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(Replay, CashFundsDeterministicClaim) {
    LatticeParams p;
    p.periods = 4;
    const EventTree tree = build_index_tree(p);
    AssetMenu menu;
    menu.stock = false;
    menu.call = false;
    GicContract flat;
    flat.cap_zeta = 0.0;
    RiskSpec r;
    r.retention_c = 0.6;
    const HedgeModel model(tree, flat, menu, AlgorithmSpec{}, r);
    const SweepResult s = backward_sweep(model);
    EXPECT_NEAR(s.price(), std::exp(-p.r * 4.0 / 12.0), 1e-12);
    SimConfig cfg;
    cfg.n_paths = 200;
    const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
    for (double m : rep.samples) EXPECT_NEAR(m, 0.0, 1e-13);
}

TEST(Replay, BaselineGicGainAndSpread) {
    const EventTree tree = build_index_tree(LatticeParams{});
    const SweepResult s = stateless(tree, 0.59);
    const BacktestReport rep = backtest(tree, s.policy, priced_menu(tree), SimConfig{});
    // reference: expected gain 0.33%, sd 1.29%, CR 1.14%
    EXPECT_NEAR(rep.mean_gain(), 0.0033, 0.002);
    EXPECT_NEAR(rep.sd, 0.0129, 0.002);
    EXPECT_NEAR(rep.cr, 0.0114, 0.003);
    EXPECT_EQ(rep.escapes, 0u);
}

TEST(Replay, OptionNeverRaisesInitialOutlay) {
    const EventTree tree = build_index_tree(LatticeParams{});
    for (double c : {0.5, 0.6, 0.95}) {
        EXPECT_LE(stateless(tree, c, true).price(), stateless(tree, c, false).price() + 1e-12) << "c = " << c;
    }
}

TEST(Replay, PathwiseCapHoldsOnEveryPath) {
    LatticeParams p;
    p.periods = 4;
    const EventTree tree = build_index_tree(p);
    for (double g3 : {0.03, 0.005}) {
        RiskSpec r;
        r.retention_c = 0.59;
        r.pathwise_gamma3 = g3;
        const HedgeModel model(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r);
        const SweepResult s = backward_sweep(model);
        SimConfig cfg;
        cfg.n_paths = 20000;
        const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
        EXPECT_EQ(rep.escapes, 0u);
        EXPECT_LE(rep.peak_loss, g3 + 1e-8);
        EXPECT_LE(*std::max_element(rep.samples.begin(), rep.samples.end()), g3 + 1e-8);
    }
}

TEST(Replay, CapitalPolicyStaysInsideItsDomain) {
    LatticeParams p;
    p.periods = 4;
    const EventTree tree = build_index_tree(p);
    RiskSpec r;
    r.retention_c = 0.59;
    AlgorithmSpec a;
    a.variant = Variant::coherent;
    RiskSpec overlay;
    overlay.retention_c = 0.59;
    a.overlay = overlay;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, a, r);
    const SweepResult s = backward_sweep(model);
    SimConfig cfg;
    cfg.n_paths = 5000;
    const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
    EXPECT_EQ(rep.escapes, 0u);
    EXPECT_DOUBLE_EQ(rep.f0, s.price());
}

TEST(Replay, DomainEscapesAreCountedNotClipped) {
    LatticeParams p;
    p.periods = 3;
    const EventTree tree = build_index_tree(p);
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = 0.03;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r);
    SweepResult s = backward_sweep(model);
    // shrink the domain of the lowest period-1 node below any reachable state
    auto& pieces = s.policy.nodes[1][0].pieces;
    pieces.back().z_hi = pieces.front().z_lo;
    SimConfig cfg;
    cfg.n_paths = 20000;
    const BacktestReport rep = backtest(tree, s.policy, model.menu(), cfg);
    EXPECT_GT(rep.escapes, 0u);
    EXPECT_EQ(rep.samples.size() + rep.escapes, cfg.n_paths);

    s.policy.initial_state = 10.0;
    EXPECT_THROW(backtest(tree, s.policy, model.menu(), cfg), NumericalError);
}

TEST(Replay, EiaDirection) {
    const EventTree tree = eia_tree(60);
    RiskSpec r;
    r.retention_c = 0.5;
    const HedgeModel model(tree, EiaContract{}, AssetMenu{}, AlgorithmSpec{}, r);
    const SweepResult s = backward_sweep(model);
    const BacktestReport rep = backtest(tree, s.policy, model.menu(), SimConfig{});
    EXPECT_GE(rep.f0, 0.99);
    EXPECT_LE(rep.f0, 1.02);
    EXPECT_LT(rep.cr, 0.009);
    EXPECT_GT(rep.mean_gain(), 0.0);
}

TEST(Replay, ReportIsBitIdenticalAcrossThreads) {
    const EventTree tree = build_index_tree(LatticeParams{});
    const SweepResult s = stateless(tree, 0.59);
    SimConfig serial;
    serial.n_paths = 10000;
    SimConfig parallel = serial;
    parallel.threads = 8;
    const BacktestReport a = backtest(tree, s.policy, priced_menu(tree), serial);
    const BacktestReport b = backtest(tree, s.policy, priced_menu(tree), parallel);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        ASSERT_EQ(std::bit_cast<std::uint64_t>(a.samples[i]), std::bit_cast<std::uint64_t>(b.samples[i]));
    }
    std::ostringstream ra;
    std::ostringstream rb;
    write_report_csv(ra, a);
    write_report_csv(rb, b);
    EXPECT_EQ(ra.str(), rb.str());
}

// ---------------------------------------------------------------------------

TEST(Sweep, GridOfOneIsItsOwnArgmin) {
    LatticeParams p;
    p.periods = 4;
    const EventTree tree = build_index_tree(p);
    const std::vector<double> grid{0.6};
    SimConfig cfg;
    cfg.n_paths = 1000;
    const auto s = sweep_retention(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, RiskSpec{}, grid, cfg);
    ASSERT_EQ(s.rows.size(), 1u);
    ASSERT_TRUE(s.best.has_value());
    EXPECT_EQ(*s.best, 0u);
    EXPECT_DOUBLE_EQ(s.best_row().c, 0.6);
}

TEST(Sweep, FailedCellsAreRecordedAndSkipped) {
    LatticeParams p;
    p.periods = 3;
    const EventTree tree = build_index_tree(p);
    const std::vector<double> grid{0.5, 1.5, 0.7};
    SimConfig cfg;
    cfg.n_paths = 500;
    const auto s = sweep_retention(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, RiskSpec{}, grid, cfg);
    ASSERT_EQ(s.rows.size(), 3u);
    EXPECT_TRUE(s.rows[0].ok());
    EXPECT_FALSE(s.rows[1].ok());
    EXPECT_TRUE(std::isnan(s.rows[1].cr));
    EXPECT_TRUE(s.rows[2].ok());
    ASSERT_TRUE(s.best.has_value());
    EXPECT_NE(*s.best, 1u);
    EXPECT_THROW(sweep_retention(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, RiskSpec{}, {}, cfg), DomainError);
}

TEST(Sweep, RetentionGridLandsOnRoundValues) {
    const auto g = retention_grid(0.05, 0.95, 0.05);
    ASSERT_EQ(g.size(), 19u);
    EXPECT_DOUBLE_EQ(g.front(), 0.05);
    EXPECT_NEAR(g.back(), 0.95, 1e-15);
    EXPECT_EQ(retention_grid(0.6, 0.6, 0.05).size(), 1u);
}

TEST(Csv, HeadersAndRowCounts) {
    const BacktestReport r = cr_statistic({0.1, 0.2, 0.3}, 1.0, 4);
    std::ostringstream rep;
    write_report_csv(rep, r);
    EXPECT_EQ(rep.str().substr(0, rep.str().find('\n')), "statistic,value");
    EXPECT_NE(rep.str().find("\ncr,"), std::string::npos);
    std::ostringstream h;
    write_histogram_csv(h, r.histogram);
    const std::string hist = h.str();
    EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 5);
    RetentionSweep s;
    s.rows.push_back({0.6, 1.01, 0.011, 0.003, ""});
    std::ostringstream sw;
    write_sweep_csv(sw, s);
    EXPECT_EQ(sw.str(), "c,F0,cr\n0.6,1.01,0.011\n");
}
