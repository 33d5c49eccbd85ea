#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "riskctl/hedging.hpp"

using namespace riskctl;

namespace {

// Tail mean of the worst (1-c) probability mass, by sorting.
double sorted_cvar(std::vector<double> loss, std::vector<double> prob, double c) {
    std::vector<std::size_t> order(loss.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return loss[a] > loss[b]; });
    double mass = 1.0 - c;
    double acc = 0.0;
    for (std::size_t i : order) {
        const double take = std::min(mass, prob[i]);
        acc += take * loss[i];
        mass -= take;
        if (mass <= 0.0) break;
    }
    return acc / (1.0 - c);
}

LatticeParams small(int t, int n) {
    LatticeParams p;
    p.periods = t;
    p.subperiods = n;
    p.periods_per_year = t;
    return p;
}

double sweep_price(const EventTree& tree, const RiskSpec& r, const AssetMenu& menu = {},
                   const Product& product = GicContract{}) {
    return backward_sweep(HedgeModel(tree, product, menu, AlgorithmSpec{}, r)).price();
}

// Worst gap between the stored value and fresh solves on an evenly spaced grid.
double grid_gap(const HedgeModel& model, const CostToGoStore& store, int points = 51) {
    double worst = 0.0;
    const EventTree& tree = model.tree();
    for (int t = 0; t < tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            const NodeLp m = model.build(n, store);
            const auto& v = store.at(n.ref());
            for (int i = 0; i < points; ++i) {
                const double z = v.domain_lo() + (v.domain_hi() - v.domain_lo()) * i / (points - 1);
                const LpSolution s = solve(m.lp, z);
                if (!s.optimal()) return std::numeric_limits<double>::infinity();
                worst = std::max(worst, std::abs(s.objective - v.eval(z)));
            }
        }
    }
    return worst;
}

}  // namespace

TEST(RiskBlocks, CvarLpMatchesSortedTailMean) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> atoms(1, 20);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = atoms(rng);
        std::vector<double> loss(n);
        std::vector<double> prob(n);
        for (int k = 0; k < n; ++k) {
            loss[k] = gauss(rng);
            prob[k] = unit(rng) + 1e-3;
        }
        const double total = std::accumulate(prob.begin(), prob.end(), 0.0);
        for (double& p : prob) p /= total;
        const double c = std::min(0.99, unit(rng));

        LpProblem lp;
        std::vector<LinearExpr> losses;
        for (double l : loss) losses.push_back({{}, l, 0.0});
        const auto block = cvar_block(lp, losses, prob, c);
        add_to_objective(lp, block.value);
        const LpSolution s = solve(lp);
        ASSERT_TRUE(s.optimal());
        EXPECT_NEAR(s.objective, sorted_cvar(loss, prob, c), 1e-9) << "trial " << trial;
    }
}

TEST(RiskBlocks, DownsideIsExpectedPositivePart) {
    const std::vector<double> loss{-0.3, 0.1, 0.4, -0.05};
    const std::vector<double> prob{0.1, 0.2, 0.3, 0.4};
    LpProblem lp;
    std::vector<LinearExpr> losses;
    for (double l : loss) losses.push_back({{}, l, 0.0});
    add_to_objective(lp, downside_block(lp, losses, prob).value);
    const LpSolution s = solve(lp);
    ASSERT_TRUE(s.optimal());
    EXPECT_NEAR(s.objective, 0.2 * 0.1 + 0.3 * 0.4, 1e-12);
}

TEST(RiskBlocks, NormSplitReproducesPenalty) {
    NormSpec spec;
    spec.breakpoints = {0.0, 0.05, 0.2};
    spec.slopes = {1.0, 2.0, 5.0};
    const std::vector<double> excess{0.0, 0.03, 0.12, 0.5};
    LpProblem lp;
    std::vector<std::size_t> cols;
    for (double u : excess) cols.push_back(lp.add_variable("u", u, u));
    norm_block(lp, cols, spec);
    // the split variables carry the slopes; minimizing their weighted sum gives the penalty
    for (std::size_t j = cols.size(); j < lp.variables().size(); ++j) {
        const auto& name = lp.variables()[j].name;
        lp.set_cost(j, spec.slopes[static_cast<std::size_t>(name.back() - '0')]);
    }
    const LpSolution s = solve(lp);
    ASSERT_TRUE(s.optimal());
    double expected = 0.0;
    for (double u : excess) expected += spec.penalty(u);
    // direct: 0 + 0.03 + (0.05 + 2*0.07) + (0.05 + 2*0.15 + 5*0.3)
    EXPECT_NEAR(expected, 0.03 + 0.19 + 1.85, 1e-12);
    EXPECT_NEAR(s.objective, expected, 1e-10);
}

TEST(RiskBlocks, RejectsFullRetention) {
    LpProblem lp;
    const std::vector<LinearExpr> losses{{{}, 1.0, 0.0}};
    const std::vector<double> prob{1.0};
    EXPECT_THROW(cvar_block(lp, losses, prob, 1.0), DomainError);
}

TEST(UpperChord, StaysAboveAndWithinBudget) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<LinearPiece> pieces;
    double z = -1.0;
    double slope = -2.0;
    double value = 3.0;
    for (int i = 0; i < 200; ++i) {
        const double w = 0.001 + 0.02 * unit(rng);
        pieces.push_back({z, z + w, slope, value - slope * z});
        value += slope * w;
        z += w;
        slope += 0.05 * unit(rng) + 0.001;
    }
    const PiecewiseLinearValue f(pieces);
    const auto g = f.upper_chord(16);
    EXPECT_LE(g.size(), 16u);
    EXPECT_EQ(g.domain_lo(), f.domain_lo());
    EXPECT_EQ(g.domain_hi(), f.domain_hi());
    EXPECT_DOUBLE_EQ(g.eval(f.domain_lo()), f.eval(f.domain_lo()));
    EXPECT_DOUBLE_EQ(g.eval(f.domain_hi()), f.eval(f.domain_hi()));
    for (int i = 0; i <= 1000; ++i) {
        const double x = f.domain_lo() + (f.domain_hi() - f.domain_lo()) * i / 1000.0;
        EXPECT_GE(g.eval(x), f.eval(x) - 1e-12);
    }
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GE(g.pieces()[i].slope, g.pieces()[i - 1].slope);
    EXPECT_EQ(f.upper_chord(500).size(), f.size());
}

TEST(Stateless, CompleteMarketMatchesRiskNeutralExpectation) {
    AssetMenu menu;
    menu.call = false;
    RiskSpec r;
    r.super_replication = true;
    for (int t = 1; t <= 6; ++t) {
        LatticeParams p;
        p.periods = t;
        p.subperiods = 1;
        const auto tree = build_index_tree(p);
        // unfold all 2^t paths under the martingale measure
        const double h = p.period_years();
        const double u = std::exp(p.sigma * std::sqrt(h));
        const double d = 1.0 / u;
        const double q = (std::exp(p.r * h) - d) / (u - d);
        double expectation = 0.0;
        for (unsigned path = 0; path < (1u << t); ++path) {
            const int ups = std::popcount(path);
            const double s = std::pow(u, ups) * std::pow(d, t - ups);
            expectation += std::pow(q, ups) * std::pow(1.0 - q, t - ups) * gic_payoff(s, t * h, GicContract{});
        }
        const double oracle = std::exp(-p.r * t * h) * expectation;
        EXPECT_NEAR(sweep_price(tree, r, menu), oracle, 1e-9) << "T=" << t;
    }
}

TEST(Stateless, HighRetentionApproachesSuperReplication) {
    const auto tree = build_index_tree(small(2, 2));
    RiskSpec r;
    r.retention_c = 0.999;
    const double super = super_replication_sweep(tree, GicContract{}, AssetMenu{}).price();
    EXPECT_NEAR(sweep_price(tree, r), super, 1e-6);
}

TEST(Stateless, PriceIncreasesWithRetentionAndStaysBelowSuperReplication) {
    const auto tree = build_index_tree(small(4, 4));
    const double super = super_replication_sweep(tree, GicContract{}, AssetMenu{}).price();
    double last = -1.0;
    for (double c : {0.2, 0.4, 0.6, 0.8, 0.95}) {
        RiskSpec r;
        r.retention_c = c;
        const double f = sweep_price(tree, r);
        EXPECT_GE(f, last - 1e-12) << "c=" << c;
        EXPECT_LE(f, super + 1e-9) << "c=" << c;
        last = f;
    }
}

TEST(Stateless, RisklessClaimCostsItsDiscountedValue) {
    const auto tree = build_index_tree(small(3, 3));
    GicContract fixed;
    fixed.cap_zeta = 0.02;
    fixed.floor_g = 0.02;
    RiskSpec r;
    r.retention_c = 0.3;
    const auto& p = tree.params();
    const double years = p.periods * p.period_years();
    const double oracle = std::pow(1.02, years) * std::exp(-p.r * years);
    EXPECT_NEAR(sweep_price(tree, r, AssetMenu{}, fixed), oracle, 1e-10);
}

TEST(Stateless, ReferenceGridCells) {
    struct Cell {
        int t, n;
        double value;
    };
    // initial portfolio values reported for c = 60%, gamma0 = 0, three assets
    const std::vector<Cell> cells{{2, 2, 0.9948}, {2, 4, 1.0045}, {2, 6, 1.0081}, {4, 2, 1.0023},
                                  {4, 4, 1.0109}, {4, 6, 1.0113}, {6, 2, 1.0063}, {6, 4, 1.0135},
                                  {6, 6, 1.0127}, {12, 6, 1.0108}};
    RiskSpec r;
    r.retention_c = 0.6;
    for (const auto& c : cells) {
        const double f = sweep_price(build_index_tree(small(c.t, c.n)), r);
        EXPECT_NEAR(f, c.value, 0.003) << "T=" << c.t << " N=" << c.n;
    }
}

TEST(Stateless, OneSolvePerInnerNode) {
    const auto tree = build_index_tree(small(4, 3));
    RiskSpec r;
    const auto res = backward_sweep(HedgeModel(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r));
    std::size_t inner = 0;
    for (int t = 0; t < tree.periods(); ++t) inner += tree.level(t).size();
    EXPECT_EQ(res.lp_solves, inner);
}

TEST(Stateless, InfeasibleBudgetNamesTheNode) {
    const auto tree = build_index_tree(small(2, 2));
    AssetMenu menu;
    menu.stock = false;
    menu.call = false;
    RiskSpec r;
    r.measure = RiskMeasure::downside;
    r.gamma0 = -0.5;  // expected shortfall below zero is impossible
    try {
        sweep_price(tree, r, menu);
        FAIL() << "expected InfeasibleError";
    } catch (const InfeasibleError& e) {
        EXPECT_NE(std::string(e.what()).find("node (t="), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("downside"), std::string::npos);
    }
}

TEST(Stateless, ValidationErrors) {
    const auto tree = build_index_tree(small(2, 2));
    RiskSpec bad;
    bad.retention_c = 1.0;
    EXPECT_THROW(HedgeModel(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, bad), DomainError);
    RiskSpec capped;
    capped.pathwise_gamma3 = 0.03;
    AlgorithmSpec coherent;
    coherent.variant = Variant::coherent;
    EXPECT_THROW(HedgeModel(tree, GicContract{}, AssetMenu{}, coherent, capped), DomainError);
}

TEST(Pathwise, UncappedStateGivesConstantValueEqualToStatelessPrice) {
    const auto tree = build_index_tree(small(3, 2));
    RiskSpec r;
    r.retention_c = 0.59;
    const double stateless = sweep_price(tree, r);
    r.pathwise_gamma3 = std::numeric_limits<double>::infinity();
    const auto res = backward_sweep(HedgeModel(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r));
    const auto& v0 = res.store.at(tree.root().ref());
    EXPECT_EQ(v0.size(), 1u);
    EXPECT_NEAR(v0.pieces()[0].slope, 0.0, 1e-9);
    EXPECT_NEAR(res.price(), stateless, 1e-9);
}

TEST(Pathwise, StoredValuesAreConvexAndMatchDenseResolves) {
    const auto tree = build_index_tree(small(3, 3));
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = 0.03;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r);
    const auto res = backward_sweep(model);
    for (int t = 0; t <= tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            const auto& v = res.store.at(n.ref());
            for (std::size_t i = 1; i < v.size(); ++i) EXPECT_GE(v.pieces()[i].slope, v.pieces()[i - 1].slope);
            // a large accumulated gain leaves the cap slack
            EXPECT_NEAR(v.pieces().front().slope, 0.0, 1e-9);
        }
    }
    EXPECT_LT(grid_gap(model, res.store), 1e-8);
    RiskSpec plain;
    plain.retention_c = 0.59;
    EXPECT_GE(res.price(), sweep_price(tree, plain) - 1e-9);
}

TEST(Pathwise, BudgetedChildrenStayConsistent) {
    const auto tree = build_index_tree(small(4, 4));
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = 0.03;
    AlgorithmSpec exact_algo;
    AlgorithmSpec tight_algo;
    tight_algo.hyperplane_budget = 3;
    const HedgeModel exact(tree, GicContract{}, AssetMenu{}, exact_algo, r);
    const HedgeModel tight(tree, GicContract{}, AssetMenu{}, tight_algo, r);
    const auto a = backward_sweep(exact);
    const auto b = backward_sweep(tight);
    EXPECT_GT(b.budgeted_nodes, 0u);
    // parents see an upper bound, so the cost can only rise
    EXPECT_GE(b.price(), a.price() - 1e-10);
    for (int t = 1; t < tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            const auto& f = b.store.at(n.ref());
            const auto& g = b.store.bound(n.ref());
            EXPECT_LE(g.size(), 3u);
            for (int i = 0; i <= 20; ++i) {
                const double z = f.domain_lo() + (f.domain_hi() - f.domain_lo()) * i / 20.0;
                EXPECT_GE(g.eval(z), f.eval(z) - 1e-12);
            }
        }
    }
    EXPECT_LT(grid_gap(tight, b.store), 1e-8);
}

TEST(Pathwise, EveryPathRespectsTheCap) {
    const auto tree = build_index_tree(small(2, 2));
    const double gamma3 = 0.03;
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = gamma3;
    const AssetMenu menu = [&] {
        AssetMenu m;
        m.price_calls(tree);
        return m;
    }();
    const auto res = backward_sweep(HedgeModel(tree, GicContract{}, menu, AlgorithmSpec{}, r));
    const double g = tree.params().cash_growth();
    std::size_t paths = 0;
    std::function<void(const Node&, double)> walk = [&](const Node& n, double z) {
        if (tree.is_terminal(n)) {
            ++paths;
            EXPECT_LE(z, gamma3 + 1e-8);
            return;
        }
        const auto& piece = res.policy.at(n.ref()).piece(z);
        const Holdings h = piece.holdings(z);
        const auto kids = tree.children(n.ref());
        for (std::size_t k = 0; k < kids.size(); ++k) {
            const Node& child = tree.node(kids[k].node);
            const double w = accumulation(h, tree, n, child, menu);
            const double next = g * z + piece.required(k, z) - w;
            EXPECT_NEAR(piece.next_state(k, z), next, 1e-9);
            walk(child, next);
        }
    };
    walk(tree.root(), 0.0);
    EXPECT_EQ(paths, 9u);
}

TEST(Pathwise, ThreadsDoNotChangeResults) {
    const auto tree = build_index_tree(small(4, 4));
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = 0.03;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r);
    const auto serial = backward_sweep(model, {1});
    const auto threaded = backward_sweep(model, {4});
    EXPECT_EQ(serial.price(), threaded.price());
    for (int t = 0; t <= tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            const auto& a = serial.store.at(n.ref()).pieces();
            const auto& b = threaded.store.at(n.ref()).pieces();
            ASSERT_EQ(a.size(), b.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                EXPECT_EQ(a[i].z_lo, b[i].z_lo);
                EXPECT_EQ(a[i].slope, b[i].slope);
                EXPECT_EQ(a[i].intercept, b[i].intercept);
            }
        }
    }
}

TEST(Pathwise, CapBelowZeroIsInfeasible) {
    const auto tree = build_index_tree(small(2, 2));
    RiskSpec r;
    r.retention_c = 0.59;
    r.pathwise_gamma3 = -2.0;
    EXPECT_THROW(sweep_price(tree, r), InfeasibleError);
}

TEST(Capital, CoherentValueFallsOneForOneWithCapital) {
    const auto tree = build_index_tree(small(4, 3));
    RiskSpec r;
    r.retention_c = 0.59;
    AlgorithmSpec a;
    a.variant = Variant::coherent;
    const auto res = backward_sweep(HedgeModel(tree, GicContract{}, AssetMenu{}, a, r));
    const auto& v0 = res.store.at(tree.root().ref());
    for (const auto& p : v0.pieces()) {
        if (p.z_hi - p.z_lo > 1e-9) {
            EXPECT_NEAR(p.slope, -1.0, 1e-7);
        }
    }
    EXPECT_NEAR(v0.eval(res.price()), 0.0, 1e-9);
}

TEST(Capital, CoherentWithOverlayPriceInRange) {
    const auto tree = build_index_tree(LatticeParams{});
    RiskSpec r;
    r.retention_c = 0.59;
    AlgorithmSpec a;
    a.variant = Variant::coherent;
    RiskSpec overlay;
    overlay.retention_c = 0.59;
    a.overlay = overlay;
    const double f = backward_sweep(HedgeModel(tree, GicContract{}, AssetMenu{}, a, r), {2}).price();
    EXPECT_GE(f, 1.01);
    EXPECT_LE(f, 1.05);
}

TEST(Capital, StochasticProgramTightensEpigraph) {
    const auto tree = build_index_tree(small(3, 2));
    RiskSpec r;
    r.retention_c = 0.59;
    AlgorithmSpec a;
    a.variant = Variant::stochastic_program;
    a.lambda_weight = 0.5;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, a, r);
    const auto res = backward_sweep(model);
    const NodeLp m = model.build(tree.root(), res.store);
    const LpSolution s = solve(m.lp, res.price());
    ASSERT_TRUE(s.optimal());
    for (std::size_t k = 0; k < m.kids.size(); ++k) {
        if (m.theta_col[k] == NodeLp::none) continue;
        const auto& v = res.store.bound(m.kids[k].node);
        EXPECT_NEAR(s.x[m.theta_col[k]], v.eval(s.x[m.next_col[k]]), 1e-9);
    }
    EXPECT_LT(grid_gap(model, res.store), 1e-8);
}

TEST(Capital, BarrierKeepsChildRiskBelowThreshold) {
    const auto tree = build_index_tree(small(3, 2));
    RiskSpec r;
    r.retention_c = 0.59;
    AlgorithmSpec a;
    a.variant = Variant::barrier;
    a.barrier_gamma0 = 0.0;
    const HedgeModel model(tree, GicContract{}, AssetMenu{}, a, r);
    const auto res = backward_sweep(model);
    const NodeLp m = model.build(tree.root(), res.store);
    const LpSolution s = solve(m.lp, res.price());
    ASSERT_TRUE(s.optimal());
    for (std::size_t k = 0; k < m.kids.size(); ++k) {
        if (m.next_col[k] == NodeLp::none) continue;
        EXPECT_LE(res.store.bound(m.kids[k].node).eval(s.x[m.next_col[k]]), 1e-9);
    }
    EXPECT_TRUE(std::isfinite(res.price()));
}

TEST(Output, PolicyCsvHasOneRowPerPiece) {
    const auto tree = build_index_tree(small(2, 2));
    RiskSpec r;
    r.pathwise_gamma3 = 0.03;
    const auto res = backward_sweep(HedgeModel(tree, GicContract{}, AssetMenu{}, AlgorithmSpec{}, r));
    std::ostringstream out;
    write_policy_csv(out, tree, res.policy);
    std::size_t pieces = 0;
    for (int t = 0; t < tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) pieces += res.policy.at(n.ref()).pieces.size();
    }
    const std::string text = out.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), pieces + 1);
    EXPECT_EQ(text.substr(0, text.find('\n')), "period,level,survival,z_lo,z_hi,stock,cash,option,F");

    std::ostringstream cg;
    write_costtogo_csv(cg, tree, res.store);
    EXPECT_EQ(cg.str().substr(0, cg.str().find('\n')), "period,level,survival,slope,intercept");
}
