#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "riskctl/detail/parallel.hpp"
#include "riskctl/detail/text.hpp"
#include "riskctl/errors.hpp"
#include "riskctl/lattice.hpp"
#include "riskctl/market.hpp"
#include "riskctl/parametric.hpp"
#include "riskctl/pwl.hpp"
#include "riskctl/risk_blocks.hpp"
#include "riskctl/simplex.hpp"

namespace riskctl {

enum class RiskMeasure : std::uint8_t { cvar, downside, cvar_plus_norm };

inline const char* to_string(RiskMeasure m) {
    switch (m) {
        case RiskMeasure::cvar: return "cvar";
        case RiskMeasure::downside: return "downside";
        case RiskMeasure::cvar_plus_norm: return "cvar_plus_norm";
    }
    return "?";
}

/// Local risk constraint attached to every transition.
struct RiskSpec {
    RiskMeasure measure = RiskMeasure::cvar;
    double retention_c = 0.6;
    double gamma0 = 0.0;
    NormSpec norm;                          ///< used by cvar_plus_norm
    std::optional<double> pathwise_gamma3;  ///< cap on accumulated loss; may be +inf
    bool super_replication = false;         ///< W >= G on every child instead of a risk block

    void validate() const {
        if (!super_replication && !(retention_c >= 0.0 && retention_c < 1.0)) {
            throw DomainError("retention level c must lie in [0,1)");
        }
        if (!std::isfinite(gamma0)) throw DomainError("gamma0 must be finite");
        if (measure == RiskMeasure::cvar_plus_norm) norm.validate();
        if (pathwise_gamma3 && std::isnan(*pathwise_gamma3)) throw DomainError("gamma3 is NaN");
    }
};

enum class Variant : std::uint8_t { constraint, stochastic_program, barrier, coherent };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::constraint: return "constraint";
        case Variant::stochastic_program: return "stochastic_program";
        case Variant::barrier: return "barrier";
        case Variant::coherent: return "coherent";
    }
    return "?";
}

struct AlgorithmSpec {
    Variant variant = Variant::constraint;
    double lambda_weight = 1.0;      ///< weight of the expected future risk (stochastic_program)
    double barrier_gamma0 = 0.0;     ///< cap on every child's cost-to-go (barrier)
    std::optional<RiskSpec> overlay; ///< extra local constraint for the capital variants
    double state_span = 1.0;         ///< accumulated-loss domain starts at -state_span (or that far below gamma3)
    double capital_multiple = 1.5;   ///< capital domain ends at multiple * super-replication price
    std::size_t hyperplane_budget = 64;  ///< supporting lines of a child's cost-to-go seen by its parent

    void validate() const {
        if (!(lambda_weight >= 0.0) || !std::isfinite(lambda_weight)) throw DomainError("lambda must be >= 0");
        if (std::isnan(barrier_gamma0)) throw DomainError("barrier gamma0 is NaN");
        if (!(state_span > 0.0) || !std::isfinite(state_span)) throw DomainError("state span must be positive");
        if (!(capital_multiple >= 1.0) || !std::isfinite(capital_multiple)) {
            throw DomainError("capital multiple must be >= 1");
        }
        if (hyperplane_budget == 0) throw DomainError("hyperplane budget must be positive");
        if (overlay) overlay->validate();
    }
};

/// Meaning of the scalar state z carried by a cost-to-go function.
enum class StateKind : std::uint8_t { none, accumulated_loss, capital };

inline const char* to_string(StateKind s) {
    switch (s) {
        case StateKind::none: return "none";
        case StateKind::accumulated_loss: return "accumulated_loss";
        case StateKind::capital: return "capital";
    }
    return "?";
}

/// Per-node value functions. Stateless entries are constants on [C, C].
class CostToGoStore {
public:
    CostToGoStore() = default;
    CostToGoStore(const EventTree& tree, StateKind state, std::size_t budget = 64) : state_(state), budget_(budget) {
        values_.resize(static_cast<std::size_t>(tree.periods()) + 1);
        bounds_.resize(values_.size());
        caps_.resize(values_.size());
        for (int t = 0; t <= tree.periods(); ++t) {
            values_[static_cast<std::size_t>(t)].resize(tree.level(t).size());
            bounds_[static_cast<std::size_t>(t)].resize(tree.level(t).size());
            caps_[static_cast<std::size_t>(t)].assign(tree.level(t).size(), 0.0);
        }
    }

    [[nodiscard]] StateKind state() const { return state_; }
    [[nodiscard]] const PiecewiseLinearValue& at(NodeRef r) const { return values_.at(r.period).at(r.slot); }
    void set(NodeRef r, PiecewiseLinearValue v) {
        bounds_.at(r.period).at(r.slot) = v.upper_chord(budget_);
        values_.at(r.period).at(r.slot) = std::move(v);
    }

    /// What a parent LP sees: the stored function itself, or its upper chord
    /// approximation when it has more pieces than the budget.
    [[nodiscard]] const PiecewiseLinearValue& bound(NodeRef r) const { return bounds_.at(r.period).at(r.slot); }
    [[nodiscard]] bool budgeted(NodeRef r) const { return bound(r).size() < at(r).size(); }

    /// Stateless continuation value C.
    [[nodiscard]] double continuation(NodeRef r) const { return at(r).eval(at(r).domain_lo()); }

    /// Super-replication price of the residual claim (capital variants only).
    [[nodiscard]] double domain_cap(NodeRef r) const { return caps_.at(r.period).at(r.slot); }
    void set_domain_cap(NodeRef r, double v) { caps_.at(r.period).at(r.slot) = v; }

    [[nodiscard]] int periods() const { return static_cast<int>(values_.size()) - 1; }
    [[nodiscard]] std::size_t level_size(int t) const { return values_.at(static_cast<std::size_t>(t)).size(); }

private:
    StateKind state_ = StateKind::none;
    std::size_t budget_ = 64;
    std::vector<std::vector<PiecewiseLinearValue>> values_;
    std::vector<std::vector<PiecewiseLinearValue>> bounds_;
    std::vector<std::vector<double>> caps_;
};

/// Decision on one state interval. Everything is affine in z inside the piece,
/// so values at the two ends determine it.
struct PolicyPiece {
    double z_lo = 0.0;
    double z_hi = 0.0;
    Holdings at_lo;
    Holdings at_hi;
    std::vector<double> required_lo;  ///< planned G for each child (children() order)
    std::vector<double> required_hi;
    std::vector<double> next_lo;      ///< child state; NaN where the variant carries none
    std::vector<double> next_hi;

    [[nodiscard]] double weight(double z) const {
        return z_hi > z_lo ? std::clamp((z - z_lo) / (z_hi - z_lo), 0.0, 1.0) : 0.0;
    }
    [[nodiscard]] Holdings holdings(double z) const {
        const double w = weight(z);
        return {(1 - w) * at_lo.stock + w * at_hi.stock, (1 - w) * at_lo.cash + w * at_hi.cash,
                (1 - w) * at_lo.option + w * at_hi.option};
    }
    [[nodiscard]] double required(std::size_t k, double z) const {
        const double w = weight(z);
        return (1 - w) * required_lo[k] + w * required_hi[k];
    }
    [[nodiscard]] double next_state(std::size_t k, double z) const {
        const double w = weight(z);
        return (1 - w) * next_lo[k] + w * next_hi[k];
    }
};

struct NodePolicy {
    std::vector<PolicyPiece> pieces;

    [[nodiscard]] bool empty() const { return pieces.empty(); }
    [[nodiscard]] double z_lo() const { return pieces.front().z_lo; }
    [[nodiscard]] double z_hi() const { return pieces.back().z_hi; }
    [[nodiscard]] const PolicyPiece& piece(double z) const {
        for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
            if (z <= pieces[i].z_hi) return pieces[i];
        }
        return pieces.back();
    }
};

struct HedgePolicy {
    StateKind state = StateKind::none;
    double price = 0.0;          ///< F at the root
    double initial_state = 0.0;  ///< z at the root (0 for accumulated loss, the price for capital)
    std::vector<std::vector<NodePolicy>> nodes;

    [[nodiscard]] const NodePolicy& at(NodeRef r) const { return nodes.at(r.period).at(r.slot); }
};

/// One node's LP with the column bookkeeping needed to read a policy back.
struct NodeLp {
    static constexpr std::size_t none = static_cast<std::size_t>(-1);

    LpProblem lp;
    bool parametric = false;
    std::size_t stock = none;
    std::size_t cash = none;
    std::size_t option = none;
    std::vector<Child> kids;
    std::vector<double> required_const;    ///< used where required_col is none
    std::vector<std::size_t> required_col;
    std::vector<std::size_t> next_col;     ///< child state column or none
    std::vector<std::size_t> theta_col;    ///< epigraph variable of the child's cost-to-go
    std::vector<std::size_t> loss_row;     ///< CVaR tail row of the objective block, or none

    [[nodiscard]] Holdings holdings(const std::vector<double>& x) const {
        Holdings h;
        if (stock != none) h.stock = x[stock];
        if (cash != none) h.cash = x[cash];
        if (option != none) h.option = x[option];
        return h;
    }
    [[nodiscard]] double required(std::size_t k, const std::vector<double>& x) const {
        return required_col[k] == none ? required_const[k] : x[required_col[k]];
    }
    [[nodiscard]] double next_state(std::size_t k, const std::vector<double>& x) const {
        return next_col[k] == none ? std::numeric_limits<double>::quiet_NaN() : x[next_col[k]];
    }
};

inline std::string node_label(const Node& n) {
    std::string s = "node (t=" + std::to_string(n.period) + ", level=" + std::to_string(n.level);
    if (n.survival != Survival::none) s += std::string(", ") + to_string(n.survival);
    return s + ")";
}

/// Builds node LPs for one algorithm on one tree. Immutable after construction.
class HedgeModel {
public:
    HedgeModel(const EventTree& tree, Product product, AssetMenu menu, AlgorithmSpec algo, RiskSpec risk)
        : tree_(tree), product_(std::move(product)), menu_(std::move(menu)), algo_(std::move(algo)),
          risk_(std::move(risk)) {
        algo_.validate();
        risk_.validate();
        std::visit([](const auto& c) { c.validate(); }, product_);
        if (menu_.call && !menu_.priced()) menu_.price_calls(tree_);
        if (algo_.variant != Variant::constraint && risk_.super_replication) {
            throw DomainError("super-replication applies to the constraint variant only");
        }
        if (algo_.variant != Variant::constraint && risk_.pathwise_gamma3) {
            throw DomainError("the pathwise cap applies to the constraint variant only");
        }
    }

    [[nodiscard]] const EventTree& tree() const { return tree_; }
    [[nodiscard]] const Product& product() const { return product_; }
    [[nodiscard]] const AssetMenu& menu() const { return menu_; }
    [[nodiscard]] const AlgorithmSpec& algorithm() const { return algo_; }
    [[nodiscard]] const RiskSpec& risk() const { return risk_; }

    [[nodiscard]] StateKind state() const {
        if (algo_.variant != Variant::constraint) return StateKind::capital;
        return risk_.pathwise_gamma3 ? StateKind::accumulated_loss : StateKind::none;
    }

    /// Discount prefactor applied to the objective (stochastic_program and coherent only).
    [[nodiscard]] double objective_scale() const {
        const bool discounted = algo_.variant == Variant::stochastic_program || algo_.variant == Variant::coherent;
        return discounted ? 1.0 / tree_.params().cash_growth() : 1.0;
    }

    [[nodiscard]] double payoff(const Node& n) const { return payoff_at(product_, tree_, n); }

    /// Requested state interval for a node's value function.
    [[nodiscard]] std::pair<double, double> state_range(const Node& n, const CostToGoStore& store) const {
        switch (state()) {
            case StateKind::none: return {0.0, 0.0};
            case StateKind::accumulated_loss: {
                const double g3 = *risk_.pathwise_gamma3;
                if (!std::isfinite(g3)) return {-algo_.state_span, algo_.state_span};
                return {std::min(-algo_.state_span, g3 - algo_.state_span), g3};
            }
            case StateKind::capital: return {0.0, algo_.capital_multiple * store.domain_cap(n.ref())};
        }
        return {0.0, 0.0};
    }

    /// Value function stored at a terminal node.
    [[nodiscard]] PiecewiseLinearValue terminal_value(const Node& n, const CostToGoStore& store) const {
        const double p = payoff(n);
        const auto [lo, hi] = state_range(n, store);
        switch (state()) {
            case StateKind::none: return PiecewiseLinearValue::constant(p, p, p);
            case StateKind::accumulated_loss: return PiecewiseLinearValue::constant(lo, hi, p);
            case StateKind::capital: return PiecewiseLinearValue::constant(lo, hi, 0.0);
        }
        return {};
    }

    /// The LP solved at a non-terminal node, given the children's stored values.
    [[nodiscard]] NodeLp build(const Node& n, const CostToGoStore& store) const {
        NodeLp m;
        m.kids = tree_.children(n.ref());
        if (m.kids.empty()) throw DomainError(node_label(n) + " is terminal and has no hedging LP");
        add_holdings(m);
        switch (state()) {
            case StateKind::none: build_stateless(n, store, m); break;
            case StateKind::accumulated_loss: build_pathwise(n, store, m); break;
            case StateKind::capital: build_capital(n, store, m); break;
        }
        if (m.parametric) {
            const auto [lo, hi] = state_range(n, store);
            m.lp.set_param_range(lo, hi);
        }
        return m;
    }

private:
    void add_holdings(NodeLp& m) const {
        const double cost = state() == StateKind::capital ? 0.0 : 1.0;
        const double inf = std::numeric_limits<double>::infinity();
        if (menu_.stock) m.stock = m.lp.add_free_variable("stock", cost);
        m.cash = m.lp.add_free_variable("cash", cost);
        if (menu_.call) m.option = m.lp.add_variable("option", menu_.option_long_only ? 0.0 : -inf, inf, cost);
    }

    // W as terms over the holdings columns
    [[nodiscard]] LpTerms wealth_terms(const NodeLp& m, const Node& parent, const Node& child) const {
        const auto f = accumulation_factors(tree_, parent, child, menu_);
        LpTerms w;
        if (m.stock != NodeLp::none) w.emplace_back(m.stock, f.stock);
        w.emplace_back(m.cash, f.cash);
        if (m.option != NodeLp::none) w.emplace_back(m.option, f.option);
        return w;
    }

    [[nodiscard]] std::vector<double> probs(const NodeLp& m) const {
        std::vector<double> p;
        for (const auto& c : m.kids) p.push_back(c.prob);
        return p;
    }

    // L = G - W with G = required_const or the required column
    [[nodiscard]] LinearExpr loss_expr(const NodeLp& m, std::size_t k, const LpTerms& w) const {
        LinearExpr e;
        for (const auto& [j, a] : w) e.terms.emplace_back(j, -a);
        if (m.required_col[k] == NodeLp::none) {
            e.constant = m.required_const[k];
        } else {
            e.terms.emplace_back(m.required_col[k], 1.0);
        }
        return e;
    }

    static void add_local_risk(LpProblem& lp, const std::vector<LinearExpr>& losses, const std::vector<double>& p,
                               const RiskSpec& r, const std::string& prefix) {
        if (r.super_replication) {
            for (std::size_t k = 0; k < losses.size(); ++k) {
                // -L >= 0, i.e. W >= G
                detail::excess_row(lp, prefix + ".super" + std::to_string(k), losses[k], {});
            }
            return;
        }
        switch (r.measure) {
            case RiskMeasure::cvar: {
                const auto b = cvar_block(lp, losses, p, r.retention_c, prefix + ".cvar");
                add_budget_row(lp, prefix + ".cvar.budget", b.value, r.gamma0);
                break;
            }
            case RiskMeasure::downside: {
                const auto b = downside_block(lp, losses, p, prefix + ".down");
                add_budget_row(lp, prefix + ".down.budget", b.value, r.gamma0);
                break;
            }
            case RiskMeasure::cvar_plus_norm: {
                const auto b = cvar_block(lp, losses, p, r.retention_c, prefix + ".cvar");
                add_budget_row(lp, prefix + ".cvar.budget", b.value, r.gamma0);
                norm_block(lp, b.excess, r.norm, prefix + ".norm");
                break;
            }
        }
    }

    void init_children(NodeLp& m) const {
        const std::size_t n = m.kids.size();
        m.required_const.assign(n, 0.0);
        m.required_col.assign(n, NodeLp::none);
        m.next_col.assign(n, NodeLp::none);
        m.theta_col.assign(n, NodeLp::none);
        m.loss_row.assign(n, NodeLp::none);
    }

    void build_stateless(const Node& n, const CostToGoStore& store, NodeLp& m) const {
        init_children(m);
        std::vector<LinearExpr> losses;
        for (std::size_t k = 0; k < m.kids.size(); ++k) {
            const Node& child = tree_.node(m.kids[k].node);
            m.required_const[k] = tree_.is_terminal(child) ? payoff(child) : store.continuation(child.ref());
            losses.push_back(loss_expr(m, k, wealth_terms(m, n, child)));
        }
        add_local_risk(m.lp, losses, probs(m), risk_, "local");
    }

    void build_pathwise(const Node& n, const CostToGoStore& store, NodeLp& m) const {
        init_children(m);
        m.parametric = true;
        const double g = tree_.params().cash_growth();
        const double g3 = *risk_.pathwise_gamma3;
        const bool capped = std::isfinite(g3);
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<LinearExpr> losses;
        for (std::size_t k = 0; k < m.kids.size(); ++k) {
            const Node& child = tree_.node(m.kids[k].node);
            const std::string tag = std::to_string(k);
            const LpTerms w = wealth_terms(m, n, child);
            if (tree_.is_terminal(child)) {
                // z_k = g z + P - W <= gamma3
                const std::size_t zk = m.lp.add_variable("z" + tag, -inf, capped ? g3 : inf);
                m.next_col[k] = zk;
                m.required_const[k] = payoff(child);
                LpTerms row = w;
                row.emplace_back(zk, 1.0);
                m.lp.add_row("state" + tag, std::move(row), Relation::eq, m.required_const[k], g);
            } else {
                const auto& v = store.bound(child.ref());
                const std::size_t vk = m.lp.add_free_variable("v" + tag);
                // no lower bound: V is flat at the left end, so its first plane extends it
                const std::size_t zk = capped ? m.lp.add_variable("z" + tag, -inf, v.domain_hi())
                                              : m.lp.add_free_variable("z" + tag);
                m.required_col[k] = vk;
                m.next_col[k] = zk;
                m.theta_col[k] = vk;
                LpTerms row = w;
                row.emplace_back(zk, 1.0);
                row.emplace_back(vk, -1.0);
                m.lp.add_row("state" + tag, std::move(row), Relation::eq, 0.0, g);
                add_epigraph(m.lp, "epi" + tag, vk, zk, v);
            }
            losses.push_back(loss_expr(m, k, w));
        }
        add_local_risk(m.lp, losses, probs(m), risk_, "local");
    }

    // theta - s z >= i for every supporting line of V
    static void add_epigraph(LpProblem& lp, const std::string& name, std::size_t theta, std::size_t z,
                             const PiecewiseLinearValue& v) {
        const auto planes = v.hyperplanes();
        for (std::size_t j = 0; j < planes.size(); ++j) {
            LpTerms row{{theta, 1.0}};
            if (planes[j].slope != 0.0) row.emplace_back(z, -planes[j].slope);
            lp.add_row(name + "_" + std::to_string(j), std::move(row), Relation::ge, planes[j].intercept);
        }
    }

    void build_capital(const Node& n, const CostToGoStore& store, NodeLp& m) const {
        init_children(m);
        m.parametric = true;
        LpTerms budget;
        for (std::size_t j : {m.stock, m.cash, m.option}) {
            if (j != NodeLp::none) budget.emplace_back(j, 1.0);
        }
        m.lp.add_row("budget", std::move(budget), Relation::eq, 0.0, 1.0);

        const bool with_theta = algo_.variant == Variant::stochastic_program || algo_.variant == Variant::coherent;
        std::vector<LinearExpr> losses;
        std::vector<LinearExpr> plain;
        for (std::size_t k = 0; k < m.kids.size(); ++k) {
            const Node& child = tree_.node(m.kids[k].node);
            const std::string tag = std::to_string(k);
            const LpTerms w = wealth_terms(m, n, child);
            if (tree_.is_terminal(child)) {
                m.required_const[k] = payoff(child);
            } else {
                const auto& v = store.bound(child.ref());
                const std::size_t zk = m.lp.add_variable("z" + tag, v.domain_lo(), v.domain_hi());
                m.required_col[k] = zk;
                m.next_col[k] = zk;
                if (with_theta) {
                    const std::size_t th = m.lp.add_free_variable("theta" + tag);
                    m.theta_col[k] = th;
                    add_epigraph(m.lp, "epi" + tag, th, zk, v);
                } else {
                    // barrier: every supporting line at z_k stays below gamma0
                    const auto planes = v.hyperplanes();
                    for (std::size_t j = 0; j < planes.size(); ++j) {
                        LpTerms row;
                        if (planes[j].slope != 0.0) row.emplace_back(zk, planes[j].slope);
                        m.lp.add_row("barrier" + tag + "_" + std::to_string(j), std::move(row), Relation::le,
                                     algo_.barrier_gamma0 - planes[j].intercept);
                    }
                }
            }
            LinearExpr l = loss_expr(m, k, w);
            plain.push_back(l);
            if (algo_.variant == Variant::coherent && m.theta_col[k] != NodeLp::none) {
                l.terms.emplace_back(m.theta_col[k], 1.0);
            }
            losses.push_back(std::move(l));
        }
        const auto p = probs(m);
        const std::size_t first_row = m.lp.num_rows();
        const auto block = cvar_block(m.lp, losses, p, risk_.retention_c, "risk");
        for (std::size_t k = 0; k < m.kids.size(); ++k) m.loss_row[k] = first_row + k;
        add_to_objective(m.lp, block.value);
        if (algo_.variant == Variant::stochastic_program) {
            for (std::size_t k = 0; k < m.kids.size(); ++k) {
                if (m.theta_col[k] != NodeLp::none) {
                    m.lp.set_cost(m.theta_col[k], m.lp.variables()[m.theta_col[k]].cost + algo_.lambda_weight * p[k]);
                }
            }
        }
        if (algo_.overlay) add_local_risk(m.lp, plain, p, *algo_.overlay, "overlay");
        m.lp.scale_objective(objective_scale());
    }

    const EventTree& tree_;
    Product product_;
    AssetMenu menu_;
    AlgorithmSpec algo_;
    RiskSpec risk_;
};

struct SweepOptions {
    unsigned threads = 1;
};

struct SweepResult {
    CostToGoStore store;
    HedgePolicy policy;
    std::size_t lp_solves = 0;
    std::size_t max_pieces = 0;
    std::size_t budgeted_nodes = 0;  ///< nodes whose parent saw an upper approximation

    [[nodiscard]] double price() const { return policy.price; }
};

namespace detail {

inline PolicyPiece policy_piece(const NodeLp& m, double z_lo, double z_hi, const std::vector<double>& x_lo,
                                const std::vector<double>& x_hi) {
    PolicyPiece p;
    p.z_lo = z_lo;
    p.z_hi = z_hi;
    p.at_lo = m.holdings(x_lo);
    p.at_hi = m.holdings(x_hi);
    for (std::size_t k = 0; k < m.kids.size(); ++k) {
        p.required_lo.push_back(m.required(k, x_lo));
        p.required_hi.push_back(m.required(k, x_hi));
        p.next_lo.push_back(m.next_state(k, x_lo));
        p.next_hi.push_back(m.next_state(k, x_hi));
    }
    return p;
}

struct NodeOutcome {
    PiecewiseLinearValue value;
    NodePolicy policy;
    std::size_t solves = 0;
};

inline std::string risk_label(const RiskSpec& r) {
    if (r.super_replication) return "super-replication";
    return std::string(to_string(r.measure)) + " c=" + format_double(r.retention_c) +
           " gamma0=" + format_double(r.gamma0) +
           (r.pathwise_gamma3 ? " gamma3=" + format_double(*r.pathwise_gamma3) : std::string());
}

inline NodeOutcome solve_node(const HedgeModel& model, const Node& n, const CostToGoStore& store) {
    const NodeLp m = model.build(n, store);
    NodeOutcome out;
    try {
        if (!m.parametric) {
            const LpSolution s = solve(m.lp);
            out.solves = 1;
            if (s.status == LpStatus::infeasible) throw InfeasibleError("local risk constraint cannot be met");
            if (s.status == LpStatus::unbounded) throw NumericalError("node LP unbounded");
            out.value = PiecewiseLinearValue::constant(s.objective, s.objective, s.objective);
            out.policy.pieces.push_back(policy_piece(m, s.objective, s.objective, s.x, s.x));
            return out;
        }
        const ParametricResult r = solve_parametric_rhs(m.lp);
        out.solves = r.solves + 2;
        out.value = r.value;
        for (const auto& pc : r.pieces) out.policy.pieces.push_back(policy_piece(m, pc.z_lo, pc.z_hi, pc.x_lo, pc.x_hi));
        return out;
    } catch (const InfeasibleError& e) {
        throw InfeasibleError(node_label(n) + ": " + e.what() + " [" + risk_label(model.risk()) + "]");
    } catch (const NumericalError& e) {
        throw NumericalError(node_label(n) + ": " + e.what());
    }
}

}  // namespace detail

/// Super-replication price of the residual claim at every node (W >= G on all
/// children, swept backward). Returned as a stateless store.
inline SweepResult super_replication_sweep(const EventTree& tree, const Product& product, const AssetMenu& menu,
                                           const SweepOptions& opt = {});

/// Backward dynamic program over the tree. Levels are processed from T-1 down
/// to 0; nodes of a level run concurrently and only read the level below.
inline SweepResult backward_sweep(const HedgeModel& model, const SweepOptions& opt = {}) {
    const EventTree& tree = model.tree();
    SweepResult res;
    res.store = CostToGoStore(tree, model.state(), model.algorithm().hyperplane_budget);
    if (model.state() == StateKind::capital) {
        const SweepResult sr = super_replication_sweep(tree, model.product(), model.menu(), opt);
        res.lp_solves += sr.lp_solves;
        for (int t = 0; t <= tree.periods(); ++t) {
            for (const Node& n : tree.level(t)) res.store.set_domain_cap(n.ref(), sr.store.continuation(n.ref()));
        }
    }
    res.policy.state = model.state();
    res.policy.nodes.resize(static_cast<std::size_t>(tree.periods()) + 1);
    for (int t = 0; t <= tree.periods(); ++t) res.policy.nodes[static_cast<std::size_t>(t)].resize(tree.level(t).size());

    for (const Node& n : tree.level(tree.periods())) res.store.set(n.ref(), model.terminal_value(n, res.store));
    for (int t = tree.periods() - 1; t >= 0; --t) {
        const auto nodes = tree.level(t);
        std::vector<detail::NodeOutcome> out(nodes.size());
        detail::parallel_for(nodes.size(), opt.threads, [&](std::size_t i) {
            const Node& n = nodes[i];
            out[i] = tree.is_terminal(n) ? detail::NodeOutcome{model.terminal_value(n, res.store), {}, 0}
                                         : detail::solve_node(model, n, res.store);
        });
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            res.lp_solves += out[i].solves;
            res.max_pieces = std::max(res.max_pieces, out[i].value.size());
            res.store.set(nodes[i].ref(), std::move(out[i].value));
            if (res.store.budgeted(nodes[i].ref())) ++res.budgeted_nodes;
            res.policy.nodes[static_cast<std::size_t>(t)][i] = std::move(out[i].policy);
        }
    }

    const auto& v0 = res.store.at(tree.root().ref());
    switch (model.state()) {
        case StateKind::none:
            res.policy.price = v0.eval(v0.domain_lo());
            res.policy.initial_state = std::numeric_limits<double>::quiet_NaN();
            break;
        case StateKind::accumulated_loss:
            if (!v0.contains(0.0, 0.0)) {
                throw InfeasibleError("root cost-to-go domain [" + detail::format_double(v0.domain_lo()) + ", " +
                                      detail::format_double(v0.domain_hi()) +
                                      "] excludes zero accumulated loss; gamma3 too tight");
            }
            res.policy.price = v0.eval(0.0);
            res.policy.initial_state = 0.0;
            break;
        case StateKind::capital:
            res.policy.price = v0.min_root(0.0);
            res.policy.initial_state = res.policy.price;
            break;
    }
    return res;
}

inline SweepResult super_replication_sweep(const EventTree& tree, const Product& product, const AssetMenu& menu,
                                           const SweepOptions& opt) {
    RiskSpec r;
    r.super_replication = true;
    return backward_sweep(HedgeModel(tree, product, menu, AlgorithmSpec{}, r), opt);
}

/// Smallest z with V0(z) <= level.
inline double price_from_value(const PiecewiseLinearValue& v0, double acceptance_level = 0.0) {
    return v0.min_root(acceptance_level);
}

/// policy.csv: one row per state piece; holdings are reported at the piece
/// midpoint and F is their total.
inline void write_policy_csv(std::ostream& out, const EventTree& tree, const HedgePolicy& policy) {
    using detail::format_double;
    out << "period,level,survival,z_lo,z_hi,stock,cash,option,F\n";
    for (int t = 0; t <= tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            for (const auto& pc : policy.at(n.ref()).pieces) {
                const Holdings h = pc.holdings(0.5 * (pc.z_lo + pc.z_hi));
                out << t << ',' << n.level << ',' << to_string(n.survival) << ',' << format_double(pc.z_lo) << ','
                    << format_double(pc.z_hi) << ',' << format_double(h.stock) << ',' << format_double(h.cash) << ','
                    << format_double(h.option) << ',' << format_double(h.total()) << '\n';
            }
        }
    }
}

/// costtogo.csv: supporting lines of every stored value function.
inline void write_costtogo_csv(std::ostream& out, const EventTree& tree, const CostToGoStore& store) {
    using detail::format_double;
    out << "period,level,survival,slope,intercept\n";
    for (int t = 0; t <= tree.periods(); ++t) {
        for (const Node& n : tree.level(t)) {
            for (const auto& pl : store.at(n.ref()).hyperplanes()) {
                out << t << ',' << n.level << ',' << to_string(n.survival) << ',' << format_double(pl.slope) << ','
                    << format_double(pl.intercept) << '\n';
            }
        }
    }
}

}  // namespace riskctl
