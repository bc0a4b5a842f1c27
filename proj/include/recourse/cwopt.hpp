#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "recourse/actions.hpp"
#include "recourse/autodiff.hpp"
#include "recourse/common.hpp"
#include "recourse/model.hpp"

namespace recourse {

struct AdamConfig {
    double lr{0.01};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

struct CWConfig {
    double c_init{1e5};
    int t_init{100};
    double c_min{1e-5};
    double c_max{1e10};
    int max_iters{10000};
    int check_interval{100};     // convergence check cadence
    double min_decrease{1e-4};   // required drop of the hinge per check
    AdamConfig adam;
    uint64_t seed{0};
    bool adaptive{true};         // disable to pin c for experiments

    void validate() const {
        if (!(c_init > 0) || !(c_min > 0) || !(c_max > 0) || c_init < c_min ||
            c_init > c_max)
            throw Error("CWConfig: c_init must lie within [c_min, c_max], all positive");
        if (t_init < 1 || max_iters < 1 || check_interval < 1)
            throw Error("CWConfig: iteration counts must be positive");
        if (!(min_decrease > 0) || !(adam.lr > 0))
            throw Error("CWConfig: min_decrease and adam.lr must be positive");
    }
};

// ---------------------------------------------------------------------------
// Adaptive schedule for the classification weight c, checked every t steps.
// ---------------------------------------------------------------------------

struct ScheduleState {
    double c{0.0};
    int t{0};
    double h_now{0.0};
    bool ever_reached_boundary{false};
};

struct ScheduleResult {
    double c{0.0};
    int t{0};
};

/// The three-case update: on the boundary (h = 0) back off c and slow the
/// cadence; still in the 0-region, push c harder, and if the boundary was
/// ever reached, also speed the cadence back up. c stays clamped, t >= 1.
inline ScheduleResult update_schedule(const ScheduleState& s, double c_min,
                                      double c_max) {
    ScheduleResult r;
    if (s.h_now == 0.0) {
        r.c = s.c / 10.0;
        r.t = s.t * 2;
    } else if (!s.ever_reached_boundary) {
        r.c = s.c * 2.0;
        r.t = s.t;
    } else {
        r.c = s.c * 2.0;
        r.t = s.t / 2;
    }
    r.c = std::clamp(r.c, c_min, c_max);
    r.t = std::max(1, r.t);
    return r;
}

// ---------------------------------------------------------------------------
// Objective assembly: one tape holding the action chain, the per-step
// relaxed costs, the network logits at the endpoint and the hinge
// h = max(0, g0 - g1), weighted by a mutable c slot:
//
//     objective = c * h + sum_i [ cost_i + relaxed_precondition_i ]
// ---------------------------------------------------------------------------

struct ObjectiveGraph {
    ad::Tape tape;
    std::vector<std::vector<ad::NodeId>> param_slots;  // per step
    ad::NodeId c_slot{-1};
    ad::NodeId objective{-1};
    ad::NodeId hinge{-1};
    ad::NodeId exact_cost{-1};
    ad::NodeId relaxed_cost{-1};
    ad::NodeId logit0{-1}, logit1{-1};

    // Signed slack per precondition atom (all steps, categorical included),
    // so exact feasibility can be read off any forward pass.
    struct SlackCheck {
        ad::NodeId node{-1};
        bool strict{true};
    };
    std::vector<SlackCheck> exact_checks;

    size_t total_params() const {
        size_t n = 0;
        for (const auto& s : param_slots) n += s.size();
        return n;
    }
};

inline ObjectiveGraph build_objective(const ModelSpec& model, const FeatureSchema& schema,
                                      const Catalog& catalog,
                                      const std::vector<int>& action_indices,
                                      const Instance& start) {
    if (action_indices.empty())
        throw Error("build_objective: action sequence must be nonempty");
    ObjectiveGraph g;
    ad::Tape& tape = g.tape;
    auto lift = [&tape](double v) { return ad::Value(tape, tape.constant(v)); };

    g.c_slot = tape.input("__c");
    ad::Value c_value(tape, g.c_slot);

    std::vector<ad::Value> state;
    state.reserve(start.raw.size());
    for (double v : start.raw) state.push_back(lift(v));

    ad::Value exact = lift(0.0);
    ad::Value relaxed = lift(0.0);

    for (size_t i = 0; i < action_indices.size(); ++i) {
        const ActionSpec& a = catalog.action(action_indices[i]);
        std::vector<ad::Value> params;
        std::vector<ad::NodeId> slots;
        for (int j = 0; j < a.param_count; ++j) {
            ad::NodeId slot = tape.input(detail::format("p%zu_%d", i, j));
            slots.push_back(slot);
            params.emplace_back(tape, slot);
        }
        g.param_slots.push_back(std::move(slots));

        EvalContext<ad::Value> ctx{&schema, state, params, start.raw};
        ad::Value cost = eval_expr<ad::Value>(*a.cost, ctx, lift);
        exact = exact + cost;
        relaxed = relaxed + cost;
        if (a.kind == ActionKind::Continuous)
            relaxed = relaxed + relax_pred<ad::Value>(a.relaxed, ctx, lift);

        for (const PredAtom& atom : a.precondition.atoms) {
            ad::Value slack = atom_slack<ad::Value>(atom, ctx, lift);
            bool strict = atom.cmp == Cmp::Lt || atom.cmp == Cmp::Gt;
            g.exact_checks.push_back({slack.id(), strict});
        }

        state = apply_action<ad::Value>(a, schema, state, params, start.raw, lift);
    }

    auto logit_pair = logits<ad::Value>(model, schema, state, lift);
    g.logit0 = logit_pair[0].id();
    g.logit1 = logit_pair[1].id();
    ad::Value h = relu(logit_pair[0] - logit_pair[1]);
    ad::Value objective = c_value * h + relaxed;

    g.hinge = h.id();
    g.exact_cost = exact.id();
    g.relaxed_cost = relaxed.id();
    g.objective = objective.id();
    return g;
}

// ---------------------------------------------------------------------------
// Optimization.
// ---------------------------------------------------------------------------

struct TraceRow {
    int iter{0};
    double c{0.0};
    int t{0};
    double hinge{0.0};
    double objective{0.0};
};

struct BestEvent {
    int iter{0};
    bool solution{false};  // exact preconditions held and class flipped
    double exact_cost{0.0};
    double hinge{0.0};
};

struct OptResult {
    std::vector<std::vector<double>> rho;  // optimized parameters per step
    double objective{std::numeric_limits<double>::infinity()};
    double c_at_best{0.0};
    double hinge{std::numeric_limits<double>::infinity()};
    double exact_cost{std::numeric_limits<double>::infinity()};
    double relaxed_cost{std::numeric_limits<double>::infinity()};
    bool preconds_ok{false};
    bool flipped{false};
    bool flipped_during_opt{false};
    bool aborted{false};
    std::string abort_reason;
    int iters_run{0};
    std::vector<TraceRow> trace;
    std::vector<BestEvent> best_events;

    bool solution() const { return preconds_ok && flipped; }
};

inline std::string trace_to_csv(const OptResult& r) {
    std::ostringstream os;
    os << "iter,c,t,h,objective\n";
    char buf[160];
    for (const TraceRow& row : r.trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%d,%.17g,%.17g\n", row.iter, row.c,
                      row.t, row.hinge, row.objective);
        os << buf;
    }
    return os.str();
}

namespace cwdetail {

struct BestSeen {
    bool any{false};
    bool solution{false};
    double exact_cost{std::numeric_limits<double>::infinity()};
    double hinge{std::numeric_limits<double>::infinity()};
    double objective{0.0};
    double c{0.0};
    double relaxed{0.0};
    int iter{0};
    std::vector<double> flat_params;

    /// Lexicographic key: exact solutions first, then cheaper, then closer
    /// to the boundary.
    bool improves(bool sol, double cost, double h) const {
        if (!any) return true;
        if (sol != solution) return sol;
        if (cost != exact_cost) return cost < exact_cost;
        return h < hinge;
    }
};

}  // namespace cwdetail

/// Minimize the relaxed objective over the sequence's parameters with Adam,
/// under the adaptive c/t schedule and the stagnation rule: every
/// check_interval iterations the hinge must have dropped by min_decrease or
/// the run stops. Returns the best iterate seen, preferring exact solutions,
/// then lower exact cost, then lower hinge. Deterministic.
inline OptResult optimize(const ModelSpec& model, const FeatureSchema& schema,
                          const Catalog& catalog, const std::vector<int>& action_indices,
                          const Instance& start, const CWConfig& cfg,
                          const std::vector<std::vector<double>>* warm_start = nullptr) {
    cfg.validate();
    OptResult result;

    ObjectiveGraph graph;
    try {
        graph = build_objective(model, schema, catalog, action_indices, start);
    } catch (const Error& e) {
        result.aborted = true;
        result.abort_reason = std::string("objective build failed: ") + e.what();
        log_debug(result.abort_reason);
        return result;
    }

    // Flatten parameters; initialize from the warm start where provided
    // (the search passes the parent sequence's optimum), zeros elsewhere.
    std::vector<double> params;
    std::vector<ad::NodeId> slots;
    for (size_t i = 0; i < graph.param_slots.size(); ++i) {
        for (size_t j = 0; j < graph.param_slots[i].size(); ++j) {
            slots.push_back(graph.param_slots[i][j]);
            double v = 0.0;
            if (warm_start && i < warm_start->size() && j < (*warm_start)[i].size())
                v = (*warm_start)[i][j];
            params.push_back(v);
        }
    }
    const size_t n = params.size();

    std::vector<double> m(n, 0.0), v(n, 0.0);
    double c = cfg.c_init;
    int t = cfg.t_init;
    bool ever_reached = false;
    int steps_since_schedule = 0;
    double h_prev_check = 0.0;
    cwdetail::BestSeen best;

    ad::EvalBuffers buf;
    buf.value.assign(graph.tape.size(), 0.0);

    auto run_forward = [&]() {
        for (size_t k = 0; k < n; ++k)
            buf.value[static_cast<size_t>(slots[k])] = params[k];
        buf.value[static_cast<size_t>(graph.c_slot)] = c;
        ad::forward_preloaded(graph.tape, buf);
    };

    int iter = 0;
    const int max_iters = n == 0 ? 1 : cfg.max_iters;
    for (iter = 1; iter <= max_iters; ++iter) {
        try {
            run_forward();
        } catch (const EvalError& e) {
            if (!best.any) {
                result.aborted = true;
                result.abort_reason = std::string("non-finite objective: ") + e.what();
                log_debug("sequence aborted: " + result.abort_reason);
                result.iters_run = iter;
                return result;
            }
            log_debug(std::string("optimizer stopped on numeric error, keeping best "
                                  "iterate: ") + e.what());
            break;
        }

        double h = buf.value[static_cast<size_t>(graph.hinge)];
        double objective = buf.value[static_cast<size_t>(graph.objective)];
        double exact = buf.value[static_cast<size_t>(graph.exact_cost)];
        double relaxed = buf.value[static_cast<size_t>(graph.relaxed_cost)];
        double g0 = buf.value[static_cast<size_t>(graph.logit0)];
        double g1 = buf.value[static_cast<size_t>(graph.logit1)];

        bool preconds_now = true;
        for (const auto& check : graph.exact_checks) {
            double slack = buf.value[static_cast<size_t>(check.node)];
            if (check.strict ? !(slack > 0.0) : !(slack >= 0.0)) {
                preconds_now = false;
                break;
            }
        }
        bool flipped_now = g1 > g0;
        bool solution_now = preconds_now && flipped_now;
        result.flipped_during_opt |= flipped_now;

        if (best.improves(solution_now, exact, h)) {
            best.any = true;
            best.solution = solution_now;
            best.exact_cost = exact;
            best.hinge = h;
            best.objective = objective;
            best.c = c;
            best.relaxed = relaxed;
            best.iter = iter;
            best.flat_params = params;
            result.best_events.push_back({iter, solution_now, exact, h});
        }

        if (iter == 1) h_prev_check = h;
        if (iter % cfg.check_interval == 0) {
            result.trace.push_back({iter, c, t, h, objective});
            if (h_prev_check - h < cfg.min_decrease) break;
            h_prev_check = h;
        }

        if (cfg.adaptive && ++steps_since_schedule >= t) {
            ScheduleResult next =
                update_schedule({c, t, h, ever_reached}, cfg.c_min, cfg.c_max);
            if (h == 0.0) ever_reached = true;
            c = next.c;
            t = next.t;
            steps_since_schedule = 0;
        }

        if (n == 0) break;

        ad::backward_into(graph.tape, graph.objective, buf);
        for (size_t k = 0; k < n; ++k) {
            double grad = buf.adjoint[static_cast<size_t>(slots[k])];
            m[k] = cfg.adam.beta1 * m[k] + (1.0 - cfg.adam.beta1) * grad;
            v[k] = cfg.adam.beta2 * v[k] + (1.0 - cfg.adam.beta2) * grad * grad;
            double m_hat = m[k] / (1.0 - std::pow(cfg.adam.beta1, iter));
            double v_hat = v[k] / (1.0 - std::pow(cfg.adam.beta2, iter));
            params[k] -= cfg.adam.lr * m_hat / (std::sqrt(v_hat) + cfg.adam.eps);
        }
    }
    result.iters_run = std::min(iter, max_iters);

    // Unflatten the winner and re-derive all reported values from the exact
    // evaluation path so no stale flag can survive.
    ActionSequence seq;
    seq.action_indices = action_indices;
    size_t cursor = 0;
    for (const auto& step_slots : graph.param_slots) {
        std::vector<double> step;
        for (size_t j = 0; j < step_slots.size(); ++j)
            step.push_back(best.flat_params[cursor++]);
        seq.step_params.push_back(std::move(step));
    }

    result.rho = seq.step_params;
    result.objective = best.objective;
    result.c_at_best = best.c;
    result.hinge = best.hinge;
    result.relaxed_cost = best.relaxed;
    Feasibility feas = check_feasible(catalog, schema, model, seq, start);
    result.preconds_ok = feas.preconds_ok;
    result.flipped = feas.flipped;
    result.exact_cost = sequence_cost(catalog, schema, seq, start).exact_cost;
    return result;
}

}  // namespace recourse
