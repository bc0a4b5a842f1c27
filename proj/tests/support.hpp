#pragma once

// Shared toy fixtures and test-only oracles. The oracles deliberately avoid
// the relaxation/Adam/search path: they enumerate sequences and grid-search
// parameters under the exact problem semantics (Boolean preconditions plus a
// strict classification flip), so they can vouch for the optimizer.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "recourse/recourse.hpp"

namespace testsupport {

using namespace recourse;

// --- 1-feature toy: class 1 iff x > 5 -------------------------------------

inline FeatureSchema toy1d_schema() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    s.add_numeric("x", 0, 10, 5, 1);
    return s;
}

inline ModelSpec toy1d_model() {
    ModelSpec m;
    m.input_dim = 1;
    DenseLayer head;
    head.weights = {{-1.0}, {1.0}};
    head.bias = {0.0, 0.0};
    head.activation = Activation::Linear;
    m.layers.push_back(head);
    m.validate();
    return m;
}

inline Catalog toy1d_catalog(const FeatureSchema& schema) {
    nlohmann::json j = {
        {"actions",
         {{{"name", "add_x"},
           {"kind", "continuous"},
           {"params", 1},
           {"transforms", {{{"feature", "x"}, {"expr", "x[x] + p[0]"}}}},
           {"cost_expr", "abs(p[0])"},
           {"precondition_expr", "x[x] + p[0] > 0 && x[x] + p[0] < 10"}}}}};
    return catalog_from_json(j, schema);
}

inline Instance toy1d_instance(double x) {
    Instance inst;
    inst.raw = {x};
    return inst;
}

// --- 2-feature + flag toy: class 1 iff zx + zy + 1.2*flag_on > 0.5 --------

inline FeatureSchema toy2d_schema() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    s.add_numeric("x", 0, 10, 5, 1);
    s.add_numeric("y", 0, 10, 5, 1);
    s.add_onehot("flag_off", "flag", "off");
    s.add_onehot("flag_on", "flag", "on");
    return s;
}

inline ModelSpec toy2d_model() {
    ModelSpec m;
    m.input_dim = 4;
    DenseLayer head;
    head.weights = {{0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 0.0, 1.2}};
    head.bias = {0.0, -0.5};
    head.activation = Activation::Linear;
    m.layers.push_back(head);
    m.validate();
    return m;
}

inline Catalog toy2d_catalog(const FeatureSchema& schema) {
    nlohmann::json j = {
        {"actions",
         {
             {{"name", "add_x"},
              {"kind", "continuous"},
              {"params", 1},
              {"transforms", {{{"feature", "x"}, {"expr", "x[x] + p[0]"}}}},
              {"cost_expr", "abs(p[0])"},
              {"precondition_expr", "x[x] + p[0] > 0 && x[x] + p[0] < 10"}},
             {{"name", "add_y"},
              {"kind", "continuous"},
              {"params", 1},
              {"transforms", {{{"feature", "y"}, {"expr", "x[y] + p[0]"}}}},
              {"cost_expr", "0.5 * abs(p[0])"},
              {"precondition_expr", "x[y] + p[0] > 0 && x[y] + p[0] < 10"}},
             {{"name", "set_flag"},
              {"kind", "categorical"},
              {"group", "flag"},
              {"set_to", "on"},
              {"cost_expr", "0.25"},
              {"precondition_expr", "x[flag_off] > 0.5"}},
         }}};
    return catalog_from_json(j, schema);
}

inline Instance toy2d_instance(double x, double y, bool flag_on = false) {
    Instance inst;
    inst.raw = {x, y, flag_on ? 0.0 : 1.0, flag_on ? 1.0 : 0.0};
    return inst;
}

// --- exhaustive oracle ------------------------------------------------------
//
// Enumerates every action sequence up to max_length and grid-searches the
// parameters of each (one parameter per continuous action), evaluating the
// exact problem: minimize summed cost subject to Boolean preconditions and
// predict(x_k) == 1. Optionally refines around the coarse winner.

struct OracleResult {
    bool found{false};
    double cost{std::numeric_limits<double>::infinity()};
    std::vector<int> sigma;
    std::vector<std::vector<double>> params;
};

struct OracleGrid {
    double lo{0.0};
    double hi{0.0};
    double step{0.01};
};

namespace oracledetail {

// step_grids is indexed by step position within sigma (empty grid for a
// parameterless step).
inline void search_params(const ModelSpec& model, const FeatureSchema& schema,
                          const Catalog& catalog, const Instance& start,
                          const std::vector<int>& sigma,
                          const std::vector<OracleGrid>& step_grids, ActionSequence& seq,
                          size_t param_pos, OracleResult& best) {
    if (param_pos == seq.step_params.size()) {
        double cost = 0.0;
        std::vector<double> state = start.raw;
        for (size_t i = 0; i < sigma.size(); ++i) {
            const ActionSpec& a = catalog.action(sigma[i]);
            EvalContext<double> ctx{&schema, state, seq.step_params[i], start.raw};
            if (!eval_pred(a.precondition, ctx)) return;
            cost += eval_expr(*a.cost, ctx);
            if (cost >= best.cost) return;  // bound: costs are nonnegative
            state = apply_action(a, schema, state, seq.step_params[i], start.raw);
        }
        if (predict(model, schema, state) != 1) return;
        best.found = true;
        best.cost = cost;
        best.sigma = sigma;
        best.params = seq.step_params;
        return;
    }
    const ActionSpec& a = catalog.action(sigma[param_pos]);
    if (a.param_count == 0) {
        search_params(model, schema, catalog, start, sigma, step_grids, seq,
                      param_pos + 1, best);
        return;
    }
    const OracleGrid& g = step_grids[param_pos];
    long steps = std::lround((g.hi - g.lo) / g.step);
    for (long k = 0; k <= steps; ++k) {
        seq.step_params[param_pos] = {g.lo + static_cast<double>(k) * g.step};
        search_params(model, schema, catalog, start, sigma, step_grids, seq,
                      param_pos + 1, best);
    }
}

inline void enumerate(const ModelSpec& model, const FeatureSchema& schema,
                      const Catalog& catalog, const Instance& start, int max_length,
                      const std::vector<OracleGrid>& action_grids,
                      std::vector<int>& sigma, OracleResult& best) {
    if (!sigma.empty()) {
        ActionSequence seq;
        seq.action_indices = sigma;
        std::vector<OracleGrid> step_grids;
        for (int idx : sigma) {
            seq.step_params.emplace_back(
                static_cast<size_t>(catalog.action(idx).param_count), 0.0);
            step_grids.push_back(action_grids[static_cast<size_t>(idx)]);
        }
        search_params(model, schema, catalog, start, sigma, step_grids, seq, 0, best);
    }
    if (static_cast<int>(sigma.size()) == max_length) return;
    for (int a = 0; a < static_cast<int>(catalog.size()); ++a) {
        sigma.push_back(a);
        enumerate(model, schema, catalog, start, max_length, action_grids, sigma, best);
        sigma.pop_back();
    }
}

}  // namespace oracledetail

/// action_grids is indexed by action; the refinement rounds re-grid each
/// step of the winning sequence around its best parameter with a 50x finer
/// step per round.
inline OracleResult oracle_search(const ModelSpec& model, const FeatureSchema& schema,
                                  const Catalog& catalog, const Instance& start,
                                  int max_length,
                                  const std::vector<OracleGrid>& action_grids,
                                  int refine_rounds = 2) {
    OracleResult best;
    std::vector<int> sigma;
    oracledetail::enumerate(model, schema, catalog, start, max_length, action_grids,
                            sigma, best);
    double step_scale = 1.0;
    for (int round = 0; round < refine_rounds && best.found; ++round) {
        double prev_step = 1.0, next_scale = step_scale * 50.0;
        std::vector<OracleGrid> step_grids;
        bool any = false;
        for (size_t i = 0; i < best.sigma.size(); ++i) {
            const OracleGrid& g = action_grids[static_cast<size_t>(best.sigma[i])];
            if (catalog.action(best.sigma[i]).param_count == 0) {
                step_grids.push_back({});
                continue;
            }
            prev_step = g.step / step_scale;
            double center = best.params[i][0];
            step_grids.push_back({center - prev_step, center + prev_step,
                                  g.step / next_scale});
            any = true;
        }
        if (!any) break;
        ActionSequence seq;
        seq.action_indices = best.sigma;
        seq.step_params = best.params;
        OracleResult refined = best;
        oracledetail::search_params(model, schema, catalog, start, best.sigma,
                                    step_grids, seq, 0, refined);
        best = refined;
        step_scale = next_scale;
    }
    return best;
}

/// Central difference of an arbitrary scalar function, used as the
/// independent derivative oracle in gradient tests.
template <class F>
double central_diff(F f, double x, double step) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
}

}  // namespace testsupport
