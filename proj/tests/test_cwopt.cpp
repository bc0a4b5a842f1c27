#include <gtest/gtest.h>

#include <cmath>

#include "recourse/cwopt.hpp"
#include "support.hpp"

using namespace recourse;
using testsupport::toy1d_catalog;
using testsupport::toy1d_instance;
using testsupport::toy1d_model;
using testsupport::toy1d_schema;
using testsupport::toy2d_catalog;
using testsupport::toy2d_instance;
using testsupport::toy2d_model;
using testsupport::toy2d_schema;

namespace {

CWConfig fast_config() {
    CWConfig cfg;
    cfg.max_iters = 4000;
    return cfg;
}

}  // namespace

TEST(BuildObjective, HingeSemantics) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);

    ObjectiveGraph g = build_objective(model, schema, catalog, {0}, toy1d_instance(3));
    ad::EvalBuffers buf;
    buf.value.assign(g.tape.size(), 0.0);

    auto eval_at = [&](double p, double c) {
        buf.value[static_cast<size_t>(g.param_slots[0][0])] = p;
        buf.value[static_cast<size_t>(g.c_slot)] = c;
        ad::forward_preloaded(g.tape, buf);
    };

    // x = 3: logits (2, -2) -> h = 4
    eval_at(0.0, 1.0);
    EXPECT_DOUBLE_EQ(buf.value[static_cast<size_t>(g.hinge)], 4.0);
    EXPECT_DOUBLE_EQ(buf.value[static_cast<size_t>(g.logit0)], 2.0);

    // x = 7: logits (-2, 2) -> h = 0, objective = relaxed cost only
    eval_at(4.0, 123.0);
    EXPECT_DOUBLE_EQ(buf.value[static_cast<size_t>(g.hinge)], 0.0);
    EXPECT_DOUBLE_EQ(buf.value[static_cast<size_t>(g.objective)],
                     buf.value[static_cast<size_t>(g.relaxed_cost)]);

    // hinge is exactly g0 - g1 when positive
    eval_at(1.0, 1.0);
    EXPECT_DOUBLE_EQ(buf.value[static_cast<size_t>(g.hinge)],
                     buf.value[static_cast<size_t>(g.logit0)] -
                         buf.value[static_cast<size_t>(g.logit1)]);
}

TEST(BuildObjective, RequiresNonemptySequence) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);
    EXPECT_THROW(build_objective(model, schema, catalog, {}, toy1d_instance(3)), Error);
}

TEST(BuildObjective, FullObjectiveGradientMatchesFiniteDifferences) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    ObjectiveGraph g =
        build_objective(model, schema, catalog, {0, 2, 1}, toy2d_instance(4, 4));

    std::map<std::string, double> bindings = {
        {"__c", 10.0}, {"p0_0", 0.7}, {"p2_0", -0.4}};
    auto report = ad::grad_check(g.tape, g.objective, bindings, 1e-6, 1e-4);
    EXPECT_TRUE(report.pass);
    bool saw_param = false;
    for (const auto& e : report.entries)
        if (e.slot.rfind("p", 0) == 0) saw_param = true;
    EXPECT_TRUE(saw_param);
}

TEST(UpdateSchedule, AppendixRulesAndClamps) {
    struct Row {
        double c;
        int t;
        double h;
        bool ever;
        double c_expect;
        int t_expect;
    };
    // the three rules, then both clamps, then the t floor
    std::vector<Row> table = {
        {1e5, 100, 0.0, false, 1e4, 200},     // boundary reached
        {1e5, 100, 0.0, true, 1e4, 200},      // boundary reached (flag irrelevant)
        {1e5, 100, 2.5, false, 2e5, 100},     // still 0-region, never reached
        {1e5, 100, 2.5, true, 2e5, 50},       // still 0-region, previously reached
        {1e10, 100, 2.5, true, 1e10, 50},     // c clamped above
        {2e-5, 100, 0.0, false, 1e-5, 200},   // c clamped below
        {1e5, 1, 2.5, true, 2e5, 1},          // t floored at 1
        {1e5, 3, 2.5, true, 2e5, 1},          // integer division rounds down
    };
    for (const Row& row : table) {
        ScheduleResult r = update_schedule({row.c, row.t, row.h, row.ever}, 1e-5, 1e10);
        EXPECT_DOUBLE_EQ(r.c, row.c_expect) << "c=" << row.c << " h=" << row.h;
        EXPECT_EQ(r.t, row.t_expect) << "c=" << row.c << " h=" << row.h;
    }
}

TEST(Optimize, ToyRecoversGridOracle) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);
    Instance x0 = toy1d_instance(3);

    // independent oracle: exact problem semantics on a parameter grid
    auto oracle = testsupport::oracle_search(model, schema, catalog, x0, 1,
                                             {{0.0, 10.0, 0.001}}, 0);
    ASSERT_TRUE(oracle.found);
    EXPECT_NEAR(oracle.cost, 2.001, 1e-9);

    OptResult result = optimize(model, schema, catalog, {0}, x0, fast_config());
    ASSERT_FALSE(result.aborted);
    EXPECT_TRUE(result.preconds_ok);
    EXPECT_TRUE(result.flipped);
    EXPECT_LE(std::fabs(result.exact_cost - oracle.cost), 0.05 * oracle.cost)
        << "synthesized " << result.exact_cost;
}

TEST(Optimize, InfeasibleDomainNeverFlips) {
    // preconditions cap x + p at 4.5, but the flip needs x > 5
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    nlohmann::json j = {
        {"actions",
         {{{"name", "add_x_capped"},
           {"kind", "continuous"},
           {"params", 1},
           {"transforms", {{{"feature", "x"}, {"expr", "x[x] + p[0]"}}}},
           {"cost_expr", "abs(p[0])"},
           {"precondition_expr", "x[x] + p[0] > 0 && x[x] + p[0] < 4.5"}}}}};
    Catalog catalog = catalog_from_json(j, schema);
    OptResult result =
        optimize(model, schema, catalog, {0}, toy1d_instance(3), fast_config());
    ASSERT_FALSE(result.aborted);
    EXPECT_FALSE(result.flipped);
    EXPECT_FALSE(result.flipped_during_opt);
    EXPECT_GT(result.hinge, 0.0);
}

TEST(Optimize, WarmStartAtFlippingPointKeepsBestSeenMonotone) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);
    std::vector<std::vector<double>> warm = {{2.6}};
    OptResult result =
        optimize(model, schema, catalog, {0}, toy1d_instance(3), fast_config(), &warm);
    ASSERT_FALSE(result.aborted);
    EXPECT_TRUE(result.flipped);
    EXPECT_LE(result.exact_cost, 2.6);

    // best-seen events strictly improve in the lexicographic key
    ASSERT_FALSE(result.best_events.empty());
    for (size_t i = 1; i < result.best_events.size(); ++i) {
        const BestEvent& a = result.best_events[i - 1];
        const BestEvent& b = result.best_events[i];
        bool improved = (b.solution && !a.solution) ||
                        (b.solution == a.solution &&
                         (b.exact_cost < a.exact_cost ||
                          (b.exact_cost == a.exact_cost && b.hinge < a.hinge)));
        EXPECT_TRUE(improved) << "event " << i;
    }
}

TEST(Optimize, DeterministicGivenConfig) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    OptResult a =
        optimize(model, schema, catalog, {0, 1}, toy2d_instance(4, 4), fast_config());
    OptResult b =
        optimize(model, schema, catalog, {0, 1}, toy2d_instance(4, 4), fast_config());
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].hinge, b.trace[i].hinge);
        EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
        EXPECT_EQ(a.trace[i].c, b.trace[i].c);
    }
    ASSERT_EQ(a.rho.size(), b.rho.size());
    for (size_t i = 0; i < a.rho.size(); ++i) EXPECT_EQ(a.rho[i], b.rho[i]);
    EXPECT_EQ(a.exact_cost, b.exact_cost);
}

TEST(Optimize, ObjectiveIdentityAtReturnedPoint) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    OptResult r =
        optimize(model, schema, catalog, {1, 0}, toy2d_instance(4, 4), fast_config());
    ASSERT_FALSE(r.aborted);
    EXPECT_NEAR(r.objective, r.c_at_best * r.hinge + r.relaxed_cost, 1e-9);
}

TEST(Optimize, LargerCNeverWorsensHinge) {
    // fixed-c spot check on the toy model: with slack preconditions, raising
    // c cannot increase the hinge of the returned optimum
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);
    double prev_h = std::numeric_limits<double>::infinity();
    for (double c : {1e-3, 1e-1, 1e1, 1e3, 1e5}) {
        CWConfig cfg = fast_config();
        cfg.adaptive = false;
        cfg.c_init = c;
        OptResult r = optimize(model, schema, catalog, {0}, toy1d_instance(3), cfg);
        ASSERT_FALSE(r.aborted);
        EXPECT_LE(r.hinge, prev_h + 1e-12) << "c=" << c;
        prev_h = r.hinge;
    }
}

TEST(Optimize, CategoricalOnlySequenceHasNoParameters) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    // set_flag alone cannot flip (zx + zy = -2, +1.2 - 0.5 < 0)
    OptResult r =
        optimize(model, schema, catalog, {2}, toy2d_instance(4, 4), fast_config());
    ASSERT_FALSE(r.aborted);
    EXPECT_EQ(r.rho.size(), 1u);
    EXPECT_TRUE(r.rho[0].empty());
    EXPECT_TRUE(r.preconds_ok);
    EXPECT_FALSE(r.flipped);
    EXPECT_DOUBLE_EQ(r.exact_cost, 0.25);
}

TEST(Optimize, NumericFailureAbortsWithDiagnostic) {
    FeatureSchema schema = toy1d_schema();
    nlohmann::json j = {
        {"actions",
         {{{"name", "bad_cost"},
           {"kind", "continuous"},
           {"params", 1},
           {"transforms", {{{"feature", "x"}, {"expr", "x[x] + p[0]"}}}},
           {"cost_expr", "1 / (p[0] * p[0])"},
           {"precondition_expr", "x[x] + p[0] > 0"}}}}};
    Catalog catalog = catalog_from_json(j, schema);
    ModelSpec model = toy1d_model();
    // rho starts at zero: the cost divides by zero on the very first pass
    OptResult r = optimize(model, schema, catalog, {0}, toy1d_instance(3), fast_config());
    EXPECT_TRUE(r.aborted);
    EXPECT_FALSE(r.abort_reason.empty());
}

TEST(Optimize, TraceCsvHasHeaderAndRows) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = toy1d_catalog(schema);
    OptResult r = optimize(model, schema, catalog, {0}, toy1d_instance(3), fast_config());
    std::string csv = trace_to_csv(r);
    EXPECT_NE(csv.find("iter,c,t,h,objective\n"), std::string::npos);
    EXPECT_GT(std::count(csv.begin(), csv.end(), '\n'), 1);
}
