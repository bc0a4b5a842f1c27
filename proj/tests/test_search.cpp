#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "recourse/search.hpp"
#include "support.hpp"

using namespace recourse;
using testsupport::toy1d_instance;
using testsupport::toy1d_model;
using testsupport::toy1d_schema;
using testsupport::toy2d_catalog;
using testsupport::toy2d_instance;
using testsupport::toy2d_model;
using testsupport::toy2d_schema;

namespace {

SearchConfig search_config(ScoreFn score, int max_length) {
    SearchConfig cfg;
    cfg.score = score;
    cfg.max_length = max_length;
    cfg.cw.max_iters = 3000;
    return cfg;
}

std::multiset<std::vector<int>> explored_set(const SearchResult& r) {
    std::multiset<std::vector<int>> out;
    for (const auto& rec : r.explored) out.insert(rec.sigma);
    return out;
}

}  // namespace

TEST(Scores, VanillaIsLengthPlusOne) {
    ActionSequence empty;
    EXPECT_DOUBLE_EQ(score_vanilla(empty), 1.0);
    ActionSequence three;
    three.action_indices = {0, 1, 0};
    three.step_params = {{1.0}, {2.0}, {3.0}};
    EXPECT_DOUBLE_EQ(score_vanilla(three), 4.0);
}

TEST(Scores, ObjectiveReturnsCandidateObjective) {
    Candidate c;
    c.opt.objective = 5.0;
    EXPECT_DOUBLE_EQ(score_objective(c), 5.0);
}

TEST(Scores, GradientIsNegatedFootprintMean) {
    FeatureSchema schema = toy2d_schema();
    Catalog catalog = toy2d_catalog(schema);
    std::vector<double> grad = {-0.4, 0.1, 0.0, 0.0};
    // add_x footprint {0}: |−0.4| -> −0.4
    EXPECT_DOUBLE_EQ(score_gradient(grad, catalog.action(0)), -0.4);
    // add_y footprint {1}
    EXPECT_DOUBLE_EQ(score_gradient(grad, catalog.action(1)), -0.1);
    // set_flag footprint {2,3}: gradients are zero -> worst score 0
    EXPECT_DOUBLE_EQ(score_gradient(grad, catalog.action(2)), 0.0);
    // steeper footprint scores lower (preferred)
    EXPECT_LT(score_gradient(grad, catalog.action(0)),
              score_gradient(grad, catalog.action(1)));
}

TEST(Synthesize, VanillaIsBreadthFirst) {
    // two-action catalog, max_length 2: exactly the 2 length-1 sequences,
    // then the 4 length-2 sequences, in FIFO order
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    nlohmann::json two = {
        {"actions",
         {{{"name", "add_x"},
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
           {"precondition_expr", "x[y] + p[0] > 0 && x[y] + p[0] < 10"}}}}};
    Catalog catalog2 = catalog_from_json(two, schema);

    SearchResult r = synthesize(model, schema, catalog2, toy2d_instance(4, 4),
                                search_config(ScoreFn::Vanilla, 2));
    ASSERT_EQ(r.explored.size(), 6u);
    std::vector<std::vector<int>> expected = {{0}, {1}, {0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (size_t i = 0; i < expected.size(); ++i)
        EXPECT_EQ(r.explored[i].sigma, expected[i]) << "position " << i;
    // non-decreasing length order
    for (size_t i = 1; i < r.explored.size(); ++i)
        EXPECT_GE(r.explored[i].sigma.size(), r.explored[i - 1].sigma.size());
}

TEST(Synthesize, SingleCheapActionWinsAndMatchesBruteForce) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    Instance x0 = toy2d_instance(4.9, 4.9);

    SearchResult r =
        synthesize(model, schema, catalog, x0, search_config(ScoreFn::Vanilla, 2));
    ASSERT_TRUE(r.best.has_value());
    EXPECT_EQ(r.best->seq.action_indices, (std::vector<int>{2}));  // set_flag
    EXPECT_DOUBLE_EQ(r.best->exact_cost, 0.25);

    auto oracle = testsupport::oracle_search(
        model, schema, catalog, x0, 2,
        {{-4.0, 5.0, 0.01}, {-4.0, 5.0, 0.01}, {}}, 1);
    ASSERT_TRUE(oracle.found);
    // cost-ties between sequences are legitimate; only the cost is pinned
    EXPECT_NEAR(oracle.cost, r.best->exact_cost, 1e-12);
    EXPECT_LE(r.best->seq.length(), oracle.sigma.size());
}

TEST(Synthesize, NoFeasibleFlipReturnsNone) {
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
    SearchResult r = synthesize(model, schema, catalog, toy1d_instance(3),
                                search_config(ScoreFn::Vanilla, 3));
    EXPECT_FALSE(r.best.has_value());
    EXPECT_EQ(r.explored.size(), 3u);  // [0], [0,0], [0,0,0]
    EXPECT_EQ(r.iterations_to_best, 0);
}

TEST(Synthesize, ErrorOnPositiveInstance) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = testsupport::toy1d_catalog(schema);
    EXPECT_THROW(synthesize(model, schema, catalog, toy1d_instance(8),
                            search_config(ScoreFn::Vanilla, 2)),
                 Error);
}

TEST(Synthesize, ExhaustAllScoreFunctionsAgreeOnBestCost) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    Instance x0 = toy2d_instance(4, 4);

    std::vector<SearchResult> results;
    for (ScoreFn fn : {ScoreFn::Vanilla, ScoreFn::Objective, ScoreFn::Gradient})
        results.push_back(synthesize(model, schema, catalog, x0, search_config(fn, 2)));

    // same explored set: every sequence of length <= 2, each exactly once
    auto expected_count = catalog.size() + catalog.size() * catalog.size();
    for (const SearchResult& r : results)
        EXPECT_EQ(r.explored.size(), expected_count);
    EXPECT_EQ(explored_set(results[0]), explored_set(results[1]));
    EXPECT_EQ(explored_set(results[0]), explored_set(results[2]));

    for (const SearchResult& r : results) ASSERT_TRUE(r.best.has_value());
    EXPECT_NEAR(results[0].best->exact_cost, results[1].best->exact_cost, 1e-9);
    EXPECT_NEAR(results[0].best->exact_cost, results[2].best->exact_cost, 1e-9);

    // flag + add_y is the cheap route; oracle confirms within tolerance
    auto oracle = testsupport::oracle_search(
        model, schema, catalog, x0, 2, {{-4.0, 5.0, 0.01}, {-4.0, 5.0, 0.01}, {}}, 1);
    ASSERT_TRUE(oracle.found);
    EXPECT_LE(std::fabs(results[0].best->exact_cost - oracle.cost),
              0.05 * oracle.cost);
}

TEST(Synthesize, BestRevalidatesExactly) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    SearchResult r = synthesize(model, schema, catalog, toy2d_instance(4, 4),
                                search_config(ScoreFn::Objective, 2));
    ASSERT_TRUE(r.best.has_value());
    Feasibility feas =
        check_feasible(catalog, schema, model, r.best->seq, toy2d_instance(4, 4));
    EXPECT_TRUE(feas.preconds_ok);
    EXPECT_TRUE(feas.flipped);
    // iterations_to_best is the 1-based exploration position of the best
    ASSERT_GT(r.iterations_to_best, 0);
    ASSERT_LE(r.iterations_to_best, static_cast<int>(r.explored.size()));
    EXPECT_EQ(r.explored[static_cast<size_t>(r.iterations_to_best) - 1].sigma,
              r.best->seq.action_indices);
    EXPECT_LE(r.iterations_to_best, r.optimizer_calls);
}

TEST(Synthesize, SingleActionCatalogScoreIrrelevant) {
    FeatureSchema schema = toy1d_schema();
    ModelSpec model = toy1d_model();
    Catalog catalog = testsupport::toy1d_catalog(schema);
    Instance x0 = toy1d_instance(3);

    std::vector<SearchResult> results;
    for (ScoreFn fn : {ScoreFn::Vanilla, ScoreFn::Objective, ScoreFn::Gradient})
        results.push_back(synthesize(model, schema, catalog, x0, search_config(fn, 3)));
    for (const SearchResult& r : results) {
        ASSERT_EQ(r.explored.size(), 3u);
        EXPECT_EQ(r.explored[0].sigma, (std::vector<int>{0}));
        EXPECT_EQ(r.explored[1].sigma, (std::vector<int>{0, 0}));
        EXPECT_EQ(r.explored[2].sigma, (std::vector<int>{0, 0, 0}));
    }
    EXPECT_EQ(results[0].iterations_to_best, results[1].iterations_to_best);
    EXPECT_EQ(results[0].iterations_to_best, results[2].iterations_to_best);
}

TEST(Synthesize, DeterministicExplorationLog) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    for (ScoreFn fn : {ScoreFn::Vanilla, ScoreFn::Objective, ScoreFn::Gradient}) {
        SearchResult a =
            synthesize(model, schema, catalog, toy2d_instance(4, 4), search_config(fn, 2));
        SearchResult b =
            synthesize(model, schema, catalog, toy2d_instance(4, 4), search_config(fn, 2));
        ASSERT_EQ(a.explored.size(), b.explored.size());
        for (size_t i = 0; i < a.explored.size(); ++i) {
            EXPECT_EQ(a.explored[i].sigma, b.explored[i].sigma);
            EXPECT_EQ(a.explored[i].score, b.explored[i].score);
            EXPECT_EQ(a.explored[i].objective, b.explored[i].objective);
            EXPECT_EQ(a.explored[i].exact_cost, b.explored[i].exact_cost);
        }
    }
}

TEST(Synthesize, ParallelWorkersReproducibleAndVanillaOrderPreserved) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);

    // reproducible for a fixed worker count, whatever the score function
    for (ScoreFn fn : {ScoreFn::Vanilla, ScoreFn::Objective, ScoreFn::Gradient}) {
        SearchConfig par = search_config(fn, 2);
        par.workers = 2;
        SearchResult p1 = synthesize(model, schema, catalog, toy2d_instance(4, 4), par);
        SearchResult p2 = synthesize(model, schema, catalog, toy2d_instance(4, 4), par);
        ASSERT_EQ(p1.explored.size(), p2.explored.size());
        for (size_t i = 0; i < p1.explored.size(); ++i) {
            EXPECT_EQ(p1.explored[i].sigma, p2.explored[i].sigma);
            EXPECT_EQ(p1.explored[i].exact_cost, p2.explored[i].exact_cost);
        }
    }

    // vanilla scores are static, so the parallel pop order matches serial
    SearchConfig serial = search_config(ScoreFn::Vanilla, 2);
    SearchConfig par = serial;
    par.workers = 2;
    SearchResult s = synthesize(model, schema, catalog, toy2d_instance(4, 4), serial);
    SearchResult p = synthesize(model, schema, catalog, toy2d_instance(4, 4), par);
    ASSERT_EQ(s.explored.size(), p.explored.size());
    for (size_t i = 0; i < s.explored.size(); ++i)
        EXPECT_EQ(s.explored[i].sigma, p.explored[i].sigma);
    ASSERT_TRUE(s.best && p.best);
    EXPECT_EQ(s.best->exact_cost, p.best->exact_cost);
}

TEST(Synthesize, BudgetAndCostBoundStopRules) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    {
        SearchConfig cfg = search_config(ScoreFn::Vanilla, 3);
        cfg.stop = StopRule::Budget;
        cfg.budget = 5;
        SearchResult r = synthesize(model, schema, catalog, toy2d_instance(4, 4), cfg);
        EXPECT_EQ(r.optimizer_calls, 5);
    }
    {
        SearchConfig cfg = search_config(ScoreFn::Vanilla, 3);
        cfg.stop = StopRule::CostBound;
        cfg.cost_bound = 2.0;
        SearchResult r = synthesize(model, schema, catalog, toy2d_instance(4, 4), cfg);
        ASSERT_TRUE(r.best.has_value());
        EXPECT_LE(r.best->exact_cost, 2.0);
        EXPECT_LT(r.optimizer_calls, 3 + 9 + 27);
    }
}

TEST(Sweep, RowsAndConsistency) {
    FeatureSchema schema = toy2d_schema();
    ModelSpec model = toy2d_model();
    Catalog catalog = toy2d_catalog(schema);
    std::vector<Instance> instances;
    instances.push_back(toy2d_instance(4, 4));
    instances.back().id = 0;
    instances.push_back(toy2d_instance(4.9, 4.9));
    instances.back().id = 1;
    instances.push_back(toy2d_instance(3, 5));
    instances.back().id = 2;

    auto rows = sweep(model, schema, catalog, instances, search_config(ScoreFn::Vanilla, 2));
    EXPECT_EQ(rows.size(), 9u);  // 3 instances x 3 score functions

    // exhaust-all: per instance the best cost does not depend on the score
    for (int id = 0; id < 3; ++id) {
        std::vector<double> costs;
        for (const SweepRow& r : rows)
            if (r.instance_id == id && r.solved) costs.push_back(r.best_cost);
        for (size_t i = 1; i < costs.size(); ++i) EXPECT_NEAR(costs[0], costs[i], 1e-9);
    }

    auto empty_rows =
        sweep(model, schema, catalog, {}, search_config(ScoreFn::Vanilla, 2));
    EXPECT_TRUE(empty_rows.empty());

    // positively classified instances are skipped, not searched
    std::vector<Instance> pos;
    pos.push_back(toy2d_instance(9, 9));
    pos.back().id = 7;
    auto skip_rows = sweep(model, schema, catalog, pos, search_config(ScoreFn::Vanilla, 2));
    ASSERT_EQ(skip_rows.size(), 3u);
    for (const auto& r : skip_rows) EXPECT_TRUE(r.skipped);
}
