#pragma once

#include <algorithm>
#include <future>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "recourse/actions.hpp"
#include "recourse/common.hpp"
#include "recourse/cwopt.hpp"
#include "recourse/model.hpp"

namespace recourse {

enum class ScoreFn { Vanilla, Objective, Gradient };

inline const char* score_fn_name(ScoreFn s) {
    switch (s) {
        case ScoreFn::Vanilla: return "vanilla";
        case ScoreFn::Objective: return "objective";
        case ScoreFn::Gradient: return "gradient";
    }
    return "?";
}

inline ScoreFn score_fn_from_name(const std::string& name) {
    if (name == "vanilla") return ScoreFn::Vanilla;
    if (name == "objective") return ScoreFn::Objective;
    if (name == "gradient") return ScoreFn::Gradient;
    throw Error("unknown score function '" + name + "'");
}

enum class StopRule { ExhaustAll, Budget, CostBound };

struct SearchConfig {
    ScoreFn score{ScoreFn::Vanilla};
    int max_length{4};
    StopRule stop{StopRule::ExhaustAll};
    int budget{0};             // optimizer calls, StopRule::Budget
    double cost_bound{0.0};    // StopRule::CostBound
    int workers{1};
    uint64_t seed{0};
    CWConfig cw;

    void validate() const {
        if (max_length < 1) throw Error("SearchConfig: max_length must be >= 1");
        if (workers < 1) throw Error("SearchConfig: workers must be >= 1");
        if (stop == StopRule::Budget && budget < 1)
            throw Error("SearchConfig: budget stop rule needs budget >= 1");
        cw.validate();
    }
};

/// An optimized sequence, as kept in the explored set.
struct Candidate {
    ActionSequence seq;
    OptResult opt;
    bool preconds_ok{false};
    bool flipped{false};
    double exact_cost{std::numeric_limits<double>::infinity()};
    int creation_index{0};  // 0 = root; otherwise the optimizer-call number
    std::vector<double> endpoint;  // x_k under the optimized parameters

    bool solution() const { return preconds_ok && flipped; }
};

// ---------------------------------------------------------------------------
// Score functions. Lower is explored first.
// ---------------------------------------------------------------------------

/// Breadth-first: score is the length of the extended sequence.
inline double score_vanilla(const ActionSequence& seq) {
    return static_cast<double>(seq.length()) + 1.0;
}

/// The candidate's own relaxed objective value; the extending action does
/// not enter, so extensions are taken in catalog order.
inline double score_objective(const Candidate& cand) { return cand.opt.objective; }

/// Negated mean |d loss/d feature| over the action's footprint, evaluated
/// at the candidate's optimized endpoint: actions touching steep features
/// come first.
inline double score_gradient(std::span<const double> loss_gradient,
                             const ActionSpec& action) {
    if (action.footprint.empty()) return 0.0;
    double total = 0.0;
    for (int j : action.footprint)
        total += std::fabs(loss_gradient[static_cast<size_t>(j)]);
    return -total / static_cast<double>(action.footprint.size());
}

// ---------------------------------------------------------------------------
// Synthesis: best-first enumeration of action sequences, one optimizer call
// per popped (sequence, action) extension.
// ---------------------------------------------------------------------------

/// One line of the exploration log: a single optimizer call.
struct ExplorationRecord {
    int iter{0};
    std::vector<int> sigma;
    double score{0.0};
    double objective{std::numeric_limits<double>::quiet_NaN()};
    double exact_cost{std::numeric_limits<double>::quiet_NaN()};
    double hinge{std::numeric_limits<double>::quiet_NaN()};
    bool preconds_ok{false};
    bool flipped{false};
    bool aborted{false};
};

struct SearchResult {
    std::optional<Candidate> best;
    std::vector<ExplorationRecord> explored;
    int iterations_to_best{0};  // optimizer calls until the returned best appeared
    int optimizer_calls{0};
};

namespace searchdetail {

struct FrontierEntry {
    double score;
    long pair_index;  // creation order; FIFO tie-break
    int candidate;    // index into the candidates vector
    int action;

    bool operator>(const FrontierEntry& o) const {
        if (score != o.score) return score > o.score;
        return pair_index > o.pair_index;
    }
};

inline std::string signature(const std::vector<int>& indices) {
    std::string s;
    for (int i : indices) {
        s += std::to_string(i);
        s += ',';
    }
    return s;
}

}  // namespace searchdetail

inline SearchResult synthesize(const ModelSpec& model, const FeatureSchema& schema,
                               const Catalog& catalog, const Instance& start,
                               const SearchConfig& cfg) {
    cfg.validate();
    if (catalog.actions.empty()) throw Error("synthesize: empty action catalog");
    if (predict(model, schema, start.raw) == 1)
        throw Error("instance is already positively classified");

    SearchResult out;
    std::vector<Candidate> candidates;
    std::priority_queue<searchdetail::FrontierEntry,
                        std::vector<searchdetail::FrontierEntry>,
                        std::greater<searchdetail::FrontierEntry>>
        frontier;
    std::set<std::string> visited;
    long pair_counter = 0;
    std::optional<int> best_index;

    // Gradient scores share one loss gradient per candidate endpoint.
    auto enqueue_extensions = [&](int cand_idx) {
        Candidate& cand = candidates[static_cast<size_t>(cand_idx)];
        if (static_cast<int>(cand.seq.length()) >= cfg.max_length) return;
        std::vector<double> loss_grad;
        if (cfg.score == ScoreFn::Gradient)
            loss_grad = input_gradient_of_loss(model, schema, cand.endpoint);
        for (int a = 0; a < static_cast<int>(catalog.size()); ++a) {
            std::vector<int> extended = cand.seq.action_indices;
            extended.push_back(a);
            std::string sig = searchdetail::signature(extended);
            if (visited.count(sig)) continue;
            visited.insert(sig);
            double score = 0.0;
            switch (cfg.score) {
                case ScoreFn::Vanilla: score = score_vanilla(cand.seq); break;
                case ScoreFn::Objective: score = score_objective(cand); break;
                case ScoreFn::Gradient:
                    score = score_gradient(loss_grad, catalog.action(a));
                    break;
            }
            frontier.push({score, pair_counter++, cand_idx, a});
        }
    };

    // Root: the empty sequence. Its objective is defined as c_init * h(x0)
    // so the objective score is total on the frontier from the start.
    {
        Candidate root;
        root.endpoint = start.raw;
        root.exact_cost = 0.0;
        root.preconds_ok = true;
        root.flipped = false;
        auto g = logits(model, schema, start.raw);
        root.opt.objective = cfg.cw.c_init * std::max(0.0, g[0] - g[1]);
        root.opt.hinge = std::max(0.0, g[0] - g[1]);
        root.opt.exact_cost = 0.0;
        root.creation_index = 0;
        candidates.push_back(std::move(root));
        visited.insert(searchdetail::signature({}));
        enqueue_extensions(0);
    }

    int calls = 0;
    while (!frontier.empty()) {
        if (cfg.stop == StopRule::Budget && calls >= cfg.budget) break;

        size_t batch_size = std::min<size_t>(static_cast<size_t>(cfg.workers),
                                             frontier.size());
        if (cfg.stop == StopRule::Budget)
            batch_size = std::min(batch_size, static_cast<size_t>(cfg.budget - calls));

        std::vector<searchdetail::FrontierEntry> batch;
        for (size_t i = 0; i < batch_size; ++i) {
            batch.push_back(frontier.top());
            frontier.pop();
        }

        // Optimize the batch; workers == 1 stays on this thread.
        std::vector<OptResult> results(batch.size());
        std::vector<std::vector<int>> sigmas(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            sigmas[i] = candidates[static_cast<size_t>(batch[i].candidate)]
                            .seq.action_indices;
            sigmas[i].push_back(batch[i].action);
        }
        if (batch.size() == 1) {
            const Candidate& parent = candidates[static_cast<size_t>(batch[0].candidate)];
            results[0] = optimize(model, schema, catalog, sigmas[0], start, cfg.cw,
                                  &parent.seq.step_params);
        } else {
            std::vector<std::future<OptResult>> futures;
            for (size_t i = 0; i < batch.size(); ++i) {
                const Candidate& parent =
                    candidates[static_cast<size_t>(batch[i].candidate)];
                const auto* warm = &parent.seq.step_params;
                futures.push_back(std::async(std::launch::async, [&, i, warm] {
                    return optimize(model, schema, catalog, sigmas[i], start, cfg.cw,
                                    warm);
                }));
            }
            for (size_t i = 0; i < batch.size(); ++i) results[i] = futures[i].get();
        }

        // Merge in pop order so the exploration log is reproducible for a
        // fixed worker count.
        for (size_t i = 0; i < batch.size(); ++i) {
            ++calls;
            OptResult& opt = results[i];

            ExplorationRecord rec;
            rec.iter = calls;
            rec.sigma = sigmas[i];
            rec.score = batch[i].score;
            rec.aborted = opt.aborted;
            if (!opt.aborted) {
                rec.objective = opt.objective;
                rec.exact_cost = opt.exact_cost;
                rec.hinge = opt.hinge;
                rec.preconds_ok = opt.preconds_ok;
                rec.flipped = opt.flipped;
            }
            out.explored.push_back(rec);

            if (opt.aborted) {
                log_debug("skipping aborted sequence " +
                          searchdetail::signature(sigmas[i]) + ": " + opt.abort_reason);
                continue;
            }

            Candidate cand;
            cand.seq.action_indices = sigmas[i];
            cand.seq.step_params = opt.rho;
            cand.preconds_ok = opt.preconds_ok;
            cand.flipped = opt.flipped;
            cand.exact_cost = opt.exact_cost;
            cand.creation_index = calls;
            cand.endpoint =
                apply_sequence(catalog, schema, cand.seq, start).back();
            cand.opt = std::move(opt);
            candidates.push_back(std::move(cand));
            int idx = static_cast<int>(candidates.size()) - 1;

            const Candidate& inserted = candidates[static_cast<size_t>(idx)];
            if (inserted.solution()) {
                bool better = false;
                if (!best_index) {
                    better = true;
                } else {
                    const Candidate& cur = candidates[static_cast<size_t>(*best_index)];
                    if (inserted.exact_cost < cur.exact_cost)
                        better = true;
                    else if (inserted.exact_cost == cur.exact_cost &&
                             inserted.seq.length() < cur.seq.length())
                        better = true;
                }
                if (better) {
                    best_index = idx;
                    out.iterations_to_best = inserted.creation_index;
                }
            }
            enqueue_extensions(idx);
        }

        if (cfg.stop == StopRule::CostBound && best_index &&
            candidates[static_cast<size_t>(*best_index)].exact_cost <= cfg.cost_bound)
            break;
    }

    out.optimizer_calls = calls;
    if (best_index) out.best = candidates[static_cast<size_t>(*best_index)];
    return out;
}

// ---------------------------------------------------------------------------
// Score-function comparison sweep.
// ---------------------------------------------------------------------------

struct SweepRow {
    int instance_id{0};
    ScoreFn score{ScoreFn::Vanilla};
    bool skipped{false};  // instance was already positively classified
    bool solved{false};
    int iterations_to_best{0};
    double best_cost{std::numeric_limits<double>::quiet_NaN()};
    int best_length{0};
    int optimizer_calls{0};
};

/// Run synthesize once per (instance, score function) and tabulate how fast
/// each score function reached its best solution.
inline std::vector<SweepRow> sweep(const ModelSpec& model, const FeatureSchema& schema,
                                   const Catalog& catalog,
                                   const std::vector<Instance>& instances,
                                   const SearchConfig& base_cfg) {
    static constexpr ScoreFn kAll[] = {ScoreFn::Vanilla, ScoreFn::Objective,
                                       ScoreFn::Gradient};
    std::vector<SweepRow> rows;
    for (const Instance& inst : instances) {
        bool positive = predict(model, schema, inst.raw) == 1;
        for (ScoreFn fn : kAll) {
            SweepRow row;
            row.instance_id = inst.id;
            row.score = fn;
            if (positive) {
                row.skipped = true;
            } else {
                SearchConfig cfg = base_cfg;
                cfg.score = fn;
                SearchResult res = synthesize(model, schema, catalog, inst, cfg);
                row.solved = res.best.has_value();
                row.optimizer_calls = res.optimizer_calls;
                if (res.best) {
                    row.iterations_to_best = res.iterations_to_best;
                    row.best_cost = res.best->exact_cost;
                    row.best_length = static_cast<int>(res.best->seq.length());
                }
            }
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace recourse
