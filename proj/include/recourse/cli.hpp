#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "recourse/actions.hpp"
#include "recourse/common.hpp"
#include "recourse/io.hpp"
#include "recourse/model.hpp"
#include "recourse/robustness.hpp"
#include "recourse/search.hpp"

namespace recourse {

/// Everything one run needs: input paths plus the full configuration. All
/// referenced files are loaded and validated before any output is written.
struct RunManifest {
    std::string model_path;
    std::string catalog_path;
    std::string instances_path;
    std::string out_dir;
    SearchConfig search;
    RobustnessConfig robustness;
    std::vector<int> instance_selector;  // empty = all instances
};

namespace clidetail {

/// Canonical JSON of the run configuration (file base names, not paths, so
/// the hash is stable across checkouts), hashed into every output.
inline std::string manifest_canonical(const RunManifest& m) {
    nlohmann::json j;
    j["model"] = std::filesystem::path(m.model_path).filename().string();
    j["catalog"] = std::filesystem::path(m.catalog_path).filename().string();
    j["instances"] = std::filesystem::path(m.instances_path).filename().string();
    j["score"] = score_fn_name(m.search.score);
    j["max_length"] = m.search.max_length;
    j["stop"] = m.search.stop == StopRule::ExhaustAll ? "exhaust"
                : m.search.stop == StopRule::Budget   ? "budget"
                                                      : "cost_bound";
    j["budget"] = m.search.budget;
    j["cost_bound"] = m.search.cost_bound;
    j["workers"] = m.search.workers;
    j["seed"] = m.search.seed;
    j["cw"] = {{"c_init", m.search.cw.c_init},
               {"t_init", m.search.cw.t_init},
               {"max_iters", m.search.cw.max_iters},
               {"check_interval", m.search.cw.check_interval},
               {"min_decrease", m.search.cw.min_decrease},
               {"lr", m.search.cw.adam.lr}};
    j["thetas"] = m.robustness.thetas;
    j["samples"] = m.robustness.samples;
    j["selector"] = m.instance_selector;
    return j.dump();
}

}  // namespace clidetail

struct LoadedRun {
    LoadedModel model;
    Catalog catalog;
    std::vector<Instance> instances;
    std::vector<int> selected;  // instance ids to process
    std::string manifest_hash;
};

/// Fail-fast load: every referenced file must exist and parse, and the
/// selector must be valid, before a single output file is created.
inline LoadedRun load_run(const RunManifest& manifest) {
    LoadedRun run;
    run.model = load_model(manifest.model_path);
    run.catalog = load_catalog(manifest.catalog_path, run.model.schema);
    run.instances = load_instances(manifest.instances_path, run.model.schema);
    for (const Instance& inst : run.instances)
        if (auto why = validate_raw(run.model.schema, inst.raw))
            throw LoadError(detail::format("%s: instance %d: %s",
                                           manifest.instances_path.c_str(), inst.id,
                                           why->c_str()));
    manifest.search.validate();
    if (manifest.instance_selector.empty()) {
        for (const Instance& inst : run.instances) run.selected.push_back(inst.id);
    } else {
        for (int id : manifest.instance_selector) {
            if (id < 0 || static_cast<size_t>(id) >= run.instances.size())
                throw LoadError(detail::format("instance selector %d out of range (have %zu)",
                                               id, run.instances.size()));
            run.selected.push_back(id);
        }
    }
    run.manifest_hash = hex64(fnv1a(clidetail::manifest_canonical(manifest)));
    return run;
}

// ---------------------------------------------------------------------------
// Output rendering.
// ---------------------------------------------------------------------------

namespace clidetail {

inline std::string render_step(const FeatureSchema& schema, const ActionSpec& action,
                               std::span<const double> before,
                               std::span<const double> after) {
    std::string out = action.name + ": ";
    if (action.kind == ActionKind::Categorical) {
        std::string from, to;
        for (int m : schema.group_members(action.group)) {
            if (before[static_cast<size_t>(m)] == 1.0) from = schema.feature(m).category;
            if (after[static_cast<size_t>(m)] == 1.0) to = schema.feature(m).category;
        }
        return out + "set " + action.group + " from " + from + " to " + to;
    }
    bool first = true;
    for (int idx : action.footprint) {
        double b = before[static_cast<size_t>(idx)];
        double a = after[static_cast<size_t>(idx)];
        char buf[160];
        const char* verb = a >= b ? "increase" : "decrease";
        std::snprintf(buf, sizeof(buf), "%s %s by %.6g (%.6g -> %.6g)", verb,
                      schema.feature(idx).name.c_str(), std::fabs(a - b), b, a);
        out += (first ? "" : "; ") + std::string(buf);
        first = false;
    }
    return out;
}

inline nlohmann::json solution_json(const LoadedRun& run, const RunManifest& manifest,
                                    const Instance& inst, const SearchResult& result) {
    const FeatureSchema& schema = run.model.schema;
    nlohmann::json j;
    j["instance_id"] = inst.id;
    j["manifest_hash"] = run.manifest_hash;
    j["seed"] = manifest.search.seed;
    j["optimizer_calls"] = result.optimizer_calls;
    if (!result.best) {
        j["solved"] = false;
        j["reason"] = "no feasible flipping sequence within max_length";
        return j;
    }
    const Candidate& best = *result.best;
    j["solved"] = true;
    std::vector<std::string> names;
    for (int idx : best.seq.action_indices)
        names.push_back(run.catalog.action(idx).name);
    j["sigma"] = names;
    j["sigma_indices"] = best.seq.action_indices;
    j["rho"] = best.seq.step_params;
    j["exact_cost"] = best.exact_cost;
    j["objective"] = best.opt.objective;
    j["h"] = best.opt.hinge;
    j["iterations_to_best"] = result.iterations_to_best;

    auto trajectory = apply_sequence(run.catalog, schema, best.seq, inst);
    auto g = logits(run.model.model, schema, trajectory.back());
    j["logits"] = {g[0], g[1]};

    nlohmann::json deltas = nlohmann::json::array();
    std::vector<std::string> rendering;
    for (size_t i = 0; i < best.seq.length(); ++i) {
        const ActionSpec& action = run.catalog.action(best.seq.action_indices[i]);
        const auto& before = trajectory[i];
        const auto& after = trajectory[i + 1];
        nlohmann::json step;
        step["action"] = action.name;
        nlohmann::json changes = nlohmann::json::array();
        for (int idx : action.footprint) {
            changes.push_back({{"feature", schema.feature(idx).name},
                               {"from", before[static_cast<size_t>(idx)]},
                               {"to", after[static_cast<size_t>(idx)]}});
        }
        step["changes"] = changes;
        deltas.push_back(step);
        rendering.push_back(render_step(schema, action, before, after));
    }
    j["trajectory_deltas"] = deltas;
    j["rendering"] = rendering;
    return j;
}

inline std::string exploration_jsonl(const SearchResult& result) {
    std::string out;
    for (const ExplorationRecord& rec : result.explored) {
        nlohmann::json j;
        j["iter"] = rec.iter;
        j["sigma"] = rec.sigma;
        j["score"] = rec.score;
        if (rec.aborted) {
            j["objective"] = nullptr;
            j["exact_cost"] = nullptr;
            j["h"] = nullptr;
        } else {
            j["objective"] = rec.objective;
            j["exact_cost"] = rec.exact_cost;
            j["h"] = rec.hinge;
        }
        j["feasible"] = rec.preconds_ok;
        j["flipped"] = rec.flipped;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string csv_preamble(const LoadedRun& run, uint64_t seed) {
    return "# manifest_hash=" + run.manifest_hash + " seed=" + std::to_string(seed) +
           "\n";
}

}  // namespace clidetail

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code; IO/config errors raise
// LoadError which the CLI maps to exit code 2.
// ---------------------------------------------------------------------------

inline int cmd_validate(const RunManifest& manifest) {
    LoadedRun run = load_run(manifest);
    int negatives = 0;
    for (const Instance& inst : run.instances)
        if (predict(run.model.model, run.model.schema, inst.raw) == 0) ++negatives;
    std::printf("model: %zu layers, %zu features\n", run.model.model.layers.size(),
                run.model.schema.feature_count());
    std::printf("catalog: %zu actions\n", run.catalog.size());
    std::printf("instances: %zu (%d negatively classified)\n", run.instances.size(),
                negatives);
    std::printf("manifest_hash: %s\n", run.manifest_hash.c_str());
    return 0;
}

inline int cmd_synthesize(const RunManifest& manifest) {
    LoadedRun run = load_run(manifest);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(manifest.out_dir) / "solutions");
    fs::create_directories(fs::path(manifest.out_dir) / "exploration");

    nlohmann::json report;
    report["manifest_hash"] = run.manifest_hash;
    report["seed"] = manifest.search.seed;
    nlohmann::json per_instance = nlohmann::json::array();
    int solved = 0, processed = 0;

    for (int id : run.selected) {
        const Instance& inst = run.instances[static_cast<size_t>(id)];
        nlohmann::json entry;
        entry["id"] = id;
        if (predict(run.model.model, run.model.schema, inst.raw) == 1) {
            entry["status"] = "skipped";
            entry["reason"] = "already positive";
            per_instance.push_back(entry);
            log_info(detail::format("instance %d skipped: already positive", id));
            continue;
        }
        ++processed;
        try {
            SearchResult result = synthesize(run.model.model, run.model.schema,
                                             run.catalog, inst, manifest.search);
            nlohmann::json sol = clidetail::solution_json(run, manifest, inst, result);
            write_file((fs::path(manifest.out_dir) / "solutions" /
                        ("instance_" + std::to_string(id) + ".json"))
                           .string(),
                       sol.dump(2) + "\n");
            write_file((fs::path(manifest.out_dir) / "exploration" /
                        ("instance_" + std::to_string(id) + ".jsonl"))
                           .string(),
                       clidetail::exploration_jsonl(result));
            if (result.best) {
                ++solved;
                entry["status"] = "solved";
                entry["exact_cost"] = result.best->exact_cost;
                entry["length"] = result.best->seq.length();
                entry["iterations_to_best"] = result.iterations_to_best;
            } else {
                entry["status"] = "no_solution";
            }
        } catch (const Error& e) {
            entry["status"] = "failed";
            entry["reason"] = e.what();
            log_error(detail::format("instance %d failed: %s", id, e.what()));
        }
        per_instance.push_back(entry);
    }
    report["instances"] = per_instance;
    report["processed"] = processed;
    report["solved"] = solved;
    write_file((fs::path(manifest.out_dir) / "synthesize_report.json").string(),
               report.dump(2) + "\n");
    std::printf("solved %d/%d processed instances; outputs in %s\n", solved, processed,
                manifest.out_dir.c_str());
    return 0;
}

inline int cmd_sweep(const RunManifest& manifest) {
    LoadedRun run = load_run(manifest);
    namespace fs = std::filesystem;
    fs::create_directories(manifest.out_dir);

    std::vector<Instance> selected;
    for (int id : run.selected) selected.push_back(run.instances[static_cast<size_t>(id)]);
    std::vector<SweepRow> rows =
        sweep(run.model.model, run.model.schema, run.catalog, selected, manifest.search);

    std::string csv = clidetail::csv_preamble(run, manifest.search.seed);
    csv += "instance_id,score,solved,iterations_to_best,best_cost,best_length,optimizer_calls\n";
    for (const SweepRow& r : rows) {
        if (r.skipped) continue;
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%d,%s,%d,%d,%.17g,%d,%d\n", r.instance_id,
                      score_fn_name(r.score), r.solved ? 1 : 0, r.iterations_to_best,
                      r.best_cost, r.best_length, r.optimizer_calls);
        csv += buf;
    }
    write_file((fs::path(manifest.out_dir) / "sweep.csv").string(), csv);

    // Scatter data: per comparison, one point per instance solved under both.
    static constexpr std::pair<ScoreFn, ScoreFn> kPairs[] = {
        {ScoreFn::Vanilla, ScoreFn::Objective},
        {ScoreFn::Vanilla, ScoreFn::Gradient},
        {ScoreFn::Objective, ScoreFn::Gradient}};
    auto find_row = [&](int id, ScoreFn fn) -> const SweepRow* {
        for (const SweepRow& r : rows)
            if (r.instance_id == id && r.score == fn && !r.skipped) return &r;
        return nullptr;
    };
    nlohmann::json scatter;
    scatter["manifest_hash"] = run.manifest_hash;
    scatter["seed"] = manifest.search.seed;
    nlohmann::json comparisons = nlohmann::json::array();
    for (auto [fx, fy] : kPairs) {
        nlohmann::json comp;
        comp["x_score"] = score_fn_name(fx);
        comp["y_score"] = score_fn_name(fy);
        nlohmann::json points = nlohmann::json::array();
        for (const Instance& inst : selected) {
            const SweepRow* rx = find_row(inst.id, fx);
            const SweepRow* ry = find_row(inst.id, fy);
            if (rx && ry && rx->solved && ry->solved)
                points.push_back({{"instance_id", inst.id},
                                  {"x", rx->iterations_to_best},
                                  {"y", ry->iterations_to_best}});
        }
        comp["points"] = points;
        comparisons.push_back(comp);
    }
    scatter["comparisons"] = comparisons;
    write_file((fs::path(manifest.out_dir) / "sweep_scatter.json").string(),
               scatter.dump(2) + "\n");
    std::printf("sweep complete: %zu rows; outputs in %s\n", rows.size(),
                manifest.out_dir.c_str());
    return 0;
}

inline int cmd_robustness(const RunManifest& manifest) {
    LoadedRun run = load_run(manifest);
    namespace fs = std::filesystem;
    manifest.robustness.validate();

    fs::path solutions_dir = fs::path(manifest.out_dir) / "solutions";
    std::vector<SolvedInstance> solutions;
    if (fs::is_directory(solutions_dir)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(solutions_dir))
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& p : files) {
            nlohmann::json j = nlohmann::json::parse(read_file(p.string()));
            if (!j.value("solved", false)) continue;
            SolvedInstance sol;
            int id = j.at("instance_id").get<int>();
            if (id < 0 || static_cast<size_t>(id) >= run.instances.size())
                throw LoadError(p.string() + ": instance_id out of range");
            sol.start = run.instances[static_cast<size_t>(id)];
            sol.seq.action_indices = j.at("sigma_indices").get<std::vector<int>>();
            sol.seq.step_params = j.at("rho").get<std::vector<std::vector<double>>>();
            sol.seq.validate(run.catalog);
            solutions.push_back(std::move(sol));
        }
        std::sort(solutions.begin(), solutions.end(),
                  [](const SolvedInstance& a, const SolvedInstance& b) {
                      return a.start.id < b.start.id;
                  });
    }
    if (solutions.empty()) {
        std::fprintf(stderr,
                     "no prior solutions found under %s; run `synthesize` first\n",
                     solutions_dir.string().c_str());
        return 1;
    }

    RobustnessCurve curve = robustness_curve(run.model.model, run.model.schema,
                                             run.catalog, solutions, manifest.robustness);

    std::string csv = clidetail::csv_preamble(run, manifest.robustness.seed);
    csv += "instance_id,theta,success_prob,margin\n";
    for (const RobustnessRow& r : curve.rows) {
        char buf[160];
        if (r.margin_defined)
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.instance_id,
                          r.theta, r.success_prob, r.margin);
        else
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,\n", r.instance_id, r.theta,
                          r.success_prob);
        csv += buf;
    }
    write_file((fs::path(manifest.out_dir) / "robustness.csv").string(), csv);

    nlohmann::json j;
    j["manifest_hash"] = run.manifest_hash;
    j["seed"] = manifest.robustness.seed;
    j["threshold"] = manifest.robustness.success_threshold;
    j["samples"] = manifest.robustness.samples;
    j["thetas"] = curve.thetas;
    j["fractions"] = curve.fractions;
    j["margin_mean"] = curve.margin_mean;
    j["margin_sd"] = curve.margin_sd;
    j["margin_excluded"] = curve.margin_excluded;
    write_file((fs::path(manifest.out_dir) / "robustness_curve.json").string(),
               j.dump(2) + "\n");
    std::printf("robustness evaluated for %zu solutions at %zu noise levels\n",
                solutions.size(), curve.thetas.size());
    return 0;
}

}  // namespace recourse
