// Command-line front end: synthesize | sweep | robustness | validate.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "recourse/recourse.hpp"

namespace {

void add_common_options(CLI::App* cmd, recourse::RunManifest& manifest,
                        std::string& score_name, std::string& stop_name) {
    cmd->add_option("--model", manifest.model_path, "Model JSON file")->required();
    cmd->add_option("--catalog", manifest.catalog_path, "Action catalog JSON file")
        ->required();
    cmd->add_option("--instances", manifest.instances_path, "Instances CSV file")
        ->required();
    cmd->add_option("--out", manifest.out_dir, "Output directory")
        ->default_val("out");
    cmd->add_option("--max-length", manifest.search.max_length,
                    "Longest action sequence to consider");
    cmd->add_option("--score", score_name, "Score function: vanilla|objective|gradient")
        ->check(CLI::IsMember({"vanilla", "objective", "gradient"}));
    cmd->add_option("--stop", stop_name, "Stop rule: exhaust|budget|cost-bound")
        ->check(CLI::IsMember({"exhaust", "budget", "cost-bound"}));
    cmd->add_option("--budget", manifest.search.budget,
                    "Optimizer-call budget (with --stop budget)");
    cmd->add_option("--cost-bound", manifest.search.cost_bound,
                    "Stop once a solution at or below this cost is found");
    cmd->add_option("--workers", manifest.search.workers,
                    "Parallel optimizer workers (1 = bitwise deterministic)");
    cmd->add_option("--seed", manifest.search.seed, "Random seed");
    cmd->add_option("--instance", manifest.instance_selector,
                    "Instance index to process (repeatable; default all)");
    cmd->add_option("--theta", manifest.robustness.thetas,
                    "Noise level for robustness evaluation (repeatable)");
    cmd->add_option("--samples", manifest.robustness.samples,
                    "Perturbation samples per (solution, theta)");
    cmd->add_option("--adam-lr", manifest.search.cw.adam.lr, "Adam learning rate");
    cmd->add_option("--max-iters", manifest.search.cw.max_iters,
                    "Adam iteration cap per sequence");
}

void finalize(recourse::RunManifest& manifest, const std::string& score_name,
              const std::string& stop_name) {
    manifest.search.score = recourse::score_fn_from_name(score_name);
    if (stop_name == "exhaust")
        manifest.search.stop = recourse::StopRule::ExhaustAll;
    else if (stop_name == "budget")
        manifest.search.stop = recourse::StopRule::Budget;
    else
        manifest.search.stop = recourse::StopRule::CostBound;
    manifest.robustness.seed = manifest.search.seed;
    if (manifest.robustness.thetas.empty())
        manifest.robustness.thetas = {0.0, 0.01, 0.02, 0.03, 0.05, 0.1};
}

}  // namespace

namespace recourse {

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"Synthesize minimum-cost action sequences that flip a classifier"};
    app.require_subcommand(1);

    RunManifest manifest;
    std::string score_name = "vanilla";
    std::string stop_name = "exhaust";

    CLI::App* synth = app.add_subcommand(
        "synthesize", "Find a cheapest flipping action sequence per instance");
    add_common_options(synth, manifest, score_name, stop_name);

    CLI::App* sweep_cmd = app.add_subcommand(
        "sweep", "Compare all three score functions on every instance");
    add_common_options(sweep_cmd, manifest, score_name, stop_name);

    CLI::App* robust = app.add_subcommand(
        "robustness", "Noise-tolerance of previously synthesized solutions");
    add_common_options(robust, manifest, score_name, stop_name);

    CLI::App* validate = app.add_subcommand(
        "validate", "Parse and cross-check model, catalog and instances");
    add_common_options(validate, manifest, score_name, stop_name);

    std::vector<const char*> argv;
    argv.push_back("recourse");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    finalize(manifest, score_name, stop_name);
    try {
        if (synth->parsed()) return cmd_synthesize(manifest);
        if (sweep_cmd->parsed()) return cmd_sweep(manifest);
        if (robust->parsed()) return cmd_robustness(manifest);
        if (validate->parsed()) return cmd_validate(manifest);
    } catch (const LoadError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace recourse

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return recourse::cli_main(args);
}
