#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "recourse/actions.hpp"
#include "recourse/common.hpp"
#include "recourse/model.hpp"

namespace recourse {

struct RobustnessConfig {
    std::vector<double> thetas;     // noise levels in [0, 1)
    int samples{100};               // perturbed draws per (solution, theta)
    double success_threshold{0.8};  // a solution "tolerates" theta at >= this
    uint64_t seed{0};

    void validate() const {
        if (thetas.empty()) throw Error("RobustnessConfig: need at least one theta");
        for (double th : thetas)
            if (th < 0.0) throw Error("RobustnessConfig: theta must be >= 0");
        if (samples < 1) throw Error("RobustnessConfig: samples must be >= 1");
    }
};

/// Multiplicative noise on every scalar parameter of the continuous actions:
/// each r is redrawn uniformly between (1-theta)r and (1+theta)r (endpoints
/// ordered, so negative r works the same way). Categorical steps have no
/// parameters and pass through; the action choice never changes.
inline ActionSequence perturb(const ActionSequence& seq, double theta, Rng& rng) {
    ActionSequence out = seq;
    for (auto& step : out.step_params) {
        for (double& r : step) {
            double a = (1.0 - theta) * r;
            double b = (1.0 + theta) * r;
            r = rng.uniform(std::min(a, b), std::max(a, b));
        }
    }
    return out;
}

/// Monte-Carlo estimate of the probability that the sequence is still a
/// solution (exact preconditions and flipped classification) under
/// theta-noise. The RNG stream is derived from (seed, instance id, theta
/// index, sample index), so estimates are reproducible and parallel-safe.
inline double success_probability(const ModelSpec& model, const FeatureSchema& schema,
                                  const Catalog& catalog, const Instance& start,
                                  const ActionSequence& seq, double theta,
                                  const RobustnessConfig& cfg, int theta_index) {
    int hits = 0;
    for (int s = 0; s < cfg.samples; ++s) {
        Rng rng = derive_rng(cfg.seed,
                             {static_cast<uint64_t>(start.id),
                              static_cast<uint64_t>(theta_index),
                              static_cast<uint64_t>(s)});
        ActionSequence sample = perturb(seq, theta, rng);
        try {
            if (check_feasible(catalog, schema, model, sample, start).ok()) ++hits;
        } catch (const EvalError&) {
            // a perturbed parameter drove an expression out of its domain:
            // that sample is not a solution
        }
    }
    return static_cast<double>(hits) / static_cast<double>(cfg.samples);
}

/// Relative logit margin (g1 - g0) / g1 at a point; a proxy for how far
/// beyond the decision boundary a solution landed.
inline double relative_margin(const ModelSpec& model, const FeatureSchema& schema,
                              std::span<const double> point) {
    auto g = logits(model, schema, point);
    if (std::fabs(g[1]) < 1e-12)
        throw EvalError("relative margin undefined: |g1| < 1e-12");
    return (g[1] - g[0]) / g[1];
}

struct SolvedInstance {
    Instance start;
    ActionSequence seq;
};

struct RobustnessRow {
    int instance_id{0};
    double theta{0.0};
    double success_prob{0.0};
    double margin{std::numeric_limits<double>::quiet_NaN()};
    bool margin_defined{true};
};

struct RobustnessCurve {
    std::vector<double> thetas;
    std::vector<double> fractions;  // share of instances with success >= threshold
    std::vector<RobustnessRow> rows;
    double margin_mean{std::numeric_limits<double>::quiet_NaN()};
    double margin_sd{std::numeric_limits<double>::quiet_NaN()};  // population sd
    int margin_excluded{0};
};

/// Evaluate every solution at every theta. The fraction reported per theta
/// is the share of instances whose success probability meets the threshold.
/// Margins are aggregated with mean and population standard deviation;
/// points with |g1| < 1e-12 are excluded with a warning.
inline RobustnessCurve robustness_curve(const ModelSpec& model,
                                        const FeatureSchema& schema,
                                        const Catalog& catalog,
                                        const std::vector<SolvedInstance>& solutions,
                                        const RobustnessConfig& cfg) {
    cfg.validate();
    if (solutions.empty()) throw Error("robustness_curve: no solutions to evaluate");

    RobustnessCurve curve;
    curve.thetas = cfg.thetas;

    std::vector<std::optional<double>> margins;
    for (const SolvedInstance& sol : solutions) {
        auto endpoint = apply_sequence(catalog, schema, sol.seq, sol.start).back();
        try {
            margins.push_back(relative_margin(model, schema, endpoint));
        } catch (const EvalError& e) {
            log_warn(detail::format("instance %d: %s; excluded from margin aggregate",
                                    sol.start.id, e.what()));
            margins.push_back(std::nullopt);
            ++curve.margin_excluded;
        }
    }

    for (size_t ti = 0; ti < cfg.thetas.size(); ++ti) {
        double theta = cfg.thetas[ti];
        int tolerated = 0;
        for (size_t si = 0; si < solutions.size(); ++si) {
            const SolvedInstance& sol = solutions[si];
            double sp = success_probability(model, schema, catalog, sol.start, sol.seq,
                                            theta, cfg, static_cast<int>(ti));
            if (sp >= cfg.success_threshold) ++tolerated;
            RobustnessRow row;
            row.instance_id = sol.start.id;
            row.theta = theta;
            row.success_prob = sp;
            if (margins[si]) row.margin = *margins[si];
            row.margin_defined = margins[si].has_value();
            curve.rows.push_back(row);
        }
        curve.fractions.push_back(static_cast<double>(tolerated) /
                                  static_cast<double>(solutions.size()));
    }

    int n = 0;
    double sum = 0.0;
    for (const auto& m : margins)
        if (m) {
            sum += *m;
            ++n;
        }
    if (n > 0) {
        double mean = sum / n;
        double var = 0.0;
        for (const auto& m : margins)
            if (m) var += (*m - mean) * (*m - mean);
        curve.margin_mean = mean;
        curve.margin_sd = std::sqrt(var / n);
    }
    return curve;
}

}  // namespace recourse
