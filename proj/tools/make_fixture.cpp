// Generates the committed desk-scale fixtures:
//   - a synthetic credit dataset, a small ReLU network trained on it, and a
//     set of negatively classified instances (credit_model.json,
//     credit_instances.csv)
//   - untrained demo models for the bundled german/adult/fannie catalogs so
//     they can be validated and experimented with (demo_*.json)
//
// Everything is seeded; reruns reproduce the committed files byte for byte.
//
// Usage: make_fixture <fixtures_dir> <models_dir>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "recourse/recourse.hpp"

using namespace recourse;

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double gaussian(Rng& rng) {
    // Box-Muller; both uniforms drawn even when one would do, for stability
    double u1 = rng.next_unit();
    double u2 = rng.next_unit();
    u1 = std::max(u1, 1e-12);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// ---------------------------------------------------------------------------
// Synthetic credit population.
// ---------------------------------------------------------------------------

struct CreditSample {
    std::vector<double> raw;
    int label;
};

FeatureSchema credit_schema_domains() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    // normalization stats are filled in later from the sampled population;
    // placeholders keep add_numeric happy
    s.add_numeric("credit_score", 300, 850, 0, 1);
    s.add_numeric("credit_amount", 0, 100000, 0, 1);
    s.add_numeric("loan_duration", 1, 120, 0, 1);
    s.add_numeric("age", 18, 100, 0, 1);
    s.add_numeric("savings", 0, 100000, 0, 1);
    s.add_numeric("income", 0, 200000, 0, 1);
    s.add_numeric("debt", 0, 100000, 0, 1);
    s.add_numeric("years_employed", 0, 50, 0, 1);
    s.add_numeric("num_accounts", 0, 20, 0, 1);
    s.add_numeric("num_defaults", 0, 10, 0, 1);
    s.add_numeric("utilization", 0, 1, 0, 1);
    s.add_numeric("checking_balance", -5000, 50000, 0, 1);
    s.add_numeric("residence_years", 0, 50, 0, 1);
    s.add_onehot("employment_unemployed", "employment", "unemployed");
    s.add_onehot("employment_unskilled", "employment", "unskilled");
    s.add_onehot("employment_skilled", "employment", "skilled");
    s.add_onehot("guarantor_none", "guarantor", "none");
    s.add_onehot("guarantor_yes", "guarantor", "yes");
    s.add_onehot("housing_rent", "housing", "rent");
    s.add_onehot("housing_own", "housing", "own");
    return s;
}

CreditSample draw_credit(const FeatureSchema& schema, Rng& rng) {
    CreditSample s;
    s.raw.assign(schema.feature_count(), 0.0);
    auto set = [&](const char* name, double v) { s.raw[schema.index_of(name)] = v; };

    double credit_score = clip(620 + 90 * gaussian(rng), 300, 850);
    double credit_amount = clip(20000 + 12000 * gaussian(rng), 0, 100000);
    double loan_duration = clip(36 + 18 * gaussian(rng), 1, 120);
    double age = clip(40 + 12 * gaussian(rng), 18, 100);
    double savings = clip(15000 + 15000 * gaussian(rng), 0, 100000);
    double income = clip(55000 + 25000 * gaussian(rng), 0, 200000);
    double debt = clip(20000 + 15000 * gaussian(rng), 0, 100000);
    double years_employed = clip(8 + 6 * gaussian(rng), 0, 50);
    double num_accounts = clip(std::round(5 + 3 * gaussian(rng)), 0, 20);
    double num_defaults = clip(std::floor(std::max(0.0, 0.4 + 1.1 * gaussian(rng))), 0, 10);
    double utilization = clip(0.45 + 0.25 * gaussian(rng), 0, 1);
    double checking = clip(3000 + 4000 * gaussian(rng), -5000, 50000);
    double residence = clip(7 + 6 * gaussian(rng), 0, 50);

    set("credit_score", credit_score);
    set("credit_amount", credit_amount);
    set("loan_duration", loan_duration);
    set("age", age);
    set("savings", savings);
    set("income", income);
    set("debt", debt);
    set("years_employed", years_employed);
    set("num_accounts", num_accounts);
    set("num_defaults", num_defaults);
    set("utilization", utilization);
    set("checking_balance", checking);
    set("residence_years", residence);

    double r = rng.next_unit();
    const char* employment = r < 0.12 ? "employment_unemployed"
                             : r < 0.50 ? "employment_unskilled"
                                        : "employment_skilled";
    set(employment, 1.0);
    const char* guarantor = rng.next_unit() < 0.85 ? "guarantor_none" : "guarantor_yes";
    set(guarantor, 1.0);
    const char* housing = rng.next_unit() < 0.55 ? "housing_rent" : "housing_own";
    set(housing, 1.0);

    // Ground-truth creditworthiness: mostly monotone in the actionable
    // features, with a couple of interactions so the net is not linear.
    auto z = [&](const char* name, double mean, double sd) {
        return (s.raw[schema.index_of(name)] - mean) / sd;
    };
    double score = 2.0 * z("credit_score", 620, 90) + 1.2 * z("savings", 15000, 15000) +
                   0.8 * z("income", 55000, 25000) - 1.4 * z("debt", 20000, 15000) -
                   1.0 * z("utilization", 0.45, 0.25) -
                   0.7 * z("num_defaults", 0.9, 1.1) +
                   0.5 * z("years_employed", 8, 6) -
                   0.9 * z("credit_amount", 20000, 12000) -
                   0.5 * z("loan_duration", 36, 18) + 0.3 * z("age", 40, 12) +
                   0.25 * z("checking_balance", 3000, 4000) +
                   0.15 * z("residence_years", 7, 6);
    score += 0.35 * z("savings", 15000, 15000) * z("income", 55000, 25000);
    score -= 0.30 * std::max(0.0, z("debt", 20000, 15000)) * z("utilization", 0.45, 0.25);
    score += s.raw[schema.index_of("employment_skilled")] * 0.5 -
             s.raw[schema.index_of("employment_unemployed")] * 0.6 +
             s.raw[schema.index_of("guarantor_yes")] * 0.8 +
             s.raw[schema.index_of("housing_own")] * 0.4;
    score += 0.25 * gaussian(rng);  // irreducible noise
    s.label = score > 0.4 ? 1 : 0;
    return s;
}

FeatureSchema with_population_stats(const FeatureSchema& domains,
                                    const std::vector<CreditSample>& samples) {
    FeatureSchema out;
    out.scheme = NormScheme::ZScore;
    for (size_t i = 0; i < domains.feature_count(); ++i) {
        const Feature& f = domains.feature(static_cast<int>(i));
        if (f.kind == FeatureKind::OneHot) {
            out.add_onehot(f.name, f.group, f.category);
            continue;
        }
        double sum = 0;
        for (const auto& s : samples) sum += s.raw[i];
        double mean = sum / samples.size();
        double var = 0;
        for (const auto& s : samples) var += (s.raw[i] - mean) * (s.raw[i] - mean);
        double sd = std::sqrt(var / samples.size());
        if (sd < 1e-9) sd = 1.0;
        out.add_numeric(f.name, f.domain_min, f.domain_max, mean, sd);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training: per-sample Adam on a tape holding the network and both losses.
// ---------------------------------------------------------------------------

struct TrainTape {
    ad::Tape tape;
    std::vector<ad::NodeId> input_slots;
    std::vector<ad::NodeId> weight_slots;
    ad::NodeId loss_target1{-1};
    ad::NodeId loss_target0{-1};
    ad::NodeId logit0{-1}, logit1{-1};
};

TrainTape build_train_tape(const std::vector<int>& layer_sizes, size_t input_dim) {
    TrainTape t;
    auto lift = [&](double v) { return ad::Value(t.tape, t.tape.constant(v)); };
    std::vector<ad::Value> cur;
    for (size_t i = 0; i < input_dim; ++i) {
        ad::NodeId slot = t.tape.input("x" + std::to_string(i));
        t.input_slots.push_back(slot);
        cur.emplace_back(t.tape, slot);
    }
    size_t in_dim = input_dim;
    for (size_t li = 0; li < layer_sizes.size(); ++li) {
        size_t out_dim = static_cast<size_t>(layer_sizes[li]);
        bool last = li + 1 == layer_sizes.size();
        std::vector<ad::Value> next;
        for (size_t o = 0; o < out_dim; ++o) {
            ad::NodeId b = t.tape.input(detail::format("b%zu_%zu", li, o));
            t.weight_slots.push_back(b);
            ad::Value acc(t.tape, b);
            for (size_t i = 0; i < in_dim; ++i) {
                ad::NodeId w = t.tape.input(detail::format("w%zu_%zu_%zu", li, o, i));
                t.weight_slots.push_back(w);
                acc = acc + ad::Value(t.tape, w) * cur[i];
            }
            next.push_back(last ? acc : relu(acc));
        }
        cur = std::move(next);
        in_dim = out_dim;
    }
    t.logit0 = cur[0].id();
    t.logit1 = cur[1].id();
    ad::Value d = cur[0] - cur[1];  // g0 - g1
    t.loss_target1 = softplus(d).id();
    t.loss_target0 = softplus(-d).id();
    (void)lift;
    return t;
}

ModelSpec extract_model(const TrainTape& t, const std::vector<double>& weights,
                        const std::vector<int>& layer_sizes, size_t input_dim) {
    ModelSpec model;
    model.input_dim = input_dim;
    size_t cursor = 0;
    size_t in_dim = input_dim;
    for (size_t li = 0; li < layer_sizes.size(); ++li) {
        size_t out_dim = static_cast<size_t>(layer_sizes[li]);
        DenseLayer layer;
        layer.activation =
            li + 1 == layer_sizes.size() ? Activation::Linear : Activation::Relu;
        for (size_t o = 0; o < out_dim; ++o) {
            layer.bias.push_back(weights[cursor++]);
            std::vector<double> row;
            for (size_t i = 0; i < in_dim; ++i) row.push_back(weights[cursor++]);
            layer.weights.push_back(std::move(row));
        }
        model.layers.push_back(std::move(layer));
        in_dim = out_dim;
    }
    model.validate();
    return model;
}

ModelSpec train_network(const FeatureSchema& schema,
                        const std::vector<CreditSample>& samples,
                        const std::vector<int>& layer_sizes, Rng& rng) {
    TrainTape t = build_train_tape(layer_sizes, schema.feature_count());
    const size_t n_weights = t.weight_slots.size();

    std::vector<double> weights(n_weights);
    for (auto& w : weights) w = 0.3 * gaussian(rng);

    std::vector<double> m(n_weights, 0.0), v(n_weights, 0.0);
    const double lr = 0.005, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    ad::EvalBuffers buf;
    buf.value.assign(t.tape.size(), 0.0);

    // fixed shuffled visit order per epoch
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    const int epochs = 30;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        for (size_t oi : order) {
            const CreditSample& s = samples[oi];
            ++step;
            for (size_t f = 0; f < schema.feature_count(); ++f)
                buf.value[static_cast<size_t>(t.input_slots[f])] =
                    normalize_feature<double>(schema, static_cast<int>(f), s.raw[f]);
            for (size_t w = 0; w < n_weights; ++w)
                buf.value[static_cast<size_t>(t.weight_slots[w])] = weights[w];
            ad::forward_preloaded(t.tape, buf);
            ad::backward_into(t.tape, s.label == 1 ? t.loss_target1 : t.loss_target0,
                              buf);
            for (size_t w = 0; w < n_weights; ++w) {
                double g = buf.adjoint[static_cast<size_t>(t.weight_slots[w])];
                m[w] = beta1 * m[w] + (1 - beta1) * g;
                v[w] = beta2 * v[w] + (1 - beta2) * g * g;
                double mh = m[w] / (1 - std::pow(beta1, step));
                double vh = v[w] / (1 - std::pow(beta2, step));
                weights[w] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }

    ModelSpec model = extract_model(t, weights, layer_sizes, schema.feature_count());
    int correct = 0;
    for (const CreditSample& s : samples)
        if (predict(model, schema, s.raw) == s.label) ++correct;
    std::printf("train accuracy: %.3f (%d/%zu)\n",
                static_cast<double>(correct) / samples.size(), correct, samples.size());
    return model;
}

// ---------------------------------------------------------------------------
// Demo models for the bundled catalogs: valid files with small random
// weights. They exist so the catalogs can be parsed, validated and played
// with; they are not trained on the real datasets.
// ---------------------------------------------------------------------------

FeatureSchema german_schema() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    s.add_numeric("loan_duration", 1, 120, 24, 12);
    s.add_numeric("credit_amount", 0, 100000, 8000, 5000);
    s.add_numeric("installment_rate", 1, 4, 2.8, 1.1);
    s.add_numeric("residence_years", 0, 60, 3, 2);
    s.add_numeric("age", 15, 120, 36, 11);
    s.add_numeric("existing_credits", 0, 10, 1.4, 0.6);
    s.add_numeric("num_dependents", 0, 4, 1.2, 0.4);
    s.add_numeric("checking_balance", -10000, 100000, 1200, 2500);
    s.add_numeric("savings", 0, 100000, 2300, 4000);
    s.add_numeric("years_employed", 0, 60, 5, 4);
    s.add_numeric("credit_history_score", 0, 4, 2.5, 1.0);
    s.add_onehot("citizen_no", "citizen", "no");
    s.add_onehot("citizen_yes", "citizen", "yes");
    s.add_onehot("job_unemployed", "job", "unemployed");
    s.add_onehot("job_unskilled", "job", "unskilled");
    s.add_onehot("job_skilled", "job", "skilled");
    s.add_onehot("guarantor_none", "guarantor", "none");
    s.add_onehot("guarantor_yes", "guarantor", "yes");
    s.add_onehot("housing_rent", "housing", "rent");
    s.add_onehot("housing_own", "housing", "own");
    return s;
}

FeatureSchema adult_schema() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    s.add_numeric("age", 17, 120, 38, 13);
    s.add_numeric("education_years", 0, 16.5, 10, 2.5);
    s.add_numeric("work_hours", 0, 90, 40, 12);
    s.add_numeric("capital_gain", 0, 100000, 1100, 7400);
    s.add_numeric("capital_loss", 0, 5000, 87, 400);
    s.add_numeric("years_in_job", 0, 60, 6, 5);
    s.add_numeric("dependents", 0, 10, 1.5, 1.2);
    s.add_onehot("enlisted_no", "enlisted", "no");
    s.add_onehot("enlisted_yes", "enlisted", "yes");
    s.add_onehot("marital_single", "marital", "single");
    s.add_onehot("marital_married", "marital", "married");
    s.add_onehot("occupation_manual", "occupation", "manual");
    s.add_onehot("occupation_office", "occupation", "office");
    s.add_onehot("occupation_professional", "occupation", "professional");
    return s;
}

FeatureSchema fannie_schema() {
    FeatureSchema s;
    s.scheme = NormScheme::ZScore;
    s.add_numeric("credit_score", 300, 850, 740, 55);
    s.add_numeric("num_units", 0, 5, 1.1, 0.4);
    s.add_numeric("dti", 0, 100, 33, 11);
    s.add_numeric("interest_rate", 0, 30, 4.5, 1.2);
    s.add_numeric("loan_term", 0, 800, 330, 70);
    s.add_numeric("loan_amount", 0, 2000000, 220000, 110000);
    s.add_numeric("ltv", 0, 100, 72, 17);
    s.add_numeric("cltv", 0, 110, 74, 17);
    s.add_numeric("borrower_count", 1, 10, 1.5, 0.6);
    s.add_numeric("income", 0, 1000000, 95000, 60000);
    s.add_numeric("home_age", 0, 200, 30, 20);
    s.add_numeric("reserves_months", 0, 120, 8, 9);
    s.add_numeric("delinquency_count", 0, 20, 0.4, 1.0);
    s.add_numeric("years_at_job", 0, 60, 7, 6);
    s.add_numeric("prior_loans", 0, 50, 2.2, 2.0);
    s.add_onehot("occupancy_primary", "occupancy", "primary");
    s.add_onehot("occupancy_investment", "occupancy", "investment");
    s.add_onehot("channel_retail", "channel", "retail");
    s.add_onehot("channel_broker", "channel", "broker");
    s.add_onehot("first_time_no", "first_time", "no");
    s.add_onehot("first_time_yes", "first_time", "yes");
    return s;
}

ModelSpec random_model(const FeatureSchema& schema, Rng& rng) {
    std::vector<int> sizes = {16, 16, 2};
    ModelSpec model;
    model.input_dim = schema.feature_count();
    size_t in_dim = model.input_dim;
    for (size_t li = 0; li < sizes.size(); ++li) {
        DenseLayer layer;
        layer.activation = li + 1 == sizes.size() ? Activation::Linear : Activation::Relu;
        for (int o = 0; o < sizes[li]; ++o) {
            layer.bias.push_back(0.1 * gaussian(rng));
            std::vector<double> row;
            for (size_t i = 0; i < in_dim; ++i) row.push_back(0.4 * gaussian(rng));
            layer.weights.push_back(std::move(row));
        }
        in_dim = static_cast<size_t>(sizes[li]);
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

void write_model(const std::string& path, const ModelSpec& model,
                 const FeatureSchema& schema) {
    write_file(path, model_to_json(model, schema).dump(2) + "\n");
    std::printf("wrote %s\n", path.c_str());
}

std::vector<Instance> random_instances(const FeatureSchema& schema, int count,
                                       Rng& rng) {
    std::vector<Instance> out;
    for (int i = 0; i < count; ++i) {
        Instance inst;
        inst.id = i;
        inst.raw.assign(schema.feature_count(), 0.0);
        for (size_t f = 0; f < schema.feature_count(); ++f) {
            const Feature& feat = schema.feature(static_cast<int>(f));
            if (feat.kind != FeatureKind::Numeric) continue;
            double mid = feat.kind == FeatureKind::Numeric ? feat.mean : 0.0;
            double v = clip(mid + feat.std_dev * gaussian(rng), feat.domain_min,
                            feat.domain_max);
            inst.raw[f] = v;
        }
        for (const auto& [group, members] : schema.groups()) {
            (void)group;
            inst.raw[static_cast<size_t>(members[rng.below(members.size())])] = 1.0;
        }
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: make_fixture <fixtures_dir> <models_dir>\n");
        return 2;
    }
    std::filesystem::create_directories(argv[1]);
    std::filesystem::create_directories(argv[2]);
    const std::string fixtures = argv[1];
    const std::string models = argv[2];

    // --- synthetic credit fixture ---
    Rng rng(20240613);
    FeatureSchema domains = credit_schema_domains();
    std::vector<CreditSample> train;
    train.reserve(3200);
    for (int i = 0; i < 3200; ++i) train.push_back(draw_credit(domains, rng));
    int positives = 0;
    for (const auto& s : train) positives += s.label;
    std::printf("training pool: %zu samples, %d positive\n", train.size(), positives);

    FeatureSchema schema = with_population_stats(domains, train);
    ModelSpec model = train_network(schema, train, {16, 16, 2}, rng);
    write_model(fixtures + "/credit_model.json", model, schema);

    // Negative instances for the end-to-end run: model-negative draws from a
    // held-out pool, skipping hopeless cases far from the boundary.
    std::vector<Instance> chosen;
    int pool_size = 0;
    while (chosen.size() < 20 && pool_size < 4000) {
        CreditSample s = draw_credit(domains, rng);
        ++pool_size;
        auto g = logits(model, schema, s.raw);
        double hinge = g[0] - g[1];
        if (hinge <= 0.0) continue;  // model says positive
        if (hinge > 3.5) continue;   // far outside any plausible action budget
        Instance inst;
        inst.raw = s.raw;
        inst.label_hint = s.label;
        inst.id = static_cast<int>(chosen.size());
        chosen.push_back(std::move(inst));
    }
    std::printf("selected %zu negative instances from %d draws\n", chosen.size(),
                pool_size);
    write_file(fixtures + "/credit_instances.csv", instances_to_csv(schema, chosen));
    std::printf("wrote %s\n", (fixtures + "/credit_instances.csv").c_str());

    // --- demo models and instances for the bundled catalogs ---
    Rng demo_rng(7151);
    struct Demo {
        const char* name;
        FeatureSchema schema;
    };
    std::vector<Demo> demos;
    demos.push_back({"german", german_schema()});
    demos.push_back({"adult", adult_schema()});
    demos.push_back({"fannie", fannie_schema()});
    for (const Demo& demo : demos) {
        write_model(models + "/" + demo.name + "_demo_model.json",
                    random_model(demo.schema, demo_rng), demo.schema);
        auto insts = random_instances(demo.schema, 5, demo_rng);
        write_file(models + "/" + demo.name + "_demo_instances.csv",
                   instances_to_csv(demo.schema, insts));
        std::printf("wrote %s\n",
                    (models + "/" + demo.name + "_demo_instances.csv").c_str());
    }
    return 0;
}
