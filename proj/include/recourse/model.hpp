#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "recourse/autodiff.hpp"
#include "recourse/common.hpp"
#include "recourse/schema.hpp"

namespace recourse {

enum class Activation { Relu, Linear };

struct DenseLayer {
    std::vector<std::vector<double>> weights;  // out x in, row-major
    std::vector<double> bias;                  // out
    Activation activation{Activation::Relu};

    size_t out_dim() const { return weights.size(); }
    size_t in_dim() const { return weights.empty() ? 0 : weights[0].size(); }
};

/// Dense ReLU network with a two-logit linear head. Immutable after load.
struct ModelSpec {
    std::vector<DenseLayer> layers;
    size_t input_dim{0};

    void validate() const {
        if (layers.empty()) throw LoadError("model has no layers");
        size_t dim = input_dim;
        for (size_t li = 0; li < layers.size(); ++li) {
            const DenseLayer& l = layers[li];
            if (l.in_dim() != dim)
                throw LoadError(detail::format(
                    "layer %zu expects %zu inputs but previous layer provides %zu",
                    li, l.in_dim(), dim));
            if (l.bias.size() != l.out_dim())
                throw LoadError(detail::format("layer %zu: bias length %zu != %zu rows",
                                               li, l.bias.size(), l.out_dim()));
            for (const auto& row : l.weights)
                if (row.size() != l.in_dim())
                    throw LoadError(detail::format("layer %zu: ragged weight matrix", li));
            dim = l.out_dim();
        }
        if (dim != 2) throw LoadError("final layer must emit exactly 2 logits");
        if (layers.back().activation != Activation::Linear)
            throw LoadError("final layer activation must be linear");
    }
};

/// Pre-softmax outputs of the network on a raw-space point. Instantiated
/// with S = double this is the plain inference path; with S = ad::Value it
/// unrolls the matrix-vector products onto the tape, one node per multiply,
/// making the whole network differentiable end to end.
template <class S, class Lift>
std::array<S, 2> logits(const ModelSpec& model, const FeatureSchema& schema,
                        std::span<const S> raw, Lift lift) {
    using ad::relu;
    if (raw.size() != model.input_dim)
        throw Error(detail::format("logits: got %zu inputs for model with input_dim %zu",
                                   raw.size(), model.input_dim));
    std::vector<S> cur = normalize<S>(schema, raw);
    for (const DenseLayer& layer : model.layers) {
        std::vector<S> next;
        next.reserve(layer.out_dim());
        for (size_t o = 0; o < layer.out_dim(); ++o) {
            S acc = lift(layer.bias[o]);
            for (size_t i = 0; i < layer.in_dim(); ++i) {
                double w = layer.weights[o][i];
                if (w != 0.0) acc = acc + lift(w) * cur[i];
            }
            next.push_back(layer.activation == Activation::Relu ? relu(acc) : acc);
        }
        cur = std::move(next);
    }
    return {cur[0], cur[1]};
}

inline std::array<double, 2> logits(const ModelSpec& model, const FeatureSchema& schema,
                                    std::span<const double> raw) {
    return logits<double>(model, schema, raw, [](double v) { return v; });
}

inline std::array<ad::Value, 2> logits(const ModelSpec& model, const FeatureSchema& schema,
                                       ad::Tape& tape, std::span<const ad::Value> raw) {
    return logits<ad::Value>(model, schema, raw,
                             [&tape](double v) { return ad::lift(tape, v); });
}

/// f(x) = softmax(g(x)).
inline std::array<double, 2> probabilities(const ModelSpec& model,
                                           const FeatureSchema& schema,
                                           std::span<const double> raw) {
    auto g = logits(model, schema, raw);
    double m = std::max(g[0], g[1]);
    double e0 = std::exp(g[0] - m), e1 = std::exp(g[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// Predicted class: 1 iff g1 > g0. A tie classifies as 0.
inline int predict(const ModelSpec& model, const FeatureSchema& schema,
                   std::span<const double> raw) {
    auto g = logits(model, schema, raw);
    return g[1] > g[0] ? 1 : 0;
}

/// Numerically stable softplus(d) = log(1 + exp(d)) composed from tape ops:
/// relu(d) + log(1 + exp(-|d|)).
inline ad::Value softplus(ad::Value d) {
    return relu(d) + log(1.0 + exp(-abs(d)));
}
inline double softplus(double d) {
    return ad::relu(d) + std::log1p(std::exp(-std::fabs(d)));
}

/// Cross-entropy loss against the target label 1: -log f(x)_1, computed as
/// softplus(g0 - g1).
inline double target_loss(const ModelSpec& model, const FeatureSchema& schema,
                          std::span<const double> raw) {
    auto g = logits(model, schema, raw);
    return softplus(g[0] - g[1]);
}

/// d(target_loss)/d(raw feature j) for every j, in raw feature space (the
/// chain rule runs through normalization).
inline std::vector<double> input_gradient_of_loss(const ModelSpec& model,
                                                  const FeatureSchema& schema,
                                                  std::span<const double> raw) {
    ad::Tape tape;
    std::vector<ad::Value> x;
    x.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i)
        x.emplace_back(tape, tape.input("x" + std::to_string(i)));
    auto g = logits(model, schema, tape, std::span<const ad::Value>(x));
    ad::Value loss = softplus(g[0] - g[1]);

    ad::EvalBuffers buf;
    buf.value.assign(tape.size(), 0.0);
    for (size_t i = 0; i < raw.size(); ++i)
        buf.value[static_cast<size_t>(x[i].id())] = raw[i];
    ad::forward_preloaded(tape, buf);
    ad::backward_into(tape, loss.id(), buf);

    std::vector<double> grad(raw.size());
    for (size_t i = 0; i < raw.size(); ++i)
        grad[i] = buf.adjoint[static_cast<size_t>(x[i].id())];
    return grad;
}

// ---------------------------------------------------------------------------
// JSON model file. Format (see docs/formats.md):
//   {"layers": [{"weights": [[...]], "bias": [...], "activation": "relu"}],
//    "schema": {"normalization": "zscore", "features": [...]}}
// Unknown fields are rejected.
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& obj,
                           std::initializer_list<const char*> allowed,
                           const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) ok = true;
        if (!ok) throw LoadError("unknown field '" + it.key() + "' in " + where);
    }
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw LoadError("missing field '" + std::string(key) + "' in " + where);
    return *it;
}

}  // namespace detail

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"normalization", "features"}, "schema");
    FeatureSchema schema;
    std::string norm = j.value("normalization", std::string("zscore"));
    if (norm == "zscore")
        schema.scheme = NormScheme::ZScore;
    else if (norm == "minmax")
        schema.scheme = NormScheme::MinMax;
    else
        throw LoadError("unknown normalization scheme '" + norm + "'");

    const auto& feats = detail::require(j, "features", "schema");
    if (!feats.is_array() || feats.empty())
        throw LoadError("schema.features must be a non-empty array");
    for (const auto& f : feats) {
        std::string name = detail::require(f, "name", "feature").get<std::string>();
        std::string kind = detail::require(f, "kind", "feature '" + name + "'").get<std::string>();
        if (kind == "numeric") {
            if (schema.scheme == NormScheme::ZScore) {
                detail::reject_unknown(f, {"name", "kind", "domain_min", "domain_max", "mean", "std"},
                                       "feature '" + name + "'");
                schema.add_numeric(name,
                                   detail::require(f, "domain_min", name).get<double>(),
                                   detail::require(f, "domain_max", name).get<double>(),
                                   detail::require(f, "mean", name).get<double>(),
                                   detail::require(f, "std", name).get<double>());
            } else {
                detail::reject_unknown(f, {"name", "kind", "domain_min", "domain_max", "min", "max"},
                                       "feature '" + name + "'");
                schema.add_numeric(name,
                                   detail::require(f, "domain_min", name).get<double>(),
                                   detail::require(f, "domain_max", name).get<double>(),
                                   detail::require(f, "min", name).get<double>(),
                                   detail::require(f, "max", name).get<double>());
            }
        } else if (kind == "onehot") {
            detail::reject_unknown(f, {"name", "kind", "group", "category"},
                                   "feature '" + name + "'");
            schema.add_onehot(name, detail::require(f, "group", name).get<std::string>(),
                              detail::require(f, "category", name).get<std::string>());
        } else {
            throw LoadError("feature '" + name + "': unknown kind '" + kind + "'");
        }
    }
    return schema;
}

struct LoadedModel {
    ModelSpec model;
    FeatureSchema schema;
};

inline LoadedModel model_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"layers", "schema"}, "model file");
    LoadedModel out;
    out.schema = schema_from_json(detail::require(j, "schema", "model file"));

    const auto& layers = detail::require(j, "layers", "model file");
    if (!layers.is_array() || layers.empty())
        throw LoadError("model.layers must be a non-empty array");
    for (const auto& lj : layers) {
        detail::reject_unknown(lj, {"weights", "bias", "activation"}, "layer");
        DenseLayer layer;
        for (const auto& row : detail::require(lj, "weights", "layer"))
            layer.weights.push_back(row.get<std::vector<double>>());
        layer.bias = detail::require(lj, "bias", "layer").get<std::vector<double>>();
        std::string act = detail::require(lj, "activation", "layer").get<std::string>();
        if (act == "relu")
            layer.activation = Activation::Relu;
        else if (act == "linear")
            layer.activation = Activation::Linear;
        else
            throw LoadError("unknown activation '" + act + "'");
        out.model.layers.push_back(std::move(layer));
    }
    out.model.input_dim = out.schema.feature_count();
    out.model.validate();
    return out;
}

inline nlohmann::json schema_to_json(const FeatureSchema& schema) {
    nlohmann::json j;
    j["normalization"] = schema.scheme == NormScheme::ZScore ? "zscore" : "minmax";
    nlohmann::json feats = nlohmann::json::array();
    for (const Feature& f : schema.features()) {
        nlohmann::json fj;
        fj["name"] = f.name;
        if (f.kind == FeatureKind::Numeric) {
            fj["kind"] = "numeric";
            fj["domain_min"] = f.domain_min;
            fj["domain_max"] = f.domain_max;
            if (schema.scheme == NormScheme::ZScore) {
                fj["mean"] = f.mean;
                fj["std"] = f.std_dev;
            } else {
                fj["min"] = f.lo;
                fj["max"] = f.hi;
            }
        } else {
            fj["kind"] = "onehot";
            fj["group"] = f.group;
            fj["category"] = f.category;
        }
        feats.push_back(fj);
    }
    j["features"] = feats;
    return j;
}

inline nlohmann::json model_to_json(const ModelSpec& model, const FeatureSchema& schema) {
    nlohmann::json j;
    nlohmann::json layers = nlohmann::json::array();
    for (const DenseLayer& l : model.layers) {
        nlohmann::json lj;
        lj["weights"] = l.weights;
        lj["bias"] = l.bias;
        lj["activation"] = l.activation == Activation::Relu ? "relu" : "linear";
        layers.push_back(lj);
    }
    j["layers"] = layers;
    j["schema"] = schema_to_json(schema);
    return j;
}

inline LoadedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw LoadError("model file " + path + ": " + e.what());
    }
    try {
        return model_from_json(j);
    } catch (const LoadError& e) {
        throw LoadError("model file " + path + ": " + e.what());
    }
}

}  // namespace recourse
