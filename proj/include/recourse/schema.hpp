#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recourse/autodiff.hpp"
#include "recourse/common.hpp"

namespace recourse {

enum class NormScheme { ZScore, MinMax };
enum class FeatureKind { Numeric, OneHot };

struct Feature {
    std::string name;
    FeatureKind kind{FeatureKind::Numeric};
    double domain_min{0.0};
    double domain_max{1.0};
    // z-score: (v - mean) / std.  min-max: (v - lo) / (hi - lo).
    double mean{0.0}, std_dev{1.0};
    double lo{0.0}, hi{1.0};
    // one-hot members only
    std::string group;
    std::string category;
};

/// Ordered feature list plus one-hot group structure. Immutable after load;
/// shared freely across workers.
class FeatureSchema {
public:
    NormScheme scheme{NormScheme::ZScore};

    void add_numeric(const std::string& name, double domain_min, double domain_max,
                     double a, double b) {
        if (!(domain_max > domain_min))
            throw LoadError("feature '" + name + "': domain_max must exceed domain_min");
        Feature f;
        f.name = name;
        f.kind = FeatureKind::Numeric;
        f.domain_min = domain_min;
        f.domain_max = domain_max;
        if (scheme == NormScheme::ZScore) {
            if (b == 0.0) throw LoadError("feature '" + name + "': std must be nonzero");
            f.mean = a;
            f.std_dev = b;
        } else {
            if (!(b > a)) throw LoadError("feature '" + name + "': max must exceed min");
            f.lo = a;
            f.hi = b;
        }
        push(std::move(f));
    }

    void add_onehot(const std::string& name, const std::string& group,
                    const std::string& category) {
        Feature f;
        f.name = name;
        f.kind = FeatureKind::OneHot;
        f.domain_min = 0.0;
        f.domain_max = 1.0;
        f.group = group;
        f.category = category;
        int idx = static_cast<int>(features_.size());
        push(std::move(f));
        groups_[group].push_back(idx);
    }

    const std::vector<Feature>& features() const { return features_; }
    const Feature& feature(int idx) const { return features_[static_cast<size_t>(idx)]; }
    size_t feature_count() const { return features_.size(); }

    const std::map<std::string, std::vector<int>>& groups() const { return groups_; }

    const std::vector<int>& group_members(const std::string& group) const {
        auto it = groups_.find(group);
        if (it == groups_.end()) throw Error("unknown one-hot group '" + group + "'");
        return it->second;
    }

    std::optional<int> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    int index_of(std::string_view name) const {
        auto idx = find(name);
        if (!idx) throw Error("unknown feature '" + std::string(name) + "'");
        return *idx;
    }

    /// Size of the raw feature domain, s = domain_max - domain_min.
    double domain_span(int idx) const {
        const Feature& f = feature(idx);
        return f.domain_max - f.domain_min;
    }

    /// Span of the same domain after normalization.
    double normalized_span(int idx) const {
        const Feature& f = feature(idx);
        if (f.kind == FeatureKind::OneHot) return 1.0;
        if (scheme == NormScheme::ZScore) return (f.domain_max - f.domain_min) / f.std_dev;
        return (f.domain_max - f.domain_min) / (f.hi - f.lo);
    }

private:
    void push(Feature f) {
        if (index_.count(f.name)) throw LoadError("duplicate feature name '" + f.name + "'");
        index_.emplace(f.name, static_cast<int>(features_.size()));
        features_.push_back(std::move(f));
    }

    std::vector<Feature> features_;
    std::map<std::string, std::vector<int>> groups_;
    std::unordered_map<std::string, int> index_;
};

/// Map one raw-space value into the network's input space. One-hot features
/// pass through unchanged. Works on plain doubles or tape values.
template <class S>
S normalize_feature(const FeatureSchema& schema, int idx, S v) {
    const Feature& f = schema.feature(idx);
    if (f.kind == FeatureKind::OneHot) return v;
    if (schema.scheme == NormScheme::ZScore) return (v - f.mean) / f.std_dev;
    return (v - f.lo) / (f.hi - f.lo);
}

template <class S>
std::vector<S> normalize(const FeatureSchema& schema, std::span<const S> raw) {
    if (raw.size() != schema.feature_count())
        throw Error(detail::format("normalize: got %zu values for %zu features",
                                   raw.size(), schema.feature_count()));
    std::vector<S> out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i)
        out.push_back(normalize_feature(schema, static_cast<int>(i), raw[i]));
    return out;
}

/// A raw-space data point. `label_hint` is the observed class when known;
/// it is informational only.
struct Instance {
    std::vector<double> raw;
    std::optional<int> label_hint;
    int id{0};
};

/// Check the structural invariants of a raw vector against the schema:
/// numeric values inside their domains, each one-hot group summing to one
/// with members in {0,1}. Returns an explanation for the first violation.
inline std::optional<std::string> validate_raw(const FeatureSchema& schema,
                                               std::span<const double> raw) {
    if (raw.size() != schema.feature_count())
        return detail::format("expected %zu features, got %zu",
                              schema.feature_count(), raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const Feature& f = schema.feature(static_cast<int>(i));
        if (f.kind == FeatureKind::Numeric) {
            if (raw[i] < f.domain_min || raw[i] > f.domain_max)
                return detail::format("feature '%s' value %g outside domain [%g, %g]",
                                      f.name.c_str(), raw[i], f.domain_min,
                                      f.domain_max);
        } else if (raw[i] != 0.0 && raw[i] != 1.0) {
            return detail::format("one-hot feature '%s' must be 0 or 1, got %g",
                                  f.name.c_str(), raw[i]);
        }
    }
    for (const auto& [group, members] : schema.groups()) {
        double sum = 0.0;
        for (int m : members) sum += raw[static_cast<size_t>(m)];
        if (sum != 1.0)
            return detail::format("one-hot group '%s' sums to %g, expected 1", group.c_str(), sum);
    }
    return std::nullopt;
}

}  // namespace recourse
