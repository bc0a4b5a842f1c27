#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "recourse/autodiff.hpp"
#include "recourse/common.hpp"
#include "recourse/expr.hpp"
#include "recourse/model.hpp"
#include "recourse/schema.hpp"

namespace recourse {

enum class ActionKind { Continuous, Categorical };

struct Transform {
    std::string feature;
    int feature_index{-1};
    ExprPtr expr;
};

/// One precondition atom together with its relaxation scale. The relaxed
/// penalty for slack d (positive = satisfied) is tau * exp(-tau_prime * d),
/// which equals tau exactly on the boundary and decays with the slack.
struct RelaxedAtom {
    PredAtom atom;
    double tau{1.0};
    double tau_prime{1.0};
};

struct ActionSpec {
    std::string name;
    ActionKind kind{ActionKind::Continuous};
    int param_count{0};

    // continuous: simultaneous feature assignments; all transform
    // expressions read the pre-action state.
    std::vector<Transform> transforms;

    // categorical: deterministically set one one-hot group.
    std::string group;
    std::string set_to;

    ExprPtr cost;
    Pred precondition;
    std::vector<RelaxedAtom> relaxed;  // same atoms, with resolved scales

    /// Feature indices this action writes; everything else passes through.
    std::vector<int> footprint;
};

struct Catalog {
    std::vector<ActionSpec> actions;

    const ActionSpec& action(int idx) const {
        if (idx < 0 || static_cast<size_t>(idx) >= actions.size())
            throw Error("action index out of range: " + std::to_string(idx));
        return actions[static_cast<size_t>(idx)];
    }
    size_t size() const { return actions.size(); }
};

/// A concrete candidate plan: the chosen action indices plus one parameter
/// vector per step. Repeats are allowed.
struct ActionSequence {
    std::vector<int> action_indices;
    std::vector<std::vector<double>> step_params;

    size_t length() const { return action_indices.size(); }

    void validate(const Catalog& catalog) const {
        if (action_indices.size() != step_params.size())
            throw Error("action sequence: index and parameter lists differ in length");
        for (size_t i = 0; i < action_indices.size(); ++i) {
            const ActionSpec& a = catalog.action(action_indices[i]);
            if (step_params[i].size() != static_cast<size_t>(a.param_count))
                throw Error(detail::format(
                    "step %zu: action '%s' takes %d parameters, got %zu", i,
                    a.name.c_str(), a.param_count, step_params[i].size()));
        }
    }
};

// ---------------------------------------------------------------------------
// Applying actions.
// ---------------------------------------------------------------------------

/// Apply one action. All transforms read the incoming state, so multi-feature
/// actions see a consistent snapshot (simultaneous assignment). Differentiable
/// when instantiated with tape values.
template <class S, class Lift>
std::vector<S> apply_action(const ActionSpec& action, const FeatureSchema& schema,
                            std::span<const S> x, std::span<const S> params,
                            std::span<const double> original, Lift lift) {
    if (params.size() != static_cast<size_t>(action.param_count))
        throw Error(detail::format("action '%s' takes %d parameters, got %zu",
                                   action.name.c_str(), action.param_count,
                                   params.size()));
    std::vector<S> out(x.begin(), x.end());
    if (action.kind == ActionKind::Categorical) {
        for (int m : schema.group_members(action.group)) {
            const Feature& f = schema.feature(m);
            out[static_cast<size_t>(m)] = lift(f.category == action.set_to ? 1.0 : 0.0);
        }
        return out;
    }
    EvalContext<S> ctx{&schema, x, params, original};
    std::vector<S> values;
    values.reserve(action.transforms.size());
    for (const Transform& t : action.transforms) {
        try {
            values.push_back(eval_expr<S>(*t.expr, ctx, lift));
        } catch (const Error& e) {
            throw EvalError("action '" + action.name + "', transform of '" +
                            t.feature + "': " + e.what());
        }
    }
    for (size_t i = 0; i < action.transforms.size(); ++i)
        out[static_cast<size_t>(action.transforms[i].feature_index)] = values[i];
    return out;
}

inline std::vector<double> apply_action(const ActionSpec& action,
                                        const FeatureSchema& schema,
                                        std::span<const double> x,
                                        std::span<const double> params,
                                        std::span<const double> original) {
    return apply_action<double>(action, schema, x, params, original,
                                [](double v) { return v; });
}

/// Apply a whole sequence; returns the trajectory x_0 .. x_k including every
/// intermediate state. Pure.
template <class S, class Lift>
std::vector<std::vector<S>> apply_sequence(const Catalog& catalog,
                                           const FeatureSchema& schema,
                                           const ActionSequence& seq,
                                           std::span<const S> start,
                                           std::span<const double> original,
                                           Lift lift) {
    std::vector<std::vector<S>> trajectory;
    trajectory.emplace_back(start.begin(), start.end());
    for (size_t i = 0; i < seq.length(); ++i) {
        const ActionSpec& a = catalog.action(seq.action_indices[i]);
        trajectory.push_back(apply_action<S>(a, schema,
                                             std::span<const S>(trajectory.back()),
                                             std::span<const S>(seq.step_params[i]),
                                             original, lift));
    }
    return trajectory;
}

inline std::vector<std::vector<double>> apply_sequence(const Catalog& catalog,
                                                       const FeatureSchema& schema,
                                                       const ActionSequence& seq,
                                                       const Instance& start) {
    return apply_sequence<double>(catalog, schema, seq,
                                  std::span<const double>(start.raw),
                                  std::span<const double>(start.raw),
                                  [](double v) { return v; });
}

// ---------------------------------------------------------------------------
// Precondition relaxation.
// ---------------------------------------------------------------------------

/// Signed slack of an atom: positive iff the comparison holds (strictness
/// aside). For lhs > rhs it is lhs - rhs; for lhs < rhs, rhs - lhs.
template <class S, class Lift>
S atom_slack(const PredAtom& atom, const EvalContext<S>& ctx, Lift lift) {
    S l = eval_expr<S>(*atom.lhs, ctx, lift);
    S r = eval_expr<S>(*atom.rhs, ctx, lift);
    if (atom.cmp == Cmp::Gt || atom.cmp == Cmp::Ge) return l - r;
    return r - l;
}

/// Smooth penalty tau * exp(-tau_prime * slack) standing in for the Boolean
/// atom. Exactly tau at zero slack; strictly decreasing in the slack. Strict
/// and non-strict comparisons share the same relaxation.
template <class S, class Lift>
S relax_atom(const RelaxedAtom& ra, const EvalContext<S>& ctx, Lift lift) {
    using ad::exp;
    S slack = atom_slack<S>(ra.atom, ctx, lift);
    return lift(ra.tau) * exp(lift(-ra.tau_prime) * slack);
}

inline double relax_atom(const RelaxedAtom& ra, const EvalContext<double>& ctx) {
    return relax_atom<double>(ra, ctx, [](double v) { return v; });
}

/// Sum of atom relaxations: the conjunction's relaxed penalty.
template <class S, class Lift>
S relax_pred(const std::vector<RelaxedAtom>& atoms, const EvalContext<S>& ctx,
             Lift lift) {
    S total = lift(0.0);
    for (const RelaxedAtom& ra : atoms) total = total + relax_atom<S>(ra, ctx, lift);
    return total;
}

// ---------------------------------------------------------------------------
// Sequence-level costs and feasibility.
// ---------------------------------------------------------------------------

struct SequenceCost {
    double exact_cost{0.0};    // sum of action costs only
    double relaxed_cost{0.0};  // exact plus precondition penalties
};

/// Exact and relaxed cost of a sequence. Categorical steps contribute their
/// cost but no relaxation term (they have no parameters to steer).
inline SequenceCost sequence_cost(const Catalog& catalog, const FeatureSchema& schema,
                                  const ActionSequence& seq, const Instance& start) {
    seq.validate(catalog);
    SequenceCost out;
    auto identity = [](double v) { return v; };
    std::vector<double> state = start.raw;
    for (size_t i = 0; i < seq.length(); ++i) {
        const ActionSpec& a = catalog.action(seq.action_indices[i]);
        EvalContext<double> ctx{&schema, state, seq.step_params[i], start.raw};
        double c = eval_expr(*a.cost, ctx);
        out.exact_cost += c;
        out.relaxed_cost += c;
        if (a.kind == ActionKind::Continuous)
            out.relaxed_cost += relax_pred<double>(a.relaxed, ctx, identity);
        state = apply_action(a, schema, state, seq.step_params[i], start.raw);
    }
    return out;
}

struct Feasibility {
    bool preconds_ok{false};
    bool flipped{false};
    bool ok() const { return preconds_ok && flipped; }
};

/// Exact Boolean preconditions along the trajectory plus the classification
/// test at the endpoint. This is the sole feasibility oracle; every other
/// component defers to it.
inline Feasibility check_feasible(const Catalog& catalog, const FeatureSchema& schema,
                                  const ModelSpec& model, const ActionSequence& seq,
                                  const Instance& start) {
    seq.validate(catalog);
    Feasibility out;
    out.preconds_ok = true;
    std::vector<double> state = start.raw;
    for (size_t i = 0; i < seq.length(); ++i) {
        const ActionSpec& a = catalog.action(seq.action_indices[i]);
        EvalContext<double> ctx{&schema, state, seq.step_params[i], start.raw};
        if (!eval_pred(a.precondition, ctx)) {
            out.preconds_ok = false;
            break;
        }
        state = apply_action(a, schema, state, seq.step_params[i], start.raw);
    }
    if (out.preconds_ok)
        out.flipped = predict(model, schema, state) == 1;
    return out;
}

// ---------------------------------------------------------------------------
// Catalog loading.
// ---------------------------------------------------------------------------

namespace actiondetail {

/// Default relaxation scale: tau = tau_prime = 1000 / s with s the span of
/// the single feature the atom constrains. An atom that mentions several
/// features, mixes raw and normalized space, or mentions none must carry
/// explicit scales in the catalog.
inline std::optional<std::pair<double, double>> default_scales(
    const PredAtom& atom, const FeatureSchema& schema) {
    ExprRefs refs;
    collect_refs(*atom.lhs, refs);
    collect_refs(*atom.rhs, refs);
    std::set<std::string> names;
    bool raw = false, normalized = false;
    for (const auto& [name, space] : refs.features) {
        names.insert(name);
        if (space == RefSpace::Normalized)
            normalized = true;
        else
            raw = true;  // x and x0 are both raw-space reads
    }
    if (names.size() != 1 || (raw && normalized)) return std::nullopt;
    int idx = schema.index_of(*names.begin());
    double span = normalized ? schema.normalized_span(idx) : schema.domain_span(idx);
    double scale = 1000.0 / span;
    return std::make_pair(scale, scale);
}

inline int max_param_index(const ActionSpec& a) {
    ExprRefs refs;
    if (a.cost) collect_refs(*a.cost, refs);
    for (const Transform& t : a.transforms) collect_refs(*t.expr, refs);
    for (const PredAtom& atom : a.precondition.atoms) {
        collect_refs(*atom.lhs, refs);
        collect_refs(*atom.rhs, refs);
    }
    return refs.max_param_index;
}

/// Probe the cost expression on random precondition-satisfying bindings and
/// reject catalogs whose costs can go negative. Deterministic.
inline void probe_cost(const ActionSpec& a, const FeatureSchema& schema) {
    Rng rng(0x5eedf00dULL + fnv1a(a.name));
    double param_range = 1.0;
    for (int idx : a.footprint)
        param_range = std::max(param_range, schema.domain_span(idx));
    int tried = 0;
    for (int iter = 0; iter < 512 && tried < 128; ++iter) {
        std::vector<double> x(schema.feature_count(), 0.0);
        for (size_t i = 0; i < schema.feature_count(); ++i) {
            const Feature& f = schema.feature(static_cast<int>(i));
            x[i] = f.kind == FeatureKind::Numeric
                       ? rng.uniform(f.domain_min, f.domain_max)
                       : 0.0;
        }
        for (const auto& [group, members] : schema.groups()) {
            (void)group;
            x[static_cast<size_t>(members[rng.below(members.size())])] = 1.0;
        }
        std::vector<double> params(static_cast<size_t>(a.param_count));
        for (auto& p : params) p = rng.uniform(-param_range, param_range);
        EvalContext<double> ctx{&schema, x, params, x};
        try {
            if (!eval_pred(a.precondition, ctx)) continue;
            ++tried;
            double c = eval_expr(*a.cost, ctx);
            if (c < 0.0)
                throw LoadError(detail::format(
                    "action '%s': cost is negative (%g) on a binding satisfying "
                    "its preconditions",
                    a.name.c_str(), c));
        } catch (const EvalError&) {
            continue;  // probe hit a domain error; not this probe's business
        }
    }
}

}  // namespace actiondetail

inline Catalog catalog_from_json(const nlohmann::json& j, const FeatureSchema& schema) {
    detail::reject_unknown(j, {"actions"}, "catalog file");
    const auto& actions = detail::require(j, "actions", "catalog file");
    if (!actions.is_array() || actions.empty())
        throw LoadError("catalog.actions must be a non-empty array");

    Catalog catalog;
    for (const auto& aj : actions) {
        ActionSpec a;
        a.name = detail::require(aj, "name", "action").get<std::string>();
        const std::string where = "action '" + a.name + "'";
        std::string kind = detail::require(aj, "kind", where).get<std::string>();

        if (kind == "continuous") {
            detail::reject_unknown(aj,
                                   {"name", "kind", "params", "transforms", "cost_expr",
                                    "precondition_expr", "relaxation"},
                                   where);
            a.kind = ActionKind::Continuous;
            a.param_count = detail::require(aj, "params", where).get<int>();
            if (a.param_count < 0) throw LoadError(where + ": params must be >= 0");
            const auto& transforms = detail::require(aj, "transforms", where);
            if (!transforms.is_array() || transforms.empty())
                throw LoadError(where + ": transforms must be a non-empty array");
            for (const auto& tj : transforms) {
                detail::reject_unknown(tj, {"feature", "expr"}, where + " transform");
                Transform t;
                t.feature = detail::require(tj, "feature", where).get<std::string>();
                auto idx = schema.find(t.feature);
                if (!idx)
                    throw LoadError(where + ": transform targets unknown feature '" +
                                    t.feature + "'");
                t.feature_index = *idx;
                t.expr = parse_expr(detail::require(tj, "expr", where).get<std::string>());
                a.transforms.push_back(std::move(t));
            }
            std::set<int> fp;
            for (const Transform& t : a.transforms) {
                if (fp.count(t.feature_index))
                    throw LoadError(where + ": feature '" + t.feature +
                                    "' assigned twice in one action");
                fp.insert(t.feature_index);
            }
            a.footprint.assign(fp.begin(), fp.end());
        } else if (kind == "categorical") {
            detail::reject_unknown(aj,
                                   {"name", "kind", "group", "set_to", "cost_expr",
                                    "precondition_expr"},
                                   where);
            a.kind = ActionKind::Categorical;
            a.param_count = 0;
            a.group = detail::require(aj, "group", where).get<std::string>();
            a.set_to = detail::require(aj, "set_to", where).get<std::string>();
            bool found = false;
            for (int m : schema.group_members(a.group))
                if (schema.feature(m).category == a.set_to) found = true;
            if (!found)
                throw LoadError(where + ": group '" + a.group + "' has no category '" +
                                a.set_to + "'");
            a.footprint = schema.group_members(a.group);
        } else {
            throw LoadError(where + ": unknown kind '" + kind + "'");
        }

        try {
            a.cost = parse_expr(detail::require(aj, "cost_expr", where).get<std::string>());
            if (auto it = aj.find("precondition_expr");
                it != aj.end() && !it->get<std::string>().empty())
                a.precondition = parse_pred(it->get<std::string>());
        } catch (const ParseError& e) {
            throw LoadError(where + ": " + e.what());
        }

        // Resolve every feature reference and parameter index now.
        {
            ExprRefs refs;
            collect_refs(*a.cost, refs);
            for (const Transform& t : a.transforms) collect_refs(*t.expr, refs);
            for (const PredAtom& atom : a.precondition.atoms) {
                collect_refs(*atom.lhs, refs);
                collect_refs(*atom.rhs, refs);
            }
            for (const auto& [name, space] : refs.features) {
                (void)space;
                if (!schema.find(name))
                    throw LoadError(where + ": references unknown feature '" + name + "'");
            }
            if (refs.max_param_index >= a.param_count)
                throw LoadError(detail::format(
                    "%s: p[%d] used but only %d parameter(s) declared", where.c_str(),
                    refs.max_param_index, a.param_count));
        }

        // Relaxation scales for continuous actions: per-atom overrides first,
        // the 1000/s rule otherwise.
        if (a.kind == ActionKind::Continuous) {
            std::vector<std::optional<std::pair<double, double>>> overrides(
                a.precondition.atoms.size());
            if (auto it = aj.find("relaxation"); it != aj.end()) {
                for (const auto& rj : *it) {
                    detail::reject_unknown(rj, {"atom", "tau", "tau_prime"},
                                           where + " relaxation entry");
                    int idx = detail::require(rj, "atom", where).get<int>();
                    if (idx < 0 || static_cast<size_t>(idx) >= a.precondition.atoms.size())
                        throw LoadError(where + ": relaxation entry for missing atom " +
                                        std::to_string(idx));
                    double tau = detail::require(rj, "tau", where).get<double>();
                    double tau_prime = detail::require(rj, "tau_prime", where).get<double>();
                    if (!(tau > 0.0) || !(tau_prime > 0.0) || !std::isfinite(tau) ||
                        !std::isfinite(tau_prime))
                        throw LoadError(where + ": tau and tau_prime must be positive finite");
                    overrides[static_cast<size_t>(idx)] = std::make_pair(tau, tau_prime);
                }
            }
            for (size_t i = 0; i < a.precondition.atoms.size(); ++i) {
                RelaxedAtom ra;
                ra.atom = a.precondition.atoms[i];
                if (overrides[i]) {
                    ra.tau = overrides[i]->first;
                    ra.tau_prime = overrides[i]->second;
                } else if (auto scales =
                               actiondetail::default_scales(ra.atom, schema)) {
                    ra.tau = scales->first;
                    ra.tau_prime = scales->second;
                } else {
                    throw LoadError(detail::format(
                        "%s: atom %zu ('%s') does not constrain a single feature in a "
                        "single space; give explicit tau/tau_prime in a 'relaxation' "
                        "entry",
                        where.c_str(), i, to_string(a.precondition.atoms[i]).c_str()));
                }
                a.relaxed.push_back(std::move(ra));
            }
        }

        actiondetail::probe_cost(a, schema);
        catalog.actions.push_back(std::move(a));
    }
    return catalog;
}

inline Catalog load_catalog(const std::string& path, const FeatureSchema& schema) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open catalog file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw LoadError("catalog file " + path + ": " + e.what());
    }
    try {
        return catalog_from_json(j, schema);
    } catch (const LoadError& e) {
        throw LoadError("catalog file " + path + ": " + e.what());
    }
}

}  // namespace recourse
