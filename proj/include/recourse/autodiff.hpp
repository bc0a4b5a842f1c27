#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recourse/common.hpp"

namespace recourse::ad {

using NodeId = int32_t;

enum class Op : std::uint8_t {
    Constant,
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Abs,
    Max,
    Min,
    Relu,
    PowConst,
};

struct Node {
    Op op{Op::Constant};
    NodeId a{-1};
    NodeId b{-1};
    double aux{0.0};  // Constant value, or PowConst exponent
};

/// Append-only scalar expression graph. Node inputs always have smaller ids
/// than the node itself, so a single left-to-right sweep is a valid forward
/// pass and the reverse sweep is a valid backward pass. The graph structure
/// is immutable once built and may be shared read-only across workers; value
/// and adjoint buffers live outside the tape (see EvalBuffers).
class Tape {
public:
    NodeId constant(double v) { return push({Op::Constant, -1, -1, v}); }

    NodeId input(const std::string& name) {
        if (by_name_.count(name))
            throw Error("duplicate input slot '" + name + "'");
        NodeId id = push({Op::Input, -1, -1, 0.0});
        by_name_.emplace(name, static_cast<int>(inputs_.size()));
        inputs_.emplace_back(name, id);
        return id;
    }

    NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
    NodeId div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }
    NodeId max(NodeId a, NodeId b) { return binary(Op::Max, a, b); }
    NodeId min(NodeId a, NodeId b) { return binary(Op::Min, a, b); }
    NodeId neg(NodeId a) { return unary(Op::Neg, a); }
    NodeId exp(NodeId a) { return unary(Op::Exp, a); }
    NodeId log(NodeId a) { return unary(Op::Log, a); }
    NodeId abs(NodeId a) { return unary(Op::Abs, a); }
    NodeId relu(NodeId a) { return unary(Op::Relu, a); }

    NodeId pow_const(NodeId a, double exponent) {
        check(a);
        return push({Op::PowConst, a, -1, exponent});
    }

    size_t size() const { return nodes_.size(); }
    const Node& operator[](NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    /// Named external inputs in registration order: (name, node id).
    const std::vector<std::pair<std::string, NodeId>>& inputs() const {
        return inputs_;
    }

    std::optional<NodeId> find_input(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        if (it == by_name_.end()) return std::nullopt;
        return inputs_[static_cast<size_t>(it->second)].second;
    }

    NodeId input_node(std::string_view name) const {
        auto id = find_input(name);
        if (!id) throw Error("no input slot named '" + std::string(name) + "'");
        return *id;
    }

private:
    NodeId push(Node n) {
        nodes_.push_back(n);
        return static_cast<NodeId>(nodes_.size() - 1);
    }
    NodeId unary(Op op, NodeId a) {
        check(a);
        return push({op, a, -1, 0.0});
    }
    NodeId binary(Op op, NodeId a, NodeId b) {
        check(a);
        check(b);
        return push({op, a, b, 0.0});
    }
    void check(NodeId id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw Error("tape node id out of range: " + std::to_string(id));
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, NodeId>> inputs_;
    std::unordered_map<std::string, int> by_name_;
};

/// Per-worker value/adjoint storage for one tape. Never shared.
struct EvalBuffers {
    std::vector<double> value;
    std::vector<double> adjoint;
};

inline constexpr double kDivEpsilon = 1e-12;

namespace detail {

inline double eval_node(const Tape& tape, const Node& n, NodeId id,
                        std::span<const double> v) {
    switch (n.op) {
        case Op::Constant: return n.aux;
        case Op::Input: return v[static_cast<size_t>(id)];  // preloaded
        case Op::Add: return v[n.a] + v[n.b];
        case Op::Sub: return v[n.a] - v[n.b];
        case Op::Mul: return v[n.a] * v[n.b];
        case Op::Div:
            if (std::fabs(v[n.b]) < kDivEpsilon)
                throw EvalError(recourse::detail::format(
                    "division by near-zero denominator (|d|=%g) at node %d",
                    std::fabs(v[n.b]), n.b));
            return v[n.a] / v[n.b];
        case Op::Neg: return -v[n.a];
        case Op::Exp: return std::exp(v[n.a]);
        case Op::Log:
            if (v[n.a] <= 0.0)
                throw EvalError(recourse::detail::format(
                    "log of non-positive value %g at node %d", v[n.a], n.a));
            return std::log(v[n.a]);
        case Op::Abs: return std::fabs(v[n.a]);
        case Op::Max: return v[n.a] >= v[n.b] ? v[n.a] : v[n.b];
        case Op::Min: return v[n.a] <= v[n.b] ? v[n.a] : v[n.b];
        case Op::Relu: return v[n.a] > 0.0 ? v[n.a] : 0.0;
        case Op::PowConst: return std::pow(v[n.a], n.aux);
    }
    throw Error("unreachable op");
    (void)tape;
}

}  // namespace detail

/// Forward sweep with input values preloaded into buf.value at the input
/// nodes. Every other entry is recomputed. Throws EvalError naming the node
/// on non-finite intermediates.
inline void forward_preloaded(const Tape& tape, EvalBuffers& buf) {
    buf.value.resize(tape.size());
    for (NodeId id = 0; id < static_cast<NodeId>(tape.size()); ++id) {
        const Node& n = tape[id];
        double out = detail::eval_node(tape, n, id, buf.value);
        if (!std::isfinite(out))
            throw EvalError(recourse::detail::format(
                "non-finite value %g at node %d (op %d)", out, id,
                static_cast<int>(n.op)));
        buf.value[static_cast<size_t>(id)] = out;
    }
}

/// Forward pass from named bindings. Every input slot must be bound.
inline void forward(const Tape& tape, const std::map<std::string, double>& bindings,
                    EvalBuffers& buf) {
    buf.value.assign(tape.size(), 0.0);
    for (const auto& [name, id] : tape.inputs()) {
        auto it = bindings.find(name);
        if (it == bindings.end())
            throw EvalError("missing binding for input slot '" + name + "'");
        buf.value[static_cast<size_t>(id)] = it->second;
    }
    forward_preloaded(tape, buf);
}

/// Backward sweep from `root`; fills buf.adjoint with d(root)/d(node).
/// Requires a prior forward pass on the same buffers.
///
/// Subgradient conventions at kinks: max/min route to the winning argument
/// with ties going to the first; d|x|/dx at 0 is 0; relu'(0) is 0.
inline void backward_into(const Tape& tape, NodeId root, EvalBuffers& buf) {
    if (root < 0 || static_cast<size_t>(root) >= tape.size())
        throw Error("backward root " + std::to_string(root) + " not in tape");
    if (buf.value.size() != tape.size())
        throw Error("backward called before forward");
    buf.adjoint.assign(tape.size(), 0.0);
    auto& adj = buf.adjoint;
    const auto& v = buf.value;
    adj[static_cast<size_t>(root)] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        double g = adj[static_cast<size_t>(id)];
        if (g == 0.0) continue;
        const Node& n = tape[id];
        switch (n.op) {
            case Op::Constant:
            case Op::Input: break;
            case Op::Add:
                adj[n.a] += g;
                adj[n.b] += g;
                break;
            case Op::Sub:
                adj[n.a] += g;
                adj[n.b] -= g;
                break;
            case Op::Mul:
                adj[n.a] += g * v[n.b];
                adj[n.b] += g * v[n.a];
                break;
            case Op::Div:
                adj[n.a] += g / v[n.b];
                adj[n.b] -= g * v[n.a] / (v[n.b] * v[n.b]);
                break;
            case Op::Neg: adj[n.a] -= g; break;
            case Op::Exp: adj[n.a] += g * v[static_cast<size_t>(id)]; break;
            case Op::Log: adj[n.a] += g / v[n.a]; break;
            case Op::Abs:
                adj[n.a] += g * (v[n.a] > 0.0 ? 1.0 : (v[n.a] < 0.0 ? -1.0 : 0.0));
                break;
            case Op::Max:
                adj[v[n.a] >= v[n.b] ? n.a : n.b] += g;
                break;
            case Op::Min:
                adj[v[n.a] <= v[n.b] ? n.a : n.b] += g;
                break;
            case Op::Relu:
                if (v[n.a] > 0.0) adj[n.a] += g;
                break;
            case Op::PowConst:
                adj[n.a] += g * n.aux * std::pow(v[n.a], n.aux - 1.0);
                break;
        }
    }
}

/// Backward pass returning d(root)/d(slot) for every named input slot.
inline std::map<std::string, double> backward(const Tape& tape, NodeId root,
                                              EvalBuffers& buf) {
    backward_into(tape, root, buf);
    std::map<std::string, double> grads;
    for (const auto& [name, id] : tape.inputs())
        grads[name] = buf.adjoint[static_cast<size_t>(id)];
    return grads;
}

// ---------------------------------------------------------------------------
// Value: a tape node handle with scalar operator overloads. Generic code can
// be written once against `double` or `Value`; the Value instantiation emits
// graph nodes instead of computing.
// ---------------------------------------------------------------------------

class Value {
public:
    Value() = default;
    Value(Tape& tape, NodeId id) : tape_(&tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    NodeId id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_{nullptr};
    NodeId id_{-1};

    friend Tape& same_tape(Value a, Value b);
};

inline Tape& same_tape(Value a, Value b) {
    if (a.tape_ != b.tape_) throw Error("values belong to different tapes");
    return *a.tape_;
}

inline Value operator+(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).add(a.id(), b.id())}; }
inline Value operator-(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).sub(a.id(), b.id())}; }
inline Value operator*(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).mul(a.id(), b.id())}; }
inline Value operator/(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).div(a.id(), b.id())}; }
inline Value operator-(Value a) { return {a.tape(), a.tape().neg(a.id())}; }

inline Value lift(Tape& tape, double v) { return {tape, tape.constant(v)}; }

inline Value operator+(Value a, double c) { return a + lift(a.tape(), c); }
inline Value operator+(double c, Value a) { return lift(a.tape(), c) + a; }
inline Value operator-(Value a, double c) { return a - lift(a.tape(), c); }
inline Value operator-(double c, Value a) { return lift(a.tape(), c) - a; }
inline Value operator*(Value a, double c) { return a * lift(a.tape(), c); }
inline Value operator*(double c, Value a) { return lift(a.tape(), c) * a; }
inline Value operator/(Value a, double c) { return a / lift(a.tape(), c); }
inline Value operator/(double c, Value a) { return lift(a.tape(), c) / a; }

inline Value exp(Value a) { return {a.tape(), a.tape().exp(a.id())}; }
inline Value log(Value a) { return {a.tape(), a.tape().log(a.id())}; }
inline Value abs(Value a) { return {a.tape(), a.tape().abs(a.id())}; }
inline Value relu(Value a) { return {a.tape(), a.tape().relu(a.id())}; }
inline Value max(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).max(a.id(), b.id())}; }
inline Value min(Value a, Value b) { return {same_tape(a, b), same_tape(a, b).min(a.id(), b.id())}; }
inline Value max(Value a, double c) { return max(a, lift(a.tape(), c)); }
inline Value max(double c, Value a) { return max(lift(a.tape(), c), a); }
inline Value min(Value a, double c) { return min(a, lift(a.tape(), c)); }
inline Value min(double c, Value a) { return min(lift(a.tape(), c), a); }
inline Value pow_const(Value a, double exponent) {
    return {a.tape(), a.tape().pow_const(a.id(), exponent)};
}

// Plain-double counterparts so templates over the scalar type resolve both
// instantiations with unqualified calls.
inline double exp(double x) { return std::exp(x); }
inline double log(double x) {
    if (x <= 0.0)
        throw EvalError(recourse::detail::format("log of non-positive value %g", x));
    return std::log(x);
}
inline double abs(double x) { return std::fabs(x); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double pow_const(double x, double exponent) { return std::pow(x, exponent); }

inline double checked_div(double a, double b) {
    if (std::fabs(b) < kDivEpsilon)
        throw EvalError(recourse::detail::format(
            "division by near-zero denominator (|d|=%g)", std::fabs(b)));
    return a / b;
}
inline Value checked_div(Value a, Value b) { return a / b; }

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string slot;
    double analytic{0.0};
    double numeric{0.0};
    double rel_err{0.0};
    bool kink{false};  // input sits within `step` of a max/min/abs/relu kink
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool pass{true};
    double step{0.0};
    double tol{0.0};
};

namespace detail {

/// Which branch each kink op takes, used to detect that a perturbed input
/// crossed a non-differentiable point.
inline std::vector<int8_t> branch_signature(const Tape& tape,
                                            std::span<const double> v) {
    std::vector<int8_t> sig;
    for (NodeId id = 0; id < static_cast<NodeId>(tape.size()); ++id) {
        const Node& n = tape[id];
        switch (n.op) {
            case Op::Relu: sig.push_back(v[n.a] > 0.0); break;
            case Op::Abs: sig.push_back(v[n.a] > 0.0 ? 1 : (v[n.a] < 0.0 ? -1 : 0)); break;
            case Op::Max: sig.push_back(v[n.a] >= v[n.b]); break;
            case Op::Min: sig.push_back(v[n.a] <= v[n.b]); break;
            default: break;
        }
    }
    return sig;
}

}  // namespace detail

/// Compare backward() against central finite differences, slot by slot.
/// Slots whose +/-step evaluations land on different sides of a kink are
/// flagged instead of failed. rel_err = |a - n| / max(1, |a|).
inline GradCheckReport grad_check(const Tape& tape, NodeId root,
                                  const std::map<std::string, double>& bindings,
                                  double step, double tol) {
    if (step <= 0.0) throw Error("grad_check step must be positive");
    GradCheckReport report;
    report.step = step;
    report.tol = tol;

    EvalBuffers buf;
    forward(tape, bindings, buf);
    auto grads = backward(tape, root, buf);

    for (const auto& [name, node] : tape.inputs()) {
        (void)node;
        auto plus = bindings;
        auto minus = bindings;
        plus[name] += step;
        minus[name] -= step;
        EvalBuffers bp, bm;
        forward(tape, plus, bp);
        forward(tape, minus, bm);
        double numeric =
            (bp.value[static_cast<size_t>(root)] - bm.value[static_cast<size_t>(root)]) /
            (2.0 * step);
        GradCheckEntry e;
        e.slot = name;
        e.analytic = grads[name];
        e.numeric = numeric;
        e.rel_err = std::fabs(e.analytic - numeric) /
                    std::max(1.0, std::fabs(e.analytic));
        e.kink = detail::branch_signature(tape, bp.value) !=
                 detail::branch_signature(tape, bm.value);
        if (!e.kink && e.rel_err > tol) report.pass = false;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace recourse::ad
