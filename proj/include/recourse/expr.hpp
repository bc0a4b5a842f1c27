#pragma once

#include <cctype>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "recourse/autodiff.hpp"
#include "recourse/common.hpp"
#include "recourse/schema.hpp"

namespace recourse {

// ---------------------------------------------------------------------------
// The expression language used inside action catalogs for transforms, costs
// and preconditions:
//
//   x[name]   raw-space value of a feature on the current (pre-action) state
//   xn[name]  the same value in normalized space
//   x0[name]  the original instance's value, a constant along the trajectory
//   p[i]      i-th parameter of the owning action
//
// Operators: + - * / with the usual precedence, ^<literal> (constant
// exponent, binds tightest), unary minus, and the functions exp, log, abs,
// relu, max, min. Predicates are conjunctions of comparisons joined by &&,
// with comparators <, >, <=, >=.
// ---------------------------------------------------------------------------

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

enum class UnaryOp { Neg, Exp, Log, Abs, Relu };
enum class BinaryOp { Add, Sub, Mul, Div, Max, Min };
enum class RefSpace { Raw, Normalized, Original };

struct Expr {
    enum class Tag { Literal, FeatureRef, ParamRef, Unary, Binary, PowConst } tag;

    double literal{0.0};
    std::string feature;          // FeatureRef
    RefSpace space{RefSpace::Raw};
    int param_index{0};           // ParamRef
    UnaryOp un{UnaryOp::Neg};
    BinaryOp bin{BinaryOp::Add};
    double exponent{0.0};         // PowConst
    ExprPtr a, b;
};

inline ExprPtr make_literal(double v) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::Literal;
    e->literal = v;
    return e;
}
inline ExprPtr make_feature(std::string name, RefSpace space) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::FeatureRef;
    e->feature = std::move(name);
    e->space = space;
    return e;
}
inline ExprPtr make_param(int index) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::ParamRef;
    e->param_index = index;
    return e;
}
inline ExprPtr make_unary(UnaryOp op, ExprPtr a) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::Unary;
    e->un = op;
    e->a = std::move(a);
    return e;
}
inline ExprPtr make_binary(BinaryOp op, ExprPtr a, ExprPtr b) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::Binary;
    e->bin = op;
    e->a = std::move(a);
    e->b = std::move(b);
    return e;
}
inline ExprPtr make_pow(ExprPtr a, double exponent) {
    auto e = std::make_shared<Expr>();
    e->tag = Expr::Tag::PowConst;
    e->a = std::move(a);
    e->exponent = exponent;
    return e;
}

enum class Cmp { Lt, Gt, Le, Ge };

struct PredAtom {
    ExprPtr lhs;
    Cmp cmp{Cmp::Lt};
    ExprPtr rhs;
};

/// Conjunction of comparison atoms. Disjunction is deliberately absent.
struct Pred {
    std::vector<PredAtom> atoms;
    bool empty() const { return atoms.empty(); }
};

// ---------------------------------------------------------------------------
// Parser: recursive descent over a small hand-rolled lexer.
// ---------------------------------------------------------------------------

namespace exprdetail {

enum class Tok {
    Number, Ident, LBracket, RBracket, LParen, RParen, Comma,
    Plus, Minus, Star, Slash, Caret, AndAnd, Lt, Gt, Le, Ge, End,
};

struct Token {
    Tok kind;
    std::string text;
    double number{0.0};
    int line{1}, column{1};
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) { advance(); }

    const Token& peek() const { return tok_; }

    Token take() {
        Token t = tok_;
        advance();
        return t;
    }

private:
    void advance() {
        while (pos_ < src_.size() && skip_ws()) {}
        tok_.line = line_;
        tok_.column = column_;
        if (pos_ >= src_.size()) {
            tok_.kind = Tok::End;
            tok_.text = "<end of input>";
            return;
        }
        char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            lex_number();
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                    src_[pos_] == '_' || src_[pos_] == '.'))
                bump();
            tok_.kind = Tok::Ident;
            tok_.text = std::string(src_.substr(start, pos_ - start));
            return;
        }
        switch (c) {
            case '[': single(Tok::LBracket, "["); return;
            case ']': single(Tok::RBracket, "]"); return;
            case '(': single(Tok::LParen, "("); return;
            case ')': single(Tok::RParen, ")"); return;
            case ',': single(Tok::Comma, ","); return;
            case '+': single(Tok::Plus, "+"); return;
            case '-': single(Tok::Minus, "-"); return;
            case '*': single(Tok::Star, "*"); return;
            case '/': single(Tok::Slash, "/"); return;
            case '^': single(Tok::Caret, "^"); return;
            case '&':
                if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '&') {
                    bump(); bump();
                    tok_.kind = Tok::AndAnd;
                    tok_.text = "&&";
                    return;
                }
                throw ParseError("stray '&' (did you mean '&&'?)", line_, column_);
            case '<':
                if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '=') {
                    bump(); bump();
                    tok_.kind = Tok::Le;
                    tok_.text = "<=";
                } else {
                    single(Tok::Lt, "<");
                }
                return;
            case '>':
                if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '=') {
                    bump(); bump();
                    tok_.kind = Tok::Ge;
                    tok_.text = ">=";
                } else {
                    single(Tok::Gt, ">");
                }
                return;
            default:
                throw ParseError(detail::format("unexpected character '%c'", c), line_, column_);
        }
    }

    bool skip_ws() {
        char c = src_[pos_];
        if (c == '\n') {
            ++line_;
            column_ = 1;
            ++pos_;
            return true;
        }
        if (c == ' ' || c == '\t' || c == '\r') {
            bump();
            return true;
        }
        return false;
    }

    void single(Tok kind, const char* text) {
        bump();
        tok_.kind = kind;
        tok_.text = text;
    }

    void lex_number() {
        size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            bump();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            size_t mark = pos_;
            bump();
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) bump();
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
            } else {
                pos_ = mark;  // 'e' belonged to something else
                column_ -= 0;
            }
        }
        std::string text(src_.substr(start, pos_ - start));
        if (text == ".")
            throw ParseError("malformed number", tok_.line, tok_.column);
        tok_.kind = Tok::Number;
        tok_.text = text;
        tok_.number = std::strtod(text.c_str(), nullptr);
    }

    void bump() {
        ++pos_;
        ++column_;
    }

    std::string_view src_;
    size_t pos_{0};
    int line_{1}, column_{1};
    Token tok_;
};

class Parser {
public:
    explicit Parser(std::string_view src) : lex_(src) {}

    ExprPtr parse_expr_all() {
        ExprPtr e = expr();
        expect_end();
        return e;
    }

    Pred parse_pred_all() {
        Pred p;
        p.atoms.push_back(atom());
        while (lex_.peek().kind == Tok::AndAnd) {
            lex_.take();
            p.atoms.push_back(atom());
        }
        expect_end();
        return p;
    }

private:
    PredAtom atom() {
        PredAtom a;
        a.lhs = expr();
        const Token& t = lex_.peek();
        switch (t.kind) {
            case Tok::Lt: a.cmp = Cmp::Lt; break;
            case Tok::Gt: a.cmp = Cmp::Gt; break;
            case Tok::Le: a.cmp = Cmp::Le; break;
            case Tok::Ge: a.cmp = Cmp::Ge; break;
            default:
                throw ParseError("expected comparison operator, got '" + t.text + "'",
                                 t.line, t.column);
        }
        lex_.take();
        a.rhs = expr();
        return a;
    }

    ExprPtr expr() {
        ExprPtr e = term();
        while (true) {
            Tok k = lex_.peek().kind;
            if (k == Tok::Plus || k == Tok::Minus) {
                lex_.take();
                e = make_binary(k == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub, e, term());
            } else {
                return e;
            }
        }
    }

    ExprPtr term() {
        ExprPtr e = unary();
        while (true) {
            Tok k = lex_.peek().kind;
            if (k == Tok::Star || k == Tok::Slash) {
                lex_.take();
                e = make_binary(k == Tok::Star ? BinaryOp::Mul : BinaryOp::Div, e, unary());
            } else {
                return e;
            }
        }
    }

    ExprPtr unary() {
        if (lex_.peek().kind == Tok::Minus) {
            lex_.take();
            ExprPtr inner = unary();
            // canonical form: a negated bare literal IS a negative literal
            if (inner->tag == Expr::Tag::Literal) return make_literal(-inner->literal);
            return make_unary(UnaryOp::Neg, inner);
        }
        return postfix();
    }

    // '^' binds tighter than unary minus and is non-associative; the
    // exponent must be a numeric literal (optionally negated).
    ExprPtr postfix() {
        ExprPtr e = primary();
        if (lex_.peek().kind == Tok::Caret) {
            lex_.take();
            double sign = 1.0;
            if (lex_.peek().kind == Tok::Minus) {
                lex_.take();
                sign = -1.0;
            }
            Token t = lex_.take();
            if (t.kind != Tok::Number)
                throw ParseError("exponent must be a numeric literal", t.line, t.column);
            e = make_pow(e, sign * t.number);
        }
        return e;
    }

    ExprPtr primary() {
        Token t = lex_.take();
        switch (t.kind) {
            case Tok::Number: return make_literal(t.number);
            case Tok::LParen: {
                ExprPtr e = expr();
                expect(Tok::RParen, ")");
                return e;
            }
            case Tok::Ident: return ident_expr(t);
            default:
                throw ParseError("expected expression, got '" + t.text + "'", t.line,
                                 t.column);
        }
    }

    ExprPtr ident_expr(const Token& id) {
        if (id.text == "x" || id.text == "xn" || id.text == "x0") {
            RefSpace space = id.text == "x"    ? RefSpace::Raw
                             : id.text == "xn" ? RefSpace::Normalized
                                               : RefSpace::Original;
            expect(Tok::LBracket, "[");
            Token name = lex_.take();
            if (name.kind != Tok::Ident)
                throw ParseError("expected feature name, got '" + name.text + "'",
                                 name.line, name.column);
            expect(Tok::RBracket, "]");
            return make_feature(name.text, space);
        }
        if (id.text == "p") {
            expect(Tok::LBracket, "[");
            Token idx = lex_.take();
            if (idx.kind != Tok::Number || idx.number != std::floor(idx.number) ||
                idx.number < 0)
                throw ParseError("expected non-negative integer parameter index",
                                 idx.line, idx.column);
            expect(Tok::RBracket, "]");
            return make_param(static_cast<int>(idx.number));
        }
        if (id.text == "exp" || id.text == "log" || id.text == "abs" || id.text == "relu") {
            UnaryOp op = id.text == "exp"   ? UnaryOp::Exp
                         : id.text == "log" ? UnaryOp::Log
                         : id.text == "abs" ? UnaryOp::Abs
                                            : UnaryOp::Relu;
            expect(Tok::LParen, "(");
            ExprPtr a = expr();
            expect(Tok::RParen, ")");
            return make_unary(op, a);
        }
        if (id.text == "max" || id.text == "min") {
            expect(Tok::LParen, "(");
            ExprPtr a = expr();
            expect(Tok::Comma, ",");
            ExprPtr b = expr();
            expect(Tok::RParen, ")");
            return make_binary(id.text == "max" ? BinaryOp::Max : BinaryOp::Min, a, b);
        }
        throw ParseError("unknown identifier '" + id.text + "'", id.line, id.column);
    }

    void expect(Tok kind, const char* what) {
        Token t = lex_.take();
        if (t.kind != kind)
            throw ParseError(std::string("expected '") + what + "', got '" + t.text + "'",
                             t.line, t.column);
    }

    void expect_end() {
        const Token& t = lex_.peek();
        if (t.kind != Tok::End)
            throw ParseError("unexpected trailing input '" + t.text + "'", t.line,
                             t.column);
    }

    Lexer lex_;
};

}  // namespace exprdetail

inline ExprPtr parse_expr(std::string_view src) {
    return exprdetail::Parser(src).parse_expr_all();
}

inline Pred parse_pred(std::string_view src) {
    return exprdetail::Parser(src).parse_pred_all();
}

// ---------------------------------------------------------------------------
// Printer. Emits the minimal parenthesisation that re-parses to the same
// tree; parse(print(e)) == e structurally.
// ---------------------------------------------------------------------------

namespace exprdetail {

inline int precedence(const Expr& e) {
    switch (e.tag) {
        case Expr::Tag::Binary:
            switch (e.bin) {
                case BinaryOp::Add:
                case BinaryOp::Sub: return 1;
                case BinaryOp::Mul:
                case BinaryOp::Div: return 2;
                default: return 5;  // max/min print as calls
            }
        case Expr::Tag::Unary: return e.un == UnaryOp::Neg ? 3 : 5;
        case Expr::Tag::PowConst: return 4;
        case Expr::Tag::Literal:
            // negative literals print with a leading minus and must be
            // parenthesized wherever a unary minus would be
            return e.literal < 0 ? 3 : 5;
        default: return 5;
    }
}

inline void print_number(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

inline void print_expr(std::ostream& os, const Expr& e, int parent_prec) {
    int prec = precedence(e);
    bool parens = prec < parent_prec;
    if (parens) os << '(';
    switch (e.tag) {
        case Expr::Tag::Literal:
            if (e.literal < 0) {
                // negative literals re-parse as unary minus; print as such
                os << '-';
                print_number(os, -e.literal);
            } else {
                print_number(os, e.literal);
            }
            break;
        case Expr::Tag::FeatureRef:
            os << (e.space == RefSpace::Raw        ? "x"
                   : e.space == RefSpace::Normalized ? "xn"
                                                     : "x0")
               << '[' << e.feature << ']';
            break;
        case Expr::Tag::ParamRef: os << "p[" << e.param_index << ']'; break;
        case Expr::Tag::Unary:
            if (e.un == UnaryOp::Neg) {
                os << '-';
                print_expr(os, *e.a, 4);  // operand of unary minus needs prec > '-'
            } else {
                os << (e.un == UnaryOp::Exp   ? "exp"
                       : e.un == UnaryOp::Log ? "log"
                       : e.un == UnaryOp::Abs ? "abs"
                                              : "relu")
                   << '(';
                print_expr(os, *e.a, 0);
                os << ')';
            }
            break;
        case Expr::Tag::Binary: {
            if (e.bin == BinaryOp::Max || e.bin == BinaryOp::Min) {
                os << (e.bin == BinaryOp::Max ? "max(" : "min(");
                print_expr(os, *e.a, 0);
                os << ", ";
                print_expr(os, *e.b, 0);
                os << ')';
                break;
            }
            const char* op = e.bin == BinaryOp::Add   ? " + "
                             : e.bin == BinaryOp::Sub ? " - "
                             : e.bin == BinaryOp::Mul ? " * "
                                                      : " / ";
            print_expr(os, *e.a, prec);
            os << op;
            // left associative: right operand needs strictly higher precedence
            print_expr(os, *e.b, prec + 1);
            break;
        }
        case Expr::Tag::PowConst:
            print_expr(os, *e.a, prec + 1);
            os << " ^ ";
            if (e.exponent < 0) {
                os << '-';
                print_number(os, -e.exponent);
            } else {
                print_number(os, e.exponent);
            }
            break;
    }
    if (parens) os << ')';
}

}  // namespace exprdetail

inline std::string to_string(const Expr& e) {
    std::ostringstream os;
    exprdetail::print_expr(os, e, 0);
    return os.str();
}

inline std::string to_string(const PredAtom& a) {
    std::ostringstream os;
    exprdetail::print_expr(os, *a.lhs, 0);
    os << (a.cmp == Cmp::Lt ? " < " : a.cmp == Cmp::Gt ? " > " : a.cmp == Cmp::Le ? " <= " : " >= ");
    exprdetail::print_expr(os, *a.rhs, 0);
    return os.str();
}

inline std::string to_string(const Pred& p) {
    std::string out;
    for (size_t i = 0; i < p.atoms.size(); ++i) {
        if (i) out += " && ";
        out += to_string(p.atoms[i]);
    }
    return out;
}

/// Structural equality, used by round-trip tests.
inline bool equal(const Expr& a, const Expr& b) {
    if (a.tag != b.tag) return false;
    switch (a.tag) {
        case Expr::Tag::Literal: return a.literal == b.literal;
        case Expr::Tag::FeatureRef: return a.feature == b.feature && a.space == b.space;
        case Expr::Tag::ParamRef: return a.param_index == b.param_index;
        case Expr::Tag::Unary: return a.un == b.un && equal(*a.a, *b.a);
        case Expr::Tag::Binary:
            return a.bin == b.bin && equal(*a.a, *b.a) && equal(*a.b, *b.b);
        case Expr::Tag::PowConst: return a.exponent == b.exponent && equal(*a.a, *b.a);
    }
    return false;
}

// ---------------------------------------------------------------------------
// Evaluation. One template handles both the plain-double interpreter and
// compilation onto a tape (S = ad::Value), so the differentiable path and
// the exact path cannot drift apart.
// ---------------------------------------------------------------------------

/// Everything an expression can reference during evaluation. `features` and
/// `params` are the current (pre-action) state and the owning action's
/// parameters; `original` is the untouched instance the trajectory started
/// from.
template <class S>
struct EvalContext {
    const FeatureSchema* schema{nullptr};
    std::span<const S> features;
    std::span<const S> params;
    std::span<const double> original;
};

template <class S, class Lift>
S eval_expr(const Expr& e, const EvalContext<S>& ctx, Lift lift) {
    using ad::abs;
    using ad::exp;
    using ad::log;
    using ad::max;
    using ad::min;
    using ad::pow_const;
    using ad::relu;
    switch (e.tag) {
        case Expr::Tag::Literal: return lift(e.literal);
        case Expr::Tag::FeatureRef: {
            int idx = ctx.schema->index_of(e.feature);
            if (e.space == RefSpace::Original) {
                if (static_cast<size_t>(idx) >= ctx.original.size())
                    throw EvalError("x0 values not available for '" + e.feature + "'");
                return lift(ctx.original[static_cast<size_t>(idx)]);
            }
            if (static_cast<size_t>(idx) >= ctx.features.size())
                throw EvalError("feature value not bound for '" + e.feature + "'");
            S v = ctx.features[static_cast<size_t>(idx)];
            if (e.space == RefSpace::Normalized)
                return normalize_feature(*ctx.schema, idx, v);
            return v;
        }
        case Expr::Tag::ParamRef: {
            if (static_cast<size_t>(e.param_index) >= ctx.params.size())
                throw EvalError(detail::format(
                    "parameter index %d out of range (action has %zu parameters)",
                    e.param_index, ctx.params.size()));
            return ctx.params[static_cast<size_t>(e.param_index)];
        }
        case Expr::Tag::Unary: {
            S a = eval_expr(*e.a, ctx, lift);
            switch (e.un) {
                case UnaryOp::Neg: return -a;
                case UnaryOp::Exp: return exp(a);
                case UnaryOp::Log: return log(a);
                case UnaryOp::Abs: return abs(a);
                case UnaryOp::Relu: return relu(a);
            }
            break;
        }
        case Expr::Tag::Binary: {
            S a = eval_expr(*e.a, ctx, lift);
            S b = eval_expr(*e.b, ctx, lift);
            switch (e.bin) {
                case BinaryOp::Add: return a + b;
                case BinaryOp::Sub: return a - b;
                case BinaryOp::Mul: return a * b;
                case BinaryOp::Div: return ad::checked_div(a, b);
                case BinaryOp::Max: return max(a, b);
                case BinaryOp::Min: return min(a, b);
            }
            break;
        }
        case Expr::Tag::PowConst:
            return pow_const(eval_expr(*e.a, ctx, lift), e.exponent);
    }
    throw Error("unreachable expression tag");
}

inline double eval_expr(const Expr& e, const EvalContext<double>& ctx) {
    return eval_expr<double>(e, ctx, [](double v) { return v; });
}

/// Compile an expression onto a tape; returns the root node. Never mutates
/// the context; compiling the same expression twice yields two independent
/// subgraphs with equal values.
inline ad::NodeId compile_expr(const Expr& e, ad::Tape& tape,
                               const EvalContext<ad::Value>& ctx) {
    ad::Value v = eval_expr<ad::Value>(
        e, ctx, [&tape](double c) { return ad::lift(tape, c); });
    return v.id();
}

/// Exact Boolean evaluation of one atom; strict and non-strict comparisons
/// are honored exactly.
inline bool eval_atom(const PredAtom& a, const EvalContext<double>& ctx) {
    double l = eval_expr(*a.lhs, ctx);
    double r = eval_expr(*a.rhs, ctx);
    switch (a.cmp) {
        case Cmp::Lt: return l < r;
        case Cmp::Gt: return l > r;
        case Cmp::Le: return l <= r;
        case Cmp::Ge: return l >= r;
    }
    return false;
}

inline bool eval_pred(const Pred& p, const EvalContext<double>& ctx) {
    for (const PredAtom& a : p.atoms)
        if (!eval_atom(a, ctx)) return false;
    return true;
}

/// Collect every distinct (feature, space) reference and the largest
/// parameter index in an expression. Used for catalog validation and for
/// the default relaxation scale rule.
struct ExprRefs {
    std::vector<std::pair<std::string, RefSpace>> features;
    int max_param_index{-1};
};

inline void collect_refs(const Expr& e, ExprRefs& out) {
    switch (e.tag) {
        case Expr::Tag::Literal: return;
        case Expr::Tag::FeatureRef: {
            std::pair<std::string, RefSpace> ref{e.feature, e.space};
            for (const auto& r : out.features)
                if (r == ref) return;
            out.features.push_back(std::move(ref));
            return;
        }
        case Expr::Tag::ParamRef:
            out.max_param_index = std::max(out.max_param_index, e.param_index);
            return;
        case Expr::Tag::Unary:
        case Expr::Tag::PowConst: collect_refs(*e.a, out); return;
        case Expr::Tag::Binary:
            collect_refs(*e.a, out);
            collect_refs(*e.b, out);
            return;
    }
}

}  // namespace recourse
