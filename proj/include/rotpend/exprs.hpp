#pragma once
// Scalar-field mini-language over (p, q, I, theta, t, eps): tokenizer,
// Pratt parser, printer, compiled tape evaluation and forward-mode AD.
//
// Grammar (precedence low to high):
//   expr   := expr ('+' | '-') expr | expr ('*' | '/') expr
//           | '-' expr | expr '^' expr          ('^' is right-associative)
//           | number | ident | ident '(' expr ')' | '(' expr ')'
//   ident  := p<i> | q<i> | I<j> | theta<j> | t | eps | pi
// Indices are 1-based.  When n == 1 (resp. d == 1) the bare names p, q
// (resp. I, theta) are accepted as aliases for index 1.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rotpend::exprs {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
};

enum class ParseErrorKind { lexical, unknown_identifier, arity, unbalanced_parens, syntax, too_long };

inline const char* to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::lexical: return "lexical error";
    case ParseErrorKind::unknown_identifier: return "unknown identifier";
    case ParseErrorKind::arity: return "arity error";
    case ParseErrorKind::unbalanced_parens: return "unbalanced parentheses";
    case ParseErrorKind::syntax: return "syntax error";
    case ParseErrorKind::too_long: return "input too long";
  }
  return "parse error";
}

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::string detail, Span span)
      : std::runtime_error(std::string(to_string(kind)) + " " + detail + " at span " +
                           std::to_string(span.begin) + ".." + std::to_string(span.end)),
        kind_(kind),
        span_(span) {}
  ParseErrorKind kind() const noexcept { return kind_; }
  Span span() const noexcept { return span_; }

 private:
  ParseErrorKind kind_;
  Span span_;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape of the variable space an expression lives in.
struct Dims {
  std::size_t n = 1;  // penduli
  std::size_t d = 1;  // rotator degrees of freedom

  std::size_t state_size() const { return 2 * n + 2 * d; }
  /// Flat binding layout: [p(n), q(n), I(d), theta(d), t, eps].
  std::size_t binding_size() const { return 2 * n + 2 * d + 2; }
  std::size_t slot_t() const { return 2 * n + 2 * d; }
  std::size_t slot_eps() const { return 2 * n + 2 * d + 1; }
  bool operator==(const Dims&) const = default;
};

enum class VarKind { p, q, I, theta, t, eps };

struct Variable {
  VarKind kind = VarKind::t;
  std::size_t index = 0;  // 0-based

  std::size_t slot(const Dims& dims) const {
    switch (kind) {
      case VarKind::p: return index;
      case VarKind::q: return dims.n + index;
      case VarKind::I: return 2 * dims.n + index;
      case VarKind::theta: return 2 * dims.n + dims.d + index;
      case VarKind::t: return dims.slot_t();
      case VarKind::eps: return dims.slot_eps();
    }
    return 0;
  }
  std::string name() const {
    switch (kind) {
      case VarKind::p: return "p" + std::to_string(index + 1);
      case VarKind::q: return "q" + std::to_string(index + 1);
      case VarKind::I: return "I" + std::to_string(index + 1);
      case VarKind::theta: return "theta" + std::to_string(index + 1);
      case VarKind::t: return "t";
      case VarKind::eps: return "eps";
    }
    return "?";
  }
  bool operator==(const Variable&) const = default;
  auto operator<=>(const Variable&) const = default;
};

enum class Op { number, pi, variable, neg, add, sub, mul, div, pow, sin, cos, exp, tanh, sech, sqrt };

inline bool is_function(Op op) {
  return op == Op::sin || op == Op::cos || op == Op::exp || op == Op::tanh || op == Op::sech ||
         op == Op::sqrt;
}

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::number;
  double value = 0.0;
  Variable var{};
  NodePtr lhs;
  NodePtr rhs;
  Span span{};
};

/// Structural equality (spans ignored).
inline bool equal(const NodePtr& a, const NodePtr& b) {
  if (!a || !b) return !a && !b;
  if (a->op != b->op) return false;
  switch (a->op) {
    case Op::number: return a->value == b->value || (std::isnan(a->value) && std::isnan(b->value));
    case Op::pi: return true;
    case Op::variable: return a->var == b->var;
    default: return equal(a->lhs, b->lhs) && equal(a->rhs, b->rhs);
  }
}

// ---------------------------------------------------------------------------
// Dual numbers

/// Value plus one directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
inline Dual sin(Dual a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual tanh(Dual a) {
  const double th = std::tanh(a.v);
  return {th, (1.0 - th * th) * a.d};
}
inline Dual sech(Dual a) {
  const double s = 1.0 / std::cosh(a.v);
  return {s, -s * std::tanh(a.v) * a.d};
}
inline Dual sqrt(Dual a) {
  const double r = std::sqrt(a.v);
  return {r, a.d / (2.0 * r)};
}
/// a^b with the convention that a constant integer exponent keeps negative
/// bases differentiable.
inline Dual pow(Dual a, Dual b) {
  const double v = std::pow(a.v, b.v);
  double d = 0.0;
  if (a.d != 0.0) d += b.v * std::pow(a.v, b.v - 1.0) * a.d;
  if (b.d != 0.0) d += v * std::log(a.v) * b.d;
  return {v, d};
}

// ---------------------------------------------------------------------------
// Lexer / parser

namespace detail {

enum class Tok { number, ident, plus, minus, star, slash, caret, lparen, rparen, comma, end };

struct Token {
  Tok kind = Tok::end;
  Span span{};
  double number = 0.0;
  std::string_view text;
};

inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  auto is_alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (is_digit(c) || (c == '.' && i + 1 < src.size() && is_digit(src[i + 1]))) {
      while (i < src.size() && is_digit(src[i])) ++i;
      if (i < src.size() && src[i] == '.') {
        ++i;
        while (i < src.size() && is_digit(src[i])) ++i;
      }
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && is_digit(src[j])) {
          i = j;
          while (i < src.size() && is_digit(src[i])) ++i;
        } else {
          throw ParseError(ParseErrorKind::lexical, "malformed exponent", {start, j});
        }
      }
      Token t{Tok::number, {start, i}, 0.0, src.substr(start, i - start)};
      const auto res = std::from_chars(src.data() + start, src.data() + i, t.number);
      if (res.ec != std::errc()) throw ParseError(ParseErrorKind::lexical, "bad number", {start, i});
      out.push_back(t);
      continue;
    }
    if (is_alpha(c)) {
      while (i < src.size() && (is_alpha(src[i]) || is_digit(src[i]))) ++i;
      out.push_back({Tok::ident, {start, i}, 0.0, src.substr(start, i - start)});
      continue;
    }
    Tok k;
    switch (c) {
      case '+': k = Tok::plus; break;
      case '-': k = Tok::minus; break;
      case '*': k = Tok::star; break;
      case '/': k = Tok::slash; break;
      case '^': k = Tok::caret; break;
      case '(': k = Tok::lparen; break;
      case ')': k = Tok::rparen; break;
      case ',': k = Tok::comma; break;
      default: {
        std::size_t len = 1;
        // report whole UTF-8 sequences as one span
        const auto uc = static_cast<unsigned char>(c);
        if (uc >= 0xC0) len = uc >= 0xF0 ? 4 : uc >= 0xE0 ? 3 : 2;
        throw ParseError(ParseErrorKind::lexical, "unexpected character",
                         {start, std::min(src.size(), start + len)});
      }
    }
    ++i;
    out.push_back({k, {start, i}, 0.0, src.substr(start, 1)});
  }
  out.push_back({Tok::end, {src.size(), src.size()}, 0.0, {}});
  return out;
}

class Parser {
 public:
  Parser(std::string_view src, Dims dims) : toks_(tokenize(src)), dims_(dims) {}

  NodePtr parse_all() {
    NodePtr e = parse_expr(0);
    const Token& t = peek();
    if (t.kind == Tok::rparen) throw ParseError(ParseErrorKind::unbalanced_parens, "unmatched ')'", t.span);
    if (t.kind != Tok::end) throw ParseError(ParseErrorKind::syntax, "unexpected token", t.span);
    return e;
  }

 private:
  static constexpr int kUnaryBp = 30;

  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }

  static int left_bp(Tok k) {
    switch (k) {
      case Tok::plus:
      case Tok::minus: return 10;
      case Tok::star:
      case Tok::slash: return 20;
      case Tok::caret: return 40;
      default: return -1;
    }
  }

  static NodePtr make(Op op, Span span, NodePtr lhs = nullptr, NodePtr rhs = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->span = span;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    return n;
  }

  NodePtr parse_expr(int min_bp) {
    NodePtr lhs = parse_prefix();
    for (;;) {
      const Token& t = peek();
      const int lbp = left_bp(t.kind);
      if (lbp < 0 || lbp <= min_bp) break;
      next();
      // '^' is right-associative
      const int rbp = t.kind == Tok::caret ? lbp - 1 : lbp;
      NodePtr rhs = parse_expr(rbp);
      Op op = Op::add;
      switch (t.kind) {
        case Tok::plus: op = Op::add; break;
        case Tok::minus: op = Op::sub; break;
        case Tok::star: op = Op::mul; break;
        case Tok::slash: op = Op::div; break;
        default: op = Op::pow; break;
      }
      Span sp{lhs->span.begin, rhs->span.end};
      lhs = make(op, sp, lhs, rhs);
    }
    return lhs;
  }

  NodePtr parse_prefix() {
    const Token t = next();
    switch (t.kind) {
      case Tok::number: {
        auto n = std::make_shared<Node>();
        n->op = Op::number;
        n->value = t.number;
        n->span = t.span;
        return n;
      }
      case Tok::minus: {
        NodePtr operand = parse_expr(kUnaryBp);
        return make(Op::neg, {t.span.begin, operand->span.end}, operand);
      }
      case Tok::lparen: {
        NodePtr inner = parse_expr(0);
        const Token& close = peek();
        if (close.kind != Tok::rparen) {
          if (close.kind == Tok::end)
            throw ParseError(ParseErrorKind::unbalanced_parens, "unclosed '('", t.span);
          throw ParseError(ParseErrorKind::syntax, "expected ')'", close.span);
        }
        next();
        return inner;
      }
      case Tok::ident: return parse_ident(t);
      case Tok::rparen: throw ParseError(ParseErrorKind::unbalanced_parens, "unmatched ')'", t.span);
      case Tok::end: throw ParseError(ParseErrorKind::syntax, "unexpected end of input", t.span);
      default: throw ParseError(ParseErrorKind::syntax, "unexpected token", t.span);
    }
  }

  static bool function_op(std::string_view name, Op& op) {
    static constexpr std::array<std::pair<std::string_view, Op>, 6> table{{{"sin", Op::sin},
                                                                            {"cos", Op::cos},
                                                                            {"exp", Op::exp},
                                                                            {"tanh", Op::tanh},
                                                                            {"sech", Op::sech},
                                                                            {"sqrt", Op::sqrt}}};
    for (const auto& [n, o] : table) {
      if (n == name) {
        op = o;
        return true;
      }
    }
    return false;
  }

  NodePtr parse_ident(const Token& t) {
    Op fop;
    if (function_op(t.text, fop)) {
      if (peek().kind != Tok::lparen)
        throw ParseError(ParseErrorKind::arity, "function '" + std::string(t.text) + "' needs an argument", t.span);
      const Token open = next();
      if (peek().kind == Tok::rparen) {
        const Token close = next();
        throw ParseError(ParseErrorKind::arity, "function '" + std::string(t.text) + "' takes 1 argument, got 0",
                         {t.span.begin, close.span.end});
      }
      NodePtr arg = parse_expr(0);
      std::size_t count = 1;
      while (peek().kind == Tok::comma) {
        next();
        parse_expr(0);
        ++count;
      }
      if (peek().kind != Tok::rparen) {
        if (peek().kind == Tok::end)
          throw ParseError(ParseErrorKind::unbalanced_parens, "unclosed '('", open.span);
        throw ParseError(ParseErrorKind::syntax, "expected ')'", peek().span);
      }
      const Token close = next();
      if (count != 1)
        throw ParseError(ParseErrorKind::arity,
                         "function '" + std::string(t.text) + "' takes 1 argument, got " + std::to_string(count),
                         {t.span.begin, close.span.end});
      return make(fop, {t.span.begin, close.span.end}, arg);
    }
    if (t.text == "pi") return make(Op::pi, t.span);
    Variable v;
    if (!resolve_variable(t.text, v))
      throw ParseError(ParseErrorKind::unknown_identifier, std::string(t.text), t.span);
    auto n = std::make_shared<Node>();
    n->op = Op::variable;
    n->var = v;
    n->span = t.span;
    return n;
  }

  bool resolve_variable(std::string_view name, Variable& v) const {
    if (name == "t") {
      v = {VarKind::t, 0};
      return true;
    }
    if (name == "eps") {
      v = {VarKind::eps, 0};
      return true;
    }
    struct Prefix {
      std::string_view text;
      VarKind kind;
      std::size_t limit;
    };
    const std::array<Prefix, 4> prefixes{{{"theta", VarKind::theta, dims_.d},
                                          {"p", VarKind::p, dims_.n},
                                          {"q", VarKind::q, dims_.n},
                                          {"I", VarKind::I, dims_.d}}};
    for (const auto& pre : prefixes) {
      if (name.substr(0, pre.text.size()) != pre.text) continue;
      const std::string_view rest = name.substr(pre.text.size());
      if (rest.empty()) {
        if (pre.limit != 1) return false;
        v = {pre.kind, 0};
        return true;
      }
      if (rest.front() == '0') return false;
      std::size_t idx = 0;
      const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), idx);
      if (res.ec != std::errc() || res.ptr != rest.data() + rest.size()) return false;
      if (idx < 1 || idx > pre.limit) return false;
      v = {pre.kind, idx - 1};
      return true;
    }
    return false;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  Dims dims_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape: post-order flattening used for all evaluation.

struct Instr {
  Op op;
  double value = 0.0;     // number literal
  std::size_t slot = 0;   // variable slot
  std::size_t a = 0;      // operand indices into the tape
  std::size_t b = 0;
};

class Expr {
 public:
  static constexpr std::size_t kMaxSourceBytes = 64 * 1024;

  Expr() = default;
  Expr(NodePtr root, Dims dims) : root_(std::move(root)), dims_(dims) { compile(); }

  const NodePtr& root() const { return root_; }
  const Dims& dims() const { return dims_; }
  const std::vector<Instr>& tape() const { return tape_; }

  std::set<Variable> depends_on() const {
    std::set<Variable> out;
    collect(root_, out);
    return out;
  }
  bool depends_on(VarKind kind) const {
    for (const auto& v : depends_on())
      if (v.kind == kind) return true;
    return false;
  }

  /// Fully parenthesised, round-trippable text.
  std::string to_string() const {
    std::string s;
    print(root_, s);
    return s;
  }

  bool structurally_equal(const Expr& other) const { return equal(root_, other.root_); }

  double eval(std::span<const double> bindings) const {
    check_bindings(bindings);
    thread_local std::vector<double> scratch;
    scratch.resize(tape_.size());
    for (std::size_t i = 0; i < tape_.size(); ++i) scratch[i] = step_value(tape_[i], scratch, bindings);
    const double r = scratch.back();
    if (!std::isfinite(r)) throw EvalError("non-finite result evaluating " + to_string());
    return r;
  }

  /// Value and directional derivative along `direction` (binding-sized).
  Dual eval_dual(std::span<const double> bindings, std::span<const double> direction) const {
    check_bindings(bindings);
    thread_local std::vector<Dual> scratch;
    scratch.resize(tape_.size());
    for (std::size_t i = 0; i < tape_.size(); ++i) {
      const Instr& in = tape_[i];
      Dual r;
      switch (in.op) {
        case Op::number: r = {in.value, 0.0}; break;
        case Op::pi: r = {M_PI, 0.0}; break;
        case Op::variable: r = {bindings[in.slot], direction[in.slot]}; break;
        case Op::neg: r = -scratch[in.a]; break;
        case Op::add: r = scratch[in.a] + scratch[in.b]; break;
        case Op::sub: r = scratch[in.a] - scratch[in.b]; break;
        case Op::mul: r = scratch[in.a] * scratch[in.b]; break;
        case Op::div: r = scratch[in.a] / scratch[in.b]; break;
        case Op::pow: r = pow(scratch[in.a], scratch[in.b]); break;
        case Op::sin: r = sin(scratch[in.a]); break;
        case Op::cos: r = cos(scratch[in.a]); break;
        case Op::exp: r = exp(scratch[in.a]); break;
        case Op::tanh: r = tanh(scratch[in.a]); break;
        case Op::sech: r = sech(scratch[in.a]); break;
        case Op::sqrt: r = sqrt(scratch[in.a]); break;
      }
      scratch[i] = r;
    }
    const Dual r = scratch.back();
    if (!std::isfinite(r.v) || !std::isfinite(r.d))
      throw EvalError("non-finite result differentiating " + to_string());
    return r;
  }

  /// Seeded (multi-lane) forward mode: value plus partials with respect to
  /// each binding slot listed in `wrt`.  Returns the value.
  double eval_gradient(std::span<const double> bindings, std::span<const std::size_t> wrt,
                       std::span<double> grad) const {
    check_bindings(bindings);
    const std::size_t k = wrt.size();
    const std::size_t w = k + 1;
    thread_local std::vector<double> buf;
    buf.assign(tape_.size() * w, 0.0);
    for (std::size_t i = 0; i < tape_.size(); ++i) {
      const Instr& in = tape_[i];
      double* r = &buf[i * w];
      const double* A = &buf[in.a * w];
      const double* B = &buf[in.b * w];
      switch (in.op) {
        case Op::number: r[0] = in.value; break;
        case Op::pi: r[0] = M_PI; break;
        case Op::variable:
          r[0] = bindings[in.slot];
          for (std::size_t j = 0; j < k; ++j) r[j + 1] = wrt[j] == in.slot ? 1.0 : 0.0;
          break;
        case Op::neg:
          for (std::size_t j = 0; j < w; ++j) r[j] = -A[j];
          break;
        case Op::add:
          for (std::size_t j = 0; j < w; ++j) r[j] = A[j] + B[j];
          break;
        case Op::sub:
          for (std::size_t j = 0; j < w; ++j) r[j] = A[j] - B[j];
          break;
        case Op::mul:
          r[0] = A[0] * B[0];
          for (std::size_t j = 1; j < w; ++j) r[j] = A[j] * B[0] + A[0] * B[j];
          break;
        case Op::div: {
          const double q = A[0] / B[0];
          r[0] = q;
          for (std::size_t j = 1; j < w; ++j) r[j] = (A[j] - q * B[j]) / B[0];
          break;
        }
        case Op::pow: {
          const double v = std::pow(A[0], B[0]);
          r[0] = v;
          double da = 0.0, db = 0.0;
          bool need_da = false, need_db = false;
          for (std::size_t j = 1; j < w; ++j) {
            need_da = need_da || A[j] != 0.0;
            need_db = need_db || B[j] != 0.0;
          }
          if (need_da) da = B[0] * std::pow(A[0], B[0] - 1.0);
          if (need_db) db = v * std::log(A[0]);
          for (std::size_t j = 1; j < w; ++j)
            r[j] = (A[j] != 0.0 ? da * A[j] : 0.0) + (B[j] != 0.0 ? db * B[j] : 0.0);
          break;
        }
        default: {
          double f = 0.0, df = 0.0;
          const double x = A[0];
          switch (in.op) {
            case Op::sin: f = std::sin(x); df = std::cos(x); break;
            case Op::cos: f = std::cos(x); df = -std::sin(x); break;
            case Op::exp: f = std::exp(x); df = f; break;
            case Op::tanh: f = std::tanh(x); df = 1.0 - f * f; break;
            case Op::sech: f = 1.0 / std::cosh(x); df = -f * std::tanh(x); break;
            case Op::sqrt: f = std::sqrt(x); df = 0.5 / f; break;
            default: break;
          }
          r[0] = f;
          for (std::size_t j = 1; j < w; ++j) r[j] = df * A[j];
        }
      }
    }
    const double* res = &buf[(tape_.size() - 1) * w];
    if (!std::isfinite(res[0])) throw EvalError("non-finite result evaluating " + to_string());
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(res[j + 1])) throw EvalError("non-finite derivative of " + to_string());
      grad[j] = res[j + 1];
    }
    return res[0];
  }

 private:
  void check_bindings(std::span<const double> bindings) const {
    if (!root_) throw EvalError("empty expression");
    if (bindings.size() != dims_.binding_size())
      throw EvalError("binding vector has size " + std::to_string(bindings.size()) + ", expected " +
                      std::to_string(dims_.binding_size()));
  }

  static double step_value(const Instr& in, const std::vector<double>& s, std::span<const double> x) {
    switch (in.op) {
      case Op::number: return in.value;
      case Op::pi: return M_PI;
      case Op::variable: return x[in.slot];
      case Op::neg: return -s[in.a];
      case Op::add: return s[in.a] + s[in.b];
      case Op::sub: return s[in.a] - s[in.b];
      case Op::mul: return s[in.a] * s[in.b];
      case Op::div: return s[in.a] / s[in.b];
      case Op::pow: return std::pow(s[in.a], s[in.b]);
      case Op::sin: return std::sin(s[in.a]);
      case Op::cos: return std::cos(s[in.a]);
      case Op::exp: return std::exp(s[in.a]);
      case Op::tanh: return std::tanh(s[in.a]);
      case Op::sech: return 1.0 / std::cosh(s[in.a]);
      case Op::sqrt: return std::sqrt(s[in.a]);
    }
    return 0.0;
  }

  std::size_t emit(const NodePtr& n) {
    Instr in{n->op};
    switch (n->op) {
      case Op::number: in.value = n->value; break;
      case Op::pi: break;
      case Op::variable: in.slot = n->var.slot(dims_); break;
      default:
        in.a = emit(n->lhs);
        if (n->rhs) in.b = emit(n->rhs);
    }
    tape_.push_back(in);
    return tape_.size() - 1;
  }

  void compile() {
    tape_.clear();
    if (root_) emit(root_);
  }

  static void collect(const NodePtr& n, std::set<Variable>& out) {
    if (!n) return;
    if (n->op == Op::variable) out.insert(n->var);
    collect(n->lhs, out);
    collect(n->rhs, out);
  }

  static void print_number(double v, std::string& s) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    s.append(buf, res.ptr);
  }

  static void print(const NodePtr& n, std::string& s) {
    switch (n->op) {
      case Op::number: print_number(n->value, s); return;
      case Op::pi: s += "pi"; return;
      case Op::variable: s += n->var.name(); return;
      case Op::neg:
        s += "(-";
        print(n->lhs, s);
        s += ")";
        return;
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div:
      case Op::pow: {
        const char* sym = n->op == Op::add   ? " + "
                          : n->op == Op::sub ? " - "
                          : n->op == Op::mul ? " * "
                          : n->op == Op::div ? " / "
                                             : " ^ ";
        s += "(";
        print(n->lhs, s);
        s += sym;
        print(n->rhs, s);
        s += ")";
        return;
      }
      default: {
        const char* name = n->op == Op::sin    ? "sin"
                           : n->op == Op::cos  ? "cos"
                           : n->op == Op::exp  ? "exp"
                           : n->op == Op::tanh ? "tanh"
                           : n->op == Op::sech ? "sech"
                                               : "sqrt";
        s += name;
        s += "(";
        print(n->lhs, s);
        s += ")";
      }
    }
  }

  NodePtr root_;
  Dims dims_;
  std::vector<Instr> tape_;
};

inline Expr parse(std::string_view source, Dims dims = {}) {
  if (source.size() > Expr::kMaxSourceBytes)
    throw ParseError(ParseErrorKind::too_long, "(limit 64 KiB)", {0, source.size()});
  detail::Parser parser(source, dims);
  return Expr(parser.parse_all(), dims);
}

/// Named bindings for convenience; unset entries default to zero.
class Bindings {
 public:
  explicit Bindings(Dims dims) : dims_(dims), values_(dims.binding_size(), 0.0) {}
  Bindings& set(Variable v, double x) {
    values_[v.slot(dims_)] = x;
    return *this;
  }
  Bindings& set(VarKind k, std::size_t index, double x) { return set(Variable{k, index}, x); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

 private:
  Dims dims_;
  std::vector<double> values_;
};

inline double eval(const Expr& e, std::span<const double> bindings) { return e.eval(bindings); }

/// Evaluator of d e / d var built on one dual pass.
class DerivativeEvaluator {
 public:
  DerivativeEvaluator(Expr e, Variable var) : expr_(std::move(e)), var_(var) {}
  double operator()(std::span<const double> bindings) const {
    thread_local std::vector<double> dir;
    dir.assign(expr_.dims().binding_size(), 0.0);
    dir[var_.slot(expr_.dims())] = 1.0;
    return expr_.eval_dual(bindings, dir).d;
  }
  const Variable& variable() const { return var_; }

 private:
  Expr expr_;
  Variable var_;
};

inline DerivativeEvaluator derivative(const Expr& e, Variable var) { return {e, var}; }

}  // namespace rotpend::exprs
