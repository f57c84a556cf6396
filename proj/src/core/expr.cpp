#include "expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace glo {

int arity(Op op) noexcept {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
      return 2;
    case Op::Log:
    case Op::Square:
    case Op::Sqrt:
      return 1;
    default:
      return 0;
  }
}

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::X: return "x";
    case Op::Y: return "y";
    case Op::Int: return "int";
    case Op::Real: return "real";
  }
  return "?";
}

bool is_leaf(Op op) noexcept { return arity(op) == 0; }

namespace {

NodePtr make_leaf(Op op, std::int64_t iv = 0, double rv = 0.0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->int_value = iv;
  n->real_value = rv;
  return n;
}

NodePtr make_op(Op op, NodePtr a, NodePtr b) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->count = 1 + a->count + (b ? b->count : 0);
  n->height = 1 + std::max(a->height, b ? b->height : 0u);
  n->lhs = std::move(a);
  n->rhs = std::move(b);
  return n;
}

}  // namespace

Expr::Expr() : root_(make_leaf(Op::X)) {}
Expr::Expr(NodePtr root) : root_(std::move(root)) {
  if (!root_) throw std::invalid_argument("Expr: null root");
}

Expr Expr::x() { return Expr(make_leaf(Op::X)); }
Expr Expr::y() { return Expr(make_leaf(Op::Y)); }
Expr Expr::integer(std::int64_t v) { return Expr(make_leaf(Op::Int, v)); }
Expr Expr::real(double v) { return Expr(make_leaf(Op::Real, 0, v)); }

Expr Expr::unary(Op op, Expr child) {
  if (arity(op) != 1) throw std::invalid_argument("Expr::unary: not a unary op");
  return Expr(make_op(op, child.root_, nullptr));
}

Expr Expr::binary(Op op, Expr lhs, Expr rhs) {
  if (arity(op) != 2) throw std::invalid_argument("Expr::binary: not a binary op");
  return Expr(make_op(op, lhs.root_, rhs.root_));
}

Expr Expr::child(int i) const {
  if (i < 0 || i >= arity(op())) throw std::out_of_range("Expr::child");
  return Expr(i == 0 ? root_->lhs : root_->rhs);
}

std::size_t Expr::size() const { return root_->count; }
int Expr::depth() const { return static_cast<int>(root_->height); }

namespace {

const NodePtr& find_node(const NodePtr& n, std::size_t index) {
  if (index == 0) return n;
  --index;
  if (index < n->lhs->count) return find_node(n->lhs, index);
  return find_node(n->rhs, index - n->lhs->count);
}

NodePtr replace_node(const NodePtr& n, std::size_t index, const NodePtr& repl) {
  if (index == 0) return repl;
  --index;
  if (index < n->lhs->count) return make_op(n->op, replace_node(n->lhs, index, repl), n->rhs);
  return make_op(n->op, n->lhs, replace_node(n->rhs, index - n->lhs->count, repl));
}

bool nodes_equal(const Node& a, const Node& b) {
  if (&a == &b) return true;
  if (a.op != b.op || a.count != b.count) return false;
  switch (a.op) {
    case Op::Int: return a.int_value == b.int_value;
    case Op::Real:
      return a.real_value == b.real_value || (std::isnan(a.real_value) && std::isnan(b.real_value));
    case Op::X:
    case Op::Y: return true;
    default: break;
  }
  if (!nodes_equal(*a.lhs, *b.lhs)) return false;
  return arity(a.op) == 1 || nodes_equal(*a.rhs, *b.rhs);
}

}  // namespace

Expr Expr::subtree(std::size_t index) const {
  if (index >= size()) throw std::out_of_range("Expr::subtree");
  return Expr(find_node(root_, index));
}

Expr Expr::replace(std::size_t index, const Expr& replacement) const {
  if (index >= size()) throw std::out_of_range("Expr::replace");
  return Expr(replace_node(root_, index, replacement.root_));
}

bool operator==(const Expr& a, const Expr& b) { return nodes_equal(*a.root_, *b.root_); }

// ---------------------------------------------------------------------------
// Generation

std::string_view gen_kind_name(GenKind k) noexcept {
  static constexpr std::array<std::string_view, kGenKindCount> names{
      "log", "square", "sqrt", "add", "sub", "mul", "div", "x", "y", "one", "minus_one"};
  return names[static_cast<std::size_t>(k)];
}

int gen_kind_arity(GenKind k) noexcept {
  switch (k) {
    case GenKind::Log:
    case GenKind::Square:
    case GenKind::Sqrt:
      return 1;
    case GenKind::Add:
    case GenKind::Sub:
    case GenKind::Mul:
    case GenKind::Div:
      return 2;
    default:
      return 0;
  }
}

void GenerationWeights::validate() const {
  bool leaf = false;
  for (std::size_t i = 0; i < kGenKindCount; ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0)
      throw std::invalid_argument("generation weight for '" +
                                  std::string(gen_kind_name(static_cast<GenKind>(i))) +
                                  "' must be finite and >= 0");
    if (gen_kind_arity(static_cast<GenKind>(i)) == 0 && w[i] > 0.0) leaf = true;
  }
  if (!leaf) throw std::invalid_argument("generation weights: at least one leaf kind must be positive");
}

GenKind GenerationWeights::draw(Rng& rng, int arity_filter) const {
  double total = 0.0;
  for (std::size_t i = 0; i < kGenKindCount; ++i)
    if (arity_filter < 0 || gen_kind_arity(static_cast<GenKind>(i)) == arity_filter) total += w[i];
  if (!(total > 0.0)) throw std::invalid_argument("generation weights: nothing drawable for requested arity");
  double r = uniform01(rng) * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < kGenKindCount; ++i) {
    if (arity_filter >= 0 && gen_kind_arity(static_cast<GenKind>(i)) != arity_filter) continue;
    if (w[i] <= 0.0) continue;
    last = i;
    if (r < w[i]) return static_cast<GenKind>(i);
    r -= w[i];
  }
  return static_cast<GenKind>(last);
}

Expr make_node(GenKind kind, const Expr& a, const Expr& b) {
  switch (kind) {
    case GenKind::Log: return Expr::unary(Op::Log, a);
    case GenKind::Square: return Expr::unary(Op::Square, a);
    case GenKind::Sqrt: return Expr::unary(Op::Sqrt, a);
    case GenKind::Add: return Expr::binary(Op::Add, a, b);
    case GenKind::Sub: return Expr::binary(Op::Sub, a, b);
    case GenKind::Mul: return Expr::binary(Op::Mul, a, b);
    case GenKind::Div: return Expr::binary(Op::Div, a, b);
    case GenKind::X: return Expr::x();
    case GenKind::Y: return Expr::y();
    case GenKind::One: return Expr::integer(1);
    case GenKind::MinusOne: return Expr::integer(-1);
  }
  throw std::logic_error("make_node: bad kind");
}

namespace {

Expr grow(const GenerationWeights& weights, int depth, int max_depth, Rng& rng) {
  const GenKind kind = depth >= max_depth ? weights.draw_leaf(rng) : weights.draw(rng);
  switch (gen_kind_arity(kind)) {
    case 0: return make_node(kind);
    case 1: return make_node(kind, grow(weights, depth + 1, max_depth, rng));
    default: {
      Expr a = grow(weights, depth + 1, max_depth, rng);
      Expr b = grow(weights, depth + 1, max_depth, rng);
      return make_node(kind, a, b);
    }
  }
}

}  // namespace

Expr random_tree(const GenerationWeights& weights, int max_depth, Rng& rng) {
  if (max_depth < 0) throw std::invalid_argument("random_tree: max_depth must be >= 0");
  return grow(weights, 0, max_depth, rng);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::optional<double> finite_or_invalid(double v) {
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<double> apply_unary(Op op, double a) {
  switch (op) {
    case Op::Log:
      if (!(a > 0.0)) return std::nullopt;
      return finite_or_invalid(std::log(a));
    case Op::Square: return finite_or_invalid(a * a);
    case Op::Sqrt:
      if (a < 0.0) return std::nullopt;
      return finite_or_invalid(std::sqrt(a));
    default: return std::nullopt;
  }
}

std::optional<double> apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return finite_or_invalid(a + b);
    case Op::Sub: return finite_or_invalid(a - b);
    case Op::Mul: return finite_or_invalid(a * b);
    case Op::Div:
      if (b == 0.0) return std::nullopt;
      return finite_or_invalid(a / b);
    default: return std::nullopt;
  }
}

std::optional<double> eval_node(const Node& n, double x, double y) {
  switch (n.op) {
    case Op::X: return x;
    case Op::Y: return y;
    case Op::Int: return static_cast<double>(n.int_value);
    case Op::Real: return finite_or_invalid(n.real_value);
    default: break;
  }
  const auto a = eval_node(*n.lhs, x, y);
  if (!a) return std::nullopt;
  if (arity(n.op) == 1) return apply_unary(n.op, *a);
  const auto b = eval_node(*n.rhs, x, y);
  if (!b) return std::nullopt;
  return apply_binary(n.op, *a, *b);
}

}  // namespace

std::optional<double> evaluate(const Expr& e, double x, double y) { return eval_node(*e.node(), x, y); }

namespace {

void emit(const Node& n, std::vector<std::pair<Op, double>>& code, std::size_t depth, std::size_t& max_depth) {
  switch (n.op) {
    case Op::X:
    case Op::Y:
      code.emplace_back(n.op, 0.0);
      max_depth = std::max(max_depth, depth + 1);
      return;
    case Op::Int:
      code.emplace_back(Op::Real, static_cast<double>(n.int_value));
      max_depth = std::max(max_depth, depth + 1);
      return;
    case Op::Real:
      code.emplace_back(Op::Real, n.real_value);
      max_depth = std::max(max_depth, depth + 1);
      return;
    default: break;
  }
  emit(*n.lhs, code, depth, max_depth);
  if (arity(n.op) == 2) emit(*n.rhs, code, depth + 1, max_depth);
  code.emplace_back(n.op, 0.0);
}

}  // namespace

Program::Program(const Expr& e) {
  std::vector<std::pair<Op, double>> code;
  emit(*e.node(), code, 0, max_stack_);
  code_.reserve(code.size());
  for (auto& [op, c] : code) code_.push_back({op, c});
}

std::optional<double> Program::operator()(double x, double y) const {
  double out = 0.0;
  std::vector<double> scratch;
  if (!evaluate(std::span(&x, 1), std::span(&y, 1), std::span(&out, 1), scratch)) return std::nullopt;
  return out;
}

bool Program::evaluate(std::span<const double> x, std::span<const double> y, std::span<double> out,
                       std::vector<double>& scratch) const {
  const std::size_t m = x.size();
  if (y.size() != m || out.size() != m) throw std::invalid_argument("Program::evaluate: length mismatch");
  scratch.resize(max_stack_ * m);
  std::size_t top = 0;  // number of occupied stack slots
  auto slot = [&](std::size_t s) { return scratch.data() + s * m; };

  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::X: std::copy(x.begin(), x.end(), slot(top++)); continue;
      case Op::Y: std::copy(y.begin(), y.end(), slot(top++)); continue;
      case Op::Real: {
        if (!std::isfinite(in.constant)) return false;
        std::fill_n(slot(top++), m, in.constant);
        continue;
      }
      default: break;
    }
    bool ok = true;
    if (arity(in.op) == 1) {
      double* a = slot(top - 1);
      switch (in.op) {
        case Op::Log:
          for (std::size_t i = 0; i < m; ++i) {
            ok &= a[i] > 0.0;
            a[i] = std::log(a[i]);
          }
          break;
        case Op::Square:
          for (std::size_t i = 0; i < m; ++i) a[i] *= a[i];
          break;
        default:  // Sqrt
          for (std::size_t i = 0; i < m; ++i) {
            ok &= a[i] >= 0.0;
            a[i] = std::sqrt(a[i]);
          }
          break;
      }
      for (std::size_t i = 0; i < m; ++i) ok &= std::isfinite(a[i]);
    } else {
      double* a = slot(top - 2);
      const double* b = slot(top - 1);
      switch (in.op) {
        case Op::Add:
          for (std::size_t i = 0; i < m; ++i) a[i] += b[i];
          break;
        case Op::Sub:
          for (std::size_t i = 0; i < m; ++i) a[i] -= b[i];
          break;
        case Op::Mul:
          for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
          break;
        default:  // Div
          for (std::size_t i = 0; i < m; ++i) {
            ok &= b[i] != 0.0;
            a[i] /= b[i];
          }
          break;
      }
      for (std::size_t i = 0; i < m; ++i) ok &= std::isfinite(a[i]);
      --top;
    }
    if (!ok) return false;
  }
  std::copy_n(slot(0), m, out.begin());
  return true;
}

// ---------------------------------------------------------------------------
// Differentiation

namespace {

bool is_const(const Expr& e, double v) {
  return (e.op() == Op::Int && static_cast<double>(e.int_value()) == v) ||
         (e.op() == Op::Real && e.real_value() == v);
}

Expr zero() { return Expr::integer(0); }

Expr s_mul(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0) || is_const(b, 0.0)) return zero();
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  return Expr::binary(Op::Mul, a, b);
}

Expr s_add(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return Expr::binary(Op::Add, a, b);
}

Expr s_sub(const Expr& a, const Expr& b) {
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return s_mul(Expr::integer(-1), b);
  return Expr::binary(Op::Sub, a, b);
}

Expr s_div(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0)) return zero();
  if (is_const(b, 1.0)) return a;
  return Expr::binary(Op::Div, a, b);
}

}  // namespace

Expr differentiate_y(const Expr& e) {
  switch (e.op()) {
    case Op::Y: return Expr::integer(1);
    case Op::X:
    case Op::Int:
    case Op::Real: return zero();
    default: break;
  }
  const Expr a = e.child(0);
  const Expr da = differentiate_y(a);
  switch (e.op()) {
    case Op::Log: return s_div(da, a);
    case Op::Square: return s_mul(s_mul(Expr::integer(2), a), da);
    case Op::Sqrt: return s_div(da, s_mul(Expr::integer(2), Expr::unary(Op::Sqrt, a)));
    default: break;
  }
  const Expr b = e.child(1);
  const Expr db = differentiate_y(b);
  switch (e.op()) {
    case Op::Add: return s_add(da, db);
    case Op::Sub: return s_sub(da, db);
    case Op::Mul: return s_add(s_mul(da, b), s_mul(a, db));
    default:  // Div: (a'b - ab') / b^2, split so a constant numerator drops a term
      return s_sub(s_div(da, b), s_div(s_mul(a, db), Expr::unary(Op::Square, b)));
  }
}

// ---------------------------------------------------------------------------
// Canonical keys and text

namespace {

void atom_text(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::X: out += 'x'; break;
    case Op::Y: out += 'y'; break;
    case Op::Int: out += std::to_string(n.int_value); break;
    case Op::Real: out += format_real(n.real_value); break;
    default: break;
  }
}

void format_node(const Node& n, std::string& out) {
  if (is_leaf(n.op)) {
    atom_text(n, out);
    return;
  }
  out += '(';
  out += op_name(n.op);
  out += ' ';
  format_node(*n.lhs, out);
  if (n.rhs) {
    out += ' ';
    format_node(*n.rhs, out);
  }
  out += ')';
}

std::string canonical_node(const Node& n) {
  if (is_leaf(n.op)) {
    std::string s;
    atom_text(n, s);
    return s;
  }
  std::string a = canonical_node(*n.lhs);
  std::string s = "(";
  s += op_name(n.op);
  s += ' ';
  if (!n.rhs) return s + a + ')';
  std::string b = canonical_node(*n.rhs);
  if ((n.op == Op::Add || n.op == Op::Mul) && b < a) std::swap(a, b);
  return s + a + ' ' + b + ')';
}

bool has_leaf(const Node& n, Op leaf) {
  if (n.op == leaf) return true;
  if (n.lhs && has_leaf(*n.lhs, leaf)) return true;
  return n.rhs && has_leaf(*n.rhs, leaf);
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string format(const Expr& e) {
  std::string out;
  format_node(*e.node(), out);
  return out;
}

CanonicalKey canonicalize(const Expr& e) { return canonical_node(*e.node()); }

bool contains_required_leaves(const Expr& e) {
  return has_leaf(*e.node(), Op::X) && has_leaf(*e.node(), Op::Y);
}

ParseError::ParseError(std::size_t position, const std::string& cause)
    : std::runtime_error("parse error at " + std::to_string(position) + ": " + cause),
      position_(position),
      cause_(cause) {}

namespace {

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  Expr parse_all() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != s_.size()) throw ParseError(pos_, "trailing input after expression");
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  std::string_view token() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != '(' && s_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    return s_.substr(start, pos_ - start);
  }

  Expr parse_expr() {
    skip_ws();
    if (pos_ >= s_.size()) throw ParseError(pos_, "unexpected end of input, expected an expression");
    if (s_[pos_] == ')') throw ParseError(pos_, "unexpected ')'");
    if (s_[pos_] == '(') {
      const std::size_t open = pos_++;
      skip_ws();
      const std::size_t name_pos = pos_;
      const std::string_view name = token();
      if (name.empty()) throw ParseError(name_pos, pos_ >= s_.size() ? "unexpected end of input, expected an operator" : "expected an operator name");
      Op op;
      if (name == "add") op = Op::Add;
      else if (name == "sub") op = Op::Sub;
      else if (name == "mul") op = Op::Mul;
      else if (name == "div") op = Op::Div;
      else if (name == "log") op = Op::Log;
      else if (name == "square") op = Op::Square;
      else if (name == "sqrt") op = Op::Sqrt;
      else throw ParseError(name_pos, "unknown operator '" + std::string(name) + "'");
      Expr a = parse_expr();
      Expr result = a;
      if (arity(op) == 2) {
        Expr b = parse_expr();
        result = Expr::binary(op, a, b);
      } else {
        result = Expr::unary(op, a);
      }
      skip_ws();
      if (pos_ >= s_.size())
        throw ParseError(pos_, "unexpected end of input, expected ')' closing form opened at " + std::to_string(open));
      if (s_[pos_] != ')')
        throw ParseError(pos_, "expected ')' after " + std::to_string(arity(op)) + " operand(s) of '" +
                                   std::string(name) + "'");
      ++pos_;
      return result;
    }
    const std::size_t at = pos_;
    const std::string_view tok = token();
    if (tok == "x") return Expr::x();
    if (tok == "y") return Expr::y();
    const bool is_integer =
        !tok.empty() && tok.find_first_not_of("0123456789", (tok[0] == '-' || tok[0] == '+') ? 1 : 0) == std::string_view::npos &&
        tok.size() > ((tok[0] == '-' || tok[0] == '+') ? 1u : 0u);
    if (is_integer) {
      std::int64_t v = 0;
      const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
      auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError(at, "integer out of range");
      return Expr::integer(v);
    }
    if (tok.find_first_of(".eEnN") != std::string_view::npos) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec == std::errc() && ptr == tok.data() + tok.size()) return Expr::real(v);
    }
    throw ParseError(at, "unknown atom '" + std::string(tok) + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse(std::string_view text) { return Parser(text).parse_all(); }

}  // namespace glo
