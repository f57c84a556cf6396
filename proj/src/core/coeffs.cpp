#include "coeffs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace glo {

void CoeffExpr::validate() const {
  if (slots.size() != values.size()) throw std::invalid_argument("coefficient values do not match slot count");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i] >= base.size()) throw std::invalid_argument("coefficient slot out of range");
    if (i > 0 && slots[i] <= slots[i - 1]) throw std::invalid_argument("coefficient slots must be increasing");
  }
}

CoeffExpr attach_coefficients(const Expr& e) {
  CoeffExpr ce{e, {}, {}};
  ce.slots.resize(e.size());
  for (std::size_t i = 0; i < ce.slots.size(); ++i) ce.slots[i] = i;
  ce.values.assign(e.size(), 1.0);
  return ce;
}

namespace {

struct FlatNode {
  Op op;
  std::ptrdiff_t parent;
  std::size_t lhs = 0, rhs = 0;
};

void flatten(const Expr& e, std::ptrdiff_t parent, std::vector<FlatNode>& out) {
  const std::size_t me = out.size();
  out.push_back({e.op(), parent});
  const int ar = arity(e.op());
  if (ar >= 1) {
    out[me].lhs = out.size();
    flatten(e.child(0), static_cast<std::ptrdiff_t>(me), out);
  }
  if (ar == 2) {
    out[me].rhs = out.size();
    flatten(e.child(1), static_cast<std::ptrdiff_t>(me), out);
  }
}

}  // namespace

CoeffExpr prune_absorbable(const CoeffExpr& ce) {
  ce.validate();
  std::vector<FlatNode> nodes;
  flatten(ce.base, -1, nodes);
  std::vector<bool> has(nodes.size(), false);
  for (std::size_t s : ce.slots) has[s] = true;

  CoeffExpr out{ce.base, {}, {}};
  for (std::size_t k = 0; k < ce.slots.size(); ++k) {
    const std::size_t p = ce.slots[k];
    const FlatNode& n = nodes[p];
    bool removable = false;
    if (n.parent >= 0) {
      const Op parent = nodes[static_cast<std::size_t>(n.parent)].op;
      if ((parent == Op::Mul || parent == Op::Div) && has[static_cast<std::size_t>(n.parent)]) removable = true;
    }
    if ((n.op == Op::Add || n.op == Op::Sub) && has[n.lhs] && has[n.rhs]) removable = true;
    if (!removable) {
      out.slots.push_back(p);
      out.values.push_back(ce.values[k]);
    }
  }
  return out;
}

CoeffExpr with_values(const CoeffExpr& ce, std::span<const double> values) {
  if (values.size() != ce.slots.size())
    throw std::invalid_argument("coefficient vector has length " + std::to_string(values.size()) + ", expected " +
                                std::to_string(ce.slots.size()));
  CoeffExpr out = ce;
  out.values.assign(values.begin(), values.end());
  return out;
}

namespace {

struct SlotCursor {
  const CoeffExpr& ce;
  std::size_t next = 0;  // index into ce.slots

  std::optional<double> factor_at(std::size_t position) {
    if (next < ce.slots.size() && ce.slots[next] == position) return ce.values[next++];
    return std::nullopt;
  }
};

std::optional<double> apply(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return b == 0.0 ? std::nullopt : std::optional<double>(a / b);
    case Op::Log: return a > 0.0 ? std::optional<double>(std::log(a)) : std::nullopt;
    case Op::Square: return a * a;
    case Op::Sqrt: return a >= 0.0 ? std::optional<double>(std::sqrt(a)) : std::nullopt;
    default: return std::nullopt;
  }
}

std::optional<double> eval_coeff(const Expr& e, std::size_t& position, SlotCursor& cursor, double x, double y) {
  const std::size_t me = position++;
  const auto factor = cursor.factor_at(me);
  std::optional<double> v;
  switch (e.op()) {
    case Op::X: v = x; break;
    case Op::Y: v = y; break;
    case Op::Int: v = static_cast<double>(e.int_value()); break;
    case Op::Real: v = e.real_value(); break;
    default: {
      // Children must be visited even after a failure to keep positions aligned.
      const auto a = eval_coeff(e.child(0), position, cursor, x, y);
      std::optional<double> b;
      if (arity(e.op()) == 2) b = eval_coeff(e.child(1), position, cursor, x, y);
      if (!a || (arity(e.op()) == 2 && !b)) return std::nullopt;
      v = apply(e.op(), *a, b.value_or(0.0));
      break;
    }
  }
  if (!v) return std::nullopt;
  const double r = factor ? *factor * *v : *v;
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

Expr expand_rec(const Expr& e, std::size_t& position, SlotCursor& cursor) {
  const std::size_t me = position++;
  const auto factor = cursor.factor_at(me);
  Expr rebuilt = e;
  if (arity(e.op()) == 1) {
    rebuilt = Expr::unary(e.op(), expand_rec(e.child(0), position, cursor));
  } else if (arity(e.op()) == 2) {
    Expr a = expand_rec(e.child(0), position, cursor);
    Expr b = expand_rec(e.child(1), position, cursor);
    rebuilt = Expr::binary(e.op(), a, b);
  }
  if (!factor) return rebuilt;
  return Expr::binary(Op::Mul, Expr::real(*factor), rebuilt);
}

}  // namespace

std::optional<double> evaluate(const CoeffExpr& ce, double x, double y) {
  SlotCursor cursor{ce};
  std::size_t position = 0;
  return eval_coeff(ce.base, position, cursor, x, y);
}

Expr expand(const CoeffExpr& ce) {
  ce.validate();
  SlotCursor cursor{ce};
  std::size_t position = 0;
  return expand_rec(ce.base, position, cursor);
}

std::string format_coeff_expr(const CoeffExpr& ce) {
  std::ostringstream out;
  out << "expr " << format(ce.base) << "\nslots";
  for (std::size_t s : ce.slots) out << ' ' << s;
  out << "\nvalues";
  for (double v : ce.values) out << ' ' << format_real(v);
  out << '\n';
  return out.str();
}

CoeffExpr parse_coeff_expr(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::optional<Expr> base;
  std::optional<std::vector<std::size_t>> slots;
  std::optional<std::vector<double>> values;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto space = line.find_first_of(" \t", first);
    const std::string key = line.substr(first, space == std::string::npos ? std::string::npos : space - first);
    const std::string rest = space == std::string::npos ? std::string() : line.substr(space + 1);
    if (key == "expr") {
      base = parse(rest);
    } else if (key == "slots") {
      std::istringstream items(rest);
      std::vector<std::size_t> v;
      for (std::size_t s; items >> s;) v.push_back(s);
      if (!items.eof()) throw std::invalid_argument("line " + std::to_string(line_no) + ": bad slot list");
      slots = std::move(v);
    } else if (key == "values") {
      std::istringstream items(rest);
      std::vector<double> v;
      for (std::string tok; items >> tok;) {
        double d = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
        if (ec != std::errc() || ptr != tok.data() + tok.size())
          throw std::invalid_argument("line " + std::to_string(line_no) + ": bad value '" + tok + "'");
        v.push_back(d);
      }
      values = std::move(v);
    } else {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!base) throw std::invalid_argument("coefficient file has no 'expr' line");
  CoeffExpr ce = slots ? CoeffExpr{*base, *slots, values.value_or(std::vector<double>{})}
                       : attach_coefficients(*base);
  if (!slots && values) ce.values = *values;
  ce.validate();
  return ce;
}

}  // namespace glo
