#pragma once

// Loss-function expression trees: grammar, random generation, evaluation,
// symbolic d/dy, canonical keys and the s-expression text format.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rng.hpp"

namespace glo {

enum class Op : std::uint8_t { Add, Sub, Mul, Div, Log, Square, Sqrt, X, Y, Int, Real };

int arity(Op op) noexcept;
std::string_view op_name(Op op) noexcept;
bool is_leaf(Op op) noexcept;

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::X;
  std::int64_t int_value = 0;  // Op::Int
  double real_value = 0.0;     // Op::Real
  NodePtr lhs;                 // only child of unary ops
  NodePtr rhs;
  std::uint32_t count = 1;     // nodes in this subtree
  std::uint32_t height = 0;    // depth of the deepest leaf below this node
};

/// Immutable expression tree with value semantics. Copies share nodes.
///
/// Node positions are pre-order indices: the root is 0, then the whole left
/// subtree, then the right subtree.
class Expr {
 public:
  Expr();  // the leaf x
  explicit Expr(NodePtr root);

  static Expr x();
  static Expr y();
  static Expr integer(std::int64_t v);
  static Expr real(double v);
  static Expr unary(Op op, Expr child);
  static Expr binary(Op op, Expr lhs, Expr rhs);

  Op op() const noexcept { return root_->op; }
  std::int64_t int_value() const noexcept { return root_->int_value; }
  double real_value() const noexcept { return root_->real_value; }
  Expr child(int i) const;
  const NodePtr& node() const noexcept { return root_; }

  std::size_t size() const;
  /// Root has depth 0.
  int depth() const;

  Expr subtree(std::size_t index) const;
  /// Returns a copy with the subtree at `index` replaced; untouched branches are shared.
  Expr replace(std::size_t index, const Expr& replacement) const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  NodePtr root_;
};

// ---------------------------------------------------------------------------
// Generation

/// Node kinds the search grammar draws from. One/MinusOne are the two
/// integer-constant leaves.
enum class GenKind : std::uint8_t { Log, Square, Sqrt, Add, Sub, Mul, Div, X, Y, One, MinusOne };
inline constexpr std::size_t kGenKindCount = 11;

std::string_view gen_kind_name(GenKind k) noexcept;
int gen_kind_arity(GenKind k) noexcept;

struct GenerationWeights {
  // Indexed by GenKind. Defaults: log, x, y at 3; sqrt at 2; everything else 1.
  std::array<double, kGenKindCount> w{3, 1, 2, 1, 1, 1, 1, 3, 3, 1, 1};

  double& operator[](GenKind k) { return w[static_cast<std::size_t>(k)]; }
  double operator[](GenKind k) const { return w[static_cast<std::size_t>(k)]; }

  /// Throws std::invalid_argument unless all weights are finite, >= 0 and
  /// some leaf kind is positive.
  void validate() const;

  /// Weighted draw restricted to kinds with the given arity (-1 = any).
  /// Throws std::invalid_argument when no kind with that arity has weight.
  GenKind draw(Rng& rng, int arity_filter = -1) const;
  GenKind draw_leaf(Rng& rng) const { return draw(rng, 0); }
};

/// Builds a node of the given kind. Operators get the supplied children.
Expr make_node(GenKind kind, const Expr& a = Expr(), const Expr& b = Expr());

Expr random_tree(const GenerationWeights& weights, int max_depth, Rng& rng);

// ---------------------------------------------------------------------------
// Evaluation

/// Recursive evaluation. std::nullopt is the Invalid marker: log of a
/// non-positive value, sqrt of a negative value, division by zero, or any
/// non-finite intermediate.
std::optional<double> evaluate(const Expr& e, double x, double y);

/// Postfix bytecode compiled from an Expr, for evaluating the same tree over
/// many (x, y) pairs at once.
class Program {
 public:
  explicit Program(const Expr& e);

  std::optional<double> operator()(double x, double y) const;

  /// out[i] = f(x[i], y[i]). Returns false if any element is Invalid; `out`
  /// contents are then unspecified. `scratch` is reused across calls.
  bool evaluate(std::span<const double> x, std::span<const double> y, std::span<double> out,
                std::vector<double>& scratch) const;

 private:
  struct Instr {
    Op op;
    double constant;
  };
  std::vector<Instr> code_;
  std::size_t max_stack_ = 0;
};

// ---------------------------------------------------------------------------
// Symbolic analysis

/// d e / d y. The result may contain Real constants. Zero and one factors are
/// folded so derivative trees stay small.
Expr differentiate_y(const Expr& e);

using CanonicalKey = std::string;

/// Serialization with the operands of add and mul sorted, so commuted trees
/// share a key. No other algebraic rewriting is done.
CanonicalKey canonicalize(const Expr& e);

bool contains_required_leaves(const Expr& e);

// ---------------------------------------------------------------------------
// Text format
//
//   expr  := atom | "(" name expr+ ")"
//   name  := add | sub | mul | div | log | square | sqrt
//   atom  := x | y | integer | real
//
// Reals always carry a '.', an exponent, or are inf/nan, so they never
// collide with integers.

std::string format(const Expr& e);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t position, const std::string& cause);
  std::size_t position() const noexcept { return position_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::size_t position_;
  std::string cause_;
};

Expr parse(std::string_view text);

/// Shortest round-trip decimal text for a double.
std::string format_real(double v);

}  // namespace glo
