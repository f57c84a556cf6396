#pragma once

// The three reference losses: cross-entropy, Baikal and tuned Baikal.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coeffs.hpp"
#include "expr.hpp"

namespace glo {

enum class BuiltinId { CrossEntropy, Baikal, BaikalCma };

struct BuiltinLoss {
  BuiltinId id;
  std::string name;  // cross_entropy | baikal | baikal_cma
  Expr body;         // coefficient-free tree
  std::optional<CoeffExpr> coefficients;
  std::string formula;

  /// The tree actually trained with: body, or the expanded coefficient form.
  Expr trained_body() const;
  /// Closed-form f(x, y), written directly in C++ without the tree.
  double closed_form(double x, double y) const;
};

/// Pre-order slot values for (sub (log y) (div x y)): sub, log, y, div, x, y.
inline constexpr double kBaikalCmaCoefficients[6] = {2.7279, 0.9863, 1.5352, -1.1135, 1.3716, -0.8411};

/// Throws std::invalid_argument for unknown names.
const BuiltinLoss& builtin(std::string_view name);
std::vector<std::string> builtin_names();

}  // namespace glo
