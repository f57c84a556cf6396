#pragma once

// Multiplicative per-node coefficients over a discovered tree.
//
// A slot at pre-order position p multiplies the value of the node at p. With
// every slot present and all values 1 the parameterized tree equals the base.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expr.hpp"

namespace glo {

struct CoeffExpr {
  Expr base;
  std::vector<std::size_t> slots;  // strictly increasing pre-order positions
  std::vector<double> values;      // aligned with slots

  std::size_t dimension() const noexcept { return slots.size(); }
  /// Throws std::invalid_argument if slots are out of range, unsorted, or misaligned with values.
  void validate() const;
};

CoeffExpr attach_coefficients(const Expr& e);

/// Removes coefficients whose effect other coefficients can absorb:
///   - operands of mul/div, absorbed by the parent's coefficient;
///   - add/sub nodes, whose factor distributes over both operands.
/// A slot is only removed when its absorbing slot(s) are present. Retained
/// values are copied unchanged.
CoeffExpr prune_absorbable(const CoeffExpr& ce);

/// Same slots, new values. Throws std::invalid_argument on length mismatch.
CoeffExpr with_values(const CoeffExpr& ce, std::span<const double> values);

/// Direct evaluation with slot multipliers applied in place.
std::optional<double> evaluate(const CoeffExpr& ce, double x, double y);

/// Plain expression with each slotted node n rewritten as (mul c n).
Expr expand(const CoeffExpr& ce);

/// Text form:
///   expr (sub (log y) (div x y))
///   slots 1 2 3
///   values 0.9863 1.5352 -1.1135
/// Slots are pre-order node positions; values are shortest round-trip decimals.
std::string format_coeff_expr(const CoeffExpr& ce);
CoeffExpr parse_coeff_expr(std::string_view text);

}  // namespace glo
