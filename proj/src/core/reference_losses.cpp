#include "reference_losses.hpp"

#include <cmath>
#include <stdexcept>

namespace glo {

namespace {

BuiltinLoss make_cross_entropy() {
  return BuiltinLoss{BuiltinId::CrossEntropy, "cross_entropy", Expr::binary(Op::Mul, Expr::x(), Expr::unary(Op::Log, Expr::y())),
                     std::nullopt, "L = -(1/n) sum_i x_i log(y_i)"};
}

Expr baikal_body() {
  return Expr::binary(Op::Sub, Expr::unary(Op::Log, Expr::y()), Expr::binary(Op::Div, Expr::x(), Expr::y()));
}

BuiltinLoss make_baikal() {
  return BuiltinLoss{BuiltinId::Baikal, "baikal", baikal_body(), std::nullopt, "L = -(1/n) sum_i [log(y_i) - x_i / y_i]"};
}

BuiltinLoss make_baikal_cma() {
  CoeffExpr ce;
  ce.base = baikal_body();
  ce.slots = {0, 1, 2, 3, 4, 5};
  ce.values.assign(std::begin(kBaikalCmaCoefficients), std::end(kBaikalCmaCoefficients));
  ce.validate();
  return BuiltinLoss{BuiltinId::BaikalCma, "baikal_cma", baikal_body(), std::move(ce),
                     "L = -(1/n) sum_i c0 [c1 log(c2 y_i) - c3 (c4 x_i) / (c5 y_i)]"};
}

}  // namespace

Expr BuiltinLoss::trained_body() const { return coefficients ? expand(*coefficients) : body; }

double BuiltinLoss::closed_form(double x, double y) const {
  switch (id) {
    case BuiltinId::CrossEntropy: return x * std::log(y);
    case BuiltinId::Baikal: return std::log(y) - x / y;
    case BuiltinId::BaikalCma: {
      const auto& c = kBaikalCmaCoefficients;
      return c[0] * (c[1] * std::log(c[2] * y) - c[3] * ((c[4] * x) / (c[5] * y)));
    }
  }
  throw std::logic_error("closed_form: unknown builtin");
}

const BuiltinLoss& builtin(std::string_view name) {
  static const BuiltinLoss ce = make_cross_entropy();
  static const BuiltinLoss baikal = make_baikal();
  static const BuiltinLoss cma = make_baikal_cma();
  if (name == ce.name) return ce;
  if (name == baikal.name) return baikal;
  if (name == cma.name) return cma;
  throw std::invalid_argument("unknown builtin loss '" + std::string(name) +
                              "' (expected cross_entropy, baikal or baikal_cma)");
}

std::vector<std::string> builtin_names() { return {"cross_entropy", "baikal", "baikal_cma"}; }

}  // namespace glo
