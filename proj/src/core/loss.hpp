#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "expr.hpp"

namespace glo {

/// A per-class loss body f(x, y) with the fixed reduction
///
///   L(x⃗, y⃗) = -(1/n) Σ_i f(x_i, clip(y_i))
///
/// where clip maps y into [eps, 1 - eps]. Holds compiled programs for f and
/// df/dy.
class LossFunction {
 public:
  explicit LossFunction(Expr body, std::string name = {});

  const Expr& body() const noexcept { return body_; }
  const Expr& derivative() const noexcept { return derivative_; }
  const std::string& name() const noexcept { return name_; }

  std::optional<double> per_class(double x, double y) const { return f_(x, y); }
  std::optional<double> per_class_derivative(double x, double y) const { return df_(x, y); }

  /// Invalid if any term is Invalid.
  std::optional<double> aggregate(std::span<const double> x, std::span<const double> y, double clip_epsilon) const;

  const Program& program() const noexcept { return f_; }
  const Program& derivative_program() const noexcept { return df_; }

 private:
  Expr body_;
  Expr derivative_;
  Program f_;
  Program df_;
  std::string name_;
};

enum class HeadStatus { Ok, NonFinite, Invalid };

struct HeadWorkspace {
  std::vector<double> x, y, f, df, scratch;
  std::vector<unsigned char> inside;  // y strictly within the clip interval
  Eigen::MatrixXd probs;
};

/// Softmax + batch-mean loss on a row-per-sample logit matrix with hard
/// labels. When `grad_logits` is non-null it receives dL/dlogits. NonFinite
/// means the softmax output or the loss/gradient left the reals; Invalid
/// means the body hit a domain error on finite inputs.
HeadStatus loss_head(const LossFunction& loss, const Eigen::MatrixXd& logits, std::span<const int> labels,
                     double clip_epsilon, double& loss_value, Eigen::MatrixXd* grad_logits, HeadWorkspace& ws);

/// Row-wise numerically stable softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace glo
