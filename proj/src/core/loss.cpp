#include "loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glo {

LossFunction::LossFunction(Expr body, std::string name)
    : body_(std::move(body)),
      derivative_(differentiate_y(body_)),
      f_(body_),
      df_(derivative_),
      name_(std::move(name)) {}

std::optional<double> LossFunction::aggregate(std::span<const double> x, std::span<const double> y,
                                              double clip_epsilon) const {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("aggregate: x and y must have equal, positive length");
  std::vector<double> yc(y.begin(), y.end());
  for (double& v : yc) v = std::clamp(v, clip_epsilon, 1.0 - clip_epsilon);
  std::vector<double> out(x.size());
  std::vector<double> scratch;
  if (!f_.evaluate(x, yc, out, scratch)) return std::nullopt;
  double sum = 0.0;
  for (double v : out) sum += v;
  const double l = -sum / static_cast<double>(x.size());
  if (!std::isfinite(l)) return std::nullopt;
  return l;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

HeadStatus loss_head(const LossFunction& loss, const Eigen::MatrixXd& logits, std::span<const int> labels,
                     double clip_epsilon, double& loss_value, Eigen::MatrixXd* grad_logits, HeadWorkspace& ws) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index n = logits.cols();
  if (static_cast<std::size_t>(b) != labels.size()) throw std::invalid_argument("loss_head: label count mismatch");
  if (!logits.allFinite()) return HeadStatus::NonFinite;
  ws.probs = softmax_rows(logits);
  if (!ws.probs.allFinite()) return HeadStatus::NonFinite;

  const auto m = static_cast<std::size_t>(b * n);
  ws.x.assign(m, 0.0);
  ws.y.resize(m);
  ws.f.resize(m);
  ws.inside.resize(m);
  const double hi = 1.0 - clip_epsilon;
  for (Eigen::Index r = 0; r < b; ++r) {
    ws.x[static_cast<std::size_t>(r * n + labels[static_cast<std::size_t>(r)])] = 1.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double p = ws.probs(r, c);
      const auto k = static_cast<std::size_t>(r * n + c);
      ws.inside[k] = p > clip_epsilon && p < hi;
      ws.y[k] = std::clamp(p, clip_epsilon, hi);
    }
  }
  if (!loss.program().evaluate(ws.x, ws.y, ws.f, ws.scratch)) return HeadStatus::Invalid;
  double sum = 0.0;
  for (double v : ws.f) sum += v;
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(b));
  loss_value = -sum * scale;
  if (!std::isfinite(loss_value)) return HeadStatus::NonFinite;
  if (!grad_logits) return HeadStatus::Ok;

  ws.df.resize(m);
  if (!loss.derivative_program().evaluate(ws.x, ws.y, ws.df, ws.scratch)) return HeadStatus::Invalid;
  grad_logits->resize(b, n);
  for (Eigen::Index r = 0; r < b; ++r) {
    // dL/dp_c, zero where the clip is active; then through the softmax Jacobian.
    double dot = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto k = static_cast<std::size_t>(r * n + c);
      const double g = ws.inside[k] ? -scale * ws.df[k] : 0.0;
      (*grad_logits)(r, c) = g;
      dot += g * ws.probs(r, c);
    }
    for (Eigen::Index c = 0; c < n; ++c) (*grad_logits)(r, c) = ws.probs(r, c) * ((*grad_logits)(r, c) - dot);
  }
  if (!grad_logits->allFinite()) return HeadStatus::NonFinite;
  return HeadStatus::Ok;
}

}  // namespace glo
