#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace glo {

CurveFn binary_expand(const Expr& body, int x0, double clip_epsilon) {
  if (x0 != 0 && x0 != 1) throw std::invalid_argument("binary_expand: x0 must be 0 or 1");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 0.5)) throw std::invalid_argument("binary_expand: bad clip epsilon");
  auto prog = std::make_shared<const Program>(body);
  const double xa = x0;
  const double xb = 1.0 - x0;
  return [prog, xa, xb, clip_epsilon](double y0) {
    const double lo = clip_epsilon;
    const double hi = 1.0 - clip_epsilon;
    const auto a = (*prog)(xa, std::clamp(y0, lo, hi));
    const auto b = (*prog)(xb, std::clamp(1.0 - y0, lo, hi));
    if (!a || !b) return std::numeric_limits<double>::quiet_NaN();
    return -0.5 * (*a + *b);
  };
}

std::string BinaryLossCurve::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "y0,loss\n";
  for (const auto& s : samples) os << s.y0 << ',' << s.value << '\n';
  return os.str();
}

std::vector<CurveSample> sample_curve(const CurveFn& g, double lo, double hi, std::size_t n) {
  if (!(lo < hi)) throw std::invalid_argument("sample_curve: lo must be below hi");
  if (n < 2) throw std::invalid_argument("sample_curve: at least two points required");
  std::vector<CurveSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    const double y = i + 1 == n ? hi : lo + t * (hi - lo);
    out[i] = {y, g(y)};
  }
  return out;
}

double find_minimum(const CurveFn& g, double lo, double hi, double tol, std::size_t grid_points) {
  if (!(lo < hi)) throw std::invalid_argument("find_minimum: lo must be below hi");
  if (!(tol > 0.0)) throw std::invalid_argument("find_minimum: tol must be positive");
  const auto grid = sample_curve(g, lo, hi, std::max<std::size_t>(grid_points, 3));
  std::size_t best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i].value))
      throw std::domain_error("find_minimum: non-finite value at y0=" + std::to_string(grid[i].y0));
    if (grid[i].value < grid[best].value) best = i;
  }
  double a = grid[best == 0 ? 0 : best - 1].y0;
  double b = grid[std::min(best + 1, grid.size() - 1)].y0;

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto eval = [&](double y) {
    const double v = g(y);
    if (!std::isfinite(v)) throw std::domain_error("find_minimum: non-finite value at y0=" + std::to_string(y));
    return v;
  };
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
  }
  const double mid = 0.5 * (a + b);
  // The bracket endpoints may be grid points that beat the interior.
  return eval(mid) <= grid[best].value ? mid : grid[best].y0;
}

BinaryLossCurve analyze_curve(const std::string& loss_name, const Expr& body, int x0, double lo, double hi,
                              std::size_t grid_points) {
  const CurveFn g = binary_expand(body, x0);
  BinaryLossCurve c;
  c.loss_name = loss_name;
  c.x0 = x0;
  c.samples = sample_curve(g, lo, hi, grid_points);
  c.argmin_y0 = find_minimum(g, lo, hi, 1e-9, grid_points);
  return c;
}

const char* monotonicity_name(Monotonicity m) noexcept {
  switch (m) {
    case Monotonicity::StrictlyDecreasing: return "decreasing";
    case Monotonicity::StrictlyIncreasing: return "increasing";
    case Monotonicity::NonMonotonic: return "non-monotonic";
  }
  return "unknown";
}

Monotonicity monotonicity(const std::vector<CurveSample>& s) {
  if (s.size() < 2) throw std::invalid_argument("monotonicity: need at least two samples");
  bool dec = true;
  bool inc = true;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double d = s[i].value - s[i - 1].value;
    if (!(d < 0.0)) dec = false;
    if (!(d > 0.0)) inc = false;
  }
  if (dec) return Monotonicity::StrictlyDecreasing;
  if (inc) return Monotonicity::StrictlyIncreasing;
  return Monotonicity::NonMonotonic;
}

bool has_interior_minimum(const std::vector<CurveSample>& s) {
  if (s.size() < 3) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i].value < s[best].value) best = i;
  if (best == 0 || best + 1 == s.size()) return false;
  return s[best].value < s.front().value && s[best].value < s.back().value && s[best + 1].value > s[best].value;
}

std::uint64_t OutputHistogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::size_t OutputHistogram::mode_bin() const {
  if (counts.empty()) throw std::logic_error("mode_bin of an empty histogram");
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::string OutputHistogram::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) os << edges[i] << ',' << edges[i + 1] << ',' << counts[i] << '\n';
  return os.str();
}

OutputHistogram histogram(const std::vector<double>& values, std::size_t bins, std::string provenance) {
  if (bins == 0) throw std::invalid_argument("histogram: bins must be positive");
  OutputHistogram h;
  h.provenance = std::move(provenance);
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("histogram: value outside [0, 1]");
    auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

namespace {

Eigen::MatrixXd checked_probabilities(const Mlp& model, const LabeledData& data) {
  if (data.features.cols() != model.input_dim())
    throw std::invalid_argument("output histogram: data width " + std::to_string(data.features.cols()) +
                                " does not match model input " + std::to_string(model.input_dim()));
  return model.probabilities(data.features);
}

}  // namespace

OutputHistogram output_histogram(const Mlp& model, const LabeledData& data, std::size_t bins,
                                 std::string provenance) {
  const Eigen::MatrixXd p = checked_probabilities(model, data);
  std::vector<double> v(p.data(), p.data() + p.size());
  return histogram(v, bins, std::move(provenance));
}

OutputHistogram max_class_histogram(const Mlp& model, const LabeledData& data, std::size_t bins,
                                    std::string provenance) {
  const Eigen::MatrixXd p = checked_probabilities(model, data);
  std::vector<double> v(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) v[static_cast<std::size_t>(r)] = p.row(r).maxCoeff();
  return histogram(v, bins, std::move(provenance));
}

}  // namespace glo
