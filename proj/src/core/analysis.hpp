#pragma once

// Binary-classification view of a loss, curve minima, and softmax output
// histograms of trained classifiers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "expr.hpp"
#include "trainer.hpp"

namespace glo {

using CurveFn = std::function<double(double)>;

/// g(y0) = -1/2 [f(x0, y0) + f(1 - x0, 1 - y0)] with both y arguments clipped
/// into [clip_epsilon, 1 - clip_epsilon]. Returns NaN where f is Invalid.
/// Throws std::invalid_argument unless x0 is 0 or 1.
CurveFn binary_expand(const Expr& body, int x0, double clip_epsilon = 1e-7);

struct CurveSample {
  double y0;
  double value;
};

struct BinaryLossCurve {
  std::string loss_name;
  int x0 = 1;
  std::vector<CurveSample> samples;  // ascending y0
  double argmin_y0 = 0.0;

  /// y0,loss
  std::string csv() const;
};

/// n points evenly spaced over [lo, hi] inclusive.
std::vector<CurveSample> sample_curve(const CurveFn& g, double lo, double hi, std::size_t n);

/// Grid scan of `grid_points` points to bracket the lowest grid value, then
/// golden-section search inside the bracket to width `tol`. Throws
/// std::domain_error on a non-finite value inside the bracket and
/// std::invalid_argument unless lo < hi.
double find_minimum(const CurveFn& g, double lo, double hi, double tol = 1e-6, std::size_t grid_points = 1000);

BinaryLossCurve analyze_curve(const std::string& loss_name, const Expr& body, int x0, double lo = 0.01,
                              double hi = 0.99, std::size_t grid_points = 1000);

enum class Monotonicity { StrictlyDecreasing, StrictlyIncreasing, NonMonotonic };

const char* monotonicity_name(Monotonicity m) noexcept;

/// Sign test over consecutive samples. A zero difference counts as non-strict.
Monotonicity monotonicity(const std::vector<CurveSample>& samples);

/// True if some interior grid sample is strictly lower than both ends and the
/// curve rises immediately to its right.
bool has_interior_minimum(const std::vector<CurveSample>& samples);

struct OutputHistogram {
  std::vector<double> edges;          // bins + 1 ascending edges over [0, 1]
  std::vector<std::uint64_t> counts;  // last bin is closed on the right
  std::string provenance;

  std::uint64_t total() const;
  std::size_t mode_bin() const;  // lowest index among ties
  /// bin_lo,bin_hi,count
  std::string csv() const;
};

OutputHistogram histogram(const std::vector<double>& values, std::size_t bins, std::string provenance = {});

/// Every softmax output of the model on `data` (rows x classes values).
OutputHistogram output_histogram(const Mlp& model, const LabeledData& data, std::size_t bins,
                                 std::string provenance = {});

/// One value per row: the largest softmax output.
OutputHistogram max_class_histogram(const Mlp& model, const LabeledData& data, std::size_t bins,
                                    std::string provenance = {});

}  // namespace glo
