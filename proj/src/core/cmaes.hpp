#pragma once

// (mu/mu_w, lambda)-CMA-ES with rank-one and weighted rank-mu covariance
// updates and cumulative step-size adaptation. Minimizes.
//
// Strategy constants (N = dimension, w = recombination weights,
// mu_eff = 1 / sum(w_i^2)):
//
//   lambda  = 4 + floor(3 ln N)                 mu = floor(lambda / 2)
//   w_i    ∝ ln(mu + 1/2) - ln(i)               normalized to sum 1
//   c_sigma = (mu_eff + 2) / (N + mu_eff + 5)
//   d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (N + 1)) - 1) + c_sigma
//   c_c     = (4 + mu_eff / N) / (N + 4 + 2 mu_eff / N)
//   c_1     = 2 / ((N + 1.3)^2 + mu_eff)
//   c_mu    = min(1 - c_1, 2 (mu_eff - 2 + 1/mu_eff) / ((N + 2)^2 + mu_eff))
//   E||N(0,I)|| ≈ sqrt(N) (1 - 1/(4N) + 1/(21 N^2))

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace glo {

struct CmaesConfig {
  int dimension = 1;
  double sigma0 = 1.5;
  std::optional<int> lambda;  // default 4 + floor(3 ln N)
  std::optional<int> mu;      // default floor(lambda / 2)
  /// Length mu, strictly decreasing; normalized on use. Default log-rank.
  std::vector<double> recombination_weights;
  long max_evaluations = 1000;
  std::optional<double> target_fitness;
  std::uint64_t rng_seed = 0;

  int resolved_lambda() const;
  int resolved_mu() const;
  /// Normalized weights (sum 1). Throws std::invalid_argument if invalid.
  std::vector<double> resolved_weights() const;
  void validate() const;
};

class NumericalHealthError : public std::runtime_error {
 public:
  NumericalHealthError(long generation, const std::string& what)
      : std::runtime_error("CMA-ES numerical failure at generation " + std::to_string(generation) + ": " + what),
        generation_(generation) {}
  long generation() const noexcept { return generation_; }

 private:
  long generation_;
};

struct CmaesState {
  int dimension = 0;
  int lambda = 0;
  int mu = 0;
  Eigen::VectorXd weights;
  double mu_eff = 0, c_sigma = 0, d_sigma = 0, c_c = 0, c_1 = 0, c_mu = 0, chi_n = 0;

  Eigen::VectorXd mean;
  double sigma = 0;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_c;
  Eigen::MatrixXd eigen_basis;   // B, columns are eigenvectors
  Eigen::VectorXd eigen_values;  // D^2
  Eigen::MatrixXd inv_sqrt_c;
  long eigen_generation = 0;
  long eigen_interval = 1;

  long generation = 0;
  long evaluations = 0;
};

CmaesState cmaes_init(const Eigen::VectorXd& x0, const CmaesConfig& cfg);

/// Samples lambda candidates mean + sigma * B * D * z.
std::vector<Eigen::VectorXd> cmaes_ask(CmaesState& state, Rng& rng);

/// Rank-based update. Non-finite fitness ranks worst; ties keep submission order.
void cmaes_tell(CmaesState& state, const std::vector<Eigen::VectorXd>& candidates, const std::vector<double>& fitness);

struct CmaesHistoryEntry {
  long generation = 0;
  long evaluations = 0;
  double sigma = 0;
  double best_fitness = 0;  // best so far
  double mean_fitness = 0;  // mean over the generation's finite values
};

struct CmaesResult {
  Eigen::VectorXd best;
  double best_fitness = 0;
  std::vector<CmaesHistoryEntry> history;
  CmaesState final_state;
};

using BatchObjective = std::function<std::vector<double>(const std::vector<Eigen::VectorXd>&)>;
using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Runs ask/tell until the next generation would exceed max_evaluations or
/// best <= target_fitness.
CmaesResult cmaes_minimize(const BatchObjective& objective, const Eigen::VectorXd& x0, const CmaesConfig& cfg, Rng& rng);
CmaesResult cmaes_minimize(const Objective& objective, const Eigen::VectorXd& x0, const CmaesConfig& cfg, Rng& rng);

/// generation,evaluations,sigma,best_fitness,mean_fitness
std::string history_csv(const std::vector<CmaesHistoryEntry>& history);

}  // namespace glo
