#include "cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "expr.hpp"

namespace glo {

int CmaesConfig::resolved_lambda() const {
  if (lambda) return *lambda;
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

int CmaesConfig::resolved_mu() const {
  if (mu) return *mu;
  return resolved_lambda() / 2;
}

std::vector<double> CmaesConfig::resolved_weights() const {
  const int m = resolved_mu();
  std::vector<double> w = recombination_weights;
  if (w.empty()) {
    for (int i = 1; i <= m; ++i) w.push_back(std::log(m + 0.5) - std::log(static_cast<double>(i)));
  }
  if (static_cast<int>(w.size()) != m) throw std::invalid_argument("recombination_weights must have length mu");
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) throw std::invalid_argument("recombination_weights must be positive");
    if (i > 0 && !(w[i] < w[i - 1])) throw std::invalid_argument("recombination_weights must be strictly decreasing");
  }
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= sum;
  return w;
}

void CmaesConfig::validate() const {
  if (dimension < 1) throw std::invalid_argument("dimension must be positive");
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw std::invalid_argument("sigma0 must be positive");
  if (resolved_lambda() < 1) throw std::invalid_argument("lambda must be positive");
  if (resolved_mu() < 1 || resolved_mu() > resolved_lambda()) throw std::invalid_argument("mu must be in [1, lambda]");
  if (max_evaluations < 1) throw std::invalid_argument("max_evaluations must be positive");
  resolved_weights();
}

namespace {

void decompose(CmaesState& s) {
  if (!s.covariance.allFinite()) throw NumericalHealthError(s.generation, "non-finite covariance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.covariance);
  if (es.info() != Eigen::Success) throw NumericalHealthError(s.generation, "eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  if (!ev.allFinite()) throw NumericalHealthError(s.generation, "non-finite eigenvalues");
  // Round-off can push the smallest eigenvalue of a nearly singular C below zero.
  const double floor = std::max(ev.maxCoeff(), 1.0) * 1e-300;
  for (int i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
  s.eigen_basis = es.eigenvectors();
  s.eigen_values = ev;
  s.inv_sqrt_c = s.eigen_basis * ev.cwiseSqrt().cwiseInverse().asDiagonal() * s.eigen_basis.transpose();
  s.eigen_generation = s.generation;
}

}  // namespace

CmaesState cmaes_init(const Eigen::VectorXd& x0, const CmaesConfig& cfg) {
  cfg.validate();
  if (x0.size() != cfg.dimension)
    throw std::invalid_argument("cmaes_init: x0 has length " + std::to_string(x0.size()) + ", expected " +
                                std::to_string(cfg.dimension));
  CmaesState s;
  const int n = cfg.dimension;
  const double nd = n;
  s.dimension = n;
  s.lambda = cfg.resolved_lambda();
  s.mu = cfg.resolved_mu();
  const auto w = cfg.resolved_weights();
  s.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  s.mu_eff = 1.0 / s.weights.squaredNorm();
  s.c_sigma = (s.mu_eff + 2.0) / (nd + s.mu_eff + 5.0);
  s.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (nd + 1.0)) - 1.0) + s.c_sigma;
  s.c_c = (4.0 + s.mu_eff / nd) / (nd + 4.0 + 2.0 * s.mu_eff / nd);
  s.c_1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c_1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((nd + 2.0) * (nd + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));
  s.eigen_interval = std::max(1L, static_cast<long>(std::floor(1.0 / (10.0 * (s.c_1 + s.c_mu) * nd))));

  s.mean = x0;
  s.sigma = cfg.sigma0;
  s.covariance = Eigen::MatrixXd::Identity(n, n);
  s.path_sigma = Eigen::VectorXd::Zero(n);
  s.path_c = Eigen::VectorXd::Zero(n);
  s.eigen_basis = Eigen::MatrixXd::Identity(n, n);
  s.eigen_values = Eigen::VectorXd::Ones(n);
  s.inv_sqrt_c = Eigen::MatrixXd::Identity(n, n);
  return s;
}

std::vector<Eigen::VectorXd> cmaes_ask(CmaesState& s, Rng& rng) {
  if (s.generation - s.eigen_generation >= s.eigen_interval) decompose(s);
  if (!s.mean.allFinite() || !std::isfinite(s.sigma)) throw NumericalHealthError(s.generation, "non-finite mean or sigma");
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd d = s.eigen_values.cwiseSqrt();
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(s.lambda));
  Eigen::VectorXd z(s.dimension);
  for (int k = 0; k < s.lambda; ++k) {
    for (int i = 0; i < s.dimension; ++i) z(i) = normal(rng);
    out.emplace_back(s.mean + s.sigma * (s.eigen_basis * d.cwiseProduct(z)));
  }
  return out;
}

void cmaes_tell(CmaesState& s, const std::vector<Eigen::VectorXd>& candidates, const std::vector<double>& fitness) {
  if (static_cast<int>(candidates.size()) != s.lambda || fitness.size() != candidates.size())
    throw std::invalid_argument("cmaes_tell: expected " + std::to_string(s.lambda) + " candidates and fitnesses");
  const int n = s.dimension;

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    return std::isfinite(fitness[i]) ? fitness[i] : std::numeric_limits<double>::infinity();
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  const Eigen::VectorXd old_mean = s.mean;
  Eigen::MatrixXd steps(n, s.mu);  // (x_i:lambda - m) / sigma
  for (int i = 0; i < s.mu; ++i) steps.col(i) = (candidates[order[static_cast<std::size_t>(i)]] - old_mean) / s.sigma;
  const Eigen::VectorXd mean_step = steps * s.weights;
  s.mean = old_mean + s.sigma * mean_step;

  s.path_sigma = (1.0 - s.c_sigma) * s.path_sigma +
                 std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * (s.inv_sqrt_c * mean_step);
  const double ps_norm = s.path_sigma.norm();
  const double gen1 = static_cast<double>(s.generation + 1);
  const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - s.c_sigma, 2.0 * gen1)) / s.chi_n <
                    1.4 + 2.0 / (n + 1.0);
  s.path_c = (1.0 - s.c_c) * s.path_c +
             (hsig ? std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) : 0.0) * mean_step;

  const double c1a = s.c_1 * (1.0 - (hsig ? 0.0 : s.c_c * (2.0 - s.c_c)));
  Eigen::MatrixXd rank_mu = steps * s.weights.asDiagonal() * steps.transpose();
  s.covariance = (1.0 - c1a - s.c_mu) * s.covariance + s.c_1 * (s.path_c * s.path_c.transpose()) + s.c_mu * rank_mu;
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();

  s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));

  s.generation += 1;
  s.evaluations += s.lambda;
  if (!s.mean.allFinite() || !std::isfinite(s.sigma) || !s.covariance.allFinite())
    throw NumericalHealthError(s.generation, "state became non-finite after update");
}

CmaesResult cmaes_minimize(const BatchObjective& objective, const Eigen::VectorXd& x0, const CmaesConfig& cfg,
                           Rng& rng) {
  CmaesResult result;
  CmaesState s = cmaes_init(x0, cfg);
  result.best = x0;
  result.best_fitness = std::numeric_limits<double>::infinity();
  while (s.evaluations + s.lambda <= cfg.max_evaluations) {
    auto candidates = cmaes_ask(s, rng);
    const std::vector<double> f = objective(candidates);
    if (f.size() != candidates.size()) throw std::runtime_error("objective returned wrong number of values");
    double sum = 0.0;
    int finite = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (std::isfinite(f[i])) {
        sum += f[i];
        ++finite;
      }
      if (f[i] < result.best_fitness) {
        result.best_fitness = f[i];
        result.best = candidates[i];
      }
    }
    cmaes_tell(s, candidates, f);
    result.history.push_back({s.generation, s.evaluations, s.sigma, result.best_fitness,
                              finite ? sum / finite : std::numeric_limits<double>::quiet_NaN()});
    if (cfg.target_fitness && result.best_fitness <= *cfg.target_fitness) break;
  }
  result.final_state = std::move(s);
  return result;
}

CmaesResult cmaes_minimize(const Objective& objective, const Eigen::VectorXd& x0, const CmaesConfig& cfg, Rng& rng) {
  return cmaes_minimize(
      BatchObjective([&](const std::vector<Eigen::VectorXd>& xs) {
        std::vector<double> f;
        f.reserve(xs.size());
        for (const auto& x : xs) f.push_back(objective(x));
        return f;
      }),
      x0, cfg, rng);
}

std::string history_csv(const std::vector<CmaesHistoryEntry>& history) {
  std::ostringstream out;
  out << "generation,evaluations,sigma,best_fitness,mean_fitness\n";
  for (const auto& h : history)
    out << h.generation << ',' << h.evaluations << ',' << format_real(h.sigma) << ',' << format_real(h.best_fitness)
        << ',' << format_real(h.mean_fitness) << '\n';
  return out.str();
}

}  // namespace glo
