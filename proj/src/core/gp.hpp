#pragma once

// Discovery-phase genetic algorithm over loss expression trees.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "expr.hpp"

namespace glo {

struct GaConfig {
  int population_size = 80;
  int elites_per_generation = 6;
  double recombination_probability = 0.8;
  /// Integer constant +/-1, per integer node.
  double mutation_rate = 0.05;
  /// Node replaced by a weighted-random kind of the same arity, per node.
  double replacement_rate = 0.05;
  /// Internal node (and its children) replaced by a leaf.
  double replace_with_leaf_rate = 0.025;
  /// Leaf replaced by a weighted-random node with leaf children.
  double leaf_to_subtree_rate = 0.025;
  int initial_max_depth = 2;
  int generations = 50;
  /// Offspring larger than this are rejected and crossover is resampled.
  int max_tree_size = 64;
  int crossover_attempts = 5;
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Genome {
  Expr expr;
  CanonicalKey canonical;
  std::optional<double> fitness;

  explicit Genome(Expr e) : expr(std::move(e)), canonical(canonicalize(expr)) {}
};

/// Canonical-key fitness cache. Safe for concurrent lookup and insert.
class FitnessCache {
 public:
  std::optional<double> lookup(const CanonicalKey& key);
  /// Inserts if absent; returns false (and keeps the old value) otherwise.
  bool insert(const CanonicalKey& key, double fitness);
  bool contains(const CanonicalKey& key) const;

  std::size_t size() const;
  std::uint64_t hits() const noexcept { return hits_.load(); }
  std::uint64_t misses() const noexcept { return misses_.load(); }
  void record_hit() noexcept { ++hits_; }
  void record_miss() noexcept { ++misses_; }

 private:
  mutable std::mutex mu_;
  std::map<CanonicalKey, double> values_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

/// Fitness oracle over a batch of distinct, uncached expressions that have
/// passed the missing-leaf gate. Returns one fitness in [0, 1] per input, in
/// order. NaN and Invalid outcomes must already be mapped to 0.
using BatchFitnessFn = std::function<std::vector<double>(std::span<const Expr>)>;

std::vector<Genome> init_population(const GaConfig& cfg, const GenerationWeights& weights, Rng& rng);

/// Fitness-proportional choice. All-zero fitness falls back to uniform.
/// Throws std::invalid_argument on an empty population or an unset fitness.
std::size_t roulette_select_index(std::span<const Genome> pop, Rng& rng);
const Genome& roulette_select(std::span<const Genome> pop, Rng& rng);

/// Swap the subtrees rooted at pre-order positions `point_a` and `point_b`.
std::pair<Expr, Expr> crossover_at(const Expr& a, const Expr& b, std::size_t point_a, std::size_t point_b);
/// Crossover at uniformly drawn points in each parent.
std::pair<Expr, Expr> crossover(const Expr& a, const Expr& b, Rng& rng);

/// Bottom-up (post-order) mutation. At each node, independently and in this
/// order: integer +/-1 (mutation_rate), same-arity replacement
/// (replacement_rate), internal node -> leaf (replace_with_leaf_rate), leaf ->
/// operator with leaf children (leaf_to_subtree_rate).
Expr mutate(const Expr& e, const GaConfig& cfg, const GenerationWeights& weights, Rng& rng);

/// Fills every unset fitness: missing-leaf gate -> 0, otherwise cache or one
/// fitness_fn call over the distinct uncached keys.
void resolve_fitness(std::vector<Genome>& pop, const BatchFitnessFn& fitness_fn, FitnessCache& cache);

/// Indices of the best `count` genomes: fitness descending, then fewer nodes,
/// then canonical key order.
std::vector<std::size_t> elite_indices(std::span<const Genome> pop, std::size_t count);

std::vector<Genome> step_generation(std::vector<Genome> pop, const GaConfig& cfg, const GenerationWeights& weights,
                                    const BatchFitnessFn& fitness_fn, FitnessCache& cache, Rng& rng);

struct GenerationRecord {
  int generation = 0;
  std::string best_expr;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
};

struct EvolutionReport {
  std::vector<GenerationRecord> generations;
  std::vector<Genome> final_population;
  std::string best_expr;
  double best_fitness = 0.0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::size_t cache_entries = 0;

  /// One JSON object per line, one line per generation.
  std::string generations_jsonl() const;
  /// Summary document with the best genome, cache statistics and final population.
  std::string summary_json() const;
};

/// Called after each generation's fitness is resolved.
using GenerationObserver = std::function<void(const GenerationRecord&)>;

EvolutionReport evolve(const GaConfig& cfg, const GenerationWeights& weights, const BatchFitnessFn& fitness_fn,
                       Rng& rng, const GenerationObserver& observer = {});

}  // namespace glo
