#include "gp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace glo {

void GaConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0, 1]");
  };
  if (population_size < 1) throw std::invalid_argument("population_size must be positive");
  if (elites_per_generation < 0 || elites_per_generation > population_size)
    throw std::invalid_argument("elites_per_generation must be in [0, population_size]");
  prob(recombination_probability, "recombination_probability");
  prob(mutation_rate, "mutation_rate");
  prob(replacement_rate, "replacement_rate");
  prob(replace_with_leaf_rate, "replace_with_leaf_rate");
  prob(leaf_to_subtree_rate, "leaf_to_subtree_rate");
  if (initial_max_depth < 0) throw std::invalid_argument("initial_max_depth must be >= 0");
  if (generations < 0) throw std::invalid_argument("generations must be >= 0");
  if (max_tree_size < 1) throw std::invalid_argument("max_tree_size must be positive");
  if (crossover_attempts < 1) throw std::invalid_argument("crossover_attempts must be positive");
}

// ---------------------------------------------------------------------------
// FitnessCache

std::optional<double> FitnessCache::lookup(const CanonicalKey& key) {
  std::lock_guard lock(mu_);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

bool FitnessCache::insert(const CanonicalKey& key, double fitness) {
  std::lock_guard lock(mu_);
  return values_.emplace(key, fitness).second;
}

bool FitnessCache::contains(const CanonicalKey& key) const {
  std::lock_guard lock(mu_);
  return values_.count(key) != 0;
}

std::size_t FitnessCache::size() const {
  std::lock_guard lock(mu_);
  return values_.size();
}

// ---------------------------------------------------------------------------
// Operators

std::vector<Genome> init_population(const GaConfig& cfg, const GenerationWeights& weights, Rng& rng) {
  std::vector<Genome> pop;
  pop.reserve(static_cast<std::size_t>(cfg.population_size));
  for (int i = 0; i < cfg.population_size; ++i) pop.emplace_back(random_tree(weights, cfg.initial_max_depth, rng));
  return pop;
}

std::size_t roulette_select_index(std::span<const Genome> pop, Rng& rng) {
  if (pop.empty()) throw std::invalid_argument("roulette_select: empty population");
  double total = 0.0;
  for (const auto& g : pop) {
    if (!g.fitness) throw std::invalid_argument("roulette_select: fitness not set");
    total += std::max(0.0, *g.fitness);
  }
  if (!(total > 0.0)) return std::uniform_int_distribution<std::size_t>(0, pop.size() - 1)(rng);
  double r = uniform01(rng) * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const double f = std::max(0.0, *pop[i].fitness);
    if (f <= 0.0) continue;
    last = i;
    if (r < f) return i;
    r -= f;
  }
  return last;
}

const Genome& roulette_select(std::span<const Genome> pop, Rng& rng) { return pop[roulette_select_index(pop, rng)]; }

std::pair<Expr, Expr> crossover_at(const Expr& a, const Expr& b, std::size_t point_a, std::size_t point_b) {
  const Expr sa = a.subtree(point_a);
  const Expr sb = b.subtree(point_b);
  return {a.replace(point_a, sb), b.replace(point_b, sa)};
}

std::pair<Expr, Expr> crossover(const Expr& a, const Expr& b, Rng& rng) {
  const std::size_t pa = std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng);
  const std::size_t pb = std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng);
  return crossover_at(a, b, pa, pb);
}

namespace {

bool arity_drawable(const GenerationWeights& w, int ar) {
  for (std::size_t i = 0; i < kGenKindCount; ++i)
    if (gen_kind_arity(static_cast<GenKind>(i)) == ar && w.w[i] > 0.0) return true;
  return false;
}

Expr with_children(GenKind kind, const Expr& old) {
  if (gen_kind_arity(kind) == 1) return make_node(kind, old.child(0));
  return make_node(kind, old.child(0), old.child(1));
}

Expr mutate_rec(const Expr& e, const GaConfig& cfg, const GenerationWeights& weights, Rng& rng) {
  Expr cur = e;
  const int ar = arity(e.op());
  if (ar == 1) {
    cur = Expr::unary(e.op(), mutate_rec(e.child(0), cfg, weights, rng));
  } else if (ar == 2) {
    Expr a = mutate_rec(e.child(0), cfg, weights, rng);
    Expr b = mutate_rec(e.child(1), cfg, weights, rng);
    cur = Expr::binary(e.op(), a, b);
  }

  if (cur.op() == Op::Int && bernoulli(rng, cfg.mutation_rate))
    cur = Expr::integer(cur.int_value() + (bernoulli(rng, 0.5) ? 1 : -1));

  if (bernoulli(rng, cfg.replacement_rate) && arity_drawable(weights, ar)) {
    const GenKind k = weights.draw(rng, ar);
    cur = ar == 0 ? make_node(k) : with_children(k, cur);
  }

  const bool was_leaf = ar == 0;
  if (!was_leaf && bernoulli(rng, cfg.replace_with_leaf_rate)) cur = make_node(weights.draw_leaf(rng));

  if (was_leaf && bernoulli(rng, cfg.leaf_to_subtree_rate)) {
    const GenKind k = weights.draw(rng);
    switch (gen_kind_arity(k)) {
      case 0: cur = make_node(k); break;
      case 1: cur = make_node(k, make_node(weights.draw_leaf(rng))); break;
      default: {
        Expr a = make_node(weights.draw_leaf(rng));
        Expr b = make_node(weights.draw_leaf(rng));
        cur = make_node(k, a, b);
        break;
      }
    }
  }
  return cur;
}

}  // namespace

Expr mutate(const Expr& e, const GaConfig& cfg, const GenerationWeights& weights, Rng& rng) {
  return mutate_rec(e, cfg, weights, rng);
}

// ---------------------------------------------------------------------------
// Generation loop

void resolve_fitness(std::vector<Genome>& pop, const BatchFitnessFn& fitness_fn, FitnessCache& cache) {
  std::vector<Expr> batch;
  std::unordered_map<CanonicalKey, std::size_t> pending;
  std::vector<std::pair<std::size_t, std::size_t>> waiting;  // (genome, batch slot)

  for (std::size_t i = 0; i < pop.size(); ++i) {
    Genome& g = pop[i];
    if (g.fitness) continue;
    if (!contains_required_leaves(g.expr)) {
      g.fitness = 0.0;
      continue;
    }
    if (auto cached = cache.lookup(g.canonical)) {
      cache.record_hit();
      g.fitness = *cached;
      continue;
    }
    auto [it, fresh] = pending.try_emplace(g.canonical, batch.size());
    if (fresh) {
      cache.record_miss();
      batch.push_back(g.expr);
    } else {
      cache.record_hit();
    }
    waiting.emplace_back(i, it->second);
  }
  if (batch.empty()) return;

  const std::vector<double> results = fitness_fn(std::span<const Expr>(batch));
  if (results.size() != batch.size()) throw std::runtime_error("fitness function returned wrong number of results");
  std::vector<double> clean(results.size());
  for (std::size_t k = 0; k < results.size(); ++k) {
    const double f = results[k];
    clean[k] = std::isfinite(f) ? std::clamp(f, 0.0, 1.0) : 0.0;
  }
  for (auto& [key, slot] : pending) cache.insert(key, clean[slot]);
  for (auto [i, slot] : waiting) pop[i].fitness = clean[slot];
}

std::vector<std::size_t> elite_indices(std::span<const Genome> pop, std::size_t count) {
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto fit = [&](std::size_t i) { return pop[i].fitness.value_or(0.0); };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (fit(a) != fit(b)) return fit(a) > fit(b);
    if (pop[a].expr.size() != pop[b].expr.size()) return pop[a].expr.size() < pop[b].expr.size();
    return pop[a].canonical < pop[b].canonical;
  });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

std::vector<Genome> step_generation(std::vector<Genome> pop, const GaConfig& cfg, const GenerationWeights& weights,
                                    const BatchFitnessFn& fitness_fn, FitnessCache& cache, Rng& rng) {
  resolve_fitness(pop, fitness_fn, cache);
  const auto target = static_cast<std::size_t>(cfg.population_size);

  std::vector<Genome> next;
  next.reserve(target);
  for (std::size_t i : elite_indices(pop, static_cast<std::size_t>(cfg.elites_per_generation))) next.push_back(pop[i]);

  const auto max_size = static_cast<std::size_t>(cfg.max_tree_size);
  while (next.size() < target) {
    const Expr& a = roulette_select(pop, rng).expr;
    const Expr& b = roulette_select(pop, rng).expr;
    std::pair<Expr, Expr> children{a, b};
    if (bernoulli(rng, cfg.recombination_probability)) {
      for (int attempt = 0; attempt < cfg.crossover_attempts; ++attempt) {
        auto c = crossover(a, b, rng);
        if (c.first.size() <= max_size && c.second.size() <= max_size) {
          children = std::move(c);
          break;
        }
      }
    }
    next.emplace_back(mutate(children.first, cfg, weights, rng));
    if (next.size() < target) next.emplace_back(mutate(children.second, cfg, weights, rng));
  }
  return next;
}

namespace {

GenerationRecord summarize(int generation, std::span<const Genome> pop, const FitnessCache& cache) {
  GenerationRecord r;
  r.generation = generation;
  const std::size_t best = elite_indices(pop, 1).front();
  r.best_expr = format(pop[best].expr);
  r.best_fitness = pop[best].fitness.value_or(0.0);
  double sum = 0.0;
  for (const auto& g : pop) sum += g.fitness.value_or(0.0);
  r.mean_fitness = sum / static_cast<double>(pop.size());
  r.cache_hits = cache.hits();
  r.cache_misses = cache.misses();
  return r;
}

}  // namespace

EvolutionReport evolve(const GaConfig& cfg, const GenerationWeights& weights, const BatchFitnessFn& fitness_fn,
                       Rng& rng, const GenerationObserver& observer) {
  cfg.validate();
  weights.validate();
  FitnessCache cache;
  EvolutionReport report;
  std::vector<Genome> pop = init_population(cfg, weights, rng);
  for (int g = 0;; ++g) {
    resolve_fitness(pop, fitness_fn, cache);
    GenerationRecord rec = summarize(g, pop, cache);
    if (report.generations.empty() || rec.best_fitness > report.best_fitness) {
      report.best_fitness = rec.best_fitness;
      report.best_expr = rec.best_expr;
    }
    if (observer) observer(rec);
    report.generations.push_back(std::move(rec));
    if (g >= cfg.generations) break;
    pop = step_generation(std::move(pop), cfg, weights, fitness_fn, cache, rng);
  }
  report.final_population = std::move(pop);
  report.cache_hits = cache.hits();
  report.cache_misses = cache.misses();
  report.cache_entries = cache.size();
  return report;
}

std::string EvolutionReport::generations_jsonl() const {
  std::string out;
  for (const auto& r : generations) {
    nlohmann::ordered_json j;
    j["generation"] = r.generation;
    j["best_expr"] = r.best_expr;
    j["best_fitness"] = r.best_fitness;
    j["mean_fitness"] = r.mean_fitness;
    j["cache_hits"] = r.cache_hits;
    j["cache_misses"] = r.cache_misses;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string EvolutionReport::summary_json() const {
  nlohmann::ordered_json j;
  j["best_expr"] = best_expr;
  j["best_fitness"] = best_fitness;
  j["generations"] = generations.empty() ? 0 : generations.back().generation;
  j["cache"] = {{"hits", cache_hits}, {"misses", cache_misses}, {"entries", cache_entries}};
  auto pop = nlohmann::ordered_json::array();
  for (const auto& g : final_population) {
    nlohmann::ordered_json e;
    e["expr"] = format(g.expr);
    if (g.fitness) e["fitness"] = *g.fitness;
    else e["fitness"] = nullptr;
    pop.push_back(std::move(e));
  }
  j["final_population"] = std::move(pop);
  return j.dump(2) + "\n";
}

}  // namespace glo
