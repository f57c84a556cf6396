#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "gp.hpp"
#include "test_support.hpp"

using namespace glo;

namespace {

GaConfig quiet_config() {
  GaConfig c;
  c.mutation_rate = 0;
  c.replacement_rate = 0;
  c.replace_with_leaf_rate = 0;
  c.leaf_to_subtree_rate = 0;
  return c;
}

std::vector<Genome> with_fitness(std::initializer_list<double> fs) {
  std::vector<Genome> pop;
  for (double f : fs) {
    pop.emplace_back(Expr::x());
    pop.back().fitness = f;
  }
  return pop;
}

bool contains_op(const Expr& e, Op op) {
  for (std::size_t i = 0; i < e.size(); ++i)
    if (e.subtree(i).op() == op) return true;
  return false;
}

/// Deterministic pseudo-fitness of the canonical key, in [0, 1).
double hashed_fitness(const Expr& e) { return static_cast<double>(hash_bytes(canonicalize(e)) % 1000) / 1000.0; }

struct CountingOracle {
  std::vector<std::string> keys;
  std::function<double(const Expr&)> f;
  BatchFitnessFn fn() {
    return [this](std::span<const Expr> batch) {
      std::vector<double> out;
      for (const Expr& e : batch) {
        keys.push_back(canonicalize(e));
        out.push_back(f(e));
      }
      return out;
    };
  }
};

}  // namespace

TEST(Gp, ConfigValidation) {
  GaConfig c;
  EXPECT_NO_THROW(c.validate());
  c.recombination_probability = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = GaConfig{};
  c.elites_per_generation = 81;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = GaConfig{};
  c.replacement_rate = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Gp, DefaultsMatchSearchSettings) {
  const GaConfig c;
  EXPECT_EQ(c.population_size, 80);
  EXPECT_EQ(c.elites_per_generation, 6);
  EXPECT_DOUBLE_EQ(c.recombination_probability, 0.8);
  EXPECT_DOUBLE_EQ(c.mutation_rate, 0.05);
  EXPECT_DOUBLE_EQ(c.replacement_rate, 0.05);
  EXPECT_DOUBLE_EQ(c.replace_with_leaf_rate, 0.025);
  EXPECT_DOUBLE_EQ(c.leaf_to_subtree_rate, 0.025);
  EXPECT_EQ(c.initial_max_depth, 2);
}

TEST(Gp, InitPopulation) {
  const GaConfig c;
  Rng a(1), b(1);
  const auto p = init_population(c, GenerationWeights{}, a);
  const auto q = init_population(c, GenerationWeights{}, b);
  ASSERT_EQ(p.size(), 80u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_LE(p[i].expr.depth(), 2);
    EXPECT_FALSE(p[i].fitness.has_value());
    EXPECT_EQ(p[i].canonical, canonicalize(p[i].expr));
    EXPECT_EQ(p[i].expr, q[i].expr);
  }
}

TEST(Gp, RouletteZeroFitnessExcluded) {
  const auto pop = with_fitness({1.0, 0.0});
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(roulette_select_index(pop, rng), 0u);
}

TEST(Gp, RouletteFrequencies) {
  const auto pop = with_fitness({0.6, 0.3, 0.1});
  Rng rng(3);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) counts[roulette_select_index(pop, rng)]++;
  const double p[3] = {0.6, 0.3, 0.1};
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(counts[k], n * p[k], 3 * std::sqrt(n * p[k] * (1 - p[k])));
}

TEST(Gp, RouletteAllZeroIsUniform) {
  const auto pop = with_fitness({0, 0, 0, 0});
  Rng rng(4);
  const int n = 40000;
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < n; ++i) counts[roulette_select_index(pop, rng)]++;
  for (int c : counts) EXPECT_NEAR(c, n / 4.0, 3 * std::sqrt(n * 0.25 * 0.75));
}

TEST(Gp, RouletteUsageErrors) {
  Rng rng(5);
  std::vector<Genome> empty;
  EXPECT_THROW(roulette_select_index(empty, rng), std::invalid_argument);
  std::vector<Genome> unset{Genome(Expr::x())};
  EXPECT_THROW(roulette_select_index(unset, rng), std::invalid_argument);
}

TEST(Gp, CrossoverRootSwap) {
  const Expr a = parse("(add x y)");
  const Expr b = parse("(log y)");
  const auto [c1, c2] = crossover_at(a, b, 0, 0);
  EXPECT_EQ(c1, b);
  EXPECT_EQ(c2, a);
}

TEST(Gp, CrossoverHandTracedSplice) {
  const Expr a = parse("(add x y)");
  const Expr b = parse("(log y)");
  const auto [c1, c2] = crossover_at(a, b, 2, 0);
  EXPECT_EQ(format(c1), "(add x (log y))");
  EXPECT_EQ(format(c2), "y");
  EXPECT_EQ(format(a), "(add x y)");
  EXPECT_EQ(format(b), "(log y)");
}

TEST(Gp, CrossoverConservesNodeCount) {
  Rng rng(6);
  const GenerationWeights w;
  for (int i = 0; i < 2000; ++i) {
    const Expr a = random_tree(w, 4, rng);
    const Expr b = random_tree(w, 4, rng);
    const auto [c1, c2] = crossover(a, b, rng);
    EXPECT_EQ(c1.size() + c2.size(), a.size() + b.size());
  }
}

TEST(Gp, MutateNoOpConfiguration) {
  Rng rng(7);
  const GenerationWeights w;
  const GaConfig c = quiet_config();
  for (int i = 0; i < 500; ++i) {
    const Expr e = random_tree(w, 4, rng);
    EXPECT_EQ(mutate(e, c, w, rng), e);
  }
}

TEST(Gp, MutateIntegerStep) {
  Rng rng(8);
  GaConfig c = quiet_config();
  c.mutation_rate = 1.0;
  std::map<std::int64_t, int> seen;
  for (int i = 0; i < 1000; ++i) {
    const Expr m = mutate(Expr::integer(1), c, GenerationWeights{}, rng);
    ASSERT_EQ(m.op(), Op::Int);
    seen[m.int_value()]++;
  }
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_GT(seen[0], 400);
  EXPECT_GT(seen[2], 400);
}

TEST(Gp, MutateSameArityReplacementFollowsWeights) {
  Rng rng(9);
  GaConfig c = quiet_config();
  c.replacement_rate = 1.0;
  GenerationWeights w;
  w[GenKind::Div] = 3;  // non-uniform binary weights: 1, 1, 1, 3
  const Expr add = parse("(add x y)");
  std::map<Op, int> seen;
  const int n = 10000;
  for (int i = 0; i < n; ++i) seen[mutate(add, c, w, rng).op()]++;
  ASSERT_EQ(seen.size(), 4u);
  const std::map<Op, double> p{{Op::Add, 1 / 6.0}, {Op::Sub, 1 / 6.0}, {Op::Mul, 1 / 6.0}, {Op::Div, 3 / 6.0}};
  for (auto [op, pk] : p) EXPECT_NEAR(seen[op], n * pk, 3 * std::sqrt(n * pk * (1 - pk)));
}

TEST(Gp, MutateInternalToLeafAndLeafToSubtree) {
  Rng rng(10);
  GaConfig c = quiet_config();
  c.replace_with_leaf_rate = 1.0;
  const GenerationWeights w;
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(is_leaf(mutate(parse("(add (log y) x)"), c, w, rng).op()));

  c = quiet_config();
  c.leaf_to_subtree_rate = 1.0;
  for (int i = 0; i < 200; ++i) {
    const Expr m = mutate(Expr::x(), c, w, rng);
    EXPECT_LE(m.depth(), 1);
  }
  // A leaf grown into an operator is not deleted again in the same visit.
  c.replace_with_leaf_rate = 1.0;
  int grown = 0;
  for (int i = 0; i < 200; ++i) grown += mutate(Expr::x(), c, w, rng).depth() == 1;
  EXPECT_GT(grown, 0);
}

TEST(Gp, MissingLeafAndNaNYieldZero) {
  FitnessCache cache;
  CountingOracle o;
  o.f = [](const Expr& e) { return format(e) == "(mul x y)" ? std::nan("") : 0.7; };
  std::vector<Genome> pop{Genome(parse("(add (log y) 1)")), Genome(parse("x")), Genome(parse("(mul x y)")),
                          Genome(parse("(sub x y)"))};
  resolve_fitness(pop, o.fn(), cache);
  EXPECT_EQ(*pop[0].fitness, 0.0);
  EXPECT_EQ(*pop[1].fitness, 0.0);
  EXPECT_EQ(*pop[2].fitness, 0.0);
  EXPECT_DOUBLE_EQ(*pop[3].fitness, 0.7);
  EXPECT_EQ(o.keys.size(), 2u);  // gated genomes never reach the oracle
}

TEST(Gp, FitnessClampedIntoUnitInterval) {
  FitnessCache cache;
  CountingOracle o;
  o.f = [](const Expr& e) { return format(e) == "(add x y)" ? 1.5 : -0.2; };
  std::vector<Genome> pop{Genome(parse("(add x y)")), Genome(parse("(sub x y)"))};
  resolve_fitness(pop, o.fn(), cache);
  EXPECT_EQ(*pop[0].fitness, 1.0);
  EXPECT_EQ(*pop[1].fitness, 0.0);
}

TEST(Gp, DuplicatesTriggerOneEvaluation) {
  FitnessCache cache;
  CountingOracle o;
  o.f = [](const Expr&) { return 0.5; };
  std::vector<Genome> pop;
  for (int i = 0; i < 3; ++i) pop.emplace_back(parse("(add x y)"));
  for (int i = 0; i < 2; ++i) pop.emplace_back(parse("(add y x)"));
  resolve_fitness(pop, o.fn(), cache);
  EXPECT_EQ(o.keys.size(), 1u);
  EXPECT_EQ(cache.misses(), 1u);
  EXPECT_EQ(cache.hits(), 4u);
  for (const auto& g : pop) EXPECT_EQ(*g.fitness, 0.5);

  std::vector<Genome> again{Genome(parse("(add y x)"))};
  resolve_fitness(again, o.fn(), cache);
  EXPECT_EQ(o.keys.size(), 1u);
  EXPECT_EQ(cache.hits(), 5u);
}

TEST(Gp, EliteOrdering) {
  std::vector<Genome> pop{Genome(parse("(add x (log y))")), Genome(parse("(mul x y)")), Genome(parse("(sub x y)")),
                          Genome(parse("(div x y)"))};
  const double f[] = {0.9, 0.9, 0.5, 0.95};
  for (std::size_t i = 0; i < pop.size(); ++i) pop[i].fitness = f[i];
  const auto e = elite_indices(pop, 3);
  // 0.95 first; the 0.9 tie goes to the smaller tree.
  EXPECT_EQ(e, (std::vector<std::size_t>{3, 1, 0}));
  pop[0] = Genome(parse("(sub y x)"));
  pop[0].fitness = 0.9;
  const auto t = elite_indices(pop, 3);  // equal size: canonical key order
  EXPECT_EQ(t[1], canonicalize(pop[0].expr) < canonicalize(pop[1].expr) ? 0u : 1u);
}

TEST(Gp, FixedPointWithoutVariation) {
  GaConfig c = quiet_config();
  c.population_size = 12;
  c.elites_per_generation = 12;
  c.recombination_probability = 0;
  Rng rng(11);
  const GenerationWeights w;
  FitnessCache cache;
  CountingOracle o;
  o.f = hashed_fitness;
  auto pop = init_population(c, w, rng);
  resolve_fitness(pop, o.fn(), cache);
  std::multiset<std::string> before;
  for (const auto& g : pop) before.insert(format(g.expr));
  for (int g = 0; g < 5; ++g) pop = step_generation(std::move(pop), c, w, o.fn(), cache, rng);
  std::multiset<std::string> after;
  for (const auto& g : pop) after.insert(format(g.expr));
  EXPECT_EQ(before, after);
}

TEST(Gp, StepGenerationSizeElitismAndCacheCoherence) {
  GaConfig c;
  c.population_size = 30;
  c.elites_per_generation = 4;
  Rng rng(12);
  const GenerationWeights w;
  FitnessCache cache;
  CountingOracle o;
  o.f = hashed_fitness;
  auto pop = init_population(c, w, rng);
  resolve_fitness(pop, o.fn(), cache);
  double best = 0;
  for (const auto& g : pop) best = std::max(best, *g.fitness);
  for (int gen = 0; gen < 50; ++gen) {
    pop = step_generation(std::move(pop), c, w, o.fn(), cache, rng);
    ASSERT_EQ(pop.size(), 30u);
    resolve_fitness(pop, o.fn(), cache);
    double b = 0;
    for (const auto& g : pop) {
      b = std::max(b, *g.fitness);
      EXPECT_LE(static_cast<int>(g.expr.size()), c.max_tree_size);
    }
    EXPECT_GE(b, best);
    best = b;
  }
  std::set<std::string> distinct(o.keys.begin(), o.keys.end());
  EXPECT_EQ(distinct.size(), o.keys.size());
  EXPECT_EQ(cache.misses(), o.keys.size());
}

TEST(Gp, EvolveZeroGenerations) {
  GaConfig c;
  c.population_size = 10;
  c.generations = 0;
  Rng rng(13);
  CountingOracle o;
  o.f = hashed_fitness;
  const auto rep = evolve(c, GenerationWeights{}, o.fn(), rng);
  ASSERT_EQ(rep.generations.size(), 1u);
  EXPECT_EQ(rep.generations[0].generation, 0);
  EXPECT_EQ(rep.final_population.size(), 10u);
  for (const auto& g : rep.final_population) EXPECT_TRUE(g.fitness.has_value());
}

TEST(Gp, EvolveFindsDivisionOnToyOracle) {
  GaConfig c;
  c.population_size = 20;
  c.generations = 10;
  GenerationWeights w;
  w[GenKind::Div] = 1;
  Rng rng(14);
  CountingOracle o;
  o.f = [](const Expr& e) { return contains_op(e, Op::Div) ? 1.0 : 0.0; };
  const auto rep = evolve(c, w, o.fn(), rng);
  bool found = false;
  for (const auto& r : rep.generations) found = found || contains_op(parse(r.best_expr), Op::Div);
  EXPECT_TRUE(found);
  EXPECT_EQ(rep.best_fitness, 1.0);
}

TEST(Gp, EvolveIsDeterministic) {
  GaConfig c;
  c.population_size = 16;
  c.generations = 8;
  CountingOracle o1, o2;
  o1.f = o2.f = hashed_fitness;
  Rng r1(15), r2(15);
  const auto a = evolve(c, GenerationWeights{}, o1.fn(), r1);
  const auto b = evolve(c, GenerationWeights{}, o2.fn(), r2);
  EXPECT_EQ(a.generations_jsonl(), b.generations_jsonl());
  EXPECT_EQ(a.summary_json(), b.summary_json());
  EXPECT_EQ(a.generations.size(), 9u);
}

TEST(Gp, ReportSerialization) {
  GaConfig c;
  c.population_size = 6;
  c.elites_per_generation = 2;
  c.generations = 2;
  Rng rng(16);
  CountingOracle o;
  o.f = hashed_fitness;
  const auto rep = evolve(c, GenerationWeights{}, o.fn(), rng);
  const std::string jl = rep.generations_jsonl();
  EXPECT_EQ(std::count(jl.begin(), jl.end(), '\n'), 3);
  EXPECT_NE(jl.find("\"best_expr\""), std::string::npos);
  EXPECT_NE(jl.find("\"cache_hits\""), std::string::npos);
  EXPECT_NE(rep.summary_json().find("\"final_population\""), std::string::npos);
}
