// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero
// if any selected criterion fails.
//
//   acceptance [--only 1,2,3] [--out DIR]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "cmaes.hpp"
#include "gp.hpp"
#include "loss.hpp"
#include "reference_losses.hpp"
#include "test_support.hpp"
#include "workflows.hpp"

using namespace glo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome(const fs::path&)> run;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line;
  std::getline(is, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string f; std::getline(h, f, ',');) header.push_back(f);
  }
  std::vector<Row> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Row r;
    std::istringstream l(line);
    std::size_t i = 0;
    for (std::string f; std::getline(l, f, ',') && i < header.size(); ++i) r[header[i]] = f;
    rows.push_back(std::move(r));
  }
  return rows;
}

double num(const Row& r, const std::string& key) { return std::stod(r.at(key)); }

std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const char* sub : {"results", "expressions", "models"})
    for (const auto& e : fs::recursive_directory_iterator(root / sub))
      if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  out["logs/generations.jsonl"] = slurp(root / "logs" / "generations.jsonl");
  return out;
}

void run_or_throw(std::string_view command, const Json& overlay, const fs::path& out) {
  fs::remove_all(out);
  const CommandOutcome r = run_command(command, overlay, out, [](const std::string& s) {
    std::fprintf(stderr, "  %s\n", s.c_str());
  });
  if (r.exit_code != kExitOk)
    throw std::runtime_error(std::string(command) + " exited " + std::to_string(r.exit_code) + ": " + r.message);
}

Json seeds_json(int n) {
  Json s = Json::array();
  for (int i = 0; i < n; ++i) s.push_back(i);
  return s;
}

// ---------------------------------------------------------------------------

Outcome c1_minima(const fs::path&) {
  const double b = analyze_curve("baikal", builtin("baikal").body, 1).argmin_y0;
  const double c = analyze_curve("baikal_cma", builtin("baikal_cma").trained_body(), 1).argmin_y0;
  const bool ok = std::abs(b - 0.71) <= 0.02 && std::abs(c - 0.77) <= 0.02;
  return {ok, "baikal argmin " + fmt(b) + " (0.71 +/- 0.02), baikal_cma argmin " + fmt(c) + " (0.77 +/- 0.02)"};
}

Outcome c2_monotonicity(const fs::path&) {
  const auto ce = sample_curve(binary_expand(builtin("cross_entropy").body, 1), 0.0005, 0.9995, 1000);
  const auto bk = sample_curve(binary_expand(builtin("baikal").body, 1), 0.01, 0.99, 1000);
  const bool dec = monotonicity(ce) == Monotonicity::StrictlyDecreasing;
  const bool interior = has_interior_minimum(bk);
  return {dec && interior, std::string("cross_entropy ") + monotonicity_name(monotonicity(ce)) +
                               " over 1000 points; baikal interior minimum then increase: " +
                               (interior ? "yes" : "no")};
}

Outcome c3_fidelity(const fs::path&) {
  const double c0 = 2.7279, c1 = 0.9863, c2 = 1.5352, c3 = -1.1135, c4 = 1.3716, c5 = -0.8411;
  const std::vector<std::pair<std::string, std::function<double(double, double)>>> oracles{
      {"cross_entropy", [](double x, double y) { return x * std::log(y); }},
      {"baikal", [](double x, double y) { return std::log(y) - x / y; }},
      {"baikal_cma",
       [&](double x, double y) { return c0 * (c1 * std::log(c2 * y) - c3 * ((c4 * x) / (c5 * y))); }}};
  Rng rng(derive_seed(0, "fidelity"));
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = uniform01(rng);
    const double y = 1e-7 + (1 - 2e-7) * uniform01(rng);
    for (const auto& [name, f] : oracles) {
      const auto v = evaluate(builtin(name).trained_body(), x, y);
      if (!v) return {false, name + " tree invalid at (" + fmt(x) + ", " + fmt(y) + ")"};
      const double want = f(x, y);
      worst = std::max(worst, std::abs(*v - want));
    }
  }
  return {worst < 1e-12, "max |tree - closed form| = " + fmt(worst * 1e12, 3) + "e-12 over 10000 points (< 1e-12)"};
}

Outcome c4_gradients(const fs::path&) {
  Rng rng(derive_seed(0, "gradients"));
  const GenerationWeights w;
  int trees = 0, compared = 0;
  double worst = 0.0;
  while (trees < 100) {
    const Expr e = random_tree(w, 4, rng);
    if (!test::depends_on_y(e)) continue;
    ++trees;
    const Expr d = differentiate_y(e);
    for (int k = 0; k < 20; ++k) {
      const double x = uniform01(rng) < 0.5 ? 0.0 : 1.0;
      const double y = 0.1 + 0.8 * uniform01(rng);
      if (!test::safe_point(e, x, y, 1e-3)) continue;
      const auto fd = test::central_difference([&](double t) { return evaluate(e, x, t); }, y, 1e-5);
      const auto an = evaluate(d, x, y);
      if (!fd || !an) continue;
      ++compared;
      worst = std::max(worst, test::rel_error(*an, *fd));
    }
  }
  // End to end: dL/dlogits through clip, body derivative and softmax.
  double worst_head = 0.0;
  for (const char* name : {"cross_entropy", "baikal"}) {
    const LossFunction loss(builtin(name).body);
    for (int batch = 0; batch < 20; ++batch) {
      const int b = 8, n = 10;
      Eigen::MatrixXd logits(b, n);
      std::vector<int> labels(b);
      for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = 3 * (uniform01(rng) - 0.5);
      for (int& l : labels) l = static_cast<int>(uniform01(rng) * n);
      HeadWorkspace ws;
      double v = 0;
      Eigen::MatrixXd g;
      if (loss_head(loss, logits, labels, 1e-7, v, &g, ws) != HeadStatus::Ok) return {false, "head failed"};
      auto value = [&](const Eigen::MatrixXd& z) {
        HeadWorkspace w2;
        double out = 0;
        loss_head(loss, z, labels, 1e-7, out, nullptr, w2);
        return out;
      };
      const double h = 1e-4;
      for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Eigen::MatrixXd p = logits, m = logits;
        p(i) += h;
        m(i) -= h;
        const double fd = (value(p) - value(m)) / (2 * h);
        worst_head = std::max(worst_head, std::abs(fd - g(i)) / std::max(std::abs(fd), g.cwiseAbs().maxCoeff()));
      }
    }
  }
  return {worst < 1e-5 && worst_head < 1e-4 && compared >= 500,
          "d/dy on 100 trees, " + std::to_string(compared) + " safe points: max rel err " + fmt(worst * 1e6, 3) +
              "e-6 (< 1e-5); dL/dlogits max rel err " + fmt(worst_head * 1e6, 3) + "e-6 (< 1e-4)"};
}

Outcome c5_cmaes(const fs::path&) {
  auto sphere = [](const Eigen::VectorXd& v) { return v.squaredNorm(); };
  auto rosen = [](const Eigen::VectorXd& v) {
    double s = 0;
    for (Eigen::Index i = 0; i + 1 < v.size(); ++i)
      s += 100 * std::pow(v(i + 1) - v(i) * v(i), 2) + std::pow(1 - v(i), 2);
    return s;
  };
  Rng init(derive_seed(0, "x0"));
  Eigen::VectorXd x0(10);
  for (Eigen::Index i = 0; i < 10; ++i) x0(i) = -5 + 10 * uniform01(init);

  CmaesConfig s;
  s.dimension = 10;
  s.max_evaluations = 5000;
  s.target_fitness = 1e-10;
  Rng rs(derive_seed(0, "sphere"));
  const CmaesResult rsph = cmaes_minimize(Objective(sphere), x0, s, rs);

  CmaesConfig r;
  r.dimension = 2;
  r.max_evaluations = 20000;
  r.target_fitness = 1e-8;
  Rng rr(derive_seed(0, "rosenbrock"));
  const CmaesResult rros = cmaes_minimize(Objective(rosen), Eigen::Vector2d(-1.2, 1.0), r, rr);

  // Covariance health and rank invariance, generation by generation.
  CmaesConfig h;
  h.dimension = 4;
  CmaesState a = cmaes_init(Eigen::VectorXd::Constant(4, 2.0), h), b = a;
  Rng ra(7), rb(7);
  bool healthy = true, invariant = true;
  for (int g = 0; g < 1000; ++g) {
    const auto xa = cmaes_ask(a, ra);
    const auto xb = cmaes_ask(b, rb);
    std::vector<double> fa, fb;
    for (const auto& x : xa) fa.push_back(rosen(x));
    for (const auto& x : xb) fb.push_back(std::sqrt(rosen(x)));
    cmaes_tell(a, xa, fa);
    cmaes_tell(b, xb, fb);
    const bool sym = (a.covariance - a.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * a.covariance.norm();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.covariance);
    healthy = healthy && sym && es.eigenvalues().minCoeff() > 0.0;
    invariant = invariant && a.mean == b.mean;
    if (a.sigma < 1e-150) break;
  }
  const bool ok = rsph.best_fitness < 1e-10 && rsph.final_state.evaluations <= 5000 && rros.best_fitness < 1e-8 &&
                  rros.final_state.evaluations <= 20000 && healthy && invariant;
  return {ok, "sphere-10 " + fmt(rsph.best_fitness * 1e10, 3) + "e-10 in " +
                  std::to_string(rsph.final_state.evaluations) + " evals; rosenbrock-2 " +
                  fmt(rros.best_fitness * 1e8, 3) + "e-8 in " + std::to_string(rros.final_state.evaluations) +
                  " evals; covariance SPD " + (healthy ? "yes" : "no") + "; rank invariant " +
                  (invariant ? "yes" : "no")};
}

Outcome c6_ga(const fs::path&) {
  std::vector<std::string> notes;
  bool ok = true;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      notes.push_back("FAILED " + what);
    }
  };
  const GenerationWeights w;

  // Cheap synthetic oracle: hashed canonical key, counting calls per key.
  std::map<std::string, int> calls;
  BatchFitnessFn oracle = [&](std::span<const Expr> batch) {
    std::vector<double> out;
    for (const Expr& e : batch) {
      const std::string k = canonicalize(e);
      ++calls[k];
      out.push_back(static_cast<double>(hash_bytes(k) % 1000) / 1000.0);
    }
    return out;
  };
  GaConfig c;
  c.population_size = 40;
  Rng rng(derive_seed(0, "ga"));
  FitnessCache cache;
  auto pop = init_population(c, w, rng);
  resolve_fitness(pop, oracle, cache);
  double best = 0;
  for (const auto& g : pop) best = std::max(best, *g.fitness);
  bool monotone = true, sized = true;
  for (int gen = 0; gen < 50; ++gen) {
    pop = step_generation(std::move(pop), c, w, oracle, cache, rng);
    resolve_fitness(pop, oracle, cache);
    sized = sized && pop.size() == 40u;
    double b = 0;
    for (const auto& g : pop) b = std::max(b, *g.fitness);
    monotone = monotone && b >= best;
    best = b;
  }
  check(monotone, "elitism monotonicity");
  check(sized, "population size");
  bool once = true;
  for (const auto& [k, n] : calls) once = once && n == 1;
  check(once && cache.misses() == calls.size(), "one oracle call per canonical key");

  bool conserved = true;
  for (int i = 0; i < 2000; ++i) {
    const Expr a = random_tree(w, 4, rng), b = random_tree(w, 4, rng);
    const auto [x, y] = crossover(a, b, rng);
    conserved = conserved && x.size() + y.size() == a.size() + b.size();
  }
  check(conserved, "crossover node conservation");

  // Roulette: chi-square over 4 categories against 3 sigma of its distribution.
  std::vector<Genome> rp;
  const double f[] = {0.4, 0.3, 0.2, 0.1};
  for (double v : f) {
    rp.emplace_back(Expr::x());
    rp.back().fitness = v;
  }
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) counts[roulette_select_index(rp, rng)]++;
  double chi2 = 0;
  for (int k = 0; k < 4; ++k) chi2 += std::pow(counts[k] - n * f[k], 2) / (n * f[k]);
  const double dof = 3, bound = dof + 3 * std::sqrt(2 * dof);
  check(chi2 < bound, "roulette chi-square " + fmt(chi2, 2));

  FitnessCache zc;
  BatchFitnessFn nan_oracle = [](std::span<const Expr> batch) {
    std::vector<double> out;
    for (const Expr& e : batch) out.push_back(format(e) == "(mul x y)" ? std::nan("") : 0.5);
    return out;
  };
  std::vector<Genome> z{Genome(parse("(add (log y) 1)")), Genome(parse("(mul x y)")), Genome(parse("(sub x y)"))};
  resolve_fitness(z, nan_oracle, zc);
  check(*z[0].fitness == 0.0 && *z[1].fitness == 0.0 && *z[2].fitness == 0.5, "missing-leaf and NaN give 0");

  std::string detail = "50 generations best " + fmt(best, 3) + ", " + std::to_string(calls.size()) +
                       " distinct keys each evaluated once, chi2 " + fmt(chi2, 2) + " < " + fmt(bound, 2);
  for (const auto& s : notes) detail += "; " + s;
  return {ok, detail};
}

Outcome c7_training(const fs::path& out) {
  Json o;
  o["losses"] = Json::array({"cross_entropy", "baikal"});
  o["seeds"] = seeds_json(10);
  o["train"] = {{"steps", 2000}, {"eval_every", 250}};
  run_or_throw("train", o, out);
  const auto runs = read_csv(out / "results" / "runs.csv");
  int failed = 0;
  for (const auto& r : runs) failed += r.at("failure") != "None";
  std::map<std::string, double> final_acc, early_acc;
  for (const auto& r : read_csv(out / "results" / "summary.csv")) final_acc[r.at("loss")] = num(r, "mean_test_accuracy");
  for (const char* l : {"cross_entropy", "baikal"})
    for (const auto& r : read_csv(out / "results" / ("mean_curve_" + std::string(l) + "_p1_0.csv")))
      if (r.at("step") == "500") early_acc[l] = num(r, "test_accuracy");
  const bool final_ok = final_acc.at("baikal") >= final_acc.at("cross_entropy") - 0.002;
  const bool early_ok = early_acc.at("baikal") >= early_acc.at("cross_entropy");
  return {final_ok && early_ok && failed == 0 && runs.size() == 20u,
          "mean test accuracy at 2000 steps: baikal " + fmt(final_acc["baikal"]) + " vs cross_entropy " +
              fmt(final_acc["cross_entropy"]) + " (need >= ce - 0.002); at step 500: baikal " +
              fmt(early_acc["baikal"]) + " vs " + fmt(early_acc["cross_entropy"]) + "; failed runs " +
              std::to_string(failed) + "/" + std::to_string(runs.size())};
}

Outcome c8_portions(const fs::path& out) {
  Json o;
  o["losses"] = Json::array({"cross_entropy", "baikal"});
  o["seeds"] = seeds_json(5);
  o["portions"] = Json::array({0.05, 0.25, 1.0});
  const fs::path dir = out;
  fs::remove_all(dir);
  // Failed runs are recorded, not required to be absent.
  const CommandOutcome r = run_command("train", o, dir, [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); });
  if (r.exit_code != kExitOk && r.exit_code != kExitNumerical)
    throw std::runtime_error("train exited " + std::to_string(r.exit_code) + ": " + r.message);
  std::map<double, double> gap;
  for (const auto& row : read_csv(dir / "results" / "comparison.csv"))
    gap[std::stod(row.at("portion"))] = num(row, "difference");
  int ce_failed_small = 0;
  for (const auto& row : read_csv(dir / "results" / "runs.csv"))
    ce_failed_small += row.at("loss") == "cross_entropy" && std::stod(row.at("portion")) == 0.05 && row.at("failure") != "None";
  if (gap.size() != 3) throw std::runtime_error("comparison.csv: expected 3 portions, got " + std::to_string(gap.size()));
  const bool ok = gap.at(0.05) >= gap.at(1.0);
  return {ok, "baikal - cross_entropy mean test accuracy gap: portion 0.05 " + fmt(gap.at(0.05)) + ", 0.25 " +
                  fmt(gap.at(0.25)) + ", 1.0 " + fmt(gap.at(1.0)) + " (need gap(0.05) >= gap(1.0)); cross_entropy failed runs at 0.05: " +
                  std::to_string(ce_failed_small)};
}

Outcome c9_histogram(const fs::path& out) {
  Json o;
  o["losses"] = Json::array({"cross_entropy", "baikal_cma"});
  o["seeds"] = Json::array({0});
  run_or_throw("train", o, out / "train");
  std::map<std::string, std::size_t> mode;
  std::map<std::string, double> above;
  for (const char* l : {"cross_entropy", "baikal_cma"}) {
    Json h;
    h["model_file"] = (out / "train" / "models" / (std::string(l) + "_p1_0_s0.bin")).string();
    run_or_throw("hist", h, out / l);
    const auto rows = read_csv(out / l / "results" / (std::string("hist_max_") + l + "_p1_0_s0.csv"));
    std::size_t best = 0;
    double total = 0, top = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (num(rows[i], "count") > num(rows[best], "count")) best = i;
      total += num(rows[i], "count");
      if (num(rows[i], "bin_lo") >= 0.95) top += num(rows[i], "count");
    }
    mode[l] = best;
    above[l] = top / total;
  }
  return {mode["baikal_cma"] < mode["cross_entropy"],
          "max-class output mode bin (of 20): baikal_cma " + std::to_string(mode["baikal_cma"]) +
              ", cross_entropy " + std::to_string(mode["cross_entropy"]) + "; share of max outputs >= 0.95: " +
              fmt(above["baikal_cma"], 3) + " vs " + fmt(above["cross_entropy"], 3)};
}

Outcome c10_tuning(const fs::path& out) {
  Json o;
  o["losses"] = Json::array({"baikal"});
  o["cmaes"] = {{"max_evaluations", 2000}};
  run_or_throw("tune", o, out);
  const Json s = Json::parse(slurp(out / "results" / "tune_summary.json"));
  const Json m = Json::parse(slurp(out / "manifest.json"));
  const double untuned = s["untuned_fitness"].get<double>(), tuned = s["tuned_fitness"].get<double>();
  const bool sigma_recorded = m["config"]["cmaes"]["sigma0"].get<double>() == 1.5;
  return {tuned >= untuned && sigma_recorded,
          "desk-task fitness: tuned " + fmt(tuned) + " vs untuned " + fmt(untuned) + " on the paired seed, " +
              std::to_string(s["evaluations"].get<long>()) + " evaluations, sigma0 1.5 in manifest: " +
              (sigma_recorded ? "yes" : "no")};
}

Outcome c11_evolve(const fs::path& out) {
  Json o;
  o["dataset"] = {{"source", "blobs"}};
  o["ga"] = {{"population_size", 16}, {"generations", 5}};
  o["train"] = {{"steps", 200}, {"eval_every", 100}};
  run_or_throw("evolve", o, out / "a");
  run_or_throw("evolve", o, out / "b");
  fs::remove_all(out / "rerun");
  const CommandOutcome rr = rerun_manifest(out / "a" / "manifest.json", out / "rerun");
  if (rr.exit_code != kExitOk) return {false, "rerun exited " + std::to_string(rr.exit_code) + ": " + rr.message};
  const auto a = artifacts(out / "a");
  const bool deterministic = a == artifacts(out / "b");
  const bool reproducible = a == artifacts(out / "rerun");
  const auto gens = read_csv(out / "a" / "results" / "generations.csv");
  const double initial_mean = num(gens.front(), "mean_fitness");
  const Json summary = Json::parse(slurp(out / "a" / "results" / "summary.json"));
  const double best = summary["best_fitness"].get<double>();
  return {deterministic && reproducible && best >= initial_mean && gens.size() == 6u,
          "best " + fmt(best) + " (" + summary["best_expr"].get<std::string>() + ") vs initial mean " +
              fmt(initial_mean) + "; repeat identical: " + (deterministic ? "yes" : "no") +
              "; manifest rerun bitwise identical: " + (reproducible ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--out", out, "Directory for workflow outputs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "binary-loss minima", 1, c1_minima},
      {2, "cross-entropy monotonicity", 1, c2_monotonicity},
      {3, "formula fidelity", 1, c3_fidelity},
      {4, "symbolic-gradient oracle", 30, c4_gradients},
      {5, "CMA-ES benchmarks", 30, c5_cmaes},
      {6, "GA mechanics", 120, c6_ga},
      {7, "desk-scale training comparison", 30 * 60, c7_training},
      {8, "dataset-portion trend", 45 * 60, c8_portions},
      {9, "histogram shift", 10 * 60, c9_histogram},
      {10, "coefficient-tuning gain", 2 * 3600, c10_tuning},
      {11, "end-to-end evolve smoke", 10 * 60, c11_evolve},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(fs::path(out) / ("criterion" + std::to_string(c.id)));
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %2d %s  %s: %s [%.2f s, budget %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.title.c_str(),
                o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", OVER BUDGET");
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
