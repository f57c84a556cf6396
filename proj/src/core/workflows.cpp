#include "workflows.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "analysis.hpp"
#include "evalpool.hpp"
#include "reference_losses.hpp"

#ifndef GLO_DATA_DIR
#define GLO_DATA_DIR "data"
#endif

namespace glo {

namespace fs = std::filesystem;

std::vector<std::string> command_names() { return {"evolve", "tune", "train", "analyze", "hist"}; }

// ---------------------------------------------------------------------------
// Configuration

Json default_config(std::string_view command) {
  bool known = false;
  for (const auto& c : command_names()) known = known || c == command;
  if (!known) throw ConfigError("unknown command '" + std::string(command) + "'");

  const GaConfig ga;
  const TrainConfig tr;
  const ModelConfig mo;
  const GenerationWeights gw;
  const CmaesConfig cm;
  const AnalysisConfig an;
  const BlobConfig bl;

  Json j;
  j["run_seed"] = 0;
  j["workers"] = 0;
  j["dataset"] = {{"source", "mnist"},
                  {"images", ""},
                  {"labels", ""},
                  {"csv", ""},
                  {"train", 0},
                  {"validation", 0},
                  {"test", 0},
                  {"blobs",
                   {{"classes", bl.classes},
                    {"samples_per_class", bl.samples_per_class},
                    {"dim", bl.dim},
                    {"separation", bl.separation},
                    {"noise_sigma", bl.noise_sigma}}}};
  j["model"] = {{"hidden_layers", mo.hidden_layers}, {"dropout_probability", mo.dropout_probability}};
  // Full training runs use ten times the candidate-evaluation budget.
  const long steps = command == "train" ? 10 * tr.steps : tr.steps;
  j["train"] = {{"batch_size", tr.batch_size},
                {"learning_rate", tr.learning_rate},
                {"steps", steps},
                {"eval_every", tr.eval_every},
                {"clip_epsilon", tr.clip_epsilon}};
  j["ga"] = {{"population_size", ga.population_size},
             {"elites_per_generation", ga.elites_per_generation},
             {"recombination_probability", ga.recombination_probability},
             {"mutation_rate", ga.mutation_rate},
             {"replacement_rate", ga.replacement_rate},
             {"replace_with_leaf_rate", ga.replace_with_leaf_rate},
             {"leaf_to_subtree_rate", ga.leaf_to_subtree_rate},
             {"initial_max_depth", ga.initial_max_depth},
             {"generations", ga.generations},
             {"max_tree_size", ga.max_tree_size},
             {"crossover_attempts", ga.crossover_attempts}};
  Json w = Json::object();
  for (std::size_t i = 0; i < kGenKindCount; ++i) w[std::string(gen_kind_name(static_cast<GenKind>(i)))] = gw.w[i];
  j["generation_weights"] = std::move(w);
  j["cmaes"] = {{"sigma0", cm.sigma0}, {"lambda", nullptr}, {"max_evaluations", 2000}};
  j["losses"] = command == "train" ? Json::array({"cross_entropy", "baikal"}) : Json::array({"baikal"});
  j["seeds"] = Json::array({0});
  j["portions"] = Json::array({1.0});
  j["analysis"] = {{"x0", an.x0}, {"lo", an.lo}, {"hi", an.hi}, {"grid_points", an.grid_points}, {"bins", an.bins}};
  j["model_file"] = "";
  return j;
}

namespace {

std::string join_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* kind_name(const Json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

}  // namespace

void merge_strict(Json& base, const Json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string p = join_path(path, it.key());
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + p + "'");
    Json& b = base[it.key()];
    const Json& o = it.value();
    bool ok = false;
    if (b.is_object()) {
      merge_strict(b, o, p);
      continue;
    }
    if (b.is_null()) ok = o.is_null() || o.is_number_integer();  // optional integers
    else if (b.is_number_integer()) ok = o.is_number_integer();
    else if (b.is_number()) ok = o.is_number();
    else ok = std::string(kind_name(b)) == kind_name(o);
    if (!ok)
      throw ConfigError("config key '" + p + "': expected " + (b.is_null() ? "integer or null" : kind_name(b)) +
                        ", got " + kind_name(o));
    b = o;
  }
}

namespace {

const Json& at(const Json& j, const std::string& path) {
  const Json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key)) throw ConfigError("missing config key '" + path + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

long long get_int(const Json& j, const std::string& path, long long lo = std::numeric_limits<long long>::min(),
                  long long hi = std::numeric_limits<long long>::max()) {
  const Json& v = at(j, path);
  if (!v.is_number_integer()) throw ConfigError("config key '" + path + "': expected integer");
  if (v.is_number_unsigned() && v.get<unsigned long long>() > static_cast<unsigned long long>(hi))
    throw ConfigError("config key '" + path + "' is out of range");
  const long long x = v.get<long long>();
  if (x < lo || x > hi)
    throw ConfigError("config key '" + path + "' must be in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "], got " + std::to_string(x));
  return x;
}

std::uint64_t get_u64(const Json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  throw ConfigError("config key '" + path + "': expected a non-negative integer");
}

double get_num(const Json& j, const std::string& path) {
  const Json& v = at(j, path);
  if (!v.is_number()) throw ConfigError("config key '" + path + "': expected number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("config key '" + path + "' must be finite");
  return x;
}

std::string get_str(const Json& j, const std::string& path) {
  const Json& v = at(j, path);
  if (!v.is_string()) throw ConfigError("config key '" + path + "': expected string");
  return v.get<std::string>();
}

const Json& get_array(const Json& j, const std::string& path) {
  const Json& v = at(j, path);
  if (!v.is_array()) throw ConfigError("config key '" + path + "': expected array");
  return v;
}

/// Runs `check` and re-raises std::invalid_argument as a ConfigError under `section`.
template <class F>
void validate_section(const std::string& section, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config section '" + section + "': " + e.what());
  }
}

}  // namespace

RunConfig parse_config(std::string_view command, const Json& j) {
  RunConfig c;
  c.command = std::string(command);
  c.run_seed = get_u64(at(j, "run_seed"), "run_seed");
  c.workers = static_cast<int>(get_int(j, "workers", 0, 1024));

  auto& d = c.dataset;
  d.source = get_str(j, "dataset.source");
  if (d.source != "mnist" && d.source != "idx" && d.source != "csv" && d.source != "blobs")
    throw ConfigError("config key 'dataset.source' must be one of mnist, idx, csv, blobs; got '" + d.source + "'");
  d.images = get_str(j, "dataset.images");
  d.labels = get_str(j, "dataset.labels");
  d.csv = get_str(j, "dataset.csv");
  d.train = static_cast<std::size_t>(get_int(j, "dataset.train", 0));
  d.validation = static_cast<std::size_t>(get_int(j, "dataset.validation", 0));
  d.test = static_cast<std::size_t>(get_int(j, "dataset.test", 0));
  if ((d.train == 0) != (d.validation == 0))
    throw ConfigError("config keys 'dataset.train' and 'dataset.validation' must both be set or both be 0 (automatic)");
  d.blobs.classes = static_cast<int>(get_int(j, "dataset.blobs.classes", 2, 1 << 16));
  d.blobs.samples_per_class = static_cast<int>(get_int(j, "dataset.blobs.samples_per_class", 1, 1 << 24));
  d.blobs.dim = static_cast<int>(get_int(j, "dataset.blobs.dim", 1, 1 << 16));
  d.blobs.separation = get_num(j, "dataset.blobs.separation");
  d.blobs.noise_sigma = get_num(j, "dataset.blobs.noise_sigma");
  if (d.blobs.noise_sigma < 0) throw ConfigError("config key 'dataset.blobs.noise_sigma' must be >= 0");

  c.model.hidden_layers.clear();
  const Json& hl = get_array(j, "model.hidden_layers");
  for (std::size_t i = 0; i < hl.size(); ++i) {
    const std::string p = "model.hidden_layers[" + std::to_string(i) + "]";
    if (!hl[i].is_number_integer() || hl[i].get<long long>() <= 0 || hl[i].get<long long>() > (1 << 20))
      throw ConfigError("config key '" + p + "' must be a positive integer");
    c.model.hidden_layers.push_back(hl[i].get<int>());
  }
  c.model.dropout_probability = get_num(j, "model.dropout_probability");
  if (!(c.model.dropout_probability >= 0.0 && c.model.dropout_probability < 1.0))
    throw ConfigError("config key 'model.dropout_probability' must be in [0, 1)");

  c.train.batch_size = static_cast<int>(get_int(j, "train.batch_size", std::numeric_limits<int>::min(), 1 << 24));
  c.train.learning_rate = get_num(j, "train.learning_rate");
  c.train.steps = static_cast<long>(get_int(j, "train.steps"));
  c.train.eval_every = static_cast<long>(get_int(j, "train.eval_every"));
  c.train.clip_epsilon = get_num(j, "train.clip_epsilon");
  if (c.train.steps <= 0) throw ConfigError("config key 'train.steps': positive step count required");
  validate_section("train", [&] { c.train.validate(); });

  c.ga.population_size = static_cast<int>(get_int(j, "ga.population_size", 0, 1 << 20));
  c.ga.elites_per_generation = static_cast<int>(get_int(j, "ga.elites_per_generation", 0, 1 << 20));
  c.ga.recombination_probability = get_num(j, "ga.recombination_probability");
  c.ga.mutation_rate = get_num(j, "ga.mutation_rate");
  c.ga.replacement_rate = get_num(j, "ga.replacement_rate");
  c.ga.replace_with_leaf_rate = get_num(j, "ga.replace_with_leaf_rate");
  c.ga.leaf_to_subtree_rate = get_num(j, "ga.leaf_to_subtree_rate");
  c.ga.initial_max_depth = static_cast<int>(get_int(j, "ga.initial_max_depth", 0, 16));
  c.ga.generations = static_cast<int>(get_int(j, "ga.generations", 0, 1 << 20));
  c.ga.max_tree_size = static_cast<int>(get_int(j, "ga.max_tree_size", 1, 1 << 16));
  c.ga.crossover_attempts = static_cast<int>(get_int(j, "ga.crossover_attempts", 1, 1 << 16));
  for (const char* k : {"recombination_probability", "mutation_rate", "replacement_rate", "replace_with_leaf_rate",
                        "leaf_to_subtree_rate"}) {
    const double v = get_num(j, std::string("ga.") + k);
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("config key 'ga.") + k + "' must be a probability in [0, 1]");
  }
  validate_section("ga", [&] { c.ga.validate(); });

  for (std::size_t i = 0; i < kGenKindCount; ++i) {
    const std::string name(gen_kind_name(static_cast<GenKind>(i)));
    c.weights.w[i] = get_num(j, "generation_weights." + name);
  }
  validate_section("generation_weights", [&] { c.weights.validate(); });

  c.cmaes.sigma0 = get_num(j, "cmaes.sigma0");
  if (!(c.cmaes.sigma0 > 0)) throw ConfigError("config key 'cmaes.sigma0' must be positive");
  const Json& lam = at(j, "cmaes.lambda");
  if (!lam.is_null()) c.cmaes.lambda = static_cast<int>(get_int(j, "cmaes.lambda", 2, 1 << 16));
  c.cmaes.max_evaluations = static_cast<long>(get_int(j, "cmaes.max_evaluations", 1));

  const Json& losses = get_array(j, "losses");
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!losses[i].is_string() || losses[i].get<std::string>().empty())
      throw ConfigError("config key 'losses[" + std::to_string(i) + "]' must be a non-empty string");
    c.losses.push_back(losses[i].get<std::string>());
  }
  const Json& seeds = get_array(j, "seeds");
  for (std::size_t i = 0; i < seeds.size(); ++i) c.seeds.push_back(get_u64(seeds[i], "seeds[" + std::to_string(i) + "]"));
  if (c.seeds.empty()) throw ConfigError("config key 'seeds' must not be empty");
  const Json& portions = get_array(j, "portions");
  for (std::size_t i = 0; i < portions.size(); ++i) {
    const std::string p = "portions[" + std::to_string(i) + "]";
    if (!portions[i].is_number()) throw ConfigError("config key '" + p + "': expected number");
    const double v = portions[i].get<double>();
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("config key '" + p + "' must be in (0, 1]");
    c.portions.push_back(v);
  }
  if (c.portions.empty()) throw ConfigError("config key 'portions' must not be empty");

  c.analysis.x0.clear();
  const Json& x0 = get_array(j, "analysis.x0");
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!x0[i].is_number_integer() || (x0[i].get<int>() != 0 && x0[i].get<int>() != 1))
      throw ConfigError("config key 'analysis.x0[" + std::to_string(i) + "]' must be 0 or 1");
    c.analysis.x0.push_back(x0[i].get<int>());
  }
  c.analysis.lo = get_num(j, "analysis.lo");
  c.analysis.hi = get_num(j, "analysis.hi");
  if (!(0.0 < c.analysis.lo && c.analysis.lo < c.analysis.hi && c.analysis.hi < 1.0))
    throw ConfigError("config keys 'analysis.lo' and 'analysis.hi' must satisfy 0 < lo < hi < 1");
  c.analysis.grid_points = static_cast<int>(get_int(j, "analysis.grid_points", 3, 10'000'000));
  c.analysis.bins = static_cast<int>(get_int(j, "analysis.bins", 1, 1'000'000));
  c.model_file = get_str(j, "model_file");

  if ((command == "train" || command == "analyze") && c.losses.empty())
    throw ConfigError("config key 'losses' must name at least one loss");
  if (command == "tune" && c.losses.size() != 1)
    throw ConfigError("config key 'losses' must name exactly one loss for tune");
  return c;
}

RunConfig resolve_config(std::string_view command, const Json& overlay, Json* merged_out) {
  Json merged = default_config(command);
  if (!overlay.is_null()) merge_strict(merged, overlay);
  RunConfig c = parse_config(command, merged);
  if (merged_out) *merged_out = std::move(merged);
  return c;
}

SubSeeds sub_seeds(std::uint64_t run_seed) {
  return {derive_seed(run_seed, "gp"), derive_seed(run_seed, "cmaes"), derive_seed(run_seed, "trainer"),
          derive_seed(run_seed, "data")};
}

// ---------------------------------------------------------------------------
// Inputs

DatasetSplit load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  LabeledData all;
  std::string provenance;
  try {
    if (cfg.source == "mnist") {
      const fs::path dir = fs::path(GLO_DATA_DIR) / "mnist10k";
      const fs::path images = cfg.images.empty() ? dir / "images-idx3-ubyte.gz" : cfg.images;
      const fs::path labels = cfg.labels.empty() ? dir / "labels-idx1-ubyte.gz" : cfg.labels;
      all = load_idx(images, labels);
      provenance = "idx:" + images.string();
    } else if (cfg.source == "idx") {
      if (cfg.images.empty() || cfg.labels.empty())
        throw ConfigError("dataset.source 'idx' requires dataset.images and dataset.labels");
      all = load_idx(cfg.images, cfg.labels);
      provenance = "idx:" + cfg.images.string();
    } else if (cfg.source == "csv") {
      if (cfg.csv.empty()) throw ConfigError("dataset.source 'csv' requires dataset.csv");
      all = load_csv(cfg.csv);
      provenance = "csv:" + cfg.csv.string();
    } else {
      const auto& b = cfg.blobs;
      all = synth_blobs(b.classes, b.samples_per_class, b.dim, b.separation, b.noise_sigma, derive_seed(seed, "blobs"));
      provenance = "blobs";
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  std::size_t tr = cfg.train, va = cfg.validation, te = cfg.test;
  if (tr == 0) {
    const std::size_t n = all.rows();
    tr = n * 70 / 100;
    va = n * 15 / 100;
    te = n - tr - va;
  }
  if (tr + va + te > all.rows())
    throw ConfigError("dataset: requested " + std::to_string(tr + va + te) + " rows but the source has " +
                      std::to_string(all.rows()));
  try {
    return split(all, tr, va, te, derive_seed(seed, "split"), provenance);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
}

Expr ResolvedLoss::trained_body() const { return coefficients ? expand(*coefficients) : body; }

ResolvedLoss resolve_loss(const std::string& spec, std::size_t index) {
  for (const auto& n : builtin_names()) {
    if (spec == n) {
      const BuiltinLoss& b = builtin(n);
      return {b.name, b.body, b.coefficients};
    }
  }
  std::string text = spec;
  std::string name = "loss" + std::to_string(index);
  std::error_code ec;
  if (spec.front() != '(' && fs::is_regular_file(spec, ec)) {
    std::ifstream is(spec);
    if (!is) throw IoError("cannot read loss file " + spec);
    std::ostringstream os;
    os << is.rdbuf();
    text = os.str();
    name = fs::path(spec).stem().string();
  }
  try {
    if (text.find("expr ") != std::string::npos && text.find("slots") != std::string::npos) {
      CoeffExpr ce = parse_coeff_expr(text);
      return {name, ce.base, ce};
    }
    return {name, parse(text), std::nullopt};
  } catch (const ParseError& e) {
    throw ConfigError("loss '" + spec + "' is not a builtin, file, or expression: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("loss '" + spec + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Outputs

namespace {

struct OutDir {
  fs::path root;

  void create() const {
    std::error_code ec;
    for (const char* sub : {"logs", "results", "models", "expressions"}) {
      fs::create_directories(root / sub, ec);
      if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
    }
  }
  void write(const fs::path& rel, const std::string& content) const {
    const fs::path p = root / rel;
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os << content;
    if (!os) throw IoError("write failed: " + p.string());
  }
};

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& p) : os_(p, std::ios::trunc) {
    if (!os_) throw IoError("cannot open " + p.string() + " for writing");
  }
  void line(const std::string& s) {
    std::lock_guard lock(mu_);
    os_ << s << '\n';
    os_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream os_;
};

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string portion_tag(double p) {
  std::string s = format_real(p);
  for (char& ch : s)
    if (ch == '.') ch = '_';
  return s;
}

std::string safe_name(std::string s) {
  for (char& ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) ch = '_';
  return s;
}

int resolved_workers(const RunConfig& c) { return c.workers > 0 ? c.workers : default_worker_count(); }

Json manifest_json(const RunConfig& c, const Json& merged, const fs::path& out_dir) {
  const SubSeeds s = sub_seeds(c.run_seed);
  Json m;
  m["format_version"] = 1;
  m["command"] = c.command;
  m["code_version"] = std::string(kCodeVersion);
  m["output_dir"] = fs::absolute(out_dir).string();
  m["seeds"] = {{"run_seed", c.run_seed}, {"gp", s.gp}, {"cmaes", s.cmaes}, {"trainer", s.trainer}, {"data", s.data}};
  m["config"] = merged;
  return m;
}

FitnessTask make_task(const RunConfig& c, std::shared_ptr<const DatasetSplit> data) {
  FitnessTask t;
  t.model = c.model;
  t.model.input_dim = static_cast<int>(data->input_dim());
  t.model.num_classes = data->num_classes;
  t.train = c.train;
  t.data = std::move(data);
  return t;
}

void note(const ProgressFn& p, const std::string& s) {
  if (p) p(s);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_evolve(const RunConfig& c, const OutDir& out, const ProgressFn& progress) {
  const SubSeeds seeds = sub_seeds(c.run_seed);
  auto data = std::make_shared<const DatasetSplit>(load_dataset(c.dataset, seeds.data));
  auto task = std::make_shared<const FitnessTask>(make_task(c, data));
  EvalPool pool(resolved_workers(c));
  ReportCache reports;
  JsonlLog jobs(out.root / "logs" / "jobs.jsonl");
  std::uint64_t next_job = 0;

  BatchFitnessFn fitness = [&](std::span<const Expr> exprs) {
    std::vector<EvalJob> batch;
    batch.reserve(exprs.size());
    for (const Expr& e : exprs)
      batch.push_back(EvalJob{next_job++, e, task, derive_seed(seeds.trainer, canonicalize(e))});
    std::vector<JobLogEntry> log;
    const auto rs = pool.evaluate_batch(batch, &reports, &log);
    for (const auto& l : log) jobs.line(l.json());
    std::vector<double> f;
    f.reserve(rs.size());
    for (const auto& r : rs) f.push_back(r.failure == Failure::None ? r.fitness : 0.0);
    return f;
  };

  GaConfig ga = c.ga;
  ga.rng_seed = seeds.gp;
  Rng rng(seeds.gp);
  const EvolutionReport rep = evolve(ga, c.weights, fitness, rng, [&](const GenerationRecord& r) {
    note(progress, "generation " + std::to_string(r.generation) + " best " + num(r.best_fitness) + " mean " +
                        num(r.mean_fitness) + " " + r.best_expr);
  });

  out.write("logs/generations.jsonl", rep.generations_jsonl());
  std::ostringstream csv;
  csv << "generation,best_fitness,mean_fitness,cache_hits,cache_misses,best_expr\n";
  for (const auto& r : rep.generations)
    csv << r.generation << ',' << num(r.best_fitness) << ',' << num(r.mean_fitness) << ',' << r.cache_hits << ','
        << r.cache_misses << ",\"" << r.best_expr << "\"\n";
  out.write("results/generations.csv", csv.str());
  out.write("results/summary.json", rep.summary_json());
  out.write("expressions/best.expr", rep.best_expr + "\n");
  return kExitOk;
}

int cmd_tune(const RunConfig& c, const OutDir& out, const ProgressFn& progress) {
  const SubSeeds seeds = sub_seeds(c.run_seed);
  const ResolvedLoss loss = resolve_loss(c.losses.front(), 0);
  if (!contains_required_leaves(loss.body))
    throw ConfigError("loss '" + c.losses.front() + "' fails the missing-leaf gate (needs at least one x and one y)");
  const CoeffExpr start = loss.coefficients ? *loss.coefficients : prune_absorbable(attach_coefficients(loss.body));
  if (start.dimension() == 0) throw ConfigError("loss '" + c.losses.front() + "' has no tunable coefficients");

  auto data = std::make_shared<const DatasetSplit>(load_dataset(c.dataset, seeds.data));
  auto task = std::make_shared<const FitnessTask>(make_task(c, data));
  EvalPool pool(resolved_workers(c));
  ReportCache reports;
  JsonlLog jobs(out.root / "logs" / "jobs.jsonl");
  std::uint64_t next_job = 0;
  // Every candidate trains from the same initialization and minibatch order.
  const std::uint64_t paired = seeds.trainer;

  const FitnessReport base = pool.evaluate_batch(std::vector<EvalJob>{{next_job++, loss.body, task, paired}})[0];
  note(progress, "untuned fitness " + num(base.fitness));

  BatchObjective objective = [&](const std::vector<Eigen::VectorXd>& xs) {
    std::vector<EvalJob> batch;
    for (const auto& x : xs) {
      std::vector<double> v(x.data(), x.data() + x.size());
      batch.push_back(EvalJob{next_job++, with_values(start, v), task, paired});
    }
    std::vector<JobLogEntry> log;
    const auto rs = pool.evaluate_batch(batch, &reports, &log);
    for (const auto& l : log) jobs.line(l.json());
    std::vector<double> f;
    for (const auto& r : rs) f.push_back(1.0 - (r.failure == Failure::None ? r.fitness : 0.0));
    return f;
  };

  CmaesConfig cm = c.cmaes;
  cm.dimension = static_cast<int>(start.dimension());
  cm.rng_seed = seeds.cmaes;
  Rng rng(seeds.cmaes);
  const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(start.values.data(), cm.dimension);
  const CmaesResult res = cmaes_minimize(objective, x0, cm, rng);

  std::vector<double> best(res.best.data(), res.best.data() + res.best.size());
  const CoeffExpr tuned = with_values(start, best);
  const double tuned_fitness = 1.0 - res.best_fitness;
  note(progress, "tuned fitness " + num(tuned_fitness));

  out.write("expressions/tuned.coeff", format_coeff_expr(tuned));
  out.write("expressions/tuned_expanded.expr", format(expand(tuned)) + "\n");
  out.write("results/cmaes_history.csv", history_csv(res.history));
  Json s;
  s["loss"] = loss.name;
  s["expression"] = format(loss.body);
  s["slots"] = tuned.slots;
  s["values"] = tuned.values;
  s["untuned_fitness"] = base.fitness;
  s["untuned_failure"] = std::string(failure_name(base.failure));
  s["tuned_fitness"] = tuned_fitness;
  s["evaluations"] = res.final_state.evaluations;
  s["generations"] = res.final_state.generation;
  s["sigma0"] = cm.sigma0;
  s["lambda"] = cm.resolved_lambda();
  out.write("results/tune_summary.json", s.dump(2) + "\n");
  return kExitOk;
}

struct TrainRun {
  std::size_t loss;
  double portion;
  std::uint64_t seed;
  TrainResult result;
};

template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> ts;
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  for (int t = 1; t < k; ++t) ts.emplace_back(body);
  body();
  for (auto& t : ts) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int cmd_train(const RunConfig& c, const OutDir& out, const ProgressFn& progress) {
  const SubSeeds seeds = sub_seeds(c.run_seed);
  std::vector<ResolvedLoss> losses;
  for (std::size_t i = 0; i < c.losses.size(); ++i) losses.push_back(resolve_loss(c.losses[i], i));
  std::map<std::string, int> seen;
  for (const auto& l : losses)
    if (seen[l.name]++) throw ConfigError("loss '" + l.name + "' is listed twice");
  std::vector<LossFunction> fns;
  for (const auto& l : losses) fns.emplace_back(l.trained_body(), l.name);

  const DatasetSplit full = load_dataset(c.dataset, seeds.data);
  const FitnessTask base = make_task(c, std::make_shared<const DatasetSplit>(full));

  std::vector<TrainRun> runs;
  for (double p : c.portions)
    for (std::size_t l = 0; l < losses.size(); ++l)
      for (std::uint64_t s : c.seeds) runs.push_back({l, p, s, {}});

  // One subsample per (portion, seed), shared by every loss.
  std::map<std::pair<double, std::uint64_t>, std::shared_ptr<const DatasetSplit>> parts;
  for (double p : c.portions)
    for (std::uint64_t s : c.seeds)
      parts[{p, s}] = p == 1.0 ? base.data
                               : std::make_shared<const DatasetSplit>(subsample_portion(
                                     full, p, derive_seed(seeds.data, "portion " + format_real(p) + " seed " +
                                                                           std::to_string(s))));

  std::mutex note_mu;
  parallel_for(runs.size(), resolved_workers(c), [&](std::size_t i) {
    TrainRun& r = runs[i];
    const FitnessTask t = base.with_seed(derive_seed(seeds.trainer, std::to_string(r.seed)));
    r.result = train(t.model, *parts.at({r.portion, r.seed}), fns[r.loss], t.train);
    std::lock_guard lock(note_mu);
    note(progress, "trained " + losses[r.loss].name + " portion " + format_real(r.portion) + " seed " +
                       std::to_string(r.seed) + ": test " + num(r.result.report.test_accuracy) + " " +
                       std::string(failure_name(r.result.report.failure)));
  });

  std::ostringstream runs_csv;
  runs_csv << "loss,portion,seed,failure,steps_completed,val_accuracy,test_accuracy,final_train_loss\n";
  std::size_t failures = 0;
  for (const auto& r : runs) {
    const std::string stem =
        safe_name(losses[r.loss].name) + "_p" + portion_tag(r.portion) + "_s" + std::to_string(r.seed);
    const auto& rep = r.result.report;
    if (rep.failure != Failure::None) ++failures;
    r.result.model.save(out.root / "models" / (stem + ".bin"));
    out.write("results/curve_" + stem + ".csv", r.result.curve.csv());
    runs_csv << losses[r.loss].name << ',' << format_real(r.portion) << ',' << r.seed << ','
             << failure_name(rep.failure) << ',' << rep.steps_completed << ','
             << num(rep.failure == Failure::None ? rep.fitness : std::nan("")) << ',' << num(rep.test_accuracy)
             << ',' << num(rep.final_train_loss) << '\n';
  }
  out.write("results/runs.csv", runs_csv.str());

  // Per (loss, portion) means over the successful runs.
  struct Agg {
    std::size_t n = 0, failed = 0;
    double val = 0, test = 0;
  };
  std::map<std::pair<double, std::size_t>, Agg> agg;
  for (const auto& r : runs) {
    Agg& a = agg[{r.portion, r.loss}];
    if (r.result.report.failure != Failure::None) {
      ++a.failed;
      continue;
    }
    ++a.n;
    a.val += r.result.report.fitness;
    a.test += r.result.report.test_accuracy;
  }
  std::ostringstream sum;
  sum << "loss,portion,runs,failed_runs,mean_val_accuracy,mean_test_accuracy\n";
  for (double p : c.portions)
    for (std::size_t l = 0; l < losses.size(); ++l) {
      const Agg& a = agg[{p, l}];
      sum << losses[l].name << ',' << format_real(p) << ',' << a.n + a.failed << ',' << a.failed << ','
          << num(a.n ? a.val / a.n : std::nan("")) << ',' << num(a.n ? a.test / a.n : std::nan("")) << '\n';
    }
  out.write("results/summary.csv", sum.str());

  // Signed difference of each loss against the baseline at every portion.
  std::size_t baseline = 0;
  for (std::size_t l = 0; l < losses.size(); ++l)
    if (losses[l].name == "cross_entropy") baseline = l;
  std::ostringstream cmp;
  cmp << "portion,loss,baseline,mean_test_accuracy,baseline_mean_test_accuracy,difference\n";
  for (double p : c.portions)
    for (std::size_t l = 0; l < losses.size(); ++l) {
      if (l == baseline) continue;
      const Agg& a = agg[{p, l}];
      const Agg& b = agg[{p, baseline}];
      const double ma = a.n ? a.test / a.n : std::nan("");
      const double mb = b.n ? b.test / b.n : std::nan("");
      cmp << format_real(p) << ',' << losses[l].name << ',' << losses[baseline].name << ',' << num(ma) << ','
          << num(mb) << ',' << num(ma - mb) << '\n';
    }
  out.write("results/comparison.csv", cmp.str());

  // Mean curves over seeds, one file per (loss, portion).
  for (double p : c.portions)
    for (std::size_t l = 0; l < losses.size(); ++l) {
      std::map<long, std::array<double, 4>> acc;  // step -> sums of train_loss, val, test, count
      for (const auto& r : runs) {
        if (r.loss != l || r.portion != p || r.result.report.failure != Failure::None) continue;
        for (const auto& pt : r.result.curve.points) {
          auto& a = acc[pt.step];
          a[0] += pt.train_loss;
          a[1] += pt.val_accuracy;
          a[2] += pt.test_accuracy;
          a[3] += 1;
        }
      }
      std::ostringstream os;
      os << "step,runs,train_loss,val_accuracy,test_accuracy\n";
      for (const auto& [step, a] : acc)
        os << step << ',' << a[3] << ',' << num(a[0] / a[3]) << ',' << num(a[1] / a[3]) << ',' << num(a[2] / a[3])
           << '\n';
      out.write("results/mean_curve_" + safe_name(losses[l].name) + "_p" + portion_tag(p) + ".csv", os.str());
    }

  if (failures > 0)
    throw NumericalFailure(std::to_string(failures) + " of " + std::to_string(runs.size()) +
                           " training runs stopped on a non-finite value or invalid loss evaluation");
  return kExitOk;
}

int cmd_analyze(const RunConfig& c, const OutDir& out, const ProgressFn& progress) {
  for (std::size_t i = 0; i < c.losses.size(); ++i) {
    const ResolvedLoss loss = resolve_loss(c.losses[i], i);
    const Expr body = loss.trained_body();
    Json s;
    s["loss"] = loss.name;
    s["expression"] = format(body);
    Json curves = Json::array();
    for (int x0 : c.analysis.x0) {
      BinaryLossCurve curve;
      try {
        curve = analyze_curve(loss.name, body, x0, c.analysis.lo, c.analysis.hi,
                              static_cast<std::size_t>(c.analysis.grid_points));
      } catch (const std::domain_error& e) {
        throw NumericalFailure("analyze " + loss.name + " x0=" + std::to_string(x0) + ": " + e.what());
      }
      out.write("results/curve_" + safe_name(loss.name) + "_x0" + std::to_string(x0) + ".csv", curve.csv());
      Json cj;
      cj["x0"] = x0;
      cj["argmin_y0"] = curve.argmin_y0;
      cj["monotonicity"] = monotonicity_name(monotonicity(curve.samples));
      cj["interior_minimum"] = has_interior_minimum(curve.samples);
      if (x0 == 1 && (loss.name == "baikal" || loss.name == "baikal_cma")) {
        const double ref = loss.name == "baikal" ? 0.71 : 0.77;
        cj["reference_argmin"] = ref;
        cj["reference_tolerance"] = 0.02;
        cj["reference_ok"] = std::abs(curve.argmin_y0 - ref) <= 0.02;
      }
      note(progress, loss.name + " x0=" + std::to_string(x0) + " argmin " + num(curve.argmin_y0) + " " +
                         cj["monotonicity"].get<std::string>());
      curves.push_back(std::move(cj));
    }
    s["curves"] = std::move(curves);
    out.write("results/minima_" + safe_name(loss.name) + ".json", s.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_hist(const RunConfig& c, const OutDir& out, const ProgressFn& progress) {
  const SubSeeds seeds = sub_seeds(c.run_seed);
  const DatasetSplit data = load_dataset(c.dataset, seeds.data);
  Mlp model;
  std::string stem;
  if (c.model_file.empty()) {
    ModelConfig m = c.model;
    m.input_dim = static_cast<int>(data.input_dim());
    m.num_classes = data.num_classes;
    m.weight_init_seed = derive_seed(seeds.trainer, "untrained");
    model = Mlp::initialize(m);
    stem = "untrained";
  } else {
    try {
      model = Mlp::load(c.model_file);
    } catch (const DataFormatError& e) {
      throw IoError(e.what());
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    stem = safe_name(fs::path(c.model_file).stem().string());
  }
  if (model.input_dim() != static_cast<int>(data.input_dim()) || model.num_classes() != data.num_classes)
    throw ConfigError("model " + stem + " expects " + std::to_string(model.input_dim()) + " inputs and " +
                      std::to_string(model.num_classes()) + " classes; dataset has " +
                      std::to_string(data.input_dim()) + " and " + std::to_string(data.num_classes));
  const LabeledData& part = data.test.rows() > 0 ? data.test : data.validation;
  const auto bins = static_cast<std::size_t>(c.analysis.bins);
  const OutputHistogram all = output_histogram(model, part, bins, stem);
  const OutputHistogram top = max_class_histogram(model, part, bins, stem);
  out.write("results/hist_all_" + stem + ".csv", all.csv());
  out.write("results/hist_max_" + stem + ".csv", top.csv());
  note(progress, "histogram " + stem + ": max-class mode bin [" + num(top.edges[top.mode_bin()]) + ", " +
                     num(top.edges[top.mode_bin() + 1]) + ")");
  return kExitOk;
}

CommandOutcome guarded(const std::function<int()>& body) {
  try {
    return {body(), ""};
  } catch (const ConfigError& e) {
    return {kExitConfig, e.what()};
  } catch (const ParseError& e) {
    return {kExitConfig, e.what()};
  } catch (const nlohmann::json::exception& e) {
    return {kExitConfig, std::string("config: ") + e.what()};
  } catch (const NumericalHealthError& e) {
    return {kExitNumerical, e.what()};
  } catch (const NumericalFailure& e) {
    return {kExitNumerical, e.what()};
  } catch (const IoError& e) {
    return {kExitIo, e.what()};
  } catch (const DataFormatError& e) {
    return {kExitIo, e.what()};
  } catch (const fs::filesystem_error& e) {
    return {kExitIo, e.what()};
  } catch (const std::invalid_argument& e) {
    return {kExitConfig, e.what()};
  } catch (const std::exception& e) {
    return {kExitFailure, e.what()};
  }
}

}  // namespace

CommandOutcome run_command(std::string_view command, const Json& overlay, const fs::path& out_dir,
                           const ProgressFn& progress) {
  return guarded([&] {
    Json merged;
    const RunConfig c = resolve_config(command, overlay, &merged);
    if (out_dir.empty()) throw ConfigError("an output directory is required");
    const OutDir out{out_dir};
    out.create();
    out.write("manifest.json", manifest_json(c, merged, out_dir).dump(2) + "\n");
    if (command == "evolve") return cmd_evolve(c, out, progress);
    if (command == "tune") return cmd_tune(c, out, progress);
    if (command == "train") return cmd_train(c, out, progress);
    if (command == "analyze") return cmd_analyze(c, out, progress);
    return cmd_hist(c, out, progress);
  });
}

CommandOutcome rerun_manifest(const fs::path& manifest, const fs::path& out_dir, const ProgressFn& progress) {
  Json m;
  const CommandOutcome read = guarded([&] {
    std::ifstream is(manifest);
    if (!is) throw IoError("cannot read manifest " + manifest.string());
    try {
      m = Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
    }
    if (!m.contains("command") || !m["command"].is_string() || !m.contains("config"))
      throw ConfigError("manifest " + manifest.string() + " lacks command or config");
    if (m.value("code_version", "") != kCodeVersion)
      throw ConfigError("manifest was written by version " + m.value("code_version", "?") + ", this is " +
                        std::string(kCodeVersion));
    return kExitOk;
  });
  if (read.exit_code != kExitOk) return read;
  return run_command(m["command"].get<std::string>(), m["config"], out_dir, progress);
}

}  // namespace glo
