// glo: command-line front end over the C interface.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "glo/glo.h"

namespace {

using Json = nlohmann::ordered_json;

struct CommonFlags {
  std::string config_file;
  std::string out_dir;
  std::vector<std::string> sets;
  std::vector<std::string> losses;
  std::vector<unsigned long long> seeds;
  std::vector<double> portions;
  std::string model;
  std::string dataset;
  std::string images, labels, csv;
  int blob_classes = 0, blob_samples = 0, blob_dim = 0;
  double blob_separation = -1, blob_noise = -1;
  long long steps = -1;
  long long run_seed = -1;
  int workers = -1;
  bool quiet = false;
};

void progress_to_stderr(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

/// Splits "a.b.c=value" and writes value (parsed as JSON, or as a string if
/// that fails) into the overlay at the dotted path.
void apply_set(Json& overlay, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* cur = &overlay;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("--set: empty key in '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    Json& next = (*cur)[key];
    if (!next.is_object()) next = Json::object();
    cur = &next;
    start = dot + 1;
  }
}

Json build_overlay(const CommonFlags& f) {
  Json overlay = Json::object();
  if (!f.config_file.empty()) {
    std::ifstream is(f.config_file);
    if (!is) throw std::runtime_error("cannot read config file " + f.config_file);
    Json file = Json::parse(is);
    if (!file.is_object()) throw std::invalid_argument("config file must hold a JSON object");
    overlay = std::move(file);
  }
  Json flags = Json::object();
  if (f.run_seed >= 0) flags["run_seed"] = f.run_seed;
  if (f.workers >= 0) flags["workers"] = f.workers;
  if (f.steps >= 0) flags["train"]["steps"] = f.steps;
  if (!f.losses.empty()) flags["losses"] = f.losses;
  if (!f.seeds.empty()) flags["seeds"] = f.seeds;
  if (!f.portions.empty()) flags["portions"] = f.portions;
  if (!f.model.empty()) flags["model_file"] = f.model;
  if (!f.dataset.empty()) flags["dataset"]["source"] = f.dataset;
  if (!f.images.empty()) flags["dataset"]["images"] = f.images;
  if (!f.labels.empty()) flags["dataset"]["labels"] = f.labels;
  if (!f.csv.empty()) flags["dataset"]["csv"] = f.csv;
  if (f.blob_classes > 0) flags["dataset"]["blobs"]["classes"] = f.blob_classes;
  if (f.blob_samples > 0) flags["dataset"]["blobs"]["samples_per_class"] = f.blob_samples;
  if (f.blob_dim > 0) flags["dataset"]["blobs"]["dim"] = f.blob_dim;
  if (f.blob_separation >= 0) flags["dataset"]["blobs"]["separation"] = f.blob_separation;
  if (f.blob_noise >= 0) flags["dataset"]["blobs"]["noise_sigma"] = f.blob_noise;
  for (const auto& s : f.sets) apply_set(flags, s);
  overlay.merge_patch(flags);
  return overlay;
}

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("-c,--config", f.config_file, "JSON config file (flags override its values)");
  sub->add_option("-o,--out", f.out_dir, "Output directory")->required();
  sub->add_option("--set", f.sets, "Override any config key: key.path=value (repeatable)");
  sub->add_option("--seed", f.run_seed, "Run seed");
  sub->add_option("--workers", f.workers, "Worker threads (0: GLO_WORKERS or all cores)");
  sub->add_option("--steps", f.steps, "Training steps per run");
  sub->add_option("--dataset", f.dataset, "mnist | idx | csv | blobs");
  sub->add_option("--images", f.images, "IDX image file");
  sub->add_option("--labels", f.labels, "IDX label file");
  sub->add_option("--csv", f.csv, "CSV dataset (last column is the label)");
  sub->add_option("--blob-classes", f.blob_classes, "Synthetic blobs: classes");
  sub->add_option("--blob-samples", f.blob_samples, "Synthetic blobs: samples per class");
  sub->add_option("--blob-dim", f.blob_dim, "Synthetic blobs: feature dimension");
  sub->add_option("--blob-separation", f.blob_separation, "Synthetic blobs: center separation");
  sub->add_option("--blob-noise", f.blob_noise, "Synthetic blobs: noise sigma");
  sub->add_flag("-q,--quiet", f.quiet, "No progress output");
}

int run(const std::string& command, const CommonFlags& f) {
  Json overlay;
  try {
    overlay = build_overlay(f);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "glo %s: %s\n", command.c_str(), e.what());
    return GLO_EXIT_CONFIG;
  }
  const std::string text = overlay.dump();
  const int code = glo_run_command(command.c_str(), text.c_str(), f.out_dir.c_str(),
                                   f.quiet ? nullptr : progress_to_stderr, nullptr);
  if (code != GLO_EXIT_OK) std::fprintf(stderr, "glo %s: %s\n", command.c_str(), glo_last_error());
  return code;
}

int show(const std::string& spec, bool derivative, const std::vector<double>& at) {
  glo_expr* e = nullptr;
  if (glo_expr_builtin(spec.c_str(), &e) != GLO_OK && glo_expr_parse(spec.c_str(), &e) != GLO_OK) {
    std::fprintf(stderr, "glo show: %s\n", glo_last_error());
    return GLO_EXIT_CONFIG;
  }
  if (derivative) {
    glo_expr* d = nullptr;
    glo_expr_derivative(e, &d);
    glo_expr_free(e);
    e = d;
  }
  char* text = nullptr;
  char* canon = nullptr;
  glo_expr_format(e, &text);
  glo_expr_canonical(e, &canon);
  int leaves = 0;
  glo_expr_has_required_leaves(e, &leaves);
  std::printf("expr      %s\ncanonical %s\nleaf gate %s\n", text, canon, leaves ? "pass" : "fail");
  glo_string_free(text);
  glo_string_free(canon);
  if (at.size() == 2) {
    double v = 0;
    int valid = 0;
    glo_expr_evaluate(e, at[0], at[1], &v, &valid);
    if (valid) std::printf("value     %.17g\n", v);
    else std::printf("value     invalid\n");
  }
  glo_expr_free(e);
  return GLO_EXIT_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loss-function search: discovery, coefficient tuning, training and analysis"};
  app.set_version_flag("--version", std::string(glo_version()));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string chosen;
  const std::pair<const char*, const char*> commands[] = {
      {"evolve", "Discover loss expressions with the genetic algorithm"},
      {"tune", "Tune the coefficients of one loss with CMA-ES"},
      {"train", "Full training runs for one or more losses, seeds and dataset portions"},
      {"analyze", "Binary-classification loss curves and their minima"},
      {"hist", "Histogram of softmax outputs of a trained model"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, flags);
    const std::string n = name;
    if (n != "hist") sub->add_option("-l,--loss", flags.losses, "Builtin name, expression, or file (repeatable)");
    if (n == "train") {
      sub->add_option("--seeds", flags.seeds, "Seeds (repeatable)");
      sub->add_option("--portion", flags.portions, "Training-set portion in (0, 1] (repeatable)");
    }
    if (n == "hist") sub->add_option("-m,--model", flags.model, "Model file (omit for an untrained model)");
    sub->callback([&chosen, n] { chosen = n; });
  }

  std::string manifest, rerun_out;
  CLI::App* rerun = app.add_subcommand("rerun", "Repeat a run from its manifest.json");
  rerun->add_option("manifest", manifest, "Path to manifest.json")->required();
  rerun->add_option("-o,--out", rerun_out, "Output directory")->required();
  bool rerun_quiet = false;
  rerun->add_flag("-q,--quiet", rerun_quiet, "No progress output");
  rerun->callback([&] { chosen = "rerun"; });

  std::string spec;
  bool derivative = false;
  std::vector<double> at;
  CLI::App* showc = app.add_subcommand("show", "Print an expression or builtin loss");
  showc->add_option("expr", spec, "Builtin name or s-expression")->required();
  showc->add_flag("-d,--derivative", derivative, "Show d/dy instead");
  showc->add_option("--at", at, "Evaluate at x y")->expected(2);
  showc->callback([&] { chosen = "show"; });

  std::string config_cmd;
  CLI::App* cfg = app.add_subcommand("config", "Print the default config for a command");
  cfg->add_option("command", config_cmd, "Command name")->required();
  cfg->callback([&] { chosen = "config"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : GLO_EXIT_CONFIG;
  }

  if (chosen == "rerun") {
    const int code = glo_rerun_manifest(manifest.c_str(), rerun_out.c_str(),
                                        rerun_quiet ? nullptr : progress_to_stderr, nullptr);
    if (code != GLO_EXIT_OK) std::fprintf(stderr, "glo rerun: %s\n", glo_last_error());
    return code;
  }
  if (chosen == "show") return show(spec, derivative, at);
  if (chosen == "config") {
    char* text = nullptr;
    if (glo_default_config(config_cmd.c_str(), &text) != GLO_OK) {
      std::fprintf(stderr, "glo config: %s\n", glo_last_error());
      return GLO_EXIT_CONFIG;
    }
    std::printf("%s\n", text);
    glo_string_free(text);
    return GLO_EXIT_OK;
  }
  return run(chosen, flags);
}
