#pragma once

// Command workflows behind the CLI: strict configuration, run manifests and
// the evolve / tune / train / analyze / hist commands.
//
// Configuration precedence (lowest to highest): built-in defaults for the
// command, the config document, flag overrides. All three are JSON objects
// merged key by key; keys absent from the defaults are rejected.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cmaes.hpp"
#include "coeffs.hpp"
#include "data.hpp"
#include "gp.hpp"
#include "trainer.hpp"

namespace glo {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3, kExitIo = 4 };

inline constexpr std::string_view kCodeVersion = "0.1.0";

std::vector<std::string> command_names();

/// Defaults for a command. Throws ConfigError on unknown commands.
Json default_config(std::string_view command);

/// Merges `overlay` onto `base`. Unknown keys and type mismatches raise
/// ConfigError naming the dotted key path.
void merge_strict(Json& base, const Json& overlay, const std::string& path = "");

struct BlobConfig {
  int classes = 2;
  int samples_per_class = 100;
  int dim = 2;
  double separation = 0.6;
  double noise_sigma = 0.1;
};

struct DatasetConfig {
  std::string source = "mnist";  // mnist | idx | csv | blobs
  std::filesystem::path images, labels, csv;
  // 0 means automatic: 70 / 15 / 15 percent of the rows.
  std::size_t train = 0, validation = 0, test = 0;
  BlobConfig blobs;
};

struct AnalysisConfig {
  std::vector<int> x0{0, 1};
  double lo = 0.01;
  double hi = 0.99;
  int grid_points = 1000;
  int bins = 20;
};

struct RunConfig {
  std::string command;
  std::uint64_t run_seed = 0;
  int workers = 0;  // 0: GLO_WORKERS or hardware concurrency
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  GaConfig ga;
  GenerationWeights weights;
  CmaesConfig cmaes;
  std::vector<std::string> losses;
  std::vector<std::uint64_t> seeds;
  std::vector<double> portions;
  AnalysisConfig analysis;
  std::string model_file;
};

/// Typed view of a merged config; validates every section. Throws ConfigError
/// with the offending key path.
RunConfig parse_config(std::string_view command, const Json& merged);

/// default_config + merge_strict + parse_config.
RunConfig resolve_config(std::string_view command, const Json& overlay, Json* merged_out = nullptr);

struct SubSeeds {
  std::uint64_t gp, cmaes, trainer, data;
};
SubSeeds sub_seeds(std::uint64_t run_seed);

/// Loads and splits the configured dataset with the data sub-seed.
DatasetSplit load_dataset(const DatasetConfig& cfg, std::uint64_t seed);

/// A loss given as a builtin name, an expression, a coefficient document, or
/// a path to a file holding either.
struct ResolvedLoss {
  std::string name;
  Expr body;                                 // coefficient-free tree
  std::optional<CoeffExpr> coefficients;     // present for coefficient forms
  Expr trained_body() const;
};
ResolvedLoss resolve_loss(const std::string& spec, std::size_t index);

using ProgressFn = std::function<void(const std::string&)>;

struct CommandOutcome {
  int exit_code = kExitOk;
  std::string message;
};

/// Runs one command into `out_dir`, writing manifest.json first. Never throws;
/// failures map to exit codes 2 (config), 3 (numerical), 4 (I/O).
CommandOutcome run_command(std::string_view command, const Json& overlay, const std::filesystem::path& out_dir,
                           const ProgressFn& progress = {});

/// Re-executes the command recorded in a manifest into `out_dir`.
CommandOutcome rerun_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                              const ProgressFn& progress = {});

}  // namespace glo
