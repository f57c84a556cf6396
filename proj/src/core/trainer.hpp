#pragma once

// The fitness oracle: an MLP softmax classifier trained by minibatch SGD with
// backpropagation through an arbitrary per-class loss body.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "coeffs.hpp"
#include "data.hpp"
#include "loss.hpp"
#include "rng.hpp"

namespace glo {

struct ModelConfig {
  int input_dim = 784;
  std::vector<int> hidden_layers{128};
  int num_classes = 10;
  double dropout_probability = 0.4;  // applied after each hidden ReLU while training
  std::uint64_t weight_init_seed = 0;

  void validate() const;
};

struct TrainConfig {
  int batch_size = 100;
  double learning_rate = 0.01;
  long steps = 2000;
  long eval_every = 250;
  double clip_epsilon = 1e-7;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

enum class Failure { None, NaNDetected, MissingLeafGate, EvalInvalid, Infrastructure };

std::string_view failure_name(Failure f) noexcept;

struct FitnessReport {
  double fitness = 0.0;  // validation accuracy, 0 on any failure
  Failure failure = Failure::None;
  long steps_completed = 0;
  double wall_time_seconds = 0.0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // infrastructure failures only

  /// Equality ignoring wall time.
  bool same_outcome(const FitnessReport& other) const;
};

struct CurvePoint {
  long step = 0;
  double train_loss = 0.0;    // mean over the steps since the previous point
  double val_accuracy = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingCurve {
  std::vector<CurvePoint> points;
  /// step,train_loss,val_accuracy,test_accuracy
  std::string csv() const;
};

struct DenseLayer {
  Eigen::MatrixXf weights;  // out x in
  Eigen::VectorXf bias;
};

class Mlp {
 public:
  Mlp() = default;
  static Mlp initialize(const ModelConfig& cfg);

  int input_dim() const;
  int num_classes() const;
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  /// Inference-mode forward pass (no dropout).
  Eigen::MatrixXf logits(const FeatureMatrix& x) const;
  Eigen::MatrixXd probabilities(const FeatureMatrix& x) const;
  double accuracy(const LabeledData& data) const;

  /// Binary layout, little-endian:
  ///   char[8]  "GLOMLP\0\0"
  ///   u32      format version (1)
  ///   u32      layer count L
  ///   L x (u32 in, u32 out)
  ///   per layer: f32[out*in] weights row-major (row = output unit), f32[out] bias
  void save(const std::filesystem::path& path) const;
  static Mlp load(const std::filesystem::path& path);

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<DenseLayer> layers_;
};

struct TrainResult {
  Mlp model;
  FitnessReport report;
  TrainingCurve curve;
};

/// Minibatch SGD. The first non-finite loss or gradient stops training with
/// NaNDetected; a domain error in the loss body stops it with EvalInvalid.
TrainResult train(const ModelConfig& model, const DatasetSplit& data, const LossFunction& loss, const TrainConfig& cfg);

struct FitnessTask {
  ModelConfig model;
  std::shared_ptr<const DatasetSplit> data;
  TrainConfig train;

  /// Copy with init and minibatch seeds derived from `seed`.
  FitnessTask with_seed(std::uint64_t seed) const;
};

/// Missing-leaf gate, then a short training run; fitness is validation accuracy.
FitnessReport fitness_of(const Expr& body, const FitnessTask& task);
FitnessReport fitness_of(const CoeffExpr& body, const FitnessTask& task);

}  // namespace glo
