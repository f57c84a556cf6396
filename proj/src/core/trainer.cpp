#include "trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace glo {

void ModelConfig::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("model.input_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("model.num_classes must be at least 2");
  for (int w : hidden_layers)
    if (w <= 0) throw std::invalid_argument("model.hidden_layers widths must be positive");
  if (!(dropout_probability >= 0.0 && dropout_probability < 1.0))
    throw std::invalid_argument("model.dropout_probability must lie in [0, 1)");
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("train.batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train.learning_rate must be positive and finite");
  if (steps <= 0) throw std::invalid_argument("train.steps must be positive");
  if (eval_every <= 0) throw std::invalid_argument("train.eval_every must be positive");
  if (!(clip_epsilon > 0.0 && clip_epsilon <= 0.01))
    throw std::invalid_argument("train.clip_epsilon must lie in (0, 0.01]");
}

std::string_view failure_name(Failure f) noexcept {
  switch (f) {
    case Failure::None: return "None";
    case Failure::NaNDetected: return "NaNDetected";
    case Failure::MissingLeafGate: return "MissingLeafGate";
    case Failure::EvalInvalid: return "EvalInvalid";
    case Failure::Infrastructure: return "Infrastructure";
  }
  return "Unknown";
}

namespace {

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

bool FitnessReport::same_outcome(const FitnessReport& o) const {
  return same_double(fitness, o.fitness) && failure == o.failure && steps_completed == o.steps_completed &&
         same_double(final_train_loss, o.final_train_loss) && same_double(test_accuracy, o.test_accuracy) &&
         error == o.error;
}

std::string TrainingCurve::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,train_loss,val_accuracy,test_accuracy\n";
  for (const auto& p : points) {
    os << p.step << ',' << p.train_loss << ',' << p.val_accuracy << ',';
    if (!std::isnan(p.test_accuracy)) os << p.test_accuracy;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Mlp

Mlp Mlp::initialize(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.weight_init_seed);
  Mlp m;
  int in = cfg.input_dim;
  std::vector<int> widths = cfg.hidden_layers;
  widths.push_back(cfg.num_classes);
  for (int out : widths) {
    // He-normal.
    std::normal_distribution<float> nd(0.0f, static_cast<float>(std::sqrt(2.0 / in)));
    DenseLayer l;
    l.weights.resize(out, in);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = nd(rng);
    l.bias = Eigen::VectorXf::Zero(out);
    m.layers_.push_back(std::move(l));
    in = out;
  }
  return m;
}

int Mlp::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weights.cols()); }
int Mlp::num_classes() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weights.rows()); }

Eigen::MatrixXf Mlp::logits(const FeatureMatrix& x) const {
  if (layers_.empty()) throw std::logic_error("Mlp::logits on an empty model");
  if (x.cols() != input_dim()) throw std::invalid_argument("Mlp::logits: feature width does not match the model");
  Eigen::MatrixXf a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXf z = a * layers_[i].weights.transpose();
    z.rowwise() += layers_[i].bias.transpose();
    if (i + 1 < layers_.size()) z = z.cwiseMax(0.0f);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::probabilities(const FeatureMatrix& x) const {
  return softmax_rows(logits(x).cast<double>());
}

double Mlp::accuracy(const LabeledData& data) const {
  if (data.rows() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  const Eigen::MatrixXf z = logits(data.features);
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index arg = 0;
    z.row(r).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.rows());
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& la = a.layers_[i];
    const auto& lb = b.layers_[i];
    if (la.weights.rows() != lb.weights.rows() || la.weights.cols() != lb.weights.cols()) return false;
    if (la.weights != lb.weights || la.bias != lb.bias) return false;
  }
  return true;
}

namespace {

constexpr char kModelMagic[8] = {'G', 'L', 'O', 'M', 'L', 'P', '\0', '\0'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataFormatError("model file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace

void Mlp::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kModelMagic, sizeof kModelMagic);
  put_u32(os, kModelVersion);
  put_u32(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    put_u32(os, static_cast<std::uint32_t>(l.weights.cols()));
    put_u32(os, static_cast<std::uint32_t>(l.weights.rows()));
  }
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) put_f32(os, l.weights(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_f32(os, l.bias(r));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Mlp Mlp::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0)
    throw DataFormatError(path.string() + ": not a model file (bad magic)");
  const std::uint32_t version = get_u32(is);
  if (version != kModelVersion)
    throw DataFormatError(path.string() + ": unsupported model version " + std::to_string(version));
  const std::uint32_t n = get_u32(is);
  if (n == 0 || n > 64) throw DataFormatError(path.string() + ": implausible layer count");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t in = get_u32(is);
    const std::uint32_t out = get_u32(is);
    if (in == 0 || out == 0 || in > (1u << 24) || out > (1u << 24))
      throw DataFormatError(path.string() + ": implausible layer shape");
    if (i > 0 && in != shapes.back().second) throw DataFormatError(path.string() + ": layer shapes do not chain");
    shapes.emplace_back(in, out);
  }
  Mlp m;
  for (auto [in, out] : shapes) {
    DenseLayer l;
    l.weights.resize(out, in);
    l.bias.resize(out);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = get_f32(is);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = get_f32(is);
    m.layers_.push_back(std::move(l));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataFormatError(path.string() + ": trailing bytes");
  return m;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Workspace {
  Eigen::MatrixXf x;                  // batch x input
  std::vector<Eigen::MatrixXf> z;     // pre-activations per layer
  std::vector<Eigen::MatrixXf> a;     // post-activation (after dropout) per hidden layer
  std::vector<Eigen::MatrixXf> mask;  // dropout scale per hidden layer
  Eigen::MatrixXd logits;
  Eigen::MatrixXd grad;
  Eigen::MatrixXf delta;
  HeadWorkspace head;
  std::vector<int> labels;
};

}  // namespace

TrainResult train(const ModelConfig& mcfg, const DatasetSplit& data, const LossFunction& loss, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  if (static_cast<int>(data.input_dim()) != mcfg.input_dim)
    throw std::invalid_argument("train: data input width " + std::to_string(data.input_dim()) +
                                " does not match model.input_dim " + std::to_string(mcfg.input_dim));
  if (data.num_classes != mcfg.num_classes)
    throw std::invalid_argument("train: data has " + std::to_string(data.num_classes) + " classes, model has " +
                                std::to_string(mcfg.num_classes));
  if (data.train.rows() == 0 || data.validation.rows() == 0)
    throw std::invalid_argument("train: training and validation parts must be non-empty");

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  res.model = Mlp::initialize(mcfg);
  auto& layers = res.model.layers();
  const std::size_t nl = layers.size();
  const bool has_test = data.test.rows() > 0;

  Rng rng(cfg.rng_seed);
  const std::size_t n_train = data.train.rows();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n_train);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  const float keep = static_cast<float>(1.0 - mcfg.dropout_probability);
  const float lr = static_cast<float>(cfg.learning_rate);

  Workspace ws;
  ws.z.resize(nl);
  ws.a.resize(nl);
  ws.mask.resize(nl);
  ws.x.resize(static_cast<Eigen::Index>(bs), mcfg.input_dim);
  ws.labels.resize(bs);

  double loss_since = 0.0;
  long steps_since = 0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();

  auto fail = [&](Failure f) {
    res.report.failure = f;
    res.report.fitness = 0.0;
  };

  for (long step = 1; step <= cfg.steps; ++step) {
    for (std::size_t i = 0; i < bs; ++i) {
      if (cursor == n_train) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t r = order[cursor++];
      ws.x.row(static_cast<Eigen::Index>(i)) = data.train.features.row(static_cast<Eigen::Index>(r));
      ws.labels[i] = data.train.labels[r];
    }

    // Forward.
    const Eigen::MatrixXf* in = &ws.x;
    for (std::size_t l = 0; l < nl; ++l) {
      ws.z[l].noalias() = *in * layers[l].weights.transpose();
      ws.z[l].rowwise() += layers[l].bias.transpose();
      if (l + 1 == nl) break;
      ws.a[l] = ws.z[l].cwiseMax(0.0f);
      if (keep < 1.0f) {
        ws.mask[l].resize(ws.a[l].rows(), ws.a[l].cols());
        for (Eigen::Index c = 0; c < ws.mask[l].cols(); ++c)
          for (Eigen::Index r = 0; r < ws.mask[l].rows(); ++r)
            ws.mask[l](r, c) = uniform01(rng) < keep ? 1.0f / keep : 0.0f;
        ws.a[l].array() *= ws.mask[l].array();
      }
      in = &ws.a[l];
    }
    ws.logits = ws.z[nl - 1].cast<double>();

    double lv = 0.0;
    const HeadStatus hs = loss_head(loss, ws.logits, ws.labels, cfg.clip_epsilon, lv, &ws.grad, ws.head);
    if (hs == HeadStatus::NonFinite) {
      fail(Failure::NaNDetected);
      break;
    }
    if (hs == HeadStatus::Invalid) {
      fail(Failure::EvalInvalid);
      break;
    }

    // Backward; the update of layer l happens after its delta has been propagated.
    ws.delta = ws.grad.cast<float>();
    for (std::size_t l = nl; l-- > 0;) {
      const Eigen::MatrixXf& input = l == 0 ? ws.x : ws.a[l - 1];
      Eigen::MatrixXf prev;
      if (l > 0) {
        prev.noalias() = ws.delta * layers[l].weights;
        prev.array() *= (ws.z[l - 1].array() > 0.0f).cast<float>();
        if (keep < 1.0f) prev.array() *= ws.mask[l - 1].array();
      }
      layers[l].weights.noalias() -= lr * (ws.delta.transpose() * input);
      layers[l].bias.noalias() -= lr * ws.delta.colwise().sum().transpose();
      if (l > 0) ws.delta = std::move(prev);
    }

    res.report.steps_completed = step;
    last_loss = lv;
    loss_since += lv;
    ++steps_since;

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      bool finite = true;
      for (const auto& l : layers) finite = finite && l.weights.allFinite() && l.bias.allFinite();
      if (!finite) {
        fail(Failure::NaNDetected);
        break;
      }
      CurvePoint p;
      p.step = step;
      p.train_loss = loss_since / static_cast<double>(steps_since);
      p.val_accuracy = res.model.accuracy(data.validation);
      if (has_test) p.test_accuracy = res.model.accuracy(data.test);
      res.curve.points.push_back(p);
      loss_since = 0.0;
      steps_since = 0;
    }
  }

  res.report.final_train_loss = last_loss;
  if (res.report.failure == Failure::None) {
    res.report.fitness = res.curve.points.back().val_accuracy;
    res.report.test_accuracy = res.curve.points.back().test_accuracy;
  }
  res.report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

FitnessTask FitnessTask::with_seed(std::uint64_t seed) const {
  FitnessTask t = *this;
  t.model.weight_init_seed = derive_seed(seed, "init");
  t.train.rng_seed = derive_seed(seed, "minibatch");
  return t;
}

namespace {

FitnessReport gated(const FitnessTask& task, const Expr& gate_on, const Expr& body) {
  if (!task.data) throw std::invalid_argument("fitness task has no dataset");
  if (!contains_required_leaves(gate_on)) {
    FitnessReport r;
    r.failure = Failure::MissingLeafGate;
    return r;
  }
  return train(task.model, *task.data, LossFunction(body), task.train).report;
}

}  // namespace

FitnessReport fitness_of(const Expr& body, const FitnessTask& task) { return gated(task, body, body); }

FitnessReport fitness_of(const CoeffExpr& body, const FitnessTask& task) {
  body.validate();
  return gated(task, body.base, expand(body));
}

}  // namespace glo
