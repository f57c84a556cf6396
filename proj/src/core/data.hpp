#pragma once

// Dataset ingestion, deterministic splits and stratified subsampling.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace glo {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Features in [0, 1], one row per sample; labels are class indices.
struct LabeledData {
  FeatureMatrix features;
  std::vector<int> labels;

  std::size_t rows() const noexcept { return labels.size(); }
  int max_label() const;
};

struct DatasetSplit {
  LabeledData train;
  LabeledData validation;
  LabeledData test;
  int num_classes = 0;
  std::string provenance;

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(train.features.cols()); }
};

/// Malformed or inconsistent input files.
class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair (raw or gzip-compressed). Pixels are scaled
/// by 1/255 and flattened row-major.
LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Comma-separated rows, last column an integer label. A first row whose
/// fields are not all numeric is treated as a header.
LabeledData load_csv(const std::filesystem::path& path);

/// Shuffled partition into train/validation/test. Every non-empty part must
/// contain every class of the source. val_n must be positive.
DatasetSplit split(const LabeledData& data, std::size_t train_n, std::size_t val_n, std::size_t test_n,
                   std::uint64_t seed, std::string provenance = {});

/// Stratified subsample of the training part to round(portion * rows) rows;
/// validation and test are left untouched.
DatasetSplit subsample_portion(const DatasetSplit& split, double portion, std::uint64_t seed);

/// Gaussian clusters around hypercube-vertex centers 0.5 ± separation/2,
/// clamped to [0, 1]. Class c uses the bits of c (cycled across dimensions)
/// to choose its vertex, so dim must be at least ceil(log2(n_classes)).
LabeledData synth_blobs(int n_classes, int samples_per_class, int dim, double separation, double noise_sigma,
                        std::uint64_t seed);

/// Checks the shared invariants: matching row counts, finite features in
/// [0, 1], labels in [0, n). Throws DataFormatError.
void validate(const LabeledData& data, int num_classes);

}  // namespace glo
