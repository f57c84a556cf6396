#include "data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "rng.hpp"

namespace glo {

int LabeledData::max_label() const {
  return labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
}

void validate(const LabeledData& data, int num_classes) {
  if (static_cast<std::size_t>(data.features.rows()) != data.labels.size())
    throw DataFormatError("feature rows and label count differ");
  if (!data.features.allFinite()) throw DataFormatError("features contain non-finite values");
  if (data.features.size() > 0 && (data.features.minCoeff() < 0.0f || data.features.maxCoeff() > 1.0f))
    throw DataFormatError("features must lie in [0, 1]");
  for (int l : data.labels)
    if (l < 0 || l >= num_classes) throw DataFormatError("label " + std::to_string(l) + " outside [0, n)");
}

namespace {

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzFile = std::unique_ptr<gzFile_s, GzCloser>;

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path), file_(gzopen(path.string().c_str(), "rb")) {
    if (!file_) throw DataFormatError("cannot open " + path.string());
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  void read(unsigned char* dst, std::size_t n) {
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(file_.get(), dst, chunk);
      if (got <= 0) throw DataFormatError(path_.string() + ": truncated file");
      dst += got;
      n -= static_cast<std::size_t>(got);
    }
  }

 private:
  std::filesystem::path path_;
  GzFile file_;
};

}  // namespace

LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxReader img(images);
  const std::uint32_t img_magic = img.u32();
  if (img_magic != kIdxImageMagic)
    throw DataFormatError(images.string() + ": bad magic " + hex32(img_magic) + ", expected image magic " +
                          hex32(kIdxImageMagic));
  const std::uint32_t count = img.u32();
  const std::uint32_t rows = img.u32();
  const std::uint32_t cols = img.u32();

  IdxReader lab(labels);
  const std::uint32_t lab_magic = lab.u32();
  if (lab_magic != kIdxLabelMagic)
    throw DataFormatError(labels.string() + ": bad magic " + hex32(lab_magic) + ", expected label magic " +
                          hex32(kIdxLabelMagic));
  const std::uint32_t lab_count = lab.u32();
  if (lab_count != count)
    throw DataFormatError("image count " + std::to_string(count) + " does not match label count " +
                          std::to_string(lab_count));

  const std::size_t dim = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(std::size_t{count} * dim);
  img.read(pixels.data(), pixels.size());
  std::vector<unsigned char> raw_labels(count);
  lab.read(raw_labels.data(), raw_labels.size());

  LabeledData out;
  out.features.resize(count, static_cast<Eigen::Index>(dim));
  float* dst = out.features.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) dst[i] = static_cast<float>(pixels[i]) / 255.0f;
  out.labels.assign(raw_labels.begin(), raw_labels.end());
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto a = field.find_first_not_of(" \t\r");
    const auto b = field.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : field.substr(a, b - a + 1));
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

LabeledData load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t width = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) numeric &= parse_double(fields[i], values[i]);
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (fields.size() < 2) throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": need features and a label");
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                            " columns");
    const double label = values.back();
    if (label != std::floor(label) || label < 0)
      throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
    labels.push_back(static_cast<int>(label));
    values.pop_back();
    rows.push_back(std::move(values));
  }
  LabeledData out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width ? width - 1 : 0));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      out.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<float>(rows[r][c]);
  out.labels = std::move(labels);
  validate(out, out.max_label() + 1);
  return out;
}

namespace {

LabeledData take_rows(const LabeledData& src, const std::vector<std::size_t>& idx) {
  LabeledData out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), src.features.cols());
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = src.features.row(static_cast<Eigen::Index>(idx[i]));
    out.labels[i] = src.labels[idx[i]];
  }
  return out;
}

void require_all_classes(const LabeledData& part, int n, const char* name) {
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int l : part.labels) seen[static_cast<std::size_t>(l)] = true;
  for (int c = 0; c < n; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      throw std::invalid_argument(std::string(name) + " split is missing class " + std::to_string(c));
}

}  // namespace

DatasetSplit split(const LabeledData& data, std::size_t train_n, std::size_t val_n, std::size_t test_n,
                   std::uint64_t seed, std::string provenance) {
  if (val_n == 0) throw std::invalid_argument("validation split required for fitness (val_n must be > 0)");
  if (train_n == 0) throw std::invalid_argument("training split must be non-empty");
  if (train_n + val_n + test_n > data.rows())
    throw std::invalid_argument("requested " + std::to_string(train_n + val_n + test_n) + " rows but only " +
                                std::to_string(data.rows()) + " available");
  const int n = data.max_label() + 1;
  validate(data, n);

  std::vector<std::size_t> idx(data.rows());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);

  auto part = [&](std::size_t from, std::size_t count) {
    return take_rows(data, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                                    idx.begin() + static_cast<std::ptrdiff_t>(from + count)));
  };
  DatasetSplit s;
  s.train = part(0, train_n);
  s.validation = part(train_n, val_n);
  s.test = part(train_n + val_n, test_n);
  s.num_classes = n;
  s.provenance = std::move(provenance);
  require_all_classes(s.train, n, "training");
  require_all_classes(s.validation, n, "validation");
  if (test_n > 0) require_all_classes(s.test, n, "test");
  return s;
}

DatasetSplit subsample_portion(const DatasetSplit& in, double portion, std::uint64_t seed) {
  if (!(portion > 0.0 && portion <= 1.0)) throw std::invalid_argument("portion must be in (0, 1]");
  const std::size_t rows = in.train.rows();
  const std::size_t n = static_cast<std::size_t>(in.num_classes);
  const auto target = static_cast<std::size_t>(std::llround(portion * static_cast<double>(rows)));
  if (target < n) throw std::invalid_argument("portion too small: fewer rows than classes");
  if (target == rows) return in;

  std::vector<std::vector<std::size_t>> by_class(n);
  for (std::size_t i = 0; i < rows; ++i) by_class[static_cast<std::size_t>(in.train.labels[i])].push_back(i);

  // Largest-remainder allocation, at least one row per class.
  std::vector<std::size_t> take(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const double exact = static_cast<double>(target) * static_cast<double>(by_class[c].size()) / static_cast<double>(rows);
    take[c] = std::min(by_class[c].size(), static_cast<std::size_t>(std::floor(exact)));
    remainders.emplace_back(exact - std::floor(exact), c);
    assigned += take[c];
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target && k < remainders.size(); ++k) {
    const std::size_t c = remainders[k].second;
    if (take[c] < by_class[c].size()) {
      ++take[c];
      ++assigned;
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (take[c] == 0 && !by_class[c].empty()) {
      // Borrow from the largest allocation so the total stays fixed.
      auto donor = std::max_element(take.begin(), take.end()) - take.begin();
      --take[static_cast<std::size_t>(donor)];
      take[c] = 1;
    }
  }

  Rng rng(derive_seed(seed, "portion"));
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < n; ++c) {
    auto& members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[c]));
  }
  std::sort(chosen.begin(), chosen.end());

  DatasetSplit out = in;
  out.train = take_rows(in.train, chosen);
  out.provenance = in.provenance + " portion=" + std::to_string(portion);
  return out;
}

LabeledData synth_blobs(int n_classes, int samples_per_class, int dim, double separation, double noise_sigma,
                        std::uint64_t seed) {
  if (n_classes < 1 || samples_per_class < 1 || dim < 1 || !(separation >= 0.0) || !(noise_sigma >= 0.0))
    throw std::invalid_argument("synth_blobs: parameters must be positive");
  int bits = 1;
  while ((1 << bits) < n_classes) ++bits;
  if (dim < bits) throw std::invalid_argument("synth_blobs: dim too small to separate " + std::to_string(n_classes) + " classes");

  LabeledData out;
  const auto total = static_cast<Eigen::Index>(n_classes) * samples_per_class;
  out.features.resize(total, dim);
  out.labels.resize(static_cast<std::size_t>(total));
  Rng rng(derive_seed(seed, "blobs"));
  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::Index row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int s = 0; s < samples_per_class; ++s, ++row) {
      for (int d = 0; d < dim; ++d) {
        const double sign = ((c >> (d % bits)) & 1) ? 1.0 : -1.0;
        const double center = 0.5 + sign * separation / 2.0;
        const double v = center + (noise_sigma > 0.0 ? noise_sigma * noise(rng) : 0.0);
        out.features(row, d) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      out.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return out;
}

}  // namespace glo
