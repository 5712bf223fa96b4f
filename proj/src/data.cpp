#include "fsl/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/seeds.hpp"

namespace fsl {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr char kBlobMagic[4] = {'F', 'S', 'L', 'B'};
constexpr std::uint64_t kCenterSeed = 0x5eed'ce17e5ULL;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw ParseError(ParseError::Kind::kTruncated, path.string() + ": truncated header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ": unexpected magic 0x%08x (expected 0x%08x)", got, want);
    throw ParseError(ParseError::Kind::kUnexpectedMagic, path.string() + buf);
  }
}

void expect_payload(std::size_t have, std::size_t header, std::size_t payload,
                    const std::filesystem::path& path) {
  if (have < header + payload) {
    throw ParseError(ParseError::Kind::kTruncated,
                     path.string() + ": truncated payload (" + std::to_string(have - header) + " of " +
                         std::to_string(payload) + " bytes)");
  }
  if (have > header + payload) {
    throw ParseError(ParseError::Kind::kCountMismatch, path.string() + ": trailing bytes after payload");
  }
}

template <typename T>
void put_le(std::ofstream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get_le(const std::vector<unsigned char>& bytes, std::size_t& offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + sizeof(T)) {
    throw ParseError(ParseError::Kind::kTruncated, path.string() + ": truncated blob cache");
  }
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof value);
  offset += sizeof value;
  return value;
}

// Hamilton / largest-remainder apportionment of `total` items by `shares`.
// Ties in the fractional part go to the lower worker index.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& shares) {
  const std::size_t k = shares.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = shares[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // Floating-point shares can sum slightly above 1.
  while (assigned > total) {
    const auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k, ++assigned) ++counts[order[i]];
  return counts;
}

void finish_plan(PartitionPlan& plan) {
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.image_rows = image_rows;
  out.image_cols = image_cols;
  out.features = Matrix(indices.size(), features.cols);
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features.row(indices[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  batch.inputs = Matrix(indices.size(), features.cols);
  batch.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features.row(indices[r]);
    std::copy(src.begin(), src.end(), batch.inputs.row(r).begin());
    batch.labels.push_back(labels[indices[r]]);
  }
  return batch;
}

Batch Dataset::as_batch() const { return Batch{features, labels}; }

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (features.rows != labels.size()) throw InputError("feature rows and labels differ in count");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " outside [0, num_classes)");
  }
  for (double v : features.data) {
    if (!std::isfinite(v)) throw InputError("dataset contains a non-finite feature");
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  expect_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  expect_payload(img.size(), 16, n * rows * cols, images_path);

  expect_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  expect_payload(lab.size(), 8, n_labels, labels_path);

  if (n != n_labels) {
    throw ParseError(ParseError::Kind::kCountMismatch,
                     "image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels));
  }
  if (n == 0) throw ParseError(ParseError::Kind::kCountMismatch, images_path.string() + ": no images");

  Dataset data;
  data.image_rows = rows;
  data.image_cols = cols;
  data.features = Matrix(n, rows * cols);
  for (std::size_t i = 0; i < n * rows * cols; ++i) data.features.data[i] = img[16 + i] / 255.0;
  data.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = lab[8 + i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = max_label + 1;
  return data;
}

Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || dim < 1) throw InputError("synth_blobs: counts must be >= 1");
  if (spread < 0.0) throw InputError("synth_blobs: spread must be >= 0");

  std::mt19937_64 center_rng(kCenterSeed);
  std::uniform_real_distribution<double> center_dist(0.2, 0.8);
  Matrix centers(static_cast<std::size_t>(num_classes), dim);
  for (auto& v : centers.data) v = center_dist(center_rng);

  auto rng = make_rng(seed, Stream::kSynthData);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.num_classes = num_classes;
  data.features = Matrix(static_cast<std::size_t>(num_classes) * per_class, dim);
  data.labels.reserve(data.features.rows);
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto center = centers.row(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      auto x = data.features.row(r);
      for (std::size_t j = 0; j < dim; ++j) {
        const double z = noise(rng);
        x[j] = spread == 0.0 ? center[j] : std::clamp(center[j] + spread * z, 0.0, 1.0);
      }
      data.labels.push_back(c);
    }
  }
  return data;
}

void write_blob_cache(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kBlobMagic, 4);
  put_le(out, static_cast<std::uint32_t>(data.size()));
  put_le(out, static_cast<std::uint32_t>(data.dim()));
  put_le(out, static_cast<std::uint32_t>(data.num_classes));
  for (double v : data.features.data) put_le(out, v);
  for (int y : data.labels) put_le(out, static_cast<std::uint16_t>(y));
  if (!out) throw IoError("write failed: " + path.string());
}

Dataset read_blob_cache(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kBlobMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::kUnexpectedMagic, path.string() + ": unexpected magic (want FSLB)");
  }
  std::size_t offset = 4;
  const std::size_t n = get_le<std::uint32_t>(bytes, offset, path);
  const std::size_t d = get_le<std::uint32_t>(bytes, offset, path);
  Dataset data;
  data.num_classes = static_cast<int>(get_le<std::uint32_t>(bytes, offset, path));
  expect_payload(bytes.size(), offset, n * d * 8 + n * 2, path);
  data.features = Matrix(n, d);
  for (auto& v : data.features.data) v = get_le<double>(bytes, offset, path);
  data.labels.resize(n);
  for (auto& y : data.labels) y = get_le<std::uint16_t>(bytes, offset, path);
  return data;
}

PartitionPlan partition_iid(const Dataset& data, std::size_t num_workers, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (num_workers == 0) throw InputError("partition_iid: need at least one worker");
  if (num_workers > n) {
    throw InputError("partition_iid: " + std::to_string(num_workers) + " workers for " + std::to_string(n) + " examples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, Stream::kPartition);
  std::shuffle(order.begin(), order.end(), rng);

  PartitionPlan plan;
  plan.seed = seed;
  plan.regime = PartitionRegime::kIid;
  plan.assignments.resize(num_workers);
  const std::size_t base = n / num_workers, extra = n % num_workers;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < num_workers; ++k) {
    const std::size_t take = base + (k < extra ? 1 : 0);
    plan.assignments[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  finish_plan(plan);
  return plan;
}

PartitionPlan partition_dirichlet(const Dataset& data, std::size_t num_workers, double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InputError("partition_dirichlet: alpha must be > 0");
  if (num_workers == 0) throw InputError("partition_dirichlet: need at least one worker");
  if (num_workers > data.size()) {
    throw InputError("partition_dirichlet: " + std::to_string(num_workers) + " workers for " +
                     std::to_string(data.size()) + " examples");
  }

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  PartitionPlan plan;
  plan.seed = seed;
  plan.regime = PartitionRegime::kDirichlet;
  plan.alpha = alpha;
  plan.assignments.resize(num_workers);

  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    auto rng = make_rng(seed, Stream::kDirichlet, c);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> shares(num_workers);
    double sum = 0.0;
    for (auto& s : shares) {
      s = gamma(rng);
      sum += s;
    }
    if (sum > 0.0) {
      for (auto& s : shares) s /= sum;
    } else {
      // Every draw underflowed (tiny alpha): the limit is a point mass.
      std::uniform_int_distribution<std::size_t> pick(0, num_workers - 1);
      std::fill(shares.begin(), shares.end(), 0.0);
      shares[pick(rng)] = 1.0;
    }
    const auto counts = largest_remainder(members.size(), shares);
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_workers; ++k) {
      auto& dst = plan.assignments[k];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                 members.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }

  // Give every empty worker one example taken from the currently largest one.
  for (auto& worker : plan.assignments) {
    if (!worker.empty()) continue;
    auto largest = std::max_element(plan.assignments.begin(), plan.assignments.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    worker.push_back(largest->back());
    largest->pop_back();
  }
  finish_plan(plan);
  return plan;
}

}  // namespace fsl
