#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fsl/matrix.hpp"
#include "fsl/nn.hpp"

namespace fsl {

struct Dataset {
  Matrix features;           // n x d, values in [0, 1]
  std::vector<int> labels;
  int num_classes = 0;
  std::size_t image_rows = 0;  // 0 when the features are not an image
  std::size_t image_cols = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  bool is_image() const { return image_rows > 0 && image_rows * image_cols == features.cols; }

  Dataset subset(std::span<const std::size_t> indices) const;
  Batch gather(std::span<const std::size_t> indices) const;
  Batch as_batch() const;
  std::vector<std::size_t> class_counts() const;
  void validate() const;
};

// MNIST IDX pair: 0x00000803 images (n x rows x cols bytes), 0x00000801 labels.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Isotropic Gaussian blobs, one per class, around fixed centers in [0.2, 0.8]^dim.
// Samples are clamped to [0, 1]. Centers do not depend on `seed`, so train and
// test draws with different seeds share the same class geometry.
Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t dim, double spread,
                    std::uint64_t seed);

// "FSLB" cache: magic, little-endian u32 n, d, num_classes, then n*d f64
// features and n u16 labels.
void write_blob_cache(const std::filesystem::path& path, const Dataset& data);
Dataset read_blob_cache(const std::filesystem::path& path);

enum class PartitionRegime { kIid, kDirichlet };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // sorted index list per worker
  std::uint64_t seed = 0;
  PartitionRegime regime = PartitionRegime::kIid;
  double alpha = 0.0;

  std::size_t num_workers() const { return assignments.size(); }
};

PartitionPlan partition_iid(const Dataset& data, std::size_t num_workers, std::uint64_t seed);
PartitionPlan partition_dirichlet(const Dataset& data, std::size_t num_workers, double alpha,
                                  std::uint64_t seed);

}  // namespace fsl
