#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fsl/data.hpp"
#include "fsl/errors.hpp"

using namespace fsl;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

fs::path write_bytes(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const auto p = fs::temp_directory_path() / ("fsl_test_" + name);
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
  return p;
}

// 3 images of 2x2 pixels with labels 0, 2, 1.
std::pair<fs::path, fs::path> fixture(const std::string& tag, std::uint32_t image_magic = 0x803,
                                      std::size_t drop_bytes = 0, std::uint32_t label_count = 3,
                                      bool trailing = false) {
  std::vector<std::uint8_t> img;
  put_u32(img, image_magic);
  put_u32(img, 3);
  put_u32(img, 2);
  put_u32(img, 2);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i * 20));
  img.resize(img.size() - drop_bytes);
  if (trailing) img.push_back(7);
  std::vector<std::uint8_t> lab;
  put_u32(lab, 0x801);
  put_u32(lab, label_count);
  for (std::uint8_t y : {0, 2, 1}) lab.push_back(y);
  return {write_bytes(tag + "_img", img), write_bytes(tag + "_lab", lab)};
}

}  // namespace

TEST_CASE("load_idx decodes a byte fixture") {
  const auto [img, lab] = fixture("ok");
  const auto d = load_idx(img, lab);
  CHECK(d.size() == 3);
  CHECK(d.dim() == 4);
  CHECK(d.image_rows == 2);
  CHECK(d.is_image());
  CHECK(d.num_classes == 3);
  CHECK(d.labels == std::vector<int>{0, 2, 1});
  CHECK(d.features(0, 1) == 20.0 / 255.0);
  CHECK(d.features(2, 3) == 220.0 / 255.0);
}

TEST_CASE("load_idx reports each format failure distinctly") {
  auto kind_of = [](const fs::path& a, const fs::path& b) {
    try {
      load_idx(a, b);
    } catch (const ParseError& e) {
      return e.kind();
    }
    FAIL("expected ParseError");
    return ParseError::Kind::kSyntax;
  };
  {
    const auto [img, lab] = fixture("magic", 0x804);
    CHECK(kind_of(img, lab) == ParseError::Kind::kUnexpectedMagic);
    try {
      load_idx(img, lab);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("0x00000804") != std::string::npos);
    }
  }
  {
    const auto [img, lab] = fixture("trunc", 0x803, 5);
    CHECK(kind_of(img, lab) == ParseError::Kind::kTruncated);
  }
  {
    const auto [img, lab] = fixture("count", 0x803, 0, 4);
    CHECK(kind_of(img, lab) != ParseError::Kind::kUnexpectedMagic);
  }
  {
    const auto [img, lab] = fixture("trail", 0x803, 0, 3, true);
    CHECK(kind_of(img, lab) == ParseError::Kind::kCountMismatch);
  }
  CHECK_THROWS_AS(load_idx("/nonexistent/a", "/nonexistent/b"), IoError);
}

TEST_CASE("bundled MNIST subset loads") {
  const fs::path dir = fs::path(FSL_SOURCE_DIR) / "data" / "mnist";
  const auto test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  CHECK(test.size() == 1000);
  CHECK(test.num_classes == 10);
  CHECK(test.image_rows == 28);
  CHECK(test.class_counts() == std::vector<std::size_t>{111, 113, 97, 102, 104, 91, 102, 106, 85, 89});
}

TEST_CASE("synth_blobs is deterministic and shares centers across seeds") {
  const auto a = synth_blobs(4, 10, 6, 0.1, 1);
  const auto b = synth_blobs(4, 10, 6, 0.1, 1);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  const auto c0 = synth_blobs(4, 1, 6, 0.0, 1);
  const auto c1 = synth_blobs(4, 1, 6, 0.0, 2);
  CHECK(c0.features == c1.features);
  for (double v : a.features.data) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(a.class_counts() == std::vector<std::size_t>(4, 10));
}

TEST_CASE("blob cache round trip") {
  const auto a = synth_blobs(3, 5, 4, 0.2, 3);
  const auto p = fs::temp_directory_path() / "fsl_test_cache.fslb";
  write_blob_cache(p, a);
  const auto b = read_blob_cache(p);
  CHECK(b.features == a.features);
  CHECK(b.labels == a.labels);
  CHECK(b.num_classes == a.num_classes);
  const auto [img, lab] = fixture("notblob");
  CHECK_THROWS_AS(read_blob_cache(img), ParseError);
}

namespace {

void check_exact_partition(const PartitionPlan& plan, std::size_t n) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& a : plan.assignments) {
    CHECK(std::is_sorted(a.begin(), a.end()));
    total += a.size();
    seen.insert(a.begin(), a.end());
  }
  CHECK(total == n);
  CHECK(seen.size() == n);
  CHECK(*seen.rbegin() == n - 1);
}

}  // namespace

TEST_CASE("iid partition is an exact near-equal split") {
  const auto d = synth_blobs(5, 21, 3, 0.1, 1);
  for (std::size_t k : {1, 4, 7, 20}) {
    const auto plan = partition_iid(d, k, 5);
    check_exact_partition(plan, d.size());
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& a : plan.assignments) {
      lo = std::min(lo, a.size());
      hi = std::max(hi, a.size());
    }
    CHECK(hi - lo <= 1);
  }
  CHECK(partition_iid(d, 4, 5).assignments == partition_iid(d, 4, 5).assignments);
  CHECK_THROWS_AS(partition_iid(d, d.size() + 1, 5), InputError);
}

TEST_CASE("dirichlet partition is exact, deterministic and never leaves a worker empty") {
  const auto d = synth_blobs(10, 30, 3, 0.1, 1);
  for (double alpha : {0.05, 1.0, 100.0}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto plan = partition_dirichlet(d, 20, alpha, seed);
      check_exact_partition(plan, d.size());
      for (const auto& a : plan.assignments) CHECK_FALSE(a.empty());
    }
  }
  CHECK(partition_dirichlet(d, 5, 1.0, 3).assignments == partition_dirichlet(d, 5, 1.0, 3).assignments);
  CHECK_THROWS_AS(partition_dirichlet(d, 5, 0.0, 3), InputError);
}

TEST_CASE("large alpha approaches the global class proportions") {
  const auto d = synth_blobs(5, 400, 2, 0.1, 1);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto plan = partition_dirichlet(d, 4, 1e6, seed);
    for (const auto& a : plan.assignments) {
      std::vector<double> counts(5, 0.0);
      for (std::size_t i : a) counts[static_cast<std::size_t>(d.labels[i])] += 1.0;
      for (double c : counts) CHECK(std::fabs(c / static_cast<double>(a.size()) - 0.2) <= 0.05);
    }
  }
}
