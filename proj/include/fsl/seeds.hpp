#pragma once

#include <cstdint>
#include <random>

namespace fsl {

// Purpose tags for independent random streams. Enabling an attack or changing
// the defense never shifts the draws of another stream.
enum class Stream : std::uint32_t {
  kInit = 1,
  kPartition = 2,
  kSelection = 3,
  kShuffle = 4,
  kAttack = 5,
  kSynthData = 6,
  kSynthTest = 7,
  kDirichlet = 8,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::mt19937_64 make_rng(std::uint64_t base, Stream stream, std::uint64_t a = 0,
                                std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(base, stream, a, b));
}

}  // namespace fsl
