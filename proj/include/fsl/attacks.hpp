#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <utility>

#include "fsl/data.hpp"

namespace fsl {

enum class AttackKind { kNone, kLabelFlip, kBackdoor };

struct TriggerSpec {
  enum class Position { kBottomRight, kCustom };

  std::size_t height = 3;
  std::size_t width = 3;
  Position position = Position::kBottomRight;
  std::size_t row = 0;  // top-left corner when position is kCustom
  std::size_t col = 0;
  double value = 1.0;

  // Top-left (row, col) of the patch in an image of the given size.
  std::pair<std::size_t, std::size_t> origin(std::size_t image_rows, std::size_t image_cols) const;
  bool fits(std::size_t image_rows, std::size_t image_cols) const;
};

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  int source_class = 0;
  int target_class = 1;
  std::optional<TriggerSpec> trigger;
  double poison_fraction = 0.5;
  std::set<std::size_t> attacker_ids;
  // Threat model caps attackers at K/5; set to exceed it with a warning.
  bool allow_excess_attackers = false;
  std::size_t start_round = 0;

  // Throws ConfigError. Returns false when the attacker bound was exceeded
  // under allow_excess_attackers (the caller should warn).
  bool validate(std::size_t num_workers, int num_classes) const;
  bool is_attacker(std::size_t worker) const { return attacker_ids.contains(worker); }
};

Dataset flip_labels(Dataset data, int source_class, int target_class);

Dataset embed_backdoor(Dataset data, int source_class, int target_class, const TriggerSpec& trigger,
                       double poison_fraction, std::uint64_t seed);

void stamp_trigger(std::span<double> image, std::size_t image_rows, std::size_t image_cols,
                   const TriggerSpec& trigger);

// Every test example of true class `source_class`, trigger stamped, original
// labels kept.
Batch make_backdoor_testset(const Dataset& test, int source_class, const TriggerSpec& trigger);

}  // namespace fsl
