#include "fsl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fsl/errors.hpp"

namespace fsl {

std::pair<std::size_t, std::size_t> TriggerSpec::origin(std::size_t image_rows, std::size_t image_cols) const {
  if (position == Position::kCustom) return {row, col};
  return {image_rows - height, image_cols - width};
}

bool TriggerSpec::fits(std::size_t image_rows, std::size_t image_cols) const {
  if (height == 0 || width == 0 || height > image_rows || width > image_cols) return false;
  if (position == Position::kBottomRight) return true;
  return row + height <= image_rows && col + width <= image_cols;
}

bool AttackConfig::validate(std::size_t num_workers, int num_classes) const {
  if (kind == AttackKind::kNone) return true;
  if (source_class == target_class) throw ConfigError("attack source and target class must differ");
  for (int c : {source_class, target_class}) {
    if (c < 0 || c >= num_classes) throw ConfigError("attack class " + std::to_string(c) + " outside the label set");
  }
  if (kind == AttackKind::kBackdoor && !trigger) throw ConfigError("trigger required for a backdoor attack");
  if (kind == AttackKind::kBackdoor && !(poison_fraction > 0.0 && poison_fraction <= 1.0)) {
    throw ConfigError("poison_fraction must lie in (0, 1]");
  }
  for (std::size_t id : attacker_ids) {
    if (id >= num_workers) throw ConfigError("attacker id " + std::to_string(id) + " is not a worker");
  }
  if (attacker_ids.size() * 5 > num_workers) {
    if (!allow_excess_attackers) {
      throw ConfigError(std::to_string(attacker_ids.size()) + " attackers exceed the K/5 threat-model bound (K = " +
                        std::to_string(num_workers) + ")");
    }
    return false;
  }
  return true;
}

Dataset flip_labels(Dataset data, int source_class, int target_class) {
  for (int& y : data.labels) {
    if (y == source_class) y = target_class;
  }
  return data;
}

void stamp_trigger(std::span<double> image, std::size_t image_rows, std::size_t image_cols,
                   const TriggerSpec& trigger) {
  if (image.size() != image_rows * image_cols || !trigger.fits(image_rows, image_cols)) {
    throw InputError("trigger does not fit inside the image");
  }
  const auto [r0, c0] = trigger.origin(image_rows, image_cols);
  for (std::size_t r = r0; r < r0 + trigger.height; ++r) {
    for (std::size_t c = c0; c < c0 + trigger.width; ++c) image[r * image_cols + c] = trigger.value;
  }
}

Dataset embed_backdoor(Dataset data, int source_class, int target_class, const TriggerSpec& trigger,
                       double poison_fraction, std::uint64_t seed) {
  if (!data.is_image()) throw InputError("backdoor triggers need image-shaped features");
  if (!trigger.fits(data.image_rows, data.image_cols)) throw InputError("trigger does not fit inside the image");
  if (!(poison_fraction > 0.0 && poison_fraction <= 1.0)) throw InputError("poison_fraction must lie in (0, 1]");

  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == source_class) sources.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(sources.begin(), sources.end(), rng);
  const auto count = std::min(sources.size(), static_cast<std::size_t>(std::llround(poison_fraction * static_cast<double>(sources.size()))));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = sources[k];
    stamp_trigger(data.features.row(i), data.image_rows, data.image_cols, trigger);
    data.labels[i] = target_class;
  }
  return data;
}

Batch make_backdoor_testset(const Dataset& test, int source_class, const TriggerSpec& trigger) {
  if (!test.is_image()) throw InputError("backdoor triggers need image-shaped features");
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == source_class) picked.push_back(i);
  }
  if (picked.empty()) throw InputError("test set has no examples of the source class");
  Batch batch = test.gather(picked);
  for (std::size_t r = 0; r < batch.inputs.rows; ++r) {
    stamp_trigger(batch.inputs.row(r), test.image_rows, test.image_cols, trigger);
  }
  return batch;
}

}  // namespace fsl
