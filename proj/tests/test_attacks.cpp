#include "doctest.h"
#include "fsl/attacks.hpp"
#include "fsl/errors.hpp"

using namespace fsl;

namespace {

// n blank 4x4 images with labels cycling through 0..2.
Dataset tiny_images(std::size_t n) {
  Dataset d;
  d.features = Matrix(n, 16);
  d.num_classes = 3;
  d.image_rows = 4;
  d.image_cols = 4;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % 3));
  return d;
}

}  // namespace

TEST_CASE("label flip rewrites only the source class") {
  const auto d = tiny_images(9);
  const auto f = flip_labels(d, 1, 2);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(f.labels[i] == (d.labels[i] == 1 ? 2 : d.labels[i]));
  CHECK(f.features == d.features);
}

TEST_CASE("trigger geometry") {
  TriggerSpec t;
  CHECK(t.origin(28, 28) == std::pair<std::size_t, std::size_t>{25, 25});
  CHECK(t.fits(3, 3));
  CHECK_FALSE(t.fits(2, 3));
  TriggerSpec c;
  c.position = TriggerSpec::Position::kCustom;
  c.row = 1;
  c.col = 2;
  CHECK(c.fits(4, 5));
  CHECK_FALSE(c.fits(4, 4));

  std::vector<double> img(16, 0.0);
  stamp_trigger(img, 4, 4, TriggerSpec{});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t col = 0; col < 4; ++col) CHECK(img[r * 4 + col] == ((r >= 1 && col >= 1) ? 1.0 : 0.0));
  }
  CHECK_THROWS_AS(stamp_trigger(img, 4, 4, c), InputError);
}

TEST_CASE("embed_backdoor poisons a seeded share of source examples") {
  const auto d = tiny_images(30);  // 10 per class
  SUBCASE("full poisoning") {
    const auto p = embed_backdoor(d, 1, 0, TriggerSpec{}, 1.0, 5);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] == 1) {
        CHECK(p.labels[i] == 0);
        CHECK(p.features(i, 15) == 1.0);
      } else {
        CHECK(p.labels[i] == d.labels[i]);
        CHECK(p.features(i, 15) == 0.0);
      }
    }
  }
  SUBCASE("half poisoning keeps the rest clean") {
    const auto p = embed_backdoor(d, 1, 0, TriggerSpec{}, 0.5, 5);
    std::size_t poisoned = 0, clean_source = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] != 1) continue;
      const bool stamped = p.features(i, 15) == 1.0;
      CHECK(stamped == (p.labels[i] == 0));
      poisoned += stamped;
      clean_source += p.labels[i] == 1;
    }
    CHECK(poisoned == 5);
    CHECK(clean_source == 5);
    CHECK(embed_backdoor(d, 1, 0, TriggerSpec{}, 0.5, 5).labels == p.labels);
  }
  CHECK_THROWS_AS(embed_backdoor(d, 1, 0, TriggerSpec{}, 0.0, 5), InputError);
}

TEST_CASE("backdoor test set stamps every source example and keeps labels") {
  const auto d = tiny_images(12);
  const auto b = make_backdoor_testset(d, 2, TriggerSpec{});
  CHECK(b.labels == std::vector<int>(4, 2));
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.inputs(i, 5) == 1.0);
  Dataset none = tiny_images(2);  // classes 0 and 1 only
  CHECK_THROWS_AS(make_backdoor_testset(none, 2, TriggerSpec{}), InputError);
}

TEST_CASE("attack config validation") {
  AttackConfig a;
  a.kind = AttackKind::kLabelFlip;
  a.source_class = 4;
  a.target_class = 9;
  a.attacker_ids = {0, 1, 2, 3};
  CHECK(a.validate(20, 10));
  a.attacker_ids.insert(4);
  CHECK_THROWS_AS(a.validate(20, 10), ConfigError);
  a.allow_excess_attackers = true;
  CHECK_FALSE(a.validate(20, 10));
  a.target_class = 4;
  CHECK_THROWS_AS(a.validate(20, 10), ConfigError);
  AttackConfig b;
  b.kind = AttackKind::kBackdoor;
  b.attacker_ids = {0};
  CHECK_THROWS_AS(b.validate(20, 10), ConfigError);
}
