#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "seadet/anchors.hpp"

using namespace seadet;

TEST_CASE("shape distance is co-centered jaccard") {
  CHECK(shape_jaccard_distance({10, 20}, {10, 20}) == doctest::Approx(0.0));
  // 100x50 vs 50x100: intersection 2500, union 7500
  CHECK(shape_jaccard_distance({100, 50}, {50, 100}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(shape_jaccard_distance({0, 5}, {1, 1}), Error);
}

TEST_CASE("clustering handles the degenerate layouts") {
  CHECK_THROWS_AS(cluster_anchor_shapes({}, 1, 0), Error);
  CHECK_THROWS_AS(cluster_anchor_shapes({{4, 4}}, 2, 0), Error);

  auto one = cluster_anchor_shapes({{30, 60}}, 1, 7);
  REQUIRE(one.size() == 1);
  CHECK(one[0].width == doctest::Approx(30));
  CHECK(one[0].height == doctest::Approx(60));

  // k = n with distinct boxes: every box its own centroid, zero objective
  std::vector<AnchorShape> boxes = {{10, 10}, {40, 10}, {10, 40}, {80, 80}};
  auto full = cluster_anchor_shapes(boxes, 4, 3);
  CHECK(clustering_objective(boxes, full) == doctest::Approx(0.0));

  // two tight groups, k = 2: centroids recover the group shapes
  std::vector<AnchorShape> groups = {{10, 10}, {10, 10}, {10, 10}, {90, 45}, {90, 45}};
  auto two = cluster_anchor_shapes(groups, 2, 11);
  REQUIRE(two.size() == 2);
  const bool small_first = two[0].width < two[1].width;
  const AnchorShape& a = small_first ? two[0] : two[1];
  const AnchorShape& b = small_first ? two[1] : two[0];
  CHECK(a.width == doctest::Approx(10));
  CHECK(a.height == doctest::Approx(10));
  CHECK(b.width == doctest::Approx(90));
  CHECK(b.height == doctest::Approx(45));
}

TEST_CASE("clustering matches the exhaustive-partition optimum on small instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(mix_seed(9000, seed));
    const int n = rng.uniform_int(2, 8);
    const int k = rng.uniform_int(1, 2);
    std::vector<AnchorShape> boxes;
    for (int i = 0; i < n; ++i)
      boxes.push_back({rng.uniform(5.0, 100.0), rng.uniform(5.0, 100.0)});
    auto centroids = cluster_anchor_shapes(boxes, k, seed);
    const double got = clustering_objective(boxes, centroids);
    const double want = oracle::exhaustive_partition_optimum(boxes, k);
    CHECK(std::abs(got - want) <= 1e-12);
  }
}

TEST_CASE("merge_scales follows the run-and-average sweep") {
  CHECK(merge_scales({}, 1.25).empty());

  auto m = merge_scales({0.8, 0.9}, 1.25);
  REQUIRE(m.size() == 1);
  CHECK(m[0] == doctest::Approx(0.85).epsilon(1e-12));

  auto kept = merge_scales({1.0, 3.0}, 1.25);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == doctest::Approx(1.0));
  CHECK(kept[1] == doctest::Approx(3.0));

  // merging lowers the run value below its last member, which can pull the
  // next run inside the threshold: the sweep repeats until stable, and the
  // emitted value stays the mean of every absorbed member
  auto fix = merge_scales({1.0, 1.24, 1.24, 1.24, 1.25}, 1.25);
  REQUIRE(fix.size() == 1);
  CHECK(fix[0] == doctest::Approx((1.0 + 3 * 1.24 + 1.25) / 5).epsilon(1e-12));

  CHECK_THROWS_AS(merge_scales({2.0, 1.0}, 1.25), Error);
  CHECK_THROWS_AS(merge_scales({1.0, 2.0}, 1.0), Error);
}

TEST_CASE("merged scales keep order and respect the threshold pairwise") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Real> scales;
    const int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i) scales.push_back(rng.uniform(0.5, 4.0));
    std::sort(scales.begin(), scales.end());
    auto merged = merge_scales(scales, 1.25);
    REQUIRE(!merged.empty());
    for (std::size_t i = 0; i < merged.size(); ++i) {
      CHECK(merged[i] > 0);
      if (i > 0) {
        CHECK(merged[i] >= merged[i - 1]);
        CHECK(merged[i] / merged[i - 1] >= 1.25);
      }
    }
    CHECK(merged.size() <= scales.size());
  }
}

TEST_CASE("hyperparameter search reproduces the worked example") {
  auto cfg = compute_anchor_hyperparameters({{100, 50}}, 1, {32, 64, 128, 256, 512}, 1.25, 5);
  REQUIRE(cfg.aspect_ratios.size() == 1);
  REQUIRE(cfg.scales.size() == 1);
  CHECK(std::abs(cfg.aspect_ratios[0] - 0.5) < 1e-12);
  CHECK(std::abs(cfg.scales[0] - 0.78125) < 1e-12);  // 100/128, template 128 nearest to s=100

  auto exact = compute_anchor_hyperparameters({{64, 64}}, 1, {32, 64, 128, 256, 512}, 1.25, 5);
  CHECK(std::abs(exact.aspect_ratios[0] - 1.0) < 1e-12);
  CHECK(std::abs(exact.scales[0] - 1.0) < 1e-12);

  // identical boxes at any k collapse to one aspect ratio and one merged scale
  std::vector<AnchorShape> same(6, {48, 24});
  auto merged = compute_anchor_hyperparameters(same, 3, {32, 64, 128, 256, 512}, 1.25, 5);
  CHECK(merged.scales.size() == 1);
  for (Real a : merged.aspect_ratios) CHECK(a == doctest::Approx(0.5));
}

TEST_CASE("aspect ratios are invariant under uniform box scaling") {
  Rng rng(77);
  std::vector<AnchorShape> boxes, doubled;
  for (int i = 0; i < 12; ++i) {
    const Real w = rng.uniform(8.0, 120.0), h = rng.uniform(8.0, 120.0);
    boxes.push_back({w, h});
    doubled.push_back({2 * w, 2 * h});  // power of two keeps the arithmetic exact
  }
  auto a = compute_anchor_hyperparameters(boxes, 2, {32, 64, 128, 256, 512}, 1.25, 9);
  auto b = compute_anchor_hyperparameters(doubled, 2, {32, 64, 128, 256, 512}, 1.25, 9);
  REQUIRE(a.aspect_ratios.size() == b.aspect_ratios.size());
  for (std::size_t i = 0; i < a.aspect_ratios.size(); ++i)
    CHECK(a.aspect_ratios[i] == b.aspect_ratios[i]);
}

TEST_CASE("anchor config files round-trip") {
  AnchorConfig cfg;
  cfg.aspect_ratios = {0.5, 1.0, 2.0};
  cfg.scales = {0.78125, 1.0};
  cfg.merge_threshold = 1.3;

  std::stringstream ss;
  write_anchor_config(ss, cfg);
  AnchorConfig back = read_anchor_config(ss);
  CHECK(back.aspect_ratios == cfg.aspect_ratios);
  CHECK(back.scales == cfg.scales);
  CHECK(back.templates == cfg.templates);
  CHECK(back.merge_threshold == cfg.merge_threshold);

  std::stringstream bad("nonsense\n");
  CHECK_THROWS_AS(read_anchor_config(bad), DataError);
  std::stringstream badkey("anchors v1\nwat 1 2\n");
  CHECK_THROWS_AS(read_anchor_config(badkey), DataError);
}
