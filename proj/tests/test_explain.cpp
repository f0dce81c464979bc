#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "seadet/explain.hpp"

using namespace seadet;
namespace fs = std::filesystem;

namespace {

Tensor grid3(int h, int w, int k, Real v) { return Tensor::full({h, w, k}, v); }

}  // namespace

TEST_CASE("heatmap composition fixtures") {
  // one channel of ones with unit mean gradient -> ones everywhere
  Tensor ones = grid3(2, 2, 1, 1.0);
  Tensor map = compose_heatmap(ones, ones);
  for (std::int64_t i = 0; i < map.numel(); ++i) CHECK(map[i] == doctest::Approx(1.0));

  // two channels, weights (1, -1), A1 = 2, A2 = 1 -> value 1 everywhere
  Tensor a({2, 2, 2});
  Tensor g({2, 2, 2});
  for (int p = 0; p < 4; ++p) {
    a[p * 2 + 0] = 2.0;
    a[p * 2 + 1] = 1.0;
    g[p * 2 + 0] = 1.0;
    g[p * 2 + 1] = -1.0;
  }
  Tensor two = compose_heatmap(a, g);
  for (std::int64_t i = 0; i < two.numel(); ++i) CHECK(two[i] == doctest::Approx(1.0));

  // all-negative weighted sums collapse to the zero map
  Tensor neg_g = grid3(2, 2, 1, -1.0);
  Tensor zero = compose_heatmap(ones, neg_g);
  for (std::int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

  CHECK_THROWS_AS(compose_heatmap(ones, grid3(2, 3, 1, 1.0)), Error);
  CHECK_THROWS_AS(compose_heatmap(ones, ones, "smoothgrad"), Error);
}

TEST_CASE("second-order weighting ignores negative-gradient pixels") {
  // one channel: a positive-gradient pixel and a negative one
  Tensor a({1, 2, 1});
  a[0] = 1.0;
  a[1] = 1.0;
  Tensor g({1, 2, 1});
  g[0] = 0.5;
  g[1] = -2.0;
  Tensor pp = compose_heatmap(a, g, "gradcam++");
  // alpha uses only the relu'd gradient at pixel 0: w = g^2/(2g^2 + sumA*g^3)
  const Real w0 = 0.25 / (2 * 0.25 + 2.0 * 0.125);
  const Real wn = 4.0 / (2 * 4.0 + 2.0 * -8.0);  // negative pixel's weight term
  const Real alpha = w0 * 0.5;                   // relu drops the negative pixel
  (void)wn;
  for (std::int64_t i = 0; i < pp.numel(); ++i)
    CHECK(pp[i] == doctest::Approx(alpha * 1.0).epsilon(1e-12));

  // plain mode would average the raw gradients instead
  Tensor plain = compose_heatmap(a, g, "gradcam");
  const Real mean_g = (0.5 - 2.0) / 2;
  for (std::int64_t i = 0; i < plain.numel(); ++i)
    CHECK(plain[i] == std::max<Real>(mean_g * 1.0, 0));
}

TEST_CASE("positive rescaling of activations keeps the argmax location") {
  Rng rng(55);
  Tensor a({4, 4, 3});
  Tensor g({4, 4, 3});
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    a[i] = rng.uniform();
    g[i] = rng.uniform() - 0.3;
  }
  Tensor base = compose_heatmap(a, g);
  Tensor scaled_in = a;
  scaled_in.data() *= 7.5;
  Tensor scaled = compose_heatmap(scaled_in, g);
  normalize_heatmap(base);
  normalize_heatmap(scaled);
  std::int64_t arg_base = 0, arg_scaled = 0;
  for (std::int64_t i = 0; i < base.numel(); ++i) {
    if (base[i] > base[arg_base]) arg_base = i;
    if (scaled[i] > scaled[arg_scaled]) arg_scaled = i;
  }
  CHECK(arg_base == arg_scaled);
  for (std::int64_t i = 0; i < base.numel(); ++i) {
    CHECK(base[i] >= 0.0);
    CHECK(base[i] <= 1.0);
  }
}

TEST_CASE("bilinear upsampling fixtures") {
  // a constant grid stays constant at any size
  Tensor c = Tensor::full({1, 1}, 0.7);
  Tensor up = bilinear_upsample(c, 5, 3);
  CHECK(up.shape() == Shape{5, 3});
  for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.7));

  // 2x2 -> 4x4 with half-pixel centers: corners keep source values,
  // interior points blend with weight 1/4
  Tensor src = Tensor::from({2, 2}, {0.0, 1.0, 2.0, 3.0});
  Tensor big = bilinear_upsample(src, 4, 4);
  CHECK(big[0] == doctest::Approx(0.0));
  CHECK(big[3] == doctest::Approx(1.0));
  CHECK(big[12] == doctest::Approx(2.0));
  CHECK(big[15] == doctest::Approx(3.0));
  CHECK(big[1 * 4 + 1] == doctest::Approx(0.75));  // (0.25, 0.25) blend
  CHECK(big[2 * 4 + 2] == doctest::Approx(2.25));  // (0.75, 0.75) blend

  // downsampling keeps values within the source range
  Tensor down = bilinear_upsample(big, 3, 3);
  for (std::int64_t i = 0; i < down.numel(); ++i) {
    CHECK(down[i] >= 0.0);
    CHECK(down[i] <= 3.0);
  }
}

TEST_CASE("normalization maps the peak to one and zero maps stay zero") {
  Tensor m = Tensor::from({1, 3}, {0.5, 2.0, 1.0});
  normalize_heatmap(m);
  CHECK(m[0] == doctest::Approx(0.25));
  CHECK(m[1] == doctest::Approx(1.0));
  CHECK(m[2] == doctest::Approx(0.5));

  Tensor z({2, 2});
  normalize_heatmap(z);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("detector heatmaps are valid in both modes") {
  Rng rng(66);
  DetectorConfig dc;
  dc.image_w = dc.image_h = 32;
  dc.num_classes = 3;
  Detector det(dc, rng);

  Tensor img({32, 32, 3});
  Rng r2(67);
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = r2.uniform();

  for (const std::string& mode : {std::string("gradcam"), std::string("gradcam++")}) {
    Heatmap hm = gradcam_heatmap(det, img, 1, mode);
    CHECK(hm.class_id == 1);
    CHECK(hm.values.shape() == Shape{32, 32});
    Real mx = 0;
    for (std::int64_t i = 0; i < hm.values.numel(); ++i) {
      CHECK(hm.values[i] >= 0.0);
      CHECK(hm.values[i] <= 1.0);
      mx = std::max(mx, hm.values[i]);
    }
    CHECK((mx == doctest::Approx(1.0) || mx == 0.0));  // max is 1 unless identically zero
  }
  // parameter gradients are left clean for the training loop
  for (Parameter* p : det.parameters()) {
    bool zero = true;
    for (std::int64_t i = 0; i < p->gradient.numel(); ++i) zero = zero && p->gradient[i] == 0;
    CHECK(zero);
  }
  CHECK_THROWS_AS(gradcam_heatmap(det, img, 3), Error);
}

TEST_CASE("heatmap files are written as pgm with overlay ppm") {
  const fs::path dir = fs::temp_directory_path() / "seadet_explain";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Heatmap hm;
  hm.class_id = 2;
  hm.values = Tensor({8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) hm.values[y * 8 + x] = (y == 4 && x == 4) ? 1.0 : 0.25;

  CHECK(heatmap_filename("imgs/frame_007.ppm", 2) == fs::path("frame_007_2.pgm"));
  write_heatmap_pgm(dir / "h.pgm", hm);
  ImageU8 img = read_pnm(dir / "h.pgm");
  CHECK(img.channels == 1);
  CHECK(img.at(4, 4, 0) == 255);
  CHECK(img.at(0, 0, 0) == 64);  // round(0.25 * 255)

  Tensor base = Tensor::full({8, 8, 3}, 0.5);
  write_heatmap_overlay(dir / "o.ppm", base, hm);
  ImageU8 over = read_pnm(dir / "o.ppm");
  CHECK(over.channels == 3);
  CHECK(over.at(4, 4, 0) > over.at(0, 0, 0));  // red lifted at the hot pixel
}
