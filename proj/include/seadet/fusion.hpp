#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/ops.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

struct FusionConfig {
  int kernel = 2;          // deconv kernel size
  int stride = 2;          // deconv stride; must match the backbone's per-level stride
  int channel_budget = 32; // deconv output channels and per-level projection target
  int repeats = 1;

  void validate() const {
    check(kernel >= 1, "fusion: kernel must be >= 1");
    check(stride >= 1, "fusion: stride must be >= 1");
    check(channel_budget >= 1, "fusion: channel budget must be >= 1");
    check(repeats >= 1, "fusion: repeats must be >= 1");
  }
};

// Identity when shapes already match; otherwise 1x1 projection to the target
// channel count followed by a nearest-neighbor resize to the target extents.
// `target` is by value: callers often pass a shape living inside the tape,
// which reallocates as the ops below record nodes.
inline Var skip_project(Tape& tape, Var src, Shape target, Var weights) {
  check(target.size() == 3, "skip_project: {H, W, C} target expected");
  const int src_h = tape.value(src).extent(0);
  const int src_w = tape.value(src).extent(1);
  check(tape.value(src).rank() == 3, "skip_project: {H, W, C} tensors expected");
  if (tape.value(src).shape() == target) return src;
  Var h = pointwise_conv(src, weights);
  if (src_h != target[0] || src_w != target[1]) h = nearest_resize(h, target[0], target[1]);
  return h;
}

struct FusionResult {
  Var fused;              // finest-level concat output, channels C(P_1) + budget
  std::vector<Var> maps;  // per-level projected maps (budget channels), finest first
};

// Top-down deconvolution fusion with additive skips from the next finer level.
// One pass over levels p[0] (finest) .. p[n-1] (coarsest):
//   F = concat(p[n-1], deconv0(p[n-1]))         (1x1 stride-1 deconv, extent kept)
//   for j = n-2 .. 0:
//     F = concat(p[j], deconv(F)) + skip(p[j-1])   (skip omitted at j = 0)
// Each concat is followed by a 1x1 projection back to the channel budget so the
// pass output can feed another pass; the unprojected finest concat is returned.
struct BiSkFpn {
  struct Pass {
    Parameter deconv0;                // {1, 1, C[n-1], B}
    std::vector<Parameter> deconvs;   // j = 0..n-2: {K, K, B, B}
    std::vector<Parameter> projects;  // j = 0..n-1: {C[j]+B, B}
    std::vector<Parameter> skips;     // j = 1..n-2: {C[j-1], C[j]+B}
  };

  FusionConfig config;
  std::vector<int> in_channels;  // backbone channels per level, finest first
  std::vector<Pass> passes;

  BiSkFpn() = default;
  BiSkFpn(FusionConfig cfg, std::vector<int> channels, Rng& rng)
      : config(cfg), in_channels(std::move(channels)) {
    config.validate();
    const int n = static_cast<int>(in_channels.size());
    check(n >= 2, "fusion: needs at least two pyramid levels");
    for (int c : in_channels) check(c > 0, "fusion: level channels must be positive");
    const int b = config.channel_budget;
    const int k = config.kernel;
    for (int pass = 0; pass < config.repeats; ++pass) {
      // later passes consume the previous pass's projected maps (budget channels)
      auto c_in = [&](int j) { return pass == 0 ? in_channels[static_cast<std::size_t>(j)] : b; };
      const std::string pfx = "fusion.pass" + std::to_string(pass);
      Pass p;
      p.deconv0 = Parameter(pfx + ".deconv_top",
                            random_normal<Real>({1, 1, c_in(n - 1), b}, rng,
                                                std::sqrt(2.0 / c_in(n - 1))));
      for (int j = 0; j <= n - 2; ++j)
        p.deconvs.emplace_back(pfx + ".deconv" + std::to_string(j),
                               random_normal<Real>({k, k, b, b}, rng, std::sqrt(2.0 / (k * k * b))));
      for (int j = 0; j <= n - 1; ++j)
        p.projects.emplace_back(pfx + ".project" + std::to_string(j),
                                random_normal<Real>({c_in(j) + b, b}, rng,
                                                    std::sqrt(2.0 / (c_in(j) + b))));
      for (int j = 1; j <= n - 2; ++j)
        p.skips.emplace_back(pfx + ".skip" + std::to_string(j),
                             random_normal<Real>({c_in(j - 1), c_in(j) + b}, rng,
                                                 std::sqrt(2.0 / c_in(j - 1))));
      passes.push_back(std::move(p));
    }
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& p : passes) {
      out.push_back(&p.deconv0);
      for (auto& w : p.deconvs) out.push_back(&w);
      for (auto& w : p.projects) out.push_back(&w);
      for (auto& w : p.skips) out.push_back(&w);
    }
    return out;
  }

  FusionResult forward(Tape& tape, const std::vector<Var>& pyramid) {
    const int n = static_cast<int>(in_channels.size());
    check(static_cast<int>(pyramid.size()) == n, "fusion: pyramid depth mismatch");
    for (int j = 0; j < n; ++j) {
      const Tensor& t = tape.value(pyramid[static_cast<std::size_t>(j)]);
      check(t.rank() == 3, "fusion: {H, W, C} levels expected");
      check(t.extent(2) == in_channels[static_cast<std::size_t>(j)],
            "fusion: level channels do not match the configured layout");
      if (j + 1 < n) {
        const Tensor& coarser = tape.value(pyramid[static_cast<std::size_t>(j) + 1]);
        auto related = [&](int fine, int coarse) {
          return (fine + config.stride - 1) / config.stride == coarse && fine > coarse;
        };
        check(related(t.extent(0), coarser.extent(0)) && related(t.extent(1), coarser.extent(1)),
              "fusion: adjacent level extents not related by the deconv stride");
      }
    }

    std::vector<Var> levels = pyramid;
    FusionResult result;
    for (auto& pass : passes) {
      result.maps.assign(static_cast<std::size_t>(n), Var{});
      Var raw{};
      Var running{};
      for (int j = n - 1; j >= 0; --j) {
        Var up;
        if (j == n - 1) {
          up = transposed_conv(levels[static_cast<std::size_t>(j)], tape.parameter(pass.deconv0), 1);
        } else {
          up = transposed_conv(running, tape.parameter(pass.deconvs[static_cast<std::size_t>(j)]),
                               config.stride);
          const Tensor& want = tape.value(levels[static_cast<std::size_t>(j)]);
          const Tensor& got = tape.value(up);
          if (got.extent(0) != want.extent(0) || got.extent(1) != want.extent(1))
            up = nearest_resize(up, want.extent(0), want.extent(1));
        }
        raw = concat_channels(std::vector<Var>{levels[static_cast<std::size_t>(j)], up});
        if (j >= 1 && j <= n - 2) {
          Var w = tape.parameter(pass.skips[static_cast<std::size_t>(j) - 1]);
          raw = add(raw, skip_project(tape, levels[static_cast<std::size_t>(j) - 1],
                                      tape.value(raw).shape(), w));
        }
        running = pointwise_conv(raw, tape.parameter(pass.projects[static_cast<std::size_t>(j)]));
        result.maps[static_cast<std::size_t>(j)] = running;
      }
      result.fused = raw;  // finest-level concat, before projection
      levels = result.maps;
    }
    return result;
  }
};

}  // namespace seadet
