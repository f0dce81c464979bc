#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "seadet/checkpoint.hpp"
#include "seadet/model.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

struct UAPConfig {
  Real xi = 0.1;           // max-norm budget in [0,1] pixel units
  int sample_count = 32;   // images aggregated into the perturbation
  std::uint64_t seed = 0;

  void validate() const {
    check(xi >= 0, "uap: xi must be nonnegative");
    check(sample_count >= 1, "uap: needs at least one sample image");
  }
};

// A single image-shaped perturbation with entries in {-xi, 0, +xi}, shared by
// every input it is applied to.
struct Perturbation {
  Real xi = 0;
  Tensor values;
};

// Aggregate per-pixel sensitivity over a sample of images and snap to the
// sign: U_j = xi * sign(sum_i r_ij * d_ij) with r the input gradient of the
// detection loss and d a seeded uniform draw in (-1, 1] per image. sign(0)
// maps to 0, so indifferent pixels stay untouched.
template <class LossFn>
Perturbation compute_uap(const std::vector<Tensor>& images, LossFn per_image_input_gradient,
                         const UAPConfig& cfg) {
  cfg.validate();
  check(!images.empty(), "uap: sample is empty");
  const Shape shape = images[0].shape();
  const std::size_t n = std::min<std::size_t>(images.size(), static_cast<std::size_t>(cfg.sample_count));

  Tensor aggregate(shape);
  for (std::size_t i = 0; i < n; ++i) {
    check(images[i].shape() == shape, "uap: sample images must share one shape");
    Tensor r = per_image_input_gradient(images[i]);
    check(r.shape() == shape, "uap: gradient shape must match the image");
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    for (std::int64_t j = 0; j < aggregate.numel(); ++j)
      aggregate[j] += r[j] * rng.uniform_signed_open();
  }

  Perturbation u;
  u.xi = cfg.xi;
  u.values = Tensor(shape);
  for (std::int64_t j = 0; j < aggregate.numel(); ++j) {
    if (aggregate[j] > 0)
      u.values[j] = cfg.xi;
    else if (aggregate[j] < 0)
      u.values[j] = -cfg.xi;
  }
  return u;
}

// Input gradient of the detection loss for one image under the given model.
inline Tensor detection_loss_input_gradient(Detector& model, const Tensor& image,
                                            const std::vector<GroundTruthBox>& gts) {
  Tape tape;
  Var input = tape.input(image, true);
  LossBreakdown lb = model.loss(tape, input, gts);
  for (Parameter* p : model.parameters()) p->reset_gradient();
  tape.backward(lb.total);
  Tensor g = tape.grad(input);
  for (Parameter* p : model.parameters()) p->reset_gradient();
  return g;
}

inline Tensor apply_perturbation(const Tensor& image, const Perturbation& u) {
  check(image.shape() == u.values.shape(), "perturbation: shape mismatch");
  Tensor out(image.shape());
  for (std::int64_t j = 0; j < out.numel(); ++j)
    out[j] = std::clamp(image[j] + u.values[j], Real(0), Real(1));
  return out;
}

// Fraction of each batch to perturb at a given (0-based) epoch: linear ramp
// from 0 to 0.5 over the first half of training, then constant.
inline Real curriculum_fraction(int epoch, int total_epochs) {
  check(total_epochs >= 1 && epoch >= 0, "curriculum: bad epoch bounds");
  const Real half = static_cast<Real>(total_epochs) / 2;
  return 0.5 * std::min<Real>(1.0, static_cast<Real>(epoch) / half);
}

inline int perturbed_count(int batch_size, Real fraction) {
  check(fraction >= 0 && fraction <= 1, "curriculum: fraction out of range");
  return static_cast<int>(std::lround(fraction * batch_size));
}

inline void save_perturbation(const std::filesystem::path& path, const Perturbation& u) {
  std::ofstream os(path, std::ios::binary);
  data_check(os.good(), "perturbation: cannot open for writing: " + path.string());
  os.write("SEADETUP", 8);
  detail::write_pod(os, u.xi);
  detail::write_tensor(os, u.values);
  data_check(os.good(), "perturbation: write failed");
}

inline Perturbation load_perturbation(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  data_check(is.good(), "perturbation: cannot open: " + path.string());
  char magic[8];
  is.read(magic, 8);
  data_check(is.good() && std::memcmp(magic, "SEADETUP", 8) == 0, "perturbation: bad magic");
  Perturbation u;
  u.xi = detail::read_pod<Real>(is);
  u.values = detail::read_tensor(is);
  return u;
}

}  // namespace seadet
