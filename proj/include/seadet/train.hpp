#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "seadet/adversarial.hpp"
#include "seadet/checkpoint.hpp"
#include "seadet/dataio.hpp"
#include "seadet/image.hpp"
#include "seadet/metrics.hpp"
#include "seadet/model.hpp"

namespace seadet {

struct TrainConfig {
  int epochs = 350;
  int batch_size = 64;
  std::string optimizer = "sgd";  // "sgd" or "sgd_then_adaptive"
  Real learning_rate = 0.1;
  Real weight_decay = 0.0005;
  std::string loss = "focal";  // classification loss selector: "focal" or "ce"
  Real alpha_box = 1.0;
  Real beta_reg = 0.0;
  std::uint64_t seed = 0;
  bool adversarial = false;  // curriculum perturbation schedule toggle
  Real xi = 0.1;             // perturbation budget when adversarial
  int uap_samples = 16;      // images aggregated into each perturbation

  // extras beyond the core fields, still flat key=value
  std::string lr_schedule = "constant";  // "constant" or "cosine"
  Real warm_fraction = 0.5;              // sgd portion of sgd_then_adaptive
  int checkpoint_every = 0;              // 0 = final checkpoint only

  void validate() const {
    check(epochs > 0 && batch_size > 0, "train config: epochs and batch size must be positive");
    check(weight_decay >= 0, "train config: weight decay must be nonnegative");
    check(learning_rate > 0, "train config: learning rate must be positive");
    check(optimizer == "sgd" || optimizer == "sgd_then_adaptive",
          "train config: optimizer must be 'sgd' or 'sgd_then_adaptive'");
    check(loss == "focal" || loss == "ce", "train config: loss must be 'focal' or 'ce'");
    check(lr_schedule == "constant" || lr_schedule == "cosine",
          "train config: lr_schedule must be 'constant' or 'cosine'");
    check(warm_fraction >= 0 && warm_fraction <= 1, "train config: warm fraction in [0, 1]");
    check(alpha_box >= 0 && beta_reg >= 0, "train config: loss weights must be nonnegative");
    check(xi >= 0, "train config: xi must be nonnegative");
    check(uap_samples >= 1, "train config: uap_samples must be positive");
    check(checkpoint_every >= 0, "train config: checkpoint_every must be nonnegative");
  }

  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "epochs=" << epochs << ";batch_size=" << batch_size << ";optimizer=" << optimizer
       << ";learning_rate=" << learning_rate << ";weight_decay=" << weight_decay
       << ";loss=" << loss << ";alpha_box=" << alpha_box << ";beta_reg=" << beta_reg
       << ";adversarial=" << adversarial << ";xi=" << xi << ";uap_samples=" << uap_samples
       << ";lr_schedule=" << lr_schedule << ";warm_fraction=" << warm_fraction;
    return os.str();
  }
};

namespace detail {

inline Real parse_real(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const Real r = std::stod(v, &used);
    data_check(used == v.size(), "config: trailing junk in value for " + key);
    return r;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw DataError("config: cannot parse number for " + key + ": '" + v + "'");
  }
}

inline int parse_int(const std::string& v, const std::string& key) {
  const Real r = parse_real(v, key);
  data_check(r == std::floor(r), "config: integer expected for " + key);
  return static_cast<int>(r);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw DataError("config: boolean expected for " + key + ": '" + v + "'");
}

}  // namespace detail

// Apply one key=value pair; unknown keys are an error so typos fail loudly.
inline void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "epochs")
    cfg.epochs = detail::parse_int(value, key);
  else if (key == "batch_size")
    cfg.batch_size = detail::parse_int(value, key);
  else if (key == "optimizer")
    cfg.optimizer = value;
  else if (key == "learning_rate")
    cfg.learning_rate = detail::parse_real(value, key);
  else if (key == "weight_decay")
    cfg.weight_decay = detail::parse_real(value, key);
  else if (key == "loss")
    cfg.loss = value;
  else if (key == "alpha_box")
    cfg.alpha_box = detail::parse_real(value, key);
  else if (key == "beta_reg")
    cfg.beta_reg = detail::parse_real(value, key);
  else if (key == "seed")
    cfg.seed = static_cast<std::uint64_t>(detail::parse_real(value, key));
  else if (key == "adversarial")
    cfg.adversarial = detail::parse_bool(value, key);
  else if (key == "xi")
    cfg.xi = detail::parse_real(value, key);
  else if (key == "uap_samples")
    cfg.uap_samples = detail::parse_int(value, key);
  else if (key == "lr_schedule")
    cfg.lr_schedule = value;
  else if (key == "warm_fraction")
    cfg.warm_fraction = detail::parse_real(value, key);
  else if (key == "checkpoint_every")
    cfg.checkpoint_every = detail::parse_int(value, key);
  else
    throw DataError("config: unknown key '" + key + "'");
}

// Flat key=value file; blank lines and #-comments allowed.
inline TrainConfig parse_train_config(std::istream& is) {
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view s = line;
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    if (s.empty() || s.front() == '#') continue;
    const std::size_t eq = s.find('=');
    data_check(eq != std::string_view::npos,
               "config: line " + std::to_string(line_no) + " is not key=value");
    std::string key(s.substr(0, eq));
    std::string value(s.substr(eq + 1));
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.erase(0, 1);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.pop_back();
    apply_config_key(cfg, key, value);
  }
  return cfg;
}

inline TrainConfig read_train_config(const std::filesystem::path& p) {
  std::ifstream f(p);
  data_check(f.good(), "config: cannot open " + p.string());
  return parse_train_config(f);
}

// ---------------------------------------------------------------------------
// dataset loading

struct LoadedSample {
  Tensor image;  // {H, W, C} in [0, 1]
  std::vector<GroundTruthBox> gts;
};

inline std::vector<LoadedSample> load_split(const DatasetManifest& m, const std::string& split) {
  std::vector<LoadedSample> out;
  for (const auto& rec : m.records) {
    if (!split.empty() && rec.split != split) continue;
    LoadedSample s;
    s.image = image_to_tensor(read_pnm(m.image_path(rec)));
    for (const auto& a : rec.boxes) s.gts.push_back({a.class_id, a.box});
    out.push_back(std::move(s));
  }
  return out;
}

// Detector layout derived from the data: image extents from the records
// (which must agree), class count from the manifest's table.
inline DetectorConfig detector_config_for(const DatasetManifest& m, const TrainConfig& tc) {
  data_check(!m.records.empty(), "detector config: empty manifest");
  data_check(!m.classes.empty(), "detector config: manifest has no class table");
  const int w = m.records[0].width, h = m.records[0].height;
  for (const auto& rec : m.records)
    data_check(rec.width == w && rec.height == h, "detector config: mixed image sizes");
  DetectorConfig cfg;
  cfg.image_w = w;
  cfg.image_h = h;
  cfg.num_classes = static_cast<int>(m.classes.size());
  cfg.classification_loss = tc.loss;
  return cfg;
}

// ---------------------------------------------------------------------------
// optimization

inline Real scheduled_lr(const TrainConfig& cfg, int epoch) {
  if (cfg.lr_schedule == "cosine")
    return cfg.learning_rate * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<Real>(epoch) /
                           static_cast<Real>(cfg.epochs)));
  return cfg.learning_rate;
}

// One parameter update from already-averaged gradients. SGD until the warm
// fraction of total steps has passed (when the optimizer asks for it), then
// adaptive moments. Weight decay enters as an additive decay*w term on
// weights; shape parameters (swish betas) are never decayed.
inline void optimizer_step(const TrainConfig& cfg, std::vector<Parameter*>& params,
                           OptimizerState& opt, Real lr, std::int64_t total_steps) {
  constexpr Real b1 = 0.9, b2 = 0.999, eps = 1e-8;
  opt.step += 1;
  const bool adaptive =
      cfg.optimizer == "sgd_then_adaptive" &&
      static_cast<Real>(opt.step) > cfg.warm_fraction * static_cast<Real>(total_steps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const bool decayed = !Detector::is_shape_parameter(p);
    for (std::int64_t j = 0; j < p.value.numel(); ++j) {
      Real g = p.gradient[j];
      if (decayed) g += cfg.weight_decay * p.value[j];
      if (adaptive) {
        Tensor& m = opt.m[i];
        Tensor& v = opt.v[i];
        m[j] = b1 * m[j] + (1 - b1) * g;
        v[j] = b2 * v[j] + (1 - b2) * g * g;
        p.value[j] -= lr * m[j] / (std::sqrt(v[j]) + eps);
      } else {
        p.value[j] -= lr * g;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// training loop

struct EpochStats {
  int epoch = 0;
  Real learning_rate = 0;
  Real train_loss = 0;  // mean over batches of cls + alpha*box + beta*reg
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::filesystem::path checkpoint_path;
  std::filesystem::path curve_path;
};

inline void write_curve_csv(const std::filesystem::path& p, const std::vector<EpochStats>& curve) {
  std::ofstream os(p);
  data_check(os.good(), "curves: cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  for (const EpochStats& e : curve) {
    std::ostringstream lr, loss;
    lr.precision(17);
    loss.precision(17);
    lr << e.learning_rate;
    loss << e.train_loss;
    rows.push_back({std::to_string(e.epoch), lr.str(), loss.str()});
  }
  write_csv(os, {"epoch", "learning_rate", "train_loss"}, rows);
}

// Full loop: seeded per-epoch shuffles, averaged batch gradients, decay as an
// additive gradient term, optional curriculum perturbations, per-epoch curve
// rows, periodic + final checkpoints. Resuming from a saved checkpoint with
// the same seed reproduces the uninterrupted run exactly because every epoch
// draws its shuffle (and perturbation) randomness from mix_seed(seed, epoch).
inline TrainResult train_model(const TrainConfig& cfg, const DatasetManifest& manifest,
                               const std::filesystem::path& out_dir,
                               Detector* resume_into = nullptr,
                               const Checkpoint* resume_from = nullptr,
                               const DetectorConfig* detector_override = nullptr,
                               std::ostream* progress = nullptr) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<LoadedSample> train = load_split(manifest, "train");
  data_check(!train.empty(), "train: no records in the train split");

  DetectorConfig dc = detector_override ? *detector_override : detector_config_for(manifest, cfg);
  Rng init_rng(cfg.seed);
  Detector local(dc, init_rng);
  Detector& det = resume_into ? *resume_into : local;
  det.loss_weights = {cfg.alpha_box, cfg.beta_reg};

  std::vector<Parameter*> params = det.parameters();
  std::vector<const Parameter*> weights;
  for (Parameter* p : det.weight_parameters()) weights.push_back(p);

  OptimizerState opt;
  opt.reset(params);
  int start_epoch = 0;
  const std::uint64_t digest = config_digest(cfg.canonical());
  if (resume_from) {
    data_check(resume_from->config_digest == digest, "resume: config does not match checkpoint");
    restore(*resume_from, params, &opt);
    start_epoch = static_cast<int>(resume_from->epoch) + 1;
  }

  const std::int64_t batches_per_epoch =
      (static_cast<std::int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = batches_per_epoch * cfg.epochs;

  TrainResult result;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const Real lr = scheduled_lr(cfg, epoch);

    std::optional<Perturbation> uap;
    int per_batch_perturbed = 0;
    if (cfg.adversarial) {
      const Real f = curriculum_fraction(epoch, cfg.epochs);
      per_batch_perturbed = perturbed_count(cfg.batch_size, f);
      if (per_batch_perturbed > 0) {
        UAPConfig ucfg{cfg.xi, cfg.uap_samples, mix_seed(cfg.seed, 0x75617000u + epoch)};
        std::vector<Tensor> sample;
        for (std::size_t i = 0; i < train.size() && static_cast<int>(i) < cfg.uap_samples; ++i)
          sample.push_back(train[i].image);
        std::size_t cursor = 0;
        uap = compute_uap(
            sample,
            [&](const Tensor& img) {
              return detection_loss_input_gradient(det, img, train[cursor++].gts);
            },
            ucfg);
      }
    }

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    Real epoch_loss = 0;
    int epoch_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const int bsz = static_cast<int>(b1 - b0);
      for (Parameter* p : params) p->reset_gradient();

      // Batch items are independent given fixed weights, so their tapes are
      // swept on worker threads in waves; flushing into the shared parameter
      // gradients stays on this thread, in item order, which keeps the
      // accumulated sums bitwise identical to a sequential pass.
      const std::size_t workers = std::max<std::size_t>(
          1, std::min<std::size_t>(static_cast<std::size_t>(bsz),
                                   std::thread::hardware_concurrency()));
      Real sum_cls = 0, sum_box = 0;
      for (std::size_t w0 = b0; w0 < b1; w0 += workers) {
        const std::size_t n = std::min(workers, b1 - w0);
        std::vector<Tape> tapes(n);
        std::vector<LossBreakdown> lbs(n);
        std::vector<std::exception_ptr> failures(n);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) {
          pool.emplace_back([&, t] {
            try {
              const std::size_t k = w0 + t;
              const LoadedSample& s = train[order[k]];
              const bool perturb = uap && static_cast<int>(k - b0) < per_batch_perturbed;
              Var input =
                  tapes[t].input(perturb ? apply_perturbation(s.image, *uap) : s.image, false);
              lbs[t] = det.loss(tapes[t], input, s.gts);
              tapes[t].backward_local(lbs[t].total);
            } catch (...) {
              failures[t] = std::current_exception();
            }
          });
        }
        for (std::thread& th : pool) th.join();
        for (std::size_t t = 0; t < n; ++t) {
          if (failures[t]) std::rethrow_exception(failures[t]);
          tapes[t].flush_parameter_gradients();
          sum_cls += lbs[t].cls;
          sum_box += lbs[t].box;
        }
      }
      const Real inv = Real(1) / static_cast<Real>(bsz);
      for (Parameter* p : params) p->gradient.data() *= inv;

      const Real batch_loss =
          loss_total(sum_cls * inv, sum_box * inv, weights, {cfg.alpha_box, cfg.beta_reg});
      if (!std::isfinite(batch_loss)) throw NumericError("train: loss diverged (non-finite)");
      optimizer_step(cfg, params, opt, lr, total_steps);
      epoch_loss += batch_loss;
      ++epoch_batches;
    }

    const Real mean_loss = epoch_loss / static_cast<Real>(epoch_batches);
    result.curve.push_back({epoch, lr, mean_loss});
    if (progress)
      (*progress) << "epoch " << (epoch + 1) << "/" << cfg.epochs << "  lr " << lr << "  loss "
                  << mean_loss << "\n";
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      save_checkpoint(out_dir / ("checkpoint_" + std::to_string(epoch) + ".bin"),
                      snapshot(params, opt, epoch, digest));
    }
  }

  result.checkpoint_path = out_dir / "checkpoint_final.bin";
  save_checkpoint(result.checkpoint_path, snapshot(params, opt, cfg.epochs - 1, digest));
  result.curve_path = out_dir / "curves.csv";
  write_curve_csv(result.curve_path, result.curve);
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalResult {
  APResult ap;
  ConfusionMatrix confusion;
  int images = 0;
};

// Optional fixed perturbation applied to every image before detection.
// Inference is read-only over the weights, so images are scored in parallel;
// results land in per-image slots, keeping the output order-independent.
inline EvalResult evaluate_split(Detector& det, const DatasetManifest& manifest,
                                 const std::string& split, const Perturbation* uap = nullptr) {
  std::vector<LoadedSample> data = load_split(manifest, split);
  data_check(!data.empty(), "eval: split '" + split + "' is empty");
  std::vector<std::vector<Detection>> preds(data.size());
  std::vector<std::vector<GroundTruthBox>> gts(data.size());
  const std::size_t workers = std::max<std::size_t>(
      1, std::min<std::size_t>(data.size(), std::thread::hardware_concurrency()));
  std::vector<std::exception_ptr> failures(workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < data.size(); i += workers) {
          preds[i] = det.detect(uap ? apply_perturbation(data[i].image, *uap) : data[i].image);
          gts[i] = data[i].gts;
        }
      } catch (...) {
        failures[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : failures)
    if (e) std::rethrow_exception(e);
  EvalResult r;
  r.images = static_cast<int>(data.size());
  r.ap = average_precision_map(preds, gts, det.config.num_classes, 0.5);
  r.confusion = confusion_matrix(preds, gts, det.config.num_classes, 0.5);
  return r;
}

}  // namespace seadet
