#pragma once

// Command-line front end. Each subcommand is a plain function over an options
// struct so tests can drive it directly; run() owns argument parsing and maps
// failures to process exit codes: 0 success, 1 usage, 2 bad data, 3 numeric.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seadet/adversarial.hpp"
#include "seadet/anchors.hpp"
#include "seadet/checkpoint.hpp"
#include "seadet/dataio.hpp"
#include "seadet/explain.hpp"
#include "seadet/metrics.hpp"
#include "seadet/model.hpp"
#include "seadet/synth.hpp"
#include "seadet/train.hpp"

namespace seadet::cli {

namespace fs = std::filesystem;

inline std::array<double, 3> parse_ratio_triplet(const std::string& s) {
  std::array<double, 3> r{};
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> r[0] >> c1 >> r[1] >> c2 >> r[2]) || c1 != ':' || c2 != ':' ||
      !(is >> std::ws).eof())
    throw DataError("split: expected train:val:test shares, got '" + s + "'");
  return r;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw DataError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  data_check(!out.empty(), "expected a comma-separated integer list, got '" + s + "'");
  return out;
}

inline std::map<std::string, std::size_t> split_sizes(const DatasetManifest& m) {
  std::map<std::string, std::size_t> sizes;
  for (const auto& rec : m.records) sizes[rec.split.empty() ? "untagged" : rec.split]++;
  return sizes;
}

inline std::string split_summary(const DatasetManifest& m) {
  auto sizes = split_sizes(m);
  std::ostringstream os;
  os << m.records.size() << " images (train " << sizes["train"] << ", val " << sizes["val"]
     << ", test " << sizes["test"];
  if (sizes["untagged"] > 0) os << ", untagged " << sizes["untagged"];
  os << ")";
  return os.str();
}

// Detector geometry is derived from the manifest; an anchor-search output file
// can replace the default anchor scales and aspect ratios.
inline DetectorConfig detector_config_from(const DatasetManifest& m, const TrainConfig& tc,
                                           const std::string& anchors_path) {
  DetectorConfig dc = detector_config_for(m, tc);
  if (!anchors_path.empty()) {
    const AnchorConfig ac = load_anchor_config(anchors_path);
    dc.anchor_grid.scales = ac.scales;
    dc.anchor_grid.aspect_ratios = ac.aspect_ratios;
    dc.validate();
  }
  return dc;
}

inline Detector restored_detector(const DatasetManifest& m, const std::string& checkpoint_path,
                                  const std::string& anchors_path) {
  TrainConfig tc;  // inference only; the loss choice never enters the forward pass
  const DetectorConfig dc = detector_config_from(m, tc, anchors_path);
  Rng rng(0);
  Detector det(dc, rng);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  restore(ck, det.parameters(), nullptr);
  return det;
}

// ---------------------------------------------------------------------------
// prepare: parse raw annotations, assign splits, write a manifest

struct PrepareOpts {
  std::string images;  // directory of images + YOLO txt files
  std::string format = "yolo";
  std::string coco;  // annotation json when format == coco
  std::string out;
  std::string split = "70:20:10";
  std::uint64_t seed = 0;
  bool drop_unlabeled = false;
};

inline void cmd_prepare(const PrepareOpts& o, std::ostream& out) {
  ParseOptions popt;
  popt.drop_unlabeled = o.drop_unlabeled;
  int clamped = 0;
  popt.clamped_count = &clamped;

  DatasetManifest m;
  if (o.format == "yolo") {
    data_check(!o.images.empty(), "prepare: --images directory required for yolo input");
    m = parse_yolo_directory(o.images, popt);
  } else if (o.format == "coco") {
    data_check(!o.coco.empty(), "prepare: --coco annotation file required for coco input");
    m = parse_coco_json(o.coco, popt);
  } else {
    throw DataError("prepare: unknown format '" + o.format + "' (expected yolo or coco)");
  }

  normalize_and_split(m, parse_ratio_triplet(o.split), o.seed);
  write_manifest(m, o.out);
  out << "wrote " << o.out << ": " << split_summary(m) << "\n";
  if (clamped > 0) out << "clamped " << clamped << " out-of-range boxes\n";
}

// ---------------------------------------------------------------------------
// stats: per-class box counts and split sizes for a manifest

struct StatsOpts {
  std::string manifest;
};

inline void cmd_stats(const StatsOpts& o, std::ostream& out) {
  const DatasetManifest m = read_manifest(o.manifest);
  const std::vector<std::int64_t> counts = manifest_class_counts(m);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < m.classes.size(); ++c)
    rows.push_back({m.classes[c], std::to_string(counts[c])});
  out << format_aligned_table({"class", "boxes"}, rows);

  const ClassStatsDisplay d = format_class_stats(class_statistics(counts));
  out << "count mean " << d.mean << ", variance " << d.variance << ", stddev " << d.stddev
      << "\n";
  out << split_summary(m) << "\n";
}

// ---------------------------------------------------------------------------
// anchors: cluster box shapes into anchor aspect ratios and scales

struct AnchorsOpts {
  std::string manifest;
  std::string out;  // optional config file
  std::string split = "train";
  int k = 3;
  double merge_threshold = 1.25;
  std::uint64_t seed = 0;
};

inline void cmd_anchors(const AnchorsOpts& o, std::ostream& out) {
  const DatasetManifest m = read_manifest(o.manifest);
  std::vector<AnchorShape> boxes;
  for (const auto& rec : m.records) {
    if (!o.split.empty() && rec.split != o.split) continue;
    for (const auto& a : rec.boxes) {
      const Box b = convert_box(a.box, BoxRepr::center_size);
      boxes.push_back({b.w() * rec.width, b.h() * rec.height});
    }
  }
  data_check(!boxes.empty(), "anchors: no boxes in split '" + o.split + "'");

  const AnchorConfig defaults;
  const AnchorConfig cfg = compute_anchor_hyperparameters(boxes, o.k, defaults.templates,
                                                          o.merge_threshold, o.seed);
  std::ostringstream num;
  num.precision(10);
  auto fmt = [&](Real v) {
    num.str("");
    num << v;
    return num.str();
  };
  out << "boxes clustered: " << boxes.size() << "\n";
  out << "aspect ratios (h/w):";
  for (Real a : cfg.aspect_ratios) out << " " << fmt(a);
  out << "\nscales:";
  for (Real s : cfg.scales) out << " " << fmt(s);
  out << "\n";
  if (!o.out.empty()) {
    save_anchor_config(o.out, cfg);
    out << "wrote " << o.out << "\n";
  }
}

// ---------------------------------------------------------------------------
// train: fit a detector on the train split of a manifest

struct TrainOpts {
  std::string manifest;
  std::string out_dir;
  std::string config_path;
  std::string resume;
  std::string anchors;
  std::uint64_t seed = 0;
  // key=value overrides applied on top of the config file, in the order given
  std::vector<std::pair<std::string, std::string>> overrides;
};

inline void cmd_train(const TrainOpts& o, std::ostream& out) {
  TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : read_train_config(o.config_path);
  for (const auto& [key, value] : o.overrides) apply_config_key(cfg, key, value);
  cfg.seed = o.seed;
  cfg.validate();

  const DatasetManifest m = read_manifest(o.manifest);
  const DetectorConfig dc = detector_config_from(m, cfg, o.anchors);

  TrainResult r;
  if (!o.resume.empty()) {
    const Checkpoint ck = load_checkpoint(o.resume);
    Rng rng(cfg.seed);
    Detector det(dc, rng);
    r = train_model(cfg, m, o.out_dir, &det, &ck, &dc, &out);
  } else {
    r = train_model(cfg, m, o.out_dir, nullptr, nullptr, &dc, &out);
  }
  out << "checkpoint: " << r.checkpoint_path.string() << "\n";
  out << "curves: " << r.curve_path.string() << "\n";
}

// ---------------------------------------------------------------------------
// eval: restore a checkpoint and score one split

struct EvalOpts {
  std::string manifest;
  std::string checkpoint;
  std::string split = "test";
  std::string anchors;
  std::string attack;  // optional perturbation file applied to every image
  std::string report;  // optional csv output
  bool confusion = false;
};

inline void cmd_eval(const EvalOpts& o, std::ostream& out) {
  const DatasetManifest m = read_manifest(o.manifest);
  Detector det = restored_detector(m, o.checkpoint, o.anchors);

  std::optional<Perturbation> uap;
  if (!o.attack.empty()) uap = load_perturbation(o.attack);
  const EvalResult r = evaluate_split(det, m, o.split, uap ? &*uap : nullptr);

  std::vector<std::vector<std::string>> rows;
  for (const auto& c : r.ap.per_class)
    rows.push_back({m.classes[static_cast<std::size_t>(c.class_id)], truncate_1dp(100 * c.ap),
                    std::to_string(c.num_ground_truths)});
  out << format_aligned_table({"class", "ap50", "boxes"}, rows);
  out << "images: " << r.images << "\n";
  out << "mAP@0.5: " << truncate_1dp(100 * r.ap.map) << "\n";

  if (o.confusion) {
    std::vector<std::string> header{"gt\\pred"};
    for (const auto& c : m.classes) header.push_back(c);
    header.push_back("miss");
    std::vector<std::vector<std::string>> crows;
    ConfusionMatrix cm = r.confusion;
    for (int gt = 0; gt <= cm.num_classes; ++gt) {
      std::vector<std::string> row{gt == cm.num_classes
                                       ? std::string("none")
                                       : m.classes[static_cast<std::size_t>(gt)]};
      for (int pred = 0; pred <= cm.num_classes; ++pred)
        row.push_back(std::to_string(cm.at(gt, pred)));
      crows.push_back(std::move(row));
    }
    out << format_aligned_table(header, crows);
  }

  if (!o.report.empty()) {
    std::ofstream os(o.report);
    data_check(os.good(), "eval: cannot open report file " + o.report);
    std::ostringstream full;
    full.precision(17);
    auto fmt = [&](double v) {
      full.str("");
      full << v;
      return full.str();
    };
    std::vector<std::vector<std::string>> csv;
    for (const auto& c : r.ap.per_class)
      csv.push_back({m.classes[static_cast<std::size_t>(c.class_id)], fmt(c.ap)});
    csv.push_back({"mAP", fmt(r.ap.map)});
    write_csv(os, {"class", "ap50"}, csv);
    out << "report: " << o.report << "\n";
  }
}

// ---------------------------------------------------------------------------
// attack: compute a universal perturbation from a trained model

struct AttackOpts {
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::string split = "train";
  std::string eval_split = "test";
  std::string anchors;
  double xi = 0.1;
  int samples = 16;
  std::uint64_t seed = 0;
  bool evaluate = false;  // also report clean vs attacked scores
};

inline void cmd_attack(const AttackOpts& o, std::ostream& out) {
  const DatasetManifest m = read_manifest(o.manifest);
  Detector det = restored_detector(m, o.checkpoint, o.anchors);

  std::vector<LoadedSample> data = load_split(m, o.split);
  data_check(!data.empty(), "attack: split '" + o.split + "' is empty");
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < data.size() && static_cast<int>(i) < o.samples; ++i)
    images.push_back(data[i].image);

  UAPConfig ucfg;
  ucfg.xi = o.xi;
  ucfg.sample_count = o.samples;
  ucfg.seed = o.seed;
  std::size_t cursor = 0;
  const Perturbation u = compute_uap(
      images,
      [&](const Tensor& img) {
        return detection_loss_input_gradient(det, img, data[cursor++].gts);
      },
      ucfg);
  save_perturbation(o.out, u);
  out << "wrote " << o.out << " (xi " << u.xi << ", " << images.size() << " samples)\n";

  if (o.evaluate) {
    const EvalResult clean = evaluate_split(det, m, o.eval_split);
    const EvalResult adv = evaluate_split(det, m, o.eval_split, &u);
    out << "clean mAP@0.5: " << truncate_1dp(100 * clean.ap.map) << "\n";
    out << "attacked mAP@0.5: " << truncate_1dp(100 * adv.ap.map) << "\n";
  }
}

// ---------------------------------------------------------------------------
// explain: class activation heatmaps for one manifest image

struct ExplainOpts {
  std::string manifest;
  std::string checkpoint;
  std::string image;  // record path as stored in the manifest
  std::string out_dir = ".";
  std::string mode = "gradcam++";
  std::string anchors;
  int class_id = -1;  // < 0: one heatmap per detected class
};

inline void cmd_explain(const ExplainOpts& o, std::ostream& out) {
  const DatasetManifest m = read_manifest(o.manifest);
  const ManifestRecord* rec = nullptr;
  for (const auto& r : m.records)
    if (r.image == o.image) {
      rec = &r;
      break;
    }
  if (!rec) throw DataError("explain: image '" + o.image + "' not in the manifest");

  const Tensor img = image_to_tensor(read_pnm(m.image_path(*rec)));
  Detector det = restored_detector(m, o.checkpoint, o.anchors);

  std::vector<int> classes;
  if (o.class_id >= 0) {
    classes.push_back(o.class_id);
  } else {
    for (const Detection& d : det.detect(img)) classes.push_back(d.class_id);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    data_check(!classes.empty(), "explain: no detections on this image; pass --class");
  }

  fs::create_directories(o.out_dir);
  for (int c : classes) {
    const Heatmap hm = gradcam_heatmap(det, img, c, o.mode);
    const fs::path pgm = fs::path(o.out_dir) / heatmap_filename(rec->image, c);
    write_heatmap_pgm(pgm, hm);
    const fs::path overlay = fs::path(o.out_dir) / (fs::path(rec->image).stem().string() + "_" +
                                                    std::to_string(c) + "_overlay.ppm");
    write_heatmap_overlay(overlay, img, hm);
    out << "wrote " << pgm.string() << " and " << overlay.string() << "\n";
  }
}

// ---------------------------------------------------------------------------
// synth: generate a seeded synthetic dataset

struct SynthOpts {
  std::string out_dir;
  std::string per_class;  // comma-separated object counts, one per class
  std::string split = "70:20:10";
  int count = 120;  // total objects when --per-class is not given
  int size = 64;
  double noise = 0.05;
  std::uint64_t seed = 0;
  bool augment = false;
};

inline void cmd_synth(const SynthOpts& o, std::ostream& out) {
  SynthSpec spec;
  spec.image_w = spec.image_h = o.size;
  spec.noise = o.noise;
  if (!o.per_class.empty()) {
    spec.class_counts = parse_int_list(o.per_class);
    data_check(spec.class_counts.size() == spec.classes.size(),
               "synth: need one count per class (" + std::to_string(spec.classes.size()) + ")");
  } else {
    spec.class_counts = scale_class_counts(
        std::vector<std::int64_t>(spec.classes.size(), 1), o.count);
  }

  DatasetManifest m = generate_synthetic_dataset(spec, o.seed, o.out_dir);
  if (o.augment) {
    augment_dataset(m, mix_seed(o.seed, 1));
    write_yolo_annotations(m, o.out_dir);
  }
  if (!o.split.empty()) normalize_and_split(m, parse_ratio_triplet(o.split), o.seed);
  const fs::path mp = fs::path(o.out_dir) / "manifest.txt";
  write_manifest(m, mp);

  out << "wrote " << split_summary(m) << " under " << o.out_dir << "\n";
  out << "manifest: " << mp.string() << "\n";
}

// ---------------------------------------------------------------------------
// argument parsing

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"small-object detection toolkit"};
  app.name("seadet");
  app.require_subcommand(1);

  PrepareOpts po;
  CLI::App* prepare = app.add_subcommand("prepare", "parse annotations into a manifest");
  prepare->add_option("--images", po.images, "directory of images and YOLO txt files");
  prepare->add_option("--format", po.format, "annotation format: yolo or coco");
  prepare->add_option("--coco", po.coco, "COCO annotation json (format=coco)");
  prepare->add_option("--out", po.out, "manifest file to write")->required();
  prepare->add_option("--split", po.split, "train:val:test shares (default 70:20:10)");
  prepare->add_option("--seed", po.seed, "split assignment seed");
  prepare->add_flag("--drop-unlabeled", po.drop_unlabeled, "skip images without labels");
  prepare->callback([&] { cmd_prepare(po, out); });

  StatsOpts so;
  CLI::App* stats = app.add_subcommand("stats", "class and split statistics for a manifest");
  stats->add_option("--manifest", so.manifest, "manifest file")->required();
  stats->callback([&] { cmd_stats(so, out); });

  AnchorsOpts ao;
  CLI::App* anchors = app.add_subcommand("anchors", "cluster box shapes into anchor settings");
  anchors->add_option("--manifest", ao.manifest, "manifest file")->required();
  anchors->add_option("--k", ao.k, "number of clusters");
  anchors->add_option("--split", ao.split, "split to cluster (empty = all records)");
  anchors->add_option("--merge-threshold", ao.merge_threshold, "scale merge ratio (> 1)");
  anchors->add_option("--seed", ao.seed, "clustering seed");
  anchors->add_option("--out", ao.out, "anchor config file to write");
  anchors->callback([&] { cmd_anchors(ao, out); });

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "train a detector on the train split");
  train->add_option("--manifest", to.manifest, "manifest file")->required();
  train->add_option("--out", to.out_dir, "output directory")->required();
  train->add_option("--config", to.config_path, "key=value config file");
  train->add_option("--resume", to.resume, "checkpoint to resume from");
  train->add_option("--anchors", to.anchors, "anchor config from the anchors subcommand");
  train->add_option("--seed", to.seed, "run seed")->required();
  // one flag per config key; flags override the config file
  static const char* kConfigKeys[] = {"epochs",       "batch_size",   "optimizer",
                                      "learning_rate", "weight_decay", "loss",
                                      "alpha_box",    "beta_reg",     "adversarial",
                                      "xi",           "uap_samples",  "lr_schedule",
                                      "warm_fraction", "checkpoint_every"};
  auto overrides = std::make_shared<std::map<std::string, std::string>>();
  for (const char* key : kConfigKeys) {
    std::string flag = "--" + std::string(key);
    std::replace(flag.begin(), flag.end(), '_', '-');
    const std::string k(key);
    train
        ->add_option_function<std::string>(
            flag, [overrides, k](const std::string& v) { (*overrides)[k] = v; },
            "override config key " + k)
        ->expected(1);
  }
  train->callback([&, overrides] {
    for (const auto& [key, value] : *overrides) to.overrides.emplace_back(key, value);
    cmd_train(to, out);
  });

  EvalOpts eo;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on one split");
  eval->add_option("--manifest", eo.manifest, "manifest file")->required();
  eval->add_option("--checkpoint", eo.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", eo.split, "split to score (default test)");
  eval->add_option("--anchors", eo.anchors, "anchor config used at training time");
  eval->add_option("--attack", eo.attack, "perturbation file applied to every image");
  eval->add_option("--report", eo.report, "per-class csv to write");
  eval->add_flag("--confusion", eo.confusion, "print the confusion matrix");
  eval->callback([&] { cmd_eval(eo, out); });

  AttackOpts ko;
  CLI::App* attack = app.add_subcommand("attack", "compute a universal perturbation");
  attack->add_option("--manifest", ko.manifest, "manifest file")->required();
  attack->add_option("--checkpoint", ko.checkpoint, "checkpoint file")->required();
  attack->add_option("--out", ko.out, "perturbation file to write")->required();
  attack->add_option("--split", ko.split, "split supplying sample images (default train)");
  attack->add_option("--xi", ko.xi, "max-norm budget");
  attack->add_option("--samples", ko.samples, "number of sample images");
  attack->add_option("--seed", ko.seed, "perturbation seed")->required();
  attack->add_flag("--evaluate", ko.evaluate, "also report clean vs attacked scores");
  attack->add_option("--eval-split", ko.eval_split, "split scored by --evaluate");
  attack->add_option("--anchors", ko.anchors, "anchor config used at training time");
  attack->callback([&] { cmd_attack(ko, out); });

  ExplainOpts xo;
  CLI::App* explain = app.add_subcommand("explain", "write class heatmaps for one image");
  explain->add_option("--manifest", xo.manifest, "manifest file")->required();
  explain->add_option("--checkpoint", xo.checkpoint, "checkpoint file")->required();
  explain->add_option("--image", xo.image, "image path as stored in the manifest")->required();
  explain->add_option("--class", xo.class_id, "class id (default: every detected class)");
  explain->add_option("--mode", xo.mode, "gradcam or gradcam++ (default gradcam++)");
  explain->add_option("--out", xo.out_dir, "output directory (default .)");
  explain->add_option("--anchors", xo.anchors, "anchor config used at training time");
  explain->callback([&] { cmd_explain(xo, out); });

  SynthOpts yo;
  CLI::App* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  synth->add_option("--out", yo.out_dir, "output directory")->required();
  synth->add_option("--count", yo.count, "total object count across classes");
  synth->add_option("--per-class", yo.per_class, "comma-separated object counts per class");
  synth->add_option("--size", yo.size, "square image size in pixels");
  synth->add_option("--noise", yo.noise, "speckle amplitude in [0, 1]");
  synth->add_option("--split", yo.split, "train:val:test shares (empty = no split tags)");
  synth->add_flag("--augment", yo.augment, "append mirrored/rotated copies");
  synth->add_option("--seed", yo.seed, "generation seed")->required();
  synth->callback([&] { cmd_synth(yo, out); });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace seadet::cli
