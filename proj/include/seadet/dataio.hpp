#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seadet/box.hpp"
#include "seadet/common.hpp"
#include "seadet/image.hpp"

namespace seadet {

namespace fs = std::filesystem;

inline const std::vector<std::string>& default_class_table() {
  static const std::vector<std::string> table{"Crab",       "Fish-big", "Fish-school",
                                              "fish-small", "shrimp",   "jellyfish"};
  return table;
}

struct ImageAnnotation {
  int class_id = 0;
  Box box;  // unit-space center/size
};

struct ManifestRecord {
  std::string image;  // path relative to the manifest root
  int width = 0;
  int height = 0;
  std::string split;  // "train" | "val" | "test" | "" (untagged)
  std::vector<ImageAnnotation> boxes;
};

struct DatasetManifest {
  fs::path root;
  std::vector<std::string> classes = default_class_table();
  std::vector<ManifestRecord> records;

  fs::path image_path(const ManifestRecord& r) const { return root / r.image; }
};

enum class AnnotationFormat { yolo_txt, coco_json };

struct ParseOptions {
  bool drop_unlabeled = false;          // skip images with no annotation file
  std::vector<std::string> classes = default_class_table();
  int* clamped_count = nullptr;         // reports boxes pulled back into [0, 1]
};

namespace detail {

inline std::string fmt_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

// Parse + validate one unit-space center/size box; corners outside [0, 1] are
// clamped back (border jitter), degenerate results are rejected.
inline Box sanitize_unit_box(Real cx, Real cy, Real w, Real h, const std::string& where,
                             int* clamped_count) {
  data_check(w > 0 && h > 0, "degenerate box in " + where);
  Box b = Box::center_size(cx, cy, w, h, BoxSpace::unit);
  const Real x1 = b.x1(), y1 = b.y1(), x2 = b.x2(), y2 = b.y2();
  if (x1 < 0 || y1 < 0 || x2 > 1 || y2 > 1 || cx < 0 || cy < 0) {
    const Real cx1 = std::clamp(x1, Real(0), Real(1)), cy1 = std::clamp(y1, Real(0), Real(1));
    const Real cx2 = std::clamp(x2, Real(0), Real(1)), cy2 = std::clamp(y2, Real(0), Real(1));
    data_check(cx2 > cx1 && cy2 > cy1, "box entirely outside the image in " + where);
    if (clamped_count) ++*clamped_count;
    b = convert_box(Box::corners(cx1, cy1, cx2, cy2, BoxSpace::unit), BoxRepr::center_size);
  }
  return b;
}

inline std::vector<ImageAnnotation> parse_yolo_lines(std::istream& is, const std::string& where,
                                                     int num_classes, int* clamped_count) {
  std::vector<ImageAnnotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    int cls = -1;
    double cx, cy, w, h;
    std::string trailing;
    const std::string ctx = where + ":" + std::to_string(lineno);
    data_check(static_cast<bool>(ls >> cls >> cx >> cy >> w >> h), "malformed line at " + ctx);
    data_check(!(ls >> trailing), "trailing tokens at " + ctx);
    data_check(cls >= 0 && cls < num_classes, "unknown class id at " + ctx);
    out.push_back({cls, sanitize_unit_box(static_cast<Real>(cx), static_cast<Real>(cy),
                                          static_cast<Real>(w), static_cast<Real>(h), ctx,
                                          clamped_count)});
  }
  return out;
}

}  // namespace detail

// ---- YOLO-TXT ----

// Directory layout: per image one <stem>.ppm/.pgm and one <stem>.txt with
// lines `class cx cy w h` in unit coordinates. An annotation without its image
// is an error; an image without its annotation is an error unless
// drop_unlabeled is set.
inline DatasetManifest parse_yolo_directory(const fs::path& dir, const ParseOptions& opt = {}) {
  data_check(fs::is_directory(dir), "not a directory: " + dir.string());
  DatasetManifest m;
  m.root = dir;
  m.classes = opt.classes;
  std::map<std::string, fs::path> images;  // stem -> image path, sorted by stem
  std::map<std::string, fs::path> labels;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path p = e.path();
    const std::string ext = p.extension().string();
    if (ext == ".ppm" || ext == ".pgm")
      images[p.stem().string()] = p;
    else if (ext == ".txt" && p.filename() != "manifest.txt")
      labels[p.stem().string()] = p;
  }
  for (const auto& [stem, lp] : labels)
    data_check(images.count(stem) != 0, "annotation without matching image: " + lp.string());
  for (const auto& [stem, ip] : images) {
    auto li = labels.find(stem);
    if (li == labels.end()) {
      data_check(opt.drop_unlabeled, "image without annotations (use drop_unlabeled to skip): " +
                                         ip.string());
      continue;
    }
    ManifestRecord rec;
    rec.image = ip.filename().string();
    std::tie(rec.width, rec.height) = read_pnm_size(ip);
    std::ifstream f(li->second);
    data_check(f.good(), "cannot open: " + li->second.string());
    rec.boxes = detail::parse_yolo_lines(f, li->second.string(),
                                         static_cast<int>(m.classes.size()), opt.clamped_count);
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline void write_yolo_annotations(const DatasetManifest& m, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& rec : m.records) {
    const fs::path p = dir / (fs::path(rec.image).stem().string() + ".txt");
    std::ofstream f(p);
    data_check(f.good(), "cannot open for writing: " + p.string());
    for (const auto& a : rec.boxes) {
      const Box b = convert_box(a.box, BoxRepr::center_size);
      f << a.class_id << ' ' << detail::fmt_real(b.cx()) << ' ' << detail::fmt_real(b.cy()) << ' '
        << detail::fmt_real(b.w()) << ' ' << detail::fmt_real(b.h()) << '\n';
    }
    data_check(f.good(), "write failed: " + p.string());
  }
}

// ---- COCO-JSON subset ----

// Only images[{id, file_name, width, height}] and
// annotations[{image_id, category_id, bbox:[x, y, w, h] absolute}] are read;
// anything else is ignored. category_id is the 0-based class id.
inline DatasetManifest parse_coco_json(const fs::path& json_path, const ParseOptions& opt = {}) {
  std::ifstream f(json_path);
  data_check(f.good(), "cannot open: " + json_path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + json_path.string() + ": " + e.what());
  }
  data_check(j.contains("images") && j["images"].is_array(), "missing images[] in " + json_path.string());
  data_check(j.contains("annotations") && j["annotations"].is_array(),
             "missing annotations[] in " + json_path.string());

  DatasetManifest m;
  m.root = json_path.parent_path();
  m.classes = opt.classes;

  std::map<std::int64_t, ManifestRecord> by_id;
  try {
    for (const auto& im : j["images"]) {
      ManifestRecord rec;
      const auto id = im.at("id").get<std::int64_t>();
      rec.image = im.at("file_name").get<std::string>();
      rec.width = im.at("width").get<int>();
      rec.height = im.at("height").get<int>();
      data_check(rec.width > 0 && rec.height > 0, "bad image extents for " + rec.image);
      data_check(fs::exists(m.root / rec.image), "listed image file missing: " + rec.image);
      data_check(by_id.emplace(id, std::move(rec)).second,
                 "duplicate image id " + std::to_string(id));
    }
    for (const auto& an : j["annotations"]) {
      const auto img_id = an.at("image_id").get<std::int64_t>();
      auto it = by_id.find(img_id);
      data_check(it != by_id.end(), "annotation references unknown image id " + std::to_string(img_id));
      ManifestRecord& rec = it->second;
      const int cls = an.at("category_id").get<int>();
      data_check(cls >= 0 && cls < static_cast<int>(m.classes.size()),
                 "unknown class id " + std::to_string(cls));
      const auto& bb = an.at("bbox");
      data_check(bb.is_array() && bb.size() == 4, "bbox must be [x, y, w, h]");
      const Real x = bb[0].get<Real>(), y = bb[1].get<Real>();
      const Real w = bb[2].get<Real>(), h = bb[3].get<Real>();
      data_check(w > 0 && h > 0, "degenerate bbox for image id " + std::to_string(img_id));
      bool clamped = false;
      const Box unit = normalize_box(Box::center_size(x + w / 2, y + h / 2, w, h),
                                     static_cast<Real>(rec.width), static_cast<Real>(rec.height),
                                     &clamped);
      if (clamped && opt.clamped_count) ++*opt.clamped_count;
      rec.boxes.push_back({cls, unit});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid COCO structure in " + json_path.string() + ": " + e.what());
  }
  for (auto& [id, rec] : by_id) {
    (void)id;
    if (rec.boxes.empty()) {
      data_check(opt.drop_unlabeled,
                 "image without annotations (use drop_unlabeled to skip): " + rec.image);
      continue;
    }
    m.records.push_back(std::move(rec));
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.image < b.image; });
  return m;
}

inline void write_coco_annotations(const DatasetManifest& m, const fs::path& json_path) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  j["annotations"] = nlohmann::json::array();
  std::int64_t ann_id = 1;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& rec = m.records[i];
    j["images"].push_back({{"id", static_cast<std::int64_t>(i) + 1},
                           {"file_name", rec.image},
                           {"width", rec.width},
                           {"height", rec.height}});
    for (const auto& a : rec.boxes) {
      const Box b = convert_box(a.box, BoxRepr::center_size);
      const double w = static_cast<double>(b.w()) * rec.width;
      const double h = static_cast<double>(b.h()) * rec.height;
      const double x = static_cast<double>(b.cx()) * rec.width - w / 2;
      const double y = static_cast<double>(b.cy()) * rec.height - h / 2;
      j["annotations"].push_back({{"id", ann_id++},
                                  {"image_id", static_cast<std::int64_t>(i) + 1},
                                  {"category_id", a.class_id},
                                  {"bbox", {x, y, w, h}}});
    }
  }
  std::ofstream f(json_path);
  data_check(f.good(), "cannot open for writing: " + json_path.string());
  f << j.dump(2) << "\n";
  data_check(f.good(), "write failed: " + json_path.string());
}

inline DatasetManifest parse_annotations(const fs::path& path, AnnotationFormat fmt,
                                         const ParseOptions& opt = {}) {
  return fmt == AnnotationFormat::yolo_txt ? parse_yolo_directory(path, opt)
                                           : parse_coco_json(path, opt);
}

// ---- manifest index file ----

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream f(path);
  data_check(f.good(), "cannot open for writing: " + path.string());
  f << "seadet-manifest 1\n";
  f << "classes";
  for (const auto& c : m.classes) {
    check(c.find(' ') == std::string::npos, "class names must not contain spaces");
    f << ' ' << c;
  }
  f << "\n";
  for (const auto& rec : m.records) {
    f << "image " << rec.image << ' ' << rec.width << ' ' << rec.height << ' '
      << (rec.split.empty() ? "-" : rec.split) << ' ' << rec.boxes.size() << "\n";
    for (const auto& a : rec.boxes) {
      const Box b = convert_box(a.box, BoxRepr::center_size);
      f << a.class_id << ' ' << detail::fmt_real(b.cx()) << ' ' << detail::fmt_real(b.cy()) << ' '
        << detail::fmt_real(b.w()) << ' ' << detail::fmt_real(b.h()) << "\n";
    }
  }
  data_check(f.good(), "write failed: " + path.string());
}

inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  data_check(f.good(), "cannot open manifest: " + path.string());
  std::string line;
  data_check(static_cast<bool>(std::getline(f, line)) && line == "seadet-manifest 1",
             "unrecognized manifest header in " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  data_check(static_cast<bool>(std::getline(f, line)), "missing classes line");
  {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    data_check(key == "classes", "expected classes line");
    m.classes.clear();
    std::string name;
    while (ls >> name) m.classes.push_back(name);
    data_check(!m.classes.empty(), "empty class table");
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    data_check(key == "image", "expected image line, got: " + line);
    ManifestRecord rec;
    std::size_t nboxes = 0;
    data_check(static_cast<bool>(ls >> rec.image >> rec.width >> rec.height >> rec.split >> nboxes),
               "malformed image line: " + line);
    data_check(rec.width > 0 && rec.height > 0, "bad extents: " + line);
    if (rec.split == "-") rec.split.clear();
    data_check(rec.split.empty() || rec.split == "train" || rec.split == "val" ||
                   rec.split == "test",
               "unknown split tag: " + rec.split);
    for (std::size_t i = 0; i < nboxes; ++i) {
      data_check(static_cast<bool>(std::getline(f, line)), "truncated manifest");
      std::istringstream bs(line);
      int cls;
      double cx, cy, w, h;
      data_check(static_cast<bool>(bs >> cls >> cx >> cy >> w >> h), "malformed box line: " + line);
      data_check(cls >= 0 && cls < static_cast<int>(m.classes.size()), "unknown class id: " + line);
      rec.boxes.push_back(
          {cls, detail::sanitize_unit_box(static_cast<Real>(cx), static_cast<Real>(cy),
                                          static_cast<Real>(w), static_cast<Real>(h),
                                          path.string(), nullptr)});
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

// ---- splitting ----

// Seeded shuffle then contiguous assignment. Validation/test sizes round to
// the nearest integer; whatever remains (rounding slack included) is train.
inline void normalize_and_split(DatasetManifest& m, std::array<double, 3> ratios,
                                std::uint64_t seed) {
  for (double r : ratios) check(r > 0, "split ratios must be positive");
  check(std::abs(ratios[0] + ratios[1] + ratios[2] - 100.0) <= 1e-9,
        "split ratios must sum to 100");
  const int n = static_cast<int>(m.records.size());
  data_check(n > 0, "cannot split an empty manifest");
  const int n_val = static_cast<int>(std::llround(ratios[1] / 100.0 * n));
  const int n_test = static_cast<int>(std::llround(ratios[2] / 100.0 * n));
  const int n_train = n - n_val - n_test;
  check(n_train >= 0, "split ratios leave no room for the train set");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (int i = 0; i < n; ++i) {
    const char* tag = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    m.records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].split = tag;
  }
}

inline std::vector<const ManifestRecord*> split_records(const DatasetManifest& m,
                                                        const std::string& split) {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : m.records)
    if (r.split == split) out.push_back(&r);
  return out;
}

// ---- class statistics ----

struct ClassStats {
  std::vector<std::int64_t> counts;
  double mean = 0;
  double variance = 0;  // population
  double stddev = 0;
};

inline ClassStats class_statistics(const std::vector<std::int64_t>& counts) {
  data_check(!counts.empty(), "class_statistics: empty count list");
  ClassStats s;
  s.counts = counts;
  for (auto c : counts) s.mean += static_cast<double>(c);
  s.mean /= static_cast<double>(counts.size());
  for (auto c : counts) s.variance += (static_cast<double>(c) - s.mean) * (static_cast<double>(c) - s.mean);
  s.variance /= static_cast<double>(counts.size());
  s.stddev = std::sqrt(s.variance);
  return s;
}

struct ClassStatsDisplay {
  std::string mean, variance, stddev;
};

// 2-decimal display. The variance is shown as the square of the 2-decimal
// standard deviation so the three printed numbers stay mutually consistent.
inline ClassStatsDisplay format_class_stats(const ClassStats& s) {
  auto f2 = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  const double std2 = std::round(s.stddev * 100.0) / 100.0;
  return {f2(s.mean), f2(std2 * std2), f2(s.stddev)};
}

inline std::vector<std::int64_t> manifest_class_counts(const DatasetManifest& m) {
  std::vector<std::int64_t> counts(m.classes.size(), 0);
  for (const auto& rec : m.records)
    for (const auto& a : rec.boxes) counts[static_cast<std::size_t>(a.class_id)]++;
  return counts;
}

// Largest-remainder allocation: per-class targets proportional to
// `proportions`, summing exactly to `total`.
inline std::vector<int> scale_class_counts(const std::vector<std::int64_t>& proportions,
                                           int total) {
  check(!proportions.empty() && total >= 0, "scale_class_counts: bad arguments");
  double psum = 0;
  for (auto p : proportions) {
    check(p >= 0, "proportions must be nonnegative");
    psum += static_cast<double>(p);
  }
  check(psum > 0, "proportions must not all be zero");
  std::vector<int> out(proportions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    const double exact = static_cast<double>(proportions[i]) / psum * total;
    out[i] = static_cast<int>(std::floor(exact));
    assigned += out[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;  // biggest remainder first; ties keep class order
  });
  for (int i = 0; i < total - assigned; ++i) out[rem[static_cast<std::size_t>(i)].second]++;
  return out;
}

}  // namespace seadet
