#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "seadet/box.hpp"
#include "seadet/common.hpp"
#include "seadet/dataio.hpp"
#include "seadet/image.hpp"

// Deterministic synthetic detection set: murky low-contrast background with
// 1-3 colored silhouettes per image, one silhouette style per class, and
// annotations that are the exact extents of the drawn shapes.

namespace seadet {

struct SynthSpec {
  int image_w = 64;
  int image_h = 64;
  std::vector<int> class_counts;  // objects per class; size must match classes
  double noise = 0.05;            // per-channel uniform speckle amplitude
  std::vector<std::string> classes = default_class_table();
};

namespace detail {

struct Rgb {
  std::uint8_t r, g, b;
};

inline constexpr Rgb kBackground{45, 75, 85};

inline Rgb class_color(int cls) {
  static constexpr Rgb palette[6] = {
      {175, 60, 45},    // wide flat body
      {205, 185, 60},   // big oval
      {195, 200, 210},  // dotted cluster
      {225, 125, 45},   // small oval
      {230, 130, 150},  // triangle
      {150, 85, 205},   // ring
  };
  return palette[cls % 6];
}

inline void put(ImageU8& img, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

inline void fill_rect(ImageU8& img, int x0, int y0, int w, int h, Rgb c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) put(img, x, y, c);
}

// inscribed ellipse; extents must be odd so the extreme pixels land exactly
inline void fill_ellipse(ImageU8& img, int x0, int y0, int w, int h, Rgb c) {
  const double cx = x0 + (w - 1) / 2.0, cy = y0 + (h - 1) / 2.0;
  const double rx = (w - 1) / 2.0, ry = (h - 1) / 2.0;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      const double dx = rx > 0 ? (x - cx) / rx : 0.0;
      const double dy = ry > 0 ? (y - cy) / ry : 0.0;
      if (dx * dx + dy * dy <= 1.0 + 1e-9) put(img, x, y, c);
    }
}

inline void fill_ring(ImageU8& img, int x0, int y0, int w, int h, Rgb c) {
  const double cx = x0 + (w - 1) / 2.0, cy = y0 + (h - 1) / 2.0;
  const double rx = (w - 1) / 2.0, ry = (h - 1) / 2.0;
  const double ri = 0.55;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      const double dx = rx > 0 ? (x - cx) / rx : 0.0;
      const double dy = ry > 0 ? (y - cy) / ry : 0.0;
      const double d = dx * dx + dy * dy;
      if (d <= 1.0 + 1e-9 && d >= ri * ri - 1e-9) put(img, x, y, c);
    }
}

// apex at the top-center pixel, base along the bottom edge
inline void fill_triangle(ImageU8& img, int x0, int y0, int w, int h, Rgb c) {
  const double apex = x0 + (w - 1) / 2.0;
  for (int y = y0; y < y0 + h; ++y) {
    const double frac = h > 1 ? static_cast<double>(y - y0) / (h - 1) : 1.0;
    const double half = frac * (w - 1) / 2.0;
    const int xa = static_cast<int>(std::ceil(apex - half - 1e-9));
    const int xb = static_cast<int>(std::floor(apex + half + 1e-9));
    for (int x = xa; x <= xb; ++x) put(img, x, y, c);
  }
}

// 3x3 grid of square dots whose outer dots touch the box edges
inline void fill_dots(ImageU8& img, int x0, int y0, int w, int h, Rgb c) {
  const int d = std::max(2, std::min(w, h) / 4);
  const int gx[3] = {x0, x0 + (w - d) / 2, x0 + w - d};
  const int gy[3] = {y0, y0 + (h - d) / 2, y0 + h - d};
  for (int iy = 0; iy < 3; ++iy)
    for (int ix = 0; ix < 3; ++ix) fill_rect(img, gx[ix], gy[iy], d, d, c);
}

inline void draw_object(ImageU8& img, int cls, int x0, int y0, int w, int h) {
  const Rgb c = class_color(cls);
  switch (cls % 6) {
    case 0: fill_rect(img, x0, y0, w, h, c); break;
    case 1: fill_ellipse(img, x0, y0, w, h, c); break;
    case 2: fill_dots(img, x0, y0, w, h, c); break;
    case 3: fill_ellipse(img, x0, y0, w, h, c); break;
    case 4: fill_triangle(img, x0, y0, w, h, c); break;
    default: fill_ring(img, x0, y0, w, h, c); break;
  }
}

// box extents per class relative to a base size; ellipse-like shapes get odd
// extents so their drawn extremes match the box exactly
inline std::pair<int, int> object_extent(int cls, int base) {
  auto odd = [](int v) { return v | 1; };
  switch (cls % 6) {
    case 0: return {std::max(4, base * 8 / 5), std::max(3, base * 4 / 5)};
    case 1: return {odd(std::max(5, base * 7 / 5)), odd(std::max(5, base))};
    case 2: return {std::max(6, base * 3 / 2), std::max(6, base * 6 / 5)};
    case 3: return {odd(std::max(3, base * 7 / 10)), odd(std::max(3, base / 2))};
    case 4: return {odd(std::max(4, base)), std::max(4, base * 9 / 10)};
    default: return {odd(std::max(5, base)), odd(std::max(5, base))};
  }
}

}  // namespace detail

// Generates images + YOLO files + a manifest file under out_dir. Everything
// is driven by one seeded stream, so a fixed (spec, seed) is byte-identical.
inline DatasetManifest generate_synthetic_dataset(const SynthSpec& spec, std::uint64_t seed,
                                                  const fs::path& out_dir) {
  check(spec.image_w > 0 && spec.image_h > 0, "synthetic image size must be positive");
  check(spec.class_counts.size() == spec.classes.size(),
        "class_counts must have one entry per class");
  check(spec.noise >= 0 && spec.noise <= 1, "noise level must lie in [0, 1]");
  std::int64_t total = 0;
  for (int c : spec.class_counts) {
    check(c >= 0, "class counts must be nonnegative");
    total += c;
  }
  check(total > 0, "at least one object required");

  fs::create_directories(out_dir);
  Rng rng(seed);

  std::vector<int> pool;
  for (std::size_t c = 0; c < spec.class_counts.size(); ++c)
    pool.insert(pool.end(), static_cast<std::size_t>(spec.class_counts[c]), static_cast<int>(c));
  rng.shuffle(pool);

  DatasetManifest m;
  m.root = out_dir;
  m.classes = spec.classes;

  const int min_dim = std::min(spec.image_w, spec.image_h);
  const int base_lo = std::max(4, min_dim / 6), base_hi = std::max(base_lo, min_dim / 3);

  std::size_t next = 0;
  int image_index = 0;
  while (next < pool.size()) {
    const std::size_t remaining = pool.size() - next;
    const std::size_t m_objs =
        std::min<std::size_t>(remaining, static_cast<std::size_t>(rng.uniform_int(1, 3)));

    ImageU8 img = ImageU8::filled(spec.image_w, spec.image_h, 3);
    for (int y = 0; y < spec.image_h; ++y)
      for (int x = 0; x < spec.image_w; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const double bg = ch == 0   ? detail::kBackground.r
                            : ch == 1 ? detail::kBackground.g
                                      : detail::kBackground.b;
          const double v = bg + (rng.uniform() * 2.0 - 1.0) * spec.noise * 255.0;
          img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }

    ManifestRecord rec;
    rec.width = spec.image_w;
    rec.height = spec.image_h;
    char name[32];
    std::snprintf(name, sizeof name, "img_%06d.ppm", image_index);
    rec.image = name;

    std::vector<Box> placed;
    for (std::size_t k = 0; k < m_objs; ++k) {
      const int cls = pool[next++];
      const int base = static_cast<int>(rng.uniform_int(base_lo, base_hi));
      auto [bw, bh] = detail::object_extent(cls, base);
      bw = std::min(bw, spec.image_w - 2);
      bh = std::min(bh, spec.image_h - 2);
      int x0 = 1, y0 = 1;
      for (int attempt = 0; attempt < 20; ++attempt) {
        x0 = static_cast<int>(rng.uniform_int(1, spec.image_w - bw - 1));
        y0 = static_cast<int>(rng.uniform_int(1, spec.image_h - bh - 1));
        const Box cand = Box::corners(static_cast<Real>(x0), static_cast<Real>(y0),
                                      static_cast<Real>(x0 + bw), static_cast<Real>(y0 + bh));
        Real worst = 0;
        for (const Box& p : placed) worst = std::max(worst, iou(cand, p));
        if (worst < Real(0.15)) break;
      }
      placed.push_back(Box::corners(static_cast<Real>(x0), static_cast<Real>(y0),
                                    static_cast<Real>(x0 + bw), static_cast<Real>(y0 + bh)));
      detail::draw_object(img, cls, x0, y0, bw, bh);
      rec.boxes.push_back(
          {cls, Box::center_size((x0 + bw * 0.5) / spec.image_w, (y0 + bh * 0.5) / spec.image_h,
                                 static_cast<Real>(bw) / spec.image_w,
                                 static_cast<Real>(bh) / spec.image_h, BoxSpace::unit)});
    }

    write_pnm(out_dir / rec.image, img);
    m.records.push_back(std::move(rec));
    ++image_index;
  }

  write_yolo_annotations(m, out_dir);
  write_manifest(m, out_dir / "manifest.txt");
  return m;
}

// Seeded augmentation: appends a mirrored or half-turned copy of every record
// (choice drawn per record), with boxes transformed to match.
inline void augment_dataset(DatasetManifest& m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ManifestRecord> extra;
  for (const auto& rec : m.records) {
    const bool mirror = rng.uniform() < 0.5;
    ImageU8 img = read_pnm(m.image_path(rec));
    ManifestRecord aug = rec;
    aug.image = fs::path(rec.image).stem().string() + "_aug.ppm";
    for (auto& a : aug.boxes) {
      Box b = convert_box(a.box, BoxRepr::center_size);
      b.v0 = 1 - b.v0;
      if (!mirror) b.v1 = 1 - b.v1;
      a.box = b;
    }
    write_pnm(m.root / aug.image, mirror ? flip_horizontal(img) : rotate_180(img));
    extra.push_back(std::move(aug));
  }
  m.records.insert(m.records.end(), extra.begin(), extra.end());
}

}  // namespace seadet
