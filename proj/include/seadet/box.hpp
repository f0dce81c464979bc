#pragma once

#include <algorithm>
#include <cmath>

#include "seadet/common.hpp"

namespace seadet {

enum class BoxRepr { center_size, corners };
enum class BoxSpace { absolute, unit };

// Axis-aligned box. The four values are interpreted per `repr`; accessors
// work for either representation. `space` tags whether coordinates are pixels
// or fractions of the image, so mixed-space comparisons can be rejected.
struct Box {
  Real v0 = 0, v1 = 0, v2 = 0, v3 = 0;
  BoxRepr repr = BoxRepr::center_size;
  BoxSpace space = BoxSpace::absolute;

  static Box center_size(Real cx, Real cy, Real w, Real h,
                         BoxSpace space = BoxSpace::absolute) {
    return Box{cx, cy, w, h, BoxRepr::center_size, space};
  }
  static Box corners(Real x1, Real y1, Real x2, Real y2,
                     BoxSpace space = BoxSpace::absolute) {
    return Box{x1, y1, x2, y2, BoxRepr::corners, space};
  }

  Real cx() const { return repr == BoxRepr::center_size ? v0 : (v0 + v2) / 2; }
  Real cy() const { return repr == BoxRepr::center_size ? v1 : (v1 + v3) / 2; }
  Real w() const { return repr == BoxRepr::center_size ? v2 : v2 - v0; }
  Real h() const { return repr == BoxRepr::center_size ? v3 : v3 - v1; }
  Real x1() const { return repr == BoxRepr::corners ? v0 : v0 - v2 / 2; }
  Real y1() const { return repr == BoxRepr::corners ? v1 : v1 - v3 / 2; }
  Real x2() const { return repr == BoxRepr::corners ? v2 : v0 + v2 / 2; }
  Real y2() const { return repr == BoxRepr::corners ? v3 : v1 + v3 / 2; }

  Real area() const { return w() * h(); }
  bool valid() const { return w() > 0 && h() > 0; }

  void validate() const { check(valid(), "degenerate box (nonpositive width or height)"); }
};

inline Box convert_box(const Box& b, BoxRepr target) {
  b.validate();
  if (b.repr == target) return b;
  if (target == BoxRepr::corners) return Box::corners(b.x1(), b.y1(), b.x2(), b.y2(), b.space);
  return Box::center_size(b.cx(), b.cy(), b.w(), b.h(), b.space);
}

inline Real iou(const Box& a, const Box& b) {
  check(a.space == b.space, "iou of boxes in different coordinate spaces");
  a.validate();
  b.validate();
  const Real ix = std::max(Real(0), std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const Real iy = std::max(Real(0), std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const Real inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Pixel box -> unit box: each coordinate divided by the matching image extent
// and clamped into [0, 1]. `clamped`, when given, reports whether any
// coordinate actually hit the clamp (border-jitter bookkeeping for parsers).
inline Box normalize_box(const Box& b, Real image_w, Real image_h, bool* clamped = nullptr) {
  check(image_w > 0 && image_h > 0, "normalize_box: image extents must be positive");
  check(b.space == BoxSpace::absolute, "normalize_box expects a pixel-space box");
  b.validate();
  auto clamp01 = [&](Real v) {
    const Real c = std::clamp(v, Real(0), Real(1));
    if (clamped && c != v) *clamped = true;
    return c;
  };
  if (clamped) *clamped = false;
  Box out = b;
  out.space = BoxSpace::unit;
  out.v0 = clamp01(b.v0 / image_w);
  out.v1 = clamp01(b.v1 / image_h);
  out.v2 = clamp01(b.v2 / image_w);
  out.v3 = clamp01(b.v3 / image_h);
  out.validate();
  return out;
}

// Detection / ground-truth records shared by the head and the metric suite.
struct Detection {
  int class_id = 0;
  Real score = 0;
  Box box;
};

struct GroundTruthBox {
  int class_id = 0;
  Box box;
};

}  // namespace seadet
