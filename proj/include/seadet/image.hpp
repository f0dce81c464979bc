#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seadet/common.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

// Interleaved 8-bit image; channels = 1 (gray) or 3 (rgb).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }

  static ImageU8 filled(int w, int h, int ch, std::uint8_t v = 0) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = ch;
    img.pixels.assign(static_cast<std::size_t>(w) * h * ch, v);
    return img;
  }
};

namespace detail {

inline int pnm_token(std::istream& is, const std::string& path) {
  // skip whitespace and '#' comments, then read one nonnegative integer
  int ch = is.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#')
      while (ch != EOF && ch != '\n') ch = is.get();
    ch = is.get();
  }
  data_check(ch != EOF && std::isdigit(ch), "malformed header in " + path);
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    data_check(v <= 1 << 30, "header value out of range in " + path);
    ch = is.get();
  }
  if (ch != EOF) is.unget();
  return static_cast<int>(v);
}

}  // namespace detail

// Binary PGM (P5) / PPM (P6), maxval 255.
inline ImageU8 read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  data_check(f.good(), "cannot open image: " + path.string());
  std::string magic(2, '\0');
  f.read(magic.data(), 2);
  data_check(f.good() && (magic == "P5" || magic == "P6"),
             "unsupported image format (want P5/P6): " + path.string());
  ImageU8 img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = detail::pnm_token(f, path.string());
  img.height = detail::pnm_token(f, path.string());
  const int maxval = detail::pnm_token(f, path.string());
  data_check(img.width > 0 && img.height > 0, "bad image extents: " + path.string());
  data_check(maxval == 255, "only maxval 255 supported: " + path.string());
  f.get();  // the single whitespace after the header
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  data_check(f.gcount() == static_cast<std::streamsize>(img.pixels.size()),
             "truncated image data: " + path.string());
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const ImageU8& img) {
  check(img.channels == 1 || img.channels == 3, "write_pnm: 1 or 3 channels expected");
  check(img.width > 0 && img.height > 0, "write_pnm: empty image");
  std::ofstream f(path, std::ios::binary);
  data_check(f.good(), "cannot open for writing: " + path.string());
  f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  data_check(f.good(), "write failed: " + path.string());
}

// Reads just width/height (cheap manifest building).
inline std::pair<int, int> read_pnm_size(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  data_check(f.good(), "cannot open image: " + path.string());
  std::string magic(2, '\0');
  f.read(magic.data(), 2);
  data_check(f.good() && (magic == "P5" || magic == "P6"),
             "unsupported image format (want P5/P6): " + path.string());
  const int w = detail::pnm_token(f, path.string());
  const int h = detail::pnm_token(f, path.string());
  data_check(w > 0 && h > 0, "bad image extents: " + path.string());
  return {w, h};
}

// {H, W, C} tensor in [0, 1]
inline Tensor image_to_tensor(const ImageU8& img) {
  Tensor t({img.height, img.width, img.channels});
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<Real>(img.pixels[static_cast<std::size_t>(i)]) / Real(255);
  return t;
}

inline ImageU8 tensor_to_image(const Tensor& t) {
  check(t.rank() == 3 && (t.extent(2) == 1 || t.extent(2) == 3),
        "tensor_to_image: {H, W, 1|3} tensor expected");
  ImageU8 img = ImageU8::filled(t.extent(1), t.extent(0), t.extent(2));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const Real v = std::clamp(t[i], Real(0), Real(1));
    img.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
  }
  return img;
}

inline ImageU8 flip_horizontal(const ImageU8& img) {
  ImageU8 out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

inline ImageU8 rotate_180(const ImageU8& img) {
  ImageU8 out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(img.height - 1 - y, img.width - 1 - x, c);
  return out;
}

}  // namespace seadet
