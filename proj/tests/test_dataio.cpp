#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "seadet/dataio.hpp"
#include "seadet/image.hpp"
#include "seadet/synth.hpp"

using namespace seadet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("seadet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ImageU8 tiny_image(int w, int h, int channels) {
  ImageU8 img = ImageU8::filled(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>((y * 31 + x * 7 + c * 101) % 256);
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("pnm files round-trip for color and gray") {
  const fs::path dir = fresh_dir("pnm");
  for (int channels : {1, 3}) {
    ImageU8 img = tiny_image(9, 5, channels);
    const fs::path p = dir / (channels == 1 ? "g.pgm" : "c.ppm");
    write_pnm(p, img);
    ImageU8 back = read_pnm(p);
    CHECK(back.width == 9);
    CHECK(back.height == 5);
    CHECK(back.channels == channels);
    CHECK(back.pixels == img.pixels);
    auto [w, h] = read_pnm_size(p);
    CHECK(w == 9);
    CHECK(h == 5);
  }
}

TEST_CASE("pnm parser honors comments and rejects junk") {
  const fs::path dir = fresh_dir("pnm_hdr");
  {
    std::ofstream f(dir / "commented.pgm", std::ios::binary);
    f << "P5\n# a comment\n2 # inline\n2\n255\n";
    f.write("\x01\x02\x03\x04", 4);
  }
  ImageU8 img = read_pnm(dir / "commented.pgm");
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.at(1, 1, 0) == 4);

  {
    std::ofstream f(dir / "maxval.pgm", std::ios::binary);
    f << "P5\n2 2\n65535\n";
    f.write("\x01\x02\x03\x04", 4);
  }
  CHECK_THROWS_AS(read_pnm(dir / "maxval.pgm"), DataError);

  {
    std::ofstream f(dir / "short.ppm", std::ios::binary);
    f << "P6\n2 2\n255\n";
    f.write("\x01\x02", 2);
  }
  CHECK_THROWS_AS(read_pnm(dir / "short.ppm"), DataError);
  CHECK_THROWS_AS(read_pnm(dir / "missing.ppm"), DataError);
}

TEST_CASE("image/tensor conversion is exact for 8-bit data") {
  ImageU8 img = tiny_image(6, 4, 3);
  Tensor t = image_to_tensor(img);
  CHECK(t.extent(0) == 4);
  CHECK(t.extent(1) == 6);
  CHECK(t.extent(2) == 3);
  CHECK(t.at(2, 5, 1) == doctest::Approx(img.at(2, 5, 1) / 255.0));
  ImageU8 back = tensor_to_image(t);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("unit box sanitizer clamps overhang and rejects garbage") {
  int clamped = 0;
  Box ok = detail::sanitize_unit_box(0.5, 0.5, 0.2, 0.2, "t", &clamped);
  CHECK(clamped == 0);
  CHECK(ok.cx() == doctest::Approx(0.5));

  Box pulled = detail::sanitize_unit_box(0.98, 0.5, 0.2, 0.2, "t", &clamped);
  CHECK(clamped == 1);
  CHECK(pulled.x2() == doctest::Approx(1.0));
  CHECK(pulled.x1() == doctest::Approx(0.88));

  CHECK_THROWS_AS(detail::sanitize_unit_box(5.0, 5.0, 0.2, 0.2, "t", nullptr), DataError);
  CHECK_THROWS_AS(detail::sanitize_unit_box(0.5, 0.5, 0.0, 0.2, "t", nullptr), DataError);
}

TEST_CASE("yolo directory parsing is strict") {
  const fs::path dir = fresh_dir("yolo");
  write_pnm(dir / "a.ppm", tiny_image(10, 8, 3));
  write_pnm(dir / "b.ppm", tiny_image(10, 8, 3));
  std::ofstream(dir / "a.txt") << "0 0.5 0.5 0.2 0.2\r\n3 0.25 0.25 0.1 0.1\n";
  std::ofstream(dir / "b.txt") << "1 0.5 0.5 0.4 0.4\n";

  DatasetManifest m = parse_yolo_directory(dir);
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].image == "a.ppm");
  CHECK(m.records[0].width == 10);
  CHECK(m.records[0].height == 8);
  REQUIRE(m.records[0].boxes.size() == 2);
  CHECK(m.records[0].boxes[1].class_id == 3);
  CHECK(m.records[0].boxes[1].box.cx() == doctest::Approx(0.25));

  SUBCASE("trailing tokens are rejected") {
    std::ofstream(dir / "a.txt") << "0 0.5 0.5 0.2 0.2 extra\n";
    CHECK_THROWS_AS(parse_yolo_directory(dir), DataError);
  }
  SUBCASE("class id outside the table is rejected") {
    std::ofstream(dir / "a.txt") << "17 0.5 0.5 0.2 0.2\n";
    CHECK_THROWS_AS(parse_yolo_directory(dir), DataError);
  }
  SUBCASE("labels without an image are rejected") {
    std::ofstream(dir / "ghost.txt") << "0 0.5 0.5 0.2 0.2\n";
    CHECK_THROWS_AS(parse_yolo_directory(dir), DataError);
  }
  SUBCASE("unlabeled images error unless dropped") {
    write_pnm(dir / "c.ppm", tiny_image(10, 8, 3));
    CHECK_THROWS_AS(parse_yolo_directory(dir), DataError);
    ParseOptions opt;
    opt.drop_unlabeled = true;
    DatasetManifest dropped = parse_yolo_directory(dir, opt);
    CHECK(dropped.records.size() == 2);
  }
  SUBCASE("border overhang is clamped and counted") {
    std::ofstream(dir / "a.txt") << "0 0.99 0.5 0.1 0.2\n";
    int clamped = 0;
    ParseOptions opt;
    opt.clamped_count = &clamped;
    DatasetManifest cm = parse_yolo_directory(dir, opt);
    CHECK(clamped == 1);
    CHECK(cm.records[0].boxes[0].box.x2() <= 1.0);
  }
}

TEST_CASE("yolo -> coco -> yolo round trip preserves boxes to 1e-6") {
  const fs::path dir = fresh_dir("roundtrip");
  write_pnm(dir / "a.ppm", tiny_image(32, 24, 3));
  write_pnm(dir / "b.ppm", tiny_image(16, 16, 3));
  std::ofstream(dir / "a.txt") << "0 0.5 0.5 0.25 0.25\n2 0.125 0.75 0.0625 0.125\n";
  std::ofstream(dir / "b.txt") << "5 0.40625 0.59375 0.3125 0.4375\n";
  DatasetManifest m = parse_yolo_directory(dir);

  const fs::path coco = dir / "coco.json";
  write_coco_annotations(m, coco);
  DatasetManifest from_coco = parse_coco_json(coco);

  const fs::path back_dir = fresh_dir("roundtrip_back");
  for (const auto& rec : from_coco.records)
    write_pnm(back_dir / rec.image, tiny_image(rec.width, rec.height, 3));
  DatasetManifest back = from_coco;
  back.root = back_dir;
  write_yolo_annotations(back, back_dir);
  DatasetManifest again = parse_yolo_directory(back_dir);

  REQUIRE(again.records.size() == m.records.size());
  for (std::size_t r = 0; r < m.records.size(); ++r) {
    REQUIRE(again.records[r].boxes.size() == m.records[r].boxes.size());
    for (std::size_t b = 0; b < m.records[r].boxes.size(); ++b) {
      const Box& want = m.records[r].boxes[b].box;
      const Box& got = again.records[r].boxes[b].box;
      CHECK(again.records[r].boxes[b].class_id == m.records[r].boxes[b].class_id);
      CHECK(std::abs(got.cx() - want.cx()) <= 1e-6);
      CHECK(std::abs(got.cy() - want.cy()) <= 1e-6);
      CHECK(std::abs(got.w() - want.w()) <= 1e-6);
      CHECK(std::abs(got.h() - want.h()) <= 1e-6);
    }
  }
}

TEST_CASE("coco parser rejects dangling references") {
  const fs::path dir = fresh_dir("coco_bad");
  write_pnm(dir / "a.ppm", tiny_image(10, 10, 3));
  {
    std::ofstream f(dir / "bad.json");
    f << R"({"images":[{"id":1,"file_name":"a.ppm","width":10,"height":10}],)"
      << R"("annotations":[{"image_id":99,"category_id":0,"bbox":[1,1,2,2]}]})";
  }
  CHECK_THROWS_AS(parse_coco_json(dir / "bad.json"), DataError);

  {
    std::ofstream f(dir / "unlabeled.json");
    f << R"({"images":[{"id":1,"file_name":"a.ppm","width":10,"height":10}],"annotations":[]})";
  }
  CHECK_THROWS_AS(parse_coco_json(dir / "unlabeled.json"), DataError);
  ParseOptions opt;
  opt.drop_unlabeled = true;
  CHECK(parse_coco_json(dir / "unlabeled.json", opt).records.empty());
}

TEST_CASE("manifest files round-trip exactly") {
  DatasetManifest m;
  m.classes = {"alpha", "beta"};
  ManifestRecord r1{"imgs/x.ppm", 64, 48, "train", {{0, Box::center_size(0.5, 0.5, 0.25, 0.125, BoxSpace::unit)}}};
  ManifestRecord r2{"imgs/y.ppm", 32, 32, "", {}};
  m.records = {r1, r2};

  const fs::path dir = fresh_dir("manifest");
  write_manifest(m, dir / "manifest.txt");
  DatasetManifest back = read_manifest(dir / "manifest.txt");
  CHECK(back.classes == m.classes);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[0].image == "imgs/x.ppm");
  CHECK(back.records[0].split == "train");
  CHECK(back.records[1].split == "");
  CHECK(back.records[0].boxes[0].box.w() == m.records[0].boxes[0].box.w());

  std::ofstream(dir / "broken.txt") << "not-a-manifest\n";
  CHECK_THROWS_AS(read_manifest(dir / "broken.txt"), DataError);
}

TEST_CASE("normalize_and_split tags records with llround proportions") {
  auto build = [](int n) {
    DatasetManifest m;
    for (int i = 0; i < n; ++i)
      m.records.push_back({"img" + std::to_string(i) + ".ppm", 8, 8, "", {}});
    return m;
  };

  DatasetManifest m = build(10);
  normalize_and_split(m, {70, 20, 10}, 42);
  int train = 0, val = 0, test = 0;
  for (const auto& r : m.records) {
    train += r.split == "train";
    val += r.split == "val";
    test += r.split == "test";
  }
  CHECK(train == 7);
  CHECK(val == 2);
  CHECK(test == 1);

  // llround, not floor: 7 * 0.2 = 1.4 -> 1, 7 * 0.1 = 0.7 -> 1
  DatasetManifest m7 = build(7);
  normalize_and_split(m7, {70, 20, 10}, 42);
  int val7 = 0, test7 = 0;
  for (const auto& r : m7.records) {
    val7 += r.split == "val";
    test7 += r.split == "test";
  }
  CHECK(val7 == 1);
  CHECK(test7 == 1);

  // determinism and seed sensitivity
  DatasetManifest a = build(20), b = build(20), c = build(20);
  normalize_and_split(a, {70, 20, 10}, 1);
  normalize_and_split(b, {70, 20, 10}, 1);
  normalize_and_split(c, {70, 20, 10}, 2);
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    same_ab = same_ab && a.records[i].split == b.records[i].split;
    same_ac = same_ac && a.records[i].split == c.records[i].split;
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);

  DatasetManifest bad = build(5);
  CHECK_THROWS_AS(normalize_and_split(bad, {50, 20, 10}, 1), Error);
}

TEST_CASE("class statistics print the fixture strings") {
  ClassStats s = class_statistics({17, 29, 9, 22, 8, 12});
  ClassStatsDisplay d = format_class_stats(s);
  CHECK(d.mean == "16.17");
  CHECK(d.variance == "55.80");
  CHECK(d.stddev == "7.47");
  CHECK_THROWS_AS(class_statistics({}), DataError);
}

TEST_CASE("scale_class_counts uses largest remainders") {
  CHECK(scale_class_counts({1, 1, 1}, 10) == std::vector<int>{4, 3, 3});
  CHECK(scale_class_counts({3, 1}, 3) == std::vector<int>{2, 1});
  CHECK(scale_class_counts({17, 29, 9, 22, 8, 12}, 97) == std::vector<int>{17, 29, 9, 22, 8, 12});
  auto out = scale_class_counts({5, 0, 5}, 7);
  CHECK(out[1] == 0);
  CHECK(out[0] + out[2] == 7);
  CHECK_THROWS_AS(scale_class_counts({0, 0}, 4), Error);
}

TEST_CASE("synthetic generation is byte-identical per seed") {
  SynthSpec spec;
  spec.class_counts = {2, 1, 1, 1, 1, 2};

  const fs::path d1 = fresh_dir("synth1");
  const fs::path d2 = fresh_dir("synth2");
  DatasetManifest m1 = generate_synthetic_dataset(spec, 77, d1);
  DatasetManifest m2 = generate_synthetic_dataset(spec, 77, d2);

  REQUIRE(m1.records.size() == m2.records.size());
  CHECK(manifest_class_counts(m1) == std::vector<std::int64_t>{2, 1, 1, 1, 1, 2});
  for (const auto& rec : m1.records) {
    CHECK(slurp(d1 / rec.image) == slurp(d2 / rec.image));
    for (const auto& a : rec.boxes) {
      CHECK(a.box.x1() >= 0.0);
      CHECK(a.box.y1() >= 0.0);
      CHECK(a.box.x2() <= 1.0);
      CHECK(a.box.y2() <= 1.0);
    }
  }
  CHECK(slurp(d1 / "manifest.txt") == slurp(d2 / "manifest.txt"));

  const fs::path d3 = fresh_dir("synth3");
  DatasetManifest m3 = generate_synthetic_dataset(spec, 78, d3);
  bool all_same = m3.records.size() == m1.records.size();
  if (all_same)
    for (std::size_t i = 0; i < m1.records.size(); ++i)
      all_same = all_same && slurp(d1 / m1.records[i].image) == slurp(d3 / m3.records[i].image);
  CHECK_FALSE(all_same);
}

TEST_CASE("drawn objects land inside their annotation boxes") {
  SynthSpec spec;
  spec.class_counts = {3, 3, 3, 3, 3, 3};
  const fs::path dir = fresh_dir("synth_pix");
  DatasetManifest m = generate_synthetic_dataset(spec, 123, dir);
  for (const auto& rec : m.records) {
    ImageU8 img = read_pnm(dir / rec.image);
    for (const auto& a : rec.boxes) {
      // scan the annotation box for at least one pixel of the class color
      const auto color = detail::class_color(a.class_id);
      const int x1 = static_cast<int>(std::floor(a.box.x1() * rec.width));
      const int y1 = static_cast<int>(std::floor(a.box.y1() * rec.height));
      const int x2 = static_cast<int>(std::ceil(a.box.x2() * rec.width));
      const int y2 = static_cast<int>(std::ceil(a.box.y2() * rec.height));
      bool found = false;
      for (int y = y1; y < y2 && !found; ++y)
        for (int x = x1; x < x2 && !found; ++x)
          found = img.at(y, x, 0) == color.r && img.at(y, x, 1) == color.g &&
                  img.at(y, x, 2) == color.b;
      CHECK(found);
    }
  }
}

TEST_CASE("augmentation mirrors records deterministically") {
  SynthSpec spec;
  spec.class_counts = {2, 0, 0, 2, 0, 0};
  const fs::path dir = fresh_dir("aug");
  DatasetManifest m = generate_synthetic_dataset(spec, 9, dir);
  const std::size_t before = m.records.size();
  augment_dataset(m, 5);
  REQUIRE(m.records.size() == 2 * before);

  for (std::size_t i = 0; i < before; ++i) {
    const ManifestRecord& orig = m.records[i];
    const ManifestRecord& aug = m.records[before + i];
    CHECK(aug.image.find("_aug") != std::string::npos);
    CHECK(fs::exists(dir / aug.image));
    REQUIRE(aug.boxes.size() == orig.boxes.size());
    for (std::size_t b = 0; b < orig.boxes.size(); ++b) {
      const Box& ob = orig.boxes[b].box;
      const Box& ab = aug.boxes[b].box;
      // either mirrored (cx flipped) or half-turned (both flipped)
      const bool mirrored = std::abs(ab.cx() - (1.0 - ob.cx())) < 1e-12 &&
                            std::abs(ab.cy() - ob.cy()) < 1e-12;
      const bool half_turn = std::abs(ab.cx() - (1.0 - ob.cx())) < 1e-12 &&
                             std::abs(ab.cy() - (1.0 - ob.cy())) < 1e-12;
      CHECK((mirrored || half_turn));
      CHECK(ab.w() == doctest::Approx(ob.w()));
      CHECK(ab.h() == doctest::Approx(ob.h()));
    }
  }

  // same seed, same choices
  DatasetManifest m2 = generate_synthetic_dataset(spec, 9, fresh_dir("aug2"));
  augment_dataset(m2, 5);
  for (std::size_t i = 0; i < m.records.size(); ++i)
    CHECK(m.records[i].boxes[0].box.cy() == m2.records[i].boxes[0].box.cy());
}
