#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seadet/adversarial.hpp"
#include "seadet/anchors.hpp"
#include "seadet/cli.hpp"
#include "seadet/dataio.hpp"

using namespace seadet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = 0;
  std::string out, err;
};

RunResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// One synthetic dataset plus a one-epoch checkpoint, built once and shared by
// the pipeline cases below.
struct Workspace {
  fs::path root, data, run;
  std::string manifest, checkpoint;

  Workspace() {
    root = fs::temp_directory_path() / "seadet_cli_ws";
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    run = root / "run";

    RunResult synth = run_cli({"synth", "--out", data.string(), "--seed", "9", "--count", "36",
                               "--size", "32"});
    REQUIRE(synth.code == 0);
    manifest = (data / "manifest.txt").string();

    RunResult train = run_cli({"train", "--manifest", manifest, "--out", run.string(), "--seed",
                               "11", "--epochs", "1", "--batch-size", "8", "--learning-rate",
                               "0.005"});
    REQUIRE(train.code == 0);
    checkpoint = (run / "checkpoint_final.bin").string();
    REQUIRE(fs::exists(checkpoint));
  }
};

const Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("cli: help exits 0, usage errors exit 1") {
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"--help"}).out.find("seadet") != std::string::npos);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"bogus"}).code == 1);
  CHECK(run_cli({"train", "--manifest", "m.txt", "--out", "d"}).code == 1);  // --seed missing
  CHECK(run_cli({"stats"}).code == 1);                                       // --manifest missing
  CHECK(run_cli({"anchors", "--manifest", "m.txt", "--k", "notanint"}).code == 1);
}

TEST_CASE("cli: data errors exit 2") {
  const auto& ws = workspace();
  CHECK(run_cli({"stats", "--manifest", "does_not_exist.txt"}).code == 2);
  CHECK(run_cli({"synth", "--out", (ws.root / "bad").string(), "--seed", "1", "--split",
                 "70:30"})
            .code == 2);
  RunResult r = run_cli({"explain", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint,
                         "--image", "no_such.ppm", "--class", "0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("no_such.ppm") != std::string::npos);
}

TEST_CASE("cli: numeric failures exit 3") {
  const auto& ws = workspace();
  RunResult r = run_cli({"train", "--manifest", ws.manifest, "--out",
                         (ws.root / "boom").string(), "--seed", "1", "--epochs", "4",
                         "--batch-size", "8", "--learning-rate", "1e12"});
  CHECK(r.code == 3);
}

TEST_CASE("cli: synth writes a stats-readable manifest") {
  const auto& ws = workspace();
  RunResult r = run_cli({"stats", "--manifest", ws.manifest});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Crab") != std::string::npos);
  CHECK(r.out.find("jellyfish") != std::string::npos);
  CHECK(r.out.find("count mean 6.00") != std::string::npos);  // 36 objects over 6 classes
  CHECK(r.out.find("(train ") != std::string::npos);

  DatasetManifest m = read_manifest(ws.manifest);
  std::int64_t boxes = 0;
  for (const auto& rec : m.records) boxes += static_cast<std::int64_t>(rec.boxes.size());
  CHECK(boxes == 36);
}

TEST_CASE("cli: prepare parses the synth directory back into a manifest") {
  const auto& ws = workspace();
  const fs::path out = ws.root / "prepared.txt";
  RunResult r = run_cli({"prepare", "--images", ws.data.string(), "--out", out.string(),
                         "--split", "60:20:20", "--seed", "2"});
  REQUIRE(r.code == 0);
  DatasetManifest prepared = read_manifest(out);
  DatasetManifest original = read_manifest(ws.manifest);
  CHECK(prepared.records.size() == original.records.size());
  int train = 0;
  for (const auto& rec : prepared.records) train += rec.split == "train";
  CHECK(train > 0);
}

TEST_CASE("cli: anchors emits a loadable config") {
  const auto& ws = workspace();
  const fs::path out = ws.root / "anchors.txt";
  RunResult r = run_cli({"anchors", "--manifest", ws.manifest, "--k", "2", "--seed", "3",
                         "--out", out.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("aspect ratios") != std::string::npos);
  AnchorConfig cfg = load_anchor_config(out.string());
  cfg.validate();
  CHECK(!cfg.scales.empty());
  CHECK(!cfg.aspect_ratios.empty());
}

TEST_CASE("cli: eval prints scores and writes the report csv") {
  const auto& ws = workspace();
  const fs::path report = ws.root / "report.csv";
  RunResult r = run_cli({"eval", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint,
                         "--split", "test", "--confusion", "--report", report.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("mAP@0.5:") != std::string::npos);
  CHECK(r.out.find("gt\\pred") != std::string::npos);
  const std::string csv = slurp(report);
  CHECK(csv.rfind("class,ap50\n", 0) == 0);
  CHECK(csv.find("mAP,") != std::string::npos);
}

TEST_CASE("cli: attack writes a budget-respecting perturbation usable by eval") {
  const auto& ws = workspace();
  const fs::path uap = ws.root / "uap.bin";
  RunResult r = run_cli({"attack", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint,
                         "--out", uap.string(), "--samples", "3", "--seed", "5", "--xi",
                         "0.1"});
  REQUIRE(r.code == 0);
  Perturbation u = load_perturbation(uap);
  CHECK(u.xi == doctest::Approx(0.1));
  for (std::int64_t i = 0; i < u.values.numel(); ++i)
    CHECK(std::abs(u.values[i]) <= 0.1 + 1e-12);

  CHECK(run_cli({"eval", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint, "--attack",
                 uap.string()})
            .code == 0);
}

TEST_CASE("cli: explain writes heatmap and overlay files") {
  const auto& ws = workspace();
  const fs::path heat = ws.root / "heat";
  RunResult r = run_cli({"explain", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint,
                         "--image", "img_000000.ppm", "--class", "1", "--out", heat.string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(heat / "img_000000_1.pgm"));
  CHECK(fs::exists(heat / "img_000000_1_overlay.ppm"));

  RunResult bad = run_cli({"explain", "--manifest", ws.manifest, "--checkpoint", ws.checkpoint,
                           "--image", "img_000000.ppm", "--class", "1", "--mode", "bogus",
                           "--out", heat.string()});
  CHECK(bad.code == 1);  // contract violation inside the heatmap composer
}

TEST_CASE("cli: train flags override the config file") {
  const auto& ws = workspace();
  const fs::path cfg_path = ws.root / "train.cfg";
  {
    std::ofstream os(cfg_path);
    os << "epochs = 5\nbatch_size = 8\nlearning_rate = 0.005\n";
  }
  const fs::path run2 = ws.root / "run2";
  RunResult r = run_cli({"train", "--manifest", ws.manifest, "--out", run2.string(), "--seed",
                         "11", "--config", cfg_path.string(), "--epochs", "2"});
  REQUIRE(r.code == 0);
  const std::string curves = slurp(run2 / "curves.csv");
  int rows = -1;  // discount the header
  for (char c : curves) rows += c == '\n';
  CHECK(rows == 2);

  RunResult bad = run_cli({"train", "--manifest", ws.manifest, "--out", run2.string(), "--seed",
                           "11", "--config", cfg_path.string(), "--not-a-key", "2"});
  CHECK(bad.code == 1);
}

TEST_CASE("cli: identical train invocations give identical checkpoints") {
  const auto& ws = workspace();
  const fs::path again = ws.root / "again";
  RunResult r = run_cli({"train", "--manifest", ws.manifest, "--out", again.string(), "--seed",
                         "11", "--epochs", "1", "--batch-size", "8", "--learning-rate",
                         "0.005"});
  REQUIRE(r.code == 0);
  CHECK(slurp(again / "checkpoint_final.bin") == slurp(ws.checkpoint));
}
