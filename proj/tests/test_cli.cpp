#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "hsl/checkpoint.hpp"
#include "hsl/config.hpp"
#include "hsl/datapipe.hpp"

using namespace hsl;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(HSL_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hsl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Byte-level digest of every file in a tree, keyed by relative path.
std::map<std::string, std::uint64_t> tree_digest(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[fs::relative(entry.path(), root).string()] = fnv1a64(read_file(entry.path().string()));
  }
  return out;
}

std::string small_gen_flags(const fs::path& out) {
  return "--out " + out.string() +
         " --gen.width=64 --gen.height=64 --gen.radius_min=4 --gen.radius_max=10"
         " --gen.prevalence=0.1 --prep.window=32 --seed 7";
}

}  // namespace

TEST_CASE("gen-data: idempotent per seed; manifest rows match section count") {
  const auto dir_a = fresh_dir("gen_a");
  const auto dir_b = fresh_dir("gen_b");

  const auto a = run_cli("gen-data " + small_gen_flags(dir_a) + " --gen.sections=3");
  REQUIRE(a.exit_code == 0);
  const auto b = run_cli("gen-data " + small_gen_flags(dir_b) + " --gen.sections=3");
  REQUIRE(b.exit_code == 0);
  CHECK(tree_digest(dir_a) == tree_digest(dir_b));

  const auto manifest = parse_section_manifest(read_file((dir_a / "sections.jsonl").string()));
  CHECK(manifest.size() == 3);

  // Zero sections: empty manifest, exit 0.
  const auto dir_z = fresh_dir("gen_z");
  const auto z = run_cli("gen-data --out " + dir_z.string() + " --gen.sections=0");
  CHECK(z.exit_code == 0);
  CHECK(read_file((dir_z / "sections.jsonl").string()).empty());

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_z);
}

TEST_CASE("prepare: keep-all endpoint, ratio report, subject-disjoint test split") {
  const auto dir = fresh_dir("prep");
  REQUIRE(run_cli("gen-data " + small_gen_flags(dir) +
                  " --gen.sections=6 --gen.sections_per_subject=2").exit_code == 0);

  // neg_keep_prob = 1 keeps every tile.
  const auto keep_all =
      run_cli("prepare " + small_gen_flags(dir) + " --prep.neg_keep_prob=1");
  REQUIRE(keep_all.exit_code == 0);
  {
    const auto manifest = parse_tile_manifest(read_file((dir / "tiles.jsonl").string()));
    // 64px sections, window 32, stride 16 -> 9 tiles per section.
    CHECK(manifest.size() == 6 * 9);
  }

  // Default cleaning raises the lesion-pixel ratio; report says so.
  const auto cleaned = run_cli("prepare " + small_gen_flags(dir));
  REQUIRE(cleaned.exit_code == 0);
  CHECK(cleaned.output.find("lesion-pixel ratio") != std::string::npos);

  const auto manifest = parse_tile_manifest(read_file((dir / "tiles.jsonl").string()));
  std::set<std::string> train_subjects, test_subjects;
  bool has_train = false, has_valid = false, has_test = false;
  for (const auto& e : manifest) {
    if (e.split == "train" || e.split == "valid") {
      train_subjects.insert(e.subject_id);
      has_train = has_train || e.split == "train";
      has_valid = has_valid || e.split == "valid";
    } else if (e.split == "test") {
      test_subjects.insert(e.subject_id);
      has_test = true;
    }
  }
  CHECK(has_train);
  CHECK(has_valid);
  CHECK(has_test);
  for (const auto& s : test_subjects) CHECK(!train_subjects.count(s));

  fs::remove_all(dir);
}

TEST_CASE("train + evaluate: deterministic CSV; checkpoints carry config") {
  const auto dir = fresh_dir("train");
  const std::string base = small_gen_flags(dir) +
                           " --net.base_width=4 --net.depth=2 --net.dilation_rates=1,2"
                           " --train.epochs_per_stage=2 --train.batch_size=4"
                           " --train.stage1_lr=0.002 --train.stage2_lr=0.001";
  REQUIRE(run_cli("gen-data " + base + " --gen.sections=4").exit_code == 0);
  REQUIRE(run_cli("prepare " + base + " --prep.neg_keep_prob=0.5").exit_code == 0);

  const auto t = run_cli("train " + base);
  REQUIRE(t.exit_code == 0);
  CHECK(fs::exists(dir / "stage1_best.ckpt"));
  CHECK(fs::exists(dir / "stage2_best.ckpt"));
  CHECK(fs::exists(dir / "epoch_log.csv"));

  const auto e1 = run_cli("evaluate " + base + " --checkpoint " +
                          (dir / "stage2_best.ckpt").string() + " --split valid");
  REQUIRE(e1.exit_code == 0);
  const auto csv1 = read_file((dir / "eval_valid.csv").string());
  const auto e2 = run_cli("evaluate " + base + " --checkpoint " +
                          (dir / "stage2_best.ckpt").string() + " --split valid");
  REQUIRE(e2.exit_code == 0);
  CHECK(read_file((dir / "eval_valid.csv").string()) == csv1);
  CHECK(csv1.find("pixel_iou") == 0);

  // Missing checkpoint is an I/O error (2); bad split is usage (1).
  CHECK(run_cli("evaluate " + base + " --checkpoint " + (dir / "nope.ckpt").string()).exit_code == 2);
  CHECK(run_cli("evaluate " + base + " --checkpoint " +
                (dir / "stage2_best.ckpt").string() + " --split bogus").exit_code == 1);

  fs::remove_all(dir);
}

TEST_CASE("report: well-formed SVG with one point per epoch") {
  const auto dir = fresh_dir("report");
  fs::create_directories(dir);
  // Hand-written 2-epoch log.
  const std::string log =
      "stage,epoch,train_loss,pixel_iou,pixel_rec,pixel_pre,lesion_iou,lesion_rec,lesion_pre\n"
      "1,1,0.9,0.1,0.2,0.3,0.1,0.2,0.3\n"
      "1,2,0.5,0.4,0.5,0.6,0.4,0.5,0.6\n";
  write_file((dir / "log.csv").string(), log);

  const auto r = run_cli("report --out " + dir.string() + " --log " + (dir / "log.csv").string());
  REQUIRE(r.exit_code == 0);
  const auto svg = read_file((dir / "curves.svg").string());
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);

  // Two panels, one series each -> two polylines, two coordinate pairs each.
  std::size_t pos = 0;
  int polylines = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    const auto points_at = svg.find("points=\"", pos);
    REQUIRE(points_at != std::string::npos);
    const auto end = svg.find('"', points_at + 8);
    const std::string pts = svg.substr(points_at + 8, end - points_at - 8);
    int pairs = 0;
    for (char ch : pts)
      if (ch == ',') ++pairs;
    CHECK(pairs == 2);
    ++polylines;
    pos = end;
  }
  CHECK(polylines == 2);

  // Malformed log is a data error.
  write_file((dir / "bad.csv").string(), "nonsense\n");
  CHECK(run_cli("report --out " + dir.string() + " --log " + (dir / "bad.csv").string()).exit_code == 2);

  fs::remove_all(dir);
}

TEST_CASE("config: file values, flag overrides, unknown keys, help") {
  const auto dir = fresh_dir("config");
  write_file((dir / "run.cfg").string(),
             "# comment line\n"
             "gen.sections = 5\n"
             "net.depth=2\n"
             "\n"
             "loss.alpha = 0.25\n");

  RunConfig cfg;
  load_config_file(cfg, (dir / "run.cfg").string());
  CHECK(cfg.gen_sections == 5);
  CHECK(cfg.net.depth == 2);
  CHECK(cfg.train.loss.alpha == 0.25);

  // CLI flag overrides the file value.
  const auto dir2 = fresh_dir("config2");
  const auto r = run_cli("gen-data --config " + (dir / "run.cfg").string() + " --out " +
                         dir2.string() + " --gen.sections=2 --gen.width=64 --gen.height=64");
  REQUIRE(r.exit_code == 0);
  CHECK(parse_section_manifest(read_file((dir2 / "sections.jsonl").string())).size() == 2);

  // Unknown keys: usage error from flags, data error from files.
  CHECK(run_cli("gen-data --bogus.key=1").exit_code == 1);
  write_file((dir / "bad.cfg").string(), "bogus.key=1\n");
  CHECK(run_cli("gen-data --config " + (dir / "bad.cfg").string()).exit_code == 2);
  CHECK_THROWS_AS(apply_key(cfg, "bogus.key", "1"), ConfigError);

  // Help enumerates every key with its default.
  const auto help = run_cli("--help");
  CHECK(help.exit_code == 0);
  for (const char* key : {"seed", "out", "precision", "gen.sections", "prep.window",
                          "net.base_width", "loss.alpha", "train.stage1_loss", "sweep.values",
                          "aug.prob"})
    CHECK(help.output.find(key) != std::string::npos);
  CHECK(help.output.find("default:") != std::string::npos);

  // Unknown subcommand is a usage error.
  CHECK(run_cli("frobnicate").exit_code == 1);

  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("canonical config string and hash are stable and value-sensitive") {
  RunConfig a, b;
  CHECK(canonical_config_string(a) == canonical_config_string(b));
  CHECK(config_hash(a) == config_hash(b));
  apply_key(b, "loss.alpha", "0.75");
  CHECK(config_hash(a) != config_hash(b));
}
