#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsl/checkpoint.hpp"
#include "hsl/config.hpp"
#include "hsl/report.hpp"

namespace fs = std::filesystem;
using namespace hsl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kUsage = R"(hsl - hydrops segmentation lab

usage: hsl <command> [options]

commands:
  gen-data    generate synthetic sections and a section manifest
  prepare     tile sections, clean class balance, assign splits
  train       run the two-stage training protocol
  evaluate    score a checkpoint on a split (--checkpoint, --split)
  sweep       train across alpha or beta values and tabulate metrics
  report      render loss/IoU curves from an epoch log (--log)

options:
  --help                 this message (with every config key)
  --config PATH          load key=value config file before flag overrides
  --key=value            override any config key (see list below)
  --checkpoint PATH      evaluate: checkpoint to score
  --split NAME           evaluate: train|valid|test (default valid)
  --log PATH             report: epoch log CSV (default <out>/epoch_log.csv)

exit codes: 0 success, 1 usage error, 2 I/O or data error, 3 training fault.

config keys:
)";

struct CliArgs {
  std::string command;
  RunConfig cfg;
  std::string checkpoint;
  std::string split = "valid";
  std::string log_path;
  bool help = false;
};

CliArgs parse_args(int argc, char** argv) {
  CliArgs out;
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string config_path;

  std::size_t i = 0;
  if (!args.empty() && args[0][0] != '-') {
    out.command = args[0];
    i = 1;
  }
  auto next_value = [&](const std::string& flag) {
    if (i + 1 >= args.size()) throw UsageError(flag + " requires a value");
    return args[++i];
  };
  for (; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--help" || a == "-h") {
      out.help = true;
    } else if (a == "--config") {
      config_path = next_value(a);
    } else if (a == "--checkpoint") {
      out.checkpoint = next_value(a);
    } else if (a == "--split") {
      out.split = next_value(a);
    } else if (a == "--log") {
      out.log_path = next_value(a);
    } else if (a.rfind("--", 0) == 0) {
      const auto eq = a.find('=');
      std::string key, value;
      if (eq != std::string::npos) {
        key = a.substr(2, eq - 2);
        value = a.substr(eq + 1);
      } else {
        key = a.substr(2);
        value = next_value(a);
      }
      overrides.emplace_back(key, value);
    } else {
      throw UsageError("unexpected argument '" + a + "'");
    }
  }

  if (!config_path.empty()) load_config_file(out.cfg, config_path);
  for (const auto& [k, v] : overrides) {
    try {
      apply_key(out.cfg, k, v);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CliArgs& cli) {
  const RunConfig& cfg = cli.cfg;
  cfg.gen.validate();
  const fs::path out(cfg.out_dir);
  ensure_dir(out / "sections");

  std::vector<SectionEntry> manifest;
  for (int i = 0; i < cfg.gen_sections; ++i) {
    GenParams p = cfg.gen;
    p.seed = mix_seed(cfg.seed, 0x67656e2d64617461ull, static_cast<std::uint64_t>(i));
    Section s = generate_section(p);
    char sid[32], subj[32];
    std::snprintf(sid, sizeof(sid), "sec%04d", i);
    std::snprintf(subj, sizeof(subj), "subj%04d", i / cfg.gen_sections_per_subject);
    s.section_id = sid;
    s.subject_id = subj;

    SectionEntry e;
    e.section_id = s.section_id;
    e.subject_id = s.subject_id;
    e.image_path = "sections/" + s.section_id + ".ppm";
    e.mask_path = "sections/" + s.section_id + ".pgm";
    write_ppm((out / e.image_path).string(), s.image);
    write_pgm_mask((out / e.mask_path).string(), s.mask);
    manifest.push_back(std::move(e));
  }
  write_file((out / "sections.jsonl").string(), section_manifest_to_string(manifest));
  std::printf("gen-data: wrote %d sections under %s\n", cfg.gen_sections, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

std::string ratio_report_text(const char* label, const CleanReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s: tiles %lld -> %lld (lesion %lld, background kept %lld)\n"
                "%s: lesion-pixel ratio %.1f%% -> %.1f%%\n",
                label, r.tiles_before, r.tiles_after, r.lesion_tiles, r.background_tiles_kept,
                label, 100.0 * r.pre_lesion_pixel_ratio, 100.0 * r.post_lesion_pixel_ratio);
  return buf;
}

int cmd_prepare(const CliArgs& cli) {
  const RunConfig& cfg = cli.cfg;
  const fs::path out(cfg.out_dir);
  const auto sections = parse_section_manifest(read_file((out / "sections.jsonl").string()));

  // Subjects reserved for test, chosen by seeded shuffle over the sorted
  // subject list.
  std::set<std::string> subjects;
  for (const auto& e : sections) subjects.insert(e.subject_id);
  std::vector<std::string> subject_list(subjects.begin(), subjects.end());
  Rng subj_rng(mix_seed(cfg.seed, 0x74657374732d7375ull));
  for (std::size_t i = subject_list.size(); i > 1; --i)
    std::swap(subject_list[i - 1],
              subject_list[static_cast<std::size_t>(subj_rng.uniform_int(0, static_cast<int>(i) - 1))]);
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(cfg.prep_test_subject_fraction * static_cast<double>(subject_list.size())));
  if (n_test >= subject_list.size() && !subject_list.empty()) n_test = subject_list.size() - 1;
  const std::set<std::string> test_subjects(subject_list.begin(),
                                            subject_list.begin() + static_cast<std::ptrdiff_t>(n_test));

  std::vector<Tile> tv_pool, test_pool;
  for (const auto& e : sections) {
    Section s;
    s.image = read_ppm((out / e.image_path).string());
    s.mask = read_pgm_mask((out / e.mask_path).string());
    s.section_id = e.section_id;
    s.subject_id = e.subject_id;
    auto tiles = tile_section(s, cfg.prep_window, cfg.stride_or_default());
    auto& pool = test_subjects.count(e.subject_id) ? test_pool : tv_pool;
    for (auto& t : tiles) pool.push_back(std::move(t));
  }

  CleanReport tv_report, test_report;
  tv_pool = clean_tiles(std::move(tv_pool), cfg.prep_neg_keep_prob,
                        mix_seed(cfg.seed, 0xc1ea4001ull), &tv_report);
  test_pool = clean_tiles(std::move(test_pool), cfg.prep_neg_keep_prob,
                          mix_seed(cfg.seed, 0xc1ea4002ull), &test_report);

  auto [train_tiles, valid_tiles] =
      split_tiles(std::move(tv_pool), cfg.prep_split_ratio, mix_seed(cfg.seed, 0x5011704bull));
  for (auto& t : train_tiles) t.split = "train";
  for (auto& t : valid_tiles) t.split = "valid";
  for (auto& t : test_pool) t.split = "test";

  ensure_dir(out / "tiles");
  std::vector<TileEntry> manifest;
  auto emit = [&](const std::vector<Tile>& tiles) {
    for (const auto& t : tiles) {
      TileEntry e;
      e.tile_id = t.tile_id;
      e.section_id = t.section_id;
      e.subject_id = t.subject_id;
      e.image_path = "tiles/" + t.tile_id + ".ppm";
      e.mask_path = "tiles/" + t.tile_id + ".pgm";
      e.has_lesion = t.has_lesion;
      e.split = t.split;
      write_ppm((out / e.image_path).string(), t.image);
      write_pgm_mask((out / e.mask_path).string(), t.mask);
      manifest.push_back(std::move(e));
    }
  };
  emit(train_tiles);
  emit(valid_tiles);
  emit(test_pool);
  write_file((out / "tiles.jsonl").string(), tile_manifest_to_string(manifest));

  std::string report = ratio_report_text("train+valid", tv_report);
  report += ratio_report_text("test", test_report);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "splits: train %zu, valid %zu, test %zu\n", train_tiles.size(),
                valid_tiles.size(), test_pool.size());
  report += buf;
  write_file((out / "clean_report.txt").string(), report);
  std::fputs(report.c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// tile loading for train/evaluate/sweep
// ---------------------------------------------------------------------------

std::vector<Tile> load_split(const RunConfig& cfg, const std::string& split) {
  const fs::path out(cfg.out_dir);
  const auto manifest = parse_tile_manifest(read_file((out / "tiles.jsonl").string()));
  std::vector<Tile> tiles;
  for (const auto& e : manifest) {
    if (e.split != split) continue;
    Tile t;
    t.image = read_ppm((out / e.image_path).string());
    t.mask = read_pgm_mask((out / e.mask_path).string());
    t.tile_id = e.tile_id;
    t.section_id = e.section_id;
    t.subject_id = e.subject_id;
    t.has_lesion = e.has_lesion;
    t.split = e.split;
    tiles.push_back(std::move(t));
  }
  return tiles;
}

// Sidecar JSON binding a checkpoint to the full configuration.
void write_sidecar(const fs::path& ckpt_path, const RunConfig& cfg, int stage, int epoch,
                   const MetricsReport& metrics) {
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["config_hash"] = config_hash(cfg);
  j["metrics"] = nlohmann::json::parse(metrics.to_json());
  nlohmann::json keys = nlohmann::json::object();
  std::istringstream in(canonical_config_string(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) keys[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = keys;
  fs::path side = ckpt_path;
  side.replace_extension(".json");
  write_file(side.string(), j.dump(2) + "\n");
}

RunConfig config_from_sidecar(const fs::path& ckpt_path) {
  fs::path side = ckpt_path;
  side.replace_extension(".json");
  nlohmann::json j = nlohmann::json::parse(read_file(side.string()), nullptr, false);
  if (j.is_discarded() || !j.contains("config"))
    throw ParseError(side.string() + ": malformed checkpoint sidecar");
  RunConfig cfg;
  for (const auto& [k, v] : j["config"].items()) apply_key(cfg, k, v.get<std::string>());
  return cfg;
}

// ---------------------------------------------------------------------------
// train / evaluate / sweep (templated on working precision)
// ---------------------------------------------------------------------------

template <typename T>
int run_train(const CliArgs& cli) {
  RunConfig cfg = cli.cfg;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  const auto train_tiles = load_split(cfg, "train");
  const auto valid_tiles = load_split(cfg, "valid");
  const fs::path out(cfg.out_dir);

  auto result = stagewise_train<T>(cfg.net, cfg.train, train_tiles, valid_tiles);

  save_params((out / "stage1_best.ckpt").string(), result.stage1.params.template cast<float>());
  write_sidecar(out / "stage1_best.ckpt", cfg, 1, result.stage1.epoch, result.stage1.validation);
  save_params((out / "stage2_best.ckpt").string(), result.stage2.params.template cast<float>());
  write_sidecar(out / "stage2_best.ckpt", cfg, 2, result.stage2.epoch, result.stage2.validation);
  write_file((out / "epoch_log.csv").string(), epoch_log_csv(result.log));

  std::printf("train: stage1 best epoch %d (pixel IoU %.4f), stage2 best epoch %d (pixel IoU %.4f)\n",
              result.stage1.epoch, result.stage1.validation.pixel_iou, result.stage2.epoch,
              result.stage2.validation.pixel_iou);
  std::printf("train: wrote checkpoints and %s\n", (out / "epoch_log.csv").string().c_str());
  return 0;
}

template <typename T>
int run_evaluate(const CliArgs& cli) {
  if (cli.checkpoint.empty()) throw UsageError("evaluate requires --checkpoint PATH");
  if (cli.split != "train" && cli.split != "valid" && cli.split != "test")
    throw UsageError("evaluate: --split must be train|valid|test");

  RunConfig stored = config_from_sidecar(cli.checkpoint);
  stored.out_dir = cli.cfg.out_dir;  // manifest location comes from the caller
  const auto tiles = load_split(stored, cli.split);
  const auto params = load_params(cli.checkpoint).cast<T>();
  const MetricsReport report = evaluate(stored.net, params, tiles, stored.train.loss);

  const std::string csv = MetricsReport::csv_header() + "\n" + report.csv_row() + "\n";
  std::fputs(csv.c_str(), stdout);
  const fs::path out(cli.cfg.out_dir);
  write_file((out / ("eval_" + cli.split + ".csv")).string(), csv);
  write_file((out / ("eval_" + cli.split + ".json")).string(), report.to_json() + "\n");
  return 0;
}

template <typename T>
int run_sweep(const CliArgs& cli) {
  RunConfig cfg = cli.cfg;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  const auto train_tiles = load_split(cfg, "train");
  const auto valid_tiles = load_split(cfg, "valid");
  auto eval_tiles = load_split(cfg, "test");
  const char* eval_split = "test";
  if (eval_tiles.empty()) {
    eval_tiles = valid_tiles;
    eval_split = "valid";
  }

  std::string csv = std::string(cfg.sweep_param) + "," + MetricsReport::csv_header() +
                    ",predicted_positive_fraction\n";
  std::printf("sweep: %s over %zu values, single-stage compound loss, scoring on %s\n",
              cfg.sweep_param.c_str(), cfg.sweep_values.size(), eval_split);
  for (double v : cfg.sweep_values) {
    RunConfig run = cfg;
    if (cfg.sweep_param == "alpha")
      run.train.loss.alpha = v;
    else
      run.train.loss.beta = v;
    const std::string hash = config_fingerprint(run.net, run.train);
    auto params = build<T>(run.net, run.seed);
    auto stage = train_stage(run.net, std::move(params), train_tiles, valid_tiles,
                             LossKind::kCompound, run.train.stage1_lr, run.train.epochs_per_stage,
                             run.train, 1, hash);
    const MetricsReport report =
        evaluate(run.net, stage.best.params, eval_tiles, run.train.loss);
    const double ppf = predicted_positive_fraction(run.net, stage.best.params, eval_tiles,
                                                   run.train.loss.threshold);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    csv += std::string(buf) + "," + report.csv_row() + ",";
    std::snprintf(buf, sizeof(buf), "%.10g", ppf);
    csv += std::string(buf) + "\n";
    std::printf("  %s=%.3g  pixel IoU %.4f  lesion IoU %.4f  predicted-positive %.3f\n",
                cfg.sweep_param.c_str(), v, report.pixel_iou, report.lesion_iou, ppf);
  }
  const fs::path out(cfg.out_dir);
  write_file((out / ("sweep_" + cfg.sweep_param + ".csv")).string(), csv);
  std::printf("sweep: wrote %s\n", (out / ("sweep_" + cfg.sweep_param + ".csv")).string().c_str());
  return 0;
}

int cmd_report(const CliArgs& cli) {
  const fs::path out(cli.cfg.out_dir);
  const std::string log_path =
      cli.log_path.empty() ? (out / "epoch_log.csv").string() : cli.log_path;
  const auto log = parse_epoch_log_csv(read_file(log_path));
  ensure_dir(out);
  write_file((out / "curves.svg").string(), render_curves_svg(log));
  const std::string table = summary_table(log);
  write_file((out / "summary.txt").string(), table);
  std::fputs(table.c_str(), stdout);
  std::printf("report: wrote %s\n", (out / "curves.svg").string().c_str());
  return 0;
}

template <typename Fn32, typename Fn64>
int dispatch_precision(const CliArgs& cli, Fn32 f32, Fn64 f64) {
  if (cli.cfg.precision == "f64") return f64(cli);
  return f32(cli);
}

}  // namespace

int main(int argc, char** argv) {
  CliArgs cli;
  try {
    cli = parse_args(argc, argv);
    if (cli.help || cli.command.empty()) {
      std::fputs(kUsage, stdout);
      std::fputs(config_help().c_str(), stdout);
      return cli.help ? 0 : 1;
    }
    if (cli.command == "gen-data") return cmd_gen_data(cli);
    if (cli.command == "prepare") return cmd_prepare(cli);
    if (cli.command == "train")
      return dispatch_precision(cli, run_train<float>, run_train<double>);
    if (cli.command == "evaluate")
      return dispatch_precision(cli, run_evaluate<float>, run_evaluate<double>);
    if (cli.command == "sweep")
      return dispatch_precision(cli, run_sweep<float>, run_sweep<double>);
    if (cli.command == "report") return cmd_report(cli);
    throw UsageError("unknown command '" + cli.command + "'");
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    std::fprintf(stderr, "run 'hsl --help' for usage\n");
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "training fault: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
