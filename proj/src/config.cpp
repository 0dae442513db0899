#include "hsl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "hsl/checkpoint.hpp"

namespace hsl {

namespace {

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* begin = v.data();
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct KeySpec {
  const char* name;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"seed", "master seed; all randomness derives from it",
       [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int("seed", v));
       }},
      {"out", "output directory",
       [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"precision", "working float width for train/evaluate/sweep (f32|f64)",
       [](const RunConfig& c) { return c.precision; },
       [](RunConfig& c, const std::string& v) {
         if (v != "f32" && v != "f64") throw ConfigError("precision: expected f32 or f64");
         c.precision = v;
       }},

      {"gen.sections", "number of sections to generate",
       [](const RunConfig& c) { return std::to_string(c.gen_sections); },
       [](RunConfig& c, const std::string& v) {
         c.gen_sections = static_cast<int>(parse_int("gen.sections", v));
         if (c.gen_sections < 0) throw ConfigError("gen.sections: must be >= 0");
       }},
      {"gen.sections_per_subject", "sections sharing one synthetic subject id",
       [](const RunConfig& c) { return std::to_string(c.gen_sections_per_subject); },
       [](RunConfig& c, const std::string& v) {
         c.gen_sections_per_subject = static_cast<int>(parse_int("gen.sections_per_subject", v));
         if (c.gen_sections_per_subject < 1)
           throw ConfigError("gen.sections_per_subject: must be >= 1");
       }},
      {"gen.width", "section width in pixels",
       [](const RunConfig& c) { return std::to_string(c.gen.width); },
       [](RunConfig& c, const std::string& v) { c.gen.width = static_cast<int>(parse_int("gen.width", v)); }},
      {"gen.height", "section height in pixels",
       [](const RunConfig& c) { return std::to_string(c.gen.height); },
       [](RunConfig& c, const std::string& v) { c.gen.height = static_cast<int>(parse_int("gen.height", v)); }},
      {"gen.count_min", "minimum lesions per section",
       [](const RunConfig& c) { return std::to_string(c.gen.count_min); },
       [](RunConfig& c, const std::string& v) { c.gen.count_min = static_cast<int>(parse_int("gen.count_min", v)); }},
      {"gen.count_max", "maximum lesions per section",
       [](const RunConfig& c) { return std::to_string(c.gen.count_max); },
       [](RunConfig& c, const std::string& v) { c.gen.count_max = static_cast<int>(parse_int("gen.count_max", v)); }},
      {"gen.radius_min", "minimum mean blob radius in pixels",
       [](const RunConfig& c) { return fmt_double(c.gen.radius_min); },
       [](RunConfig& c, const std::string& v) { c.gen.radius_min = parse_double("gen.radius_min", v); }},
      {"gen.radius_max", "maximum mean blob radius in pixels",
       [](const RunConfig& c) { return fmt_double(c.gen.radius_max); },
       [](RunConfig& c, const std::string& v) { c.gen.radius_max = parse_double("gen.radius_max", v); }},
      {"gen.irregularity", "radial jitter of blob outlines, 0..0.9",
       [](const RunConfig& c) { return fmt_double(c.gen.irregularity); },
       [](RunConfig& c, const std::string& v) { c.gen.irregularity = parse_double("gen.irregularity", v); }},
      {"gen.texture_amp", "pixel noise amplitude",
       [](const RunConfig& c) { return fmt_double(c.gen.texture_amp); },
       [](RunConfig& c, const std::string& v) { c.gen.texture_amp = parse_double("gen.texture_amp", v); }},
      {"gen.prevalence", "target lesion pixel fraction per section",
       [](const RunConfig& c) { return fmt_double(c.gen.prevalence); },
       [](RunConfig& c, const std::string& v) { c.gen.prevalence = parse_double("gen.prevalence", v); }},

      {"prep.window", "sliding-window size in pixels",
       [](const RunConfig& c) { return std::to_string(c.prep_window); },
       [](RunConfig& c, const std::string& v) { c.prep_window = static_cast<int>(parse_int("prep.window", v)); }},
      {"prep.stride", "sliding-window stride; 0 means window/2",
       [](const RunConfig& c) { return std::to_string(c.prep_stride); },
       [](RunConfig& c, const std::string& v) { c.prep_stride = static_cast<int>(parse_int("prep.stride", v)); }},
      {"prep.neg_keep_prob", "keep probability for background tiles",
       [](const RunConfig& c) { return fmt_double(c.prep_neg_keep_prob); },
       [](RunConfig& c, const std::string& v) { c.prep_neg_keep_prob = parse_double("prep.neg_keep_prob", v); }},
      {"prep.split_ratio", "train share of the train/valid split",
       [](const RunConfig& c) { return fmt_double(c.prep_split_ratio); },
       [](RunConfig& c, const std::string& v) { c.prep_split_ratio = parse_double("prep.split_ratio", v); }},
      {"prep.test_subject_fraction", "fraction of subjects reserved for the test split",
       [](const RunConfig& c) { return fmt_double(c.prep_test_subject_fraction); },
       [](RunConfig& c, const std::string& v) {
         c.prep_test_subject_fraction = parse_double("prep.test_subject_fraction", v);
       }},

      {"net.input_channels", "image channels",
       [](const RunConfig& c) { return std::to_string(c.net.input_channels); },
       [](RunConfig& c, const std::string& v) { c.net.input_channels = static_cast<int>(parse_int("net.input_channels", v)); }},
      {"net.base_width", "channels at encoder level 0",
       [](const RunConfig& c) { return std::to_string(c.net.base_width); },
       [](RunConfig& c, const std::string& v) { c.net.base_width = static_cast<int>(parse_int("net.base_width", v)); }},
      {"net.depth", "encoder levels",
       [](const RunConfig& c) { return std::to_string(c.net.depth); },
       [](RunConfig& c, const std::string& v) { c.net.depth = static_cast<int>(parse_int("net.depth", v)); }},
      {"net.dilation_rates", "comma-separated bridge dilation rates",
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.net.dilation_rates.size(); ++i)
           s += (i ? "," : "") + std::to_string(c.net.dilation_rates[i]);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         std::vector<int> rates;
         for (const auto& part : split_commas(v))
           rates.push_back(static_cast<int>(parse_int("net.dilation_rates", part)));
         c.net.dilation_rates = std::move(rates);
       }},
      {"net.dropout_p", "dropout probability before the head",
       [](const RunConfig& c) { return fmt_double(c.net.dropout_p); },
       [](RunConfig& c, const std::string& v) { c.net.dropout_p = parse_double("net.dropout_p", v); }},
      {"net.skip_mode", "decoder skip merge: concat|add",
       [](const RunConfig& c) {
         return c.net.skip_mode == NetConfig::SkipMode::kConcat ? "concat" : "add";
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "concat")
           c.net.skip_mode = NetConfig::SkipMode::kConcat;
         else if (v == "add")
           c.net.skip_mode = NetConfig::SkipMode::kAdd;
         else
           throw ConfigError("net.skip_mode: expected concat or add");
       }},

      {"loss.alpha", "lesion-level weight in the compound loss",
       [](const RunConfig& c) { return fmt_double(c.train.loss.alpha); },
       [](RunConfig& c, const std::string& v) { c.train.loss.alpha = parse_double("loss.alpha", v); }},
      {"loss.beta", "precision weight inside each level",
       [](const RunConfig& c) { return fmt_double(c.train.loss.beta); },
       [](RunConfig& c, const std::string& v) { c.train.loss.beta = parse_double("loss.beta", v); }},
      {"loss.k", "focal scale",
       [](const RunConfig& c) { return fmt_double(c.train.loss.k); },
       [](RunConfig& c, const std::string& v) { c.train.loss.k = parse_double("loss.k", v); }},
      {"loss.gamma", "focal exponent",
       [](const RunConfig& c) { return fmt_double(c.train.loss.gamma); },
       [](RunConfig& c, const std::string& v) { c.train.loss.gamma = parse_double("loss.gamma", v); }},
      {"loss.c", "smoothing constant",
       [](const RunConfig& c) { return fmt_double(c.train.loss.c); },
       [](RunConfig& c, const std::string& v) { c.train.loss.c = parse_double("loss.c", v); }},
      {"loss.threshold", "binarization threshold",
       [](const RunConfig& c) { return fmt_double(c.train.loss.threshold); },
       [](RunConfig& c, const std::string& v) { c.train.loss.threshold = parse_double("loss.threshold", v); }},
      {"loss.connectivity", "component connectivity: 4|8",
       [](const RunConfig& c) { return std::to_string(c.train.loss.connectivity); },
       [](RunConfig& c, const std::string& v) { c.train.loss.connectivity = static_cast<int>(parse_int("loss.connectivity", v)); }},
      {"loss.match_rho", "minimum overlap ratio for lesion matching",
       [](const RunConfig& c) { return fmt_double(c.train.loss.match_rho); },
       [](RunConfig& c, const std::string& v) { c.train.loss.match_rho = parse_double("loss.match_rho", v); }},
      {"loss.focal_arg_mode", "focal wrapper argument: score|raw",
       [](const RunConfig& c) {
         return c.train.loss.focal_arg_mode == FocalArgMode::kScore ? "score" : "raw";
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "score")
           c.train.loss.focal_arg_mode = FocalArgMode::kScore;
         else if (v == "raw")
           c.train.loss.focal_arg_mode = FocalArgMode::kRaw;
         else
           throw ConfigError("loss.focal_arg_mode: expected score or raw");
       }},

      {"train.stage1_loss", "stage-1 loss: bce|dice|iou|focal_iou|pixel|lesion|compound",
       [](const RunConfig& c) { return std::string(loss_kind_name(c.train.stage1_loss)); },
       [](RunConfig& c, const std::string& v) { c.train.stage1_loss = loss_kind_from_name(v); }},
      {"train.stage2_loss", "stage-2 loss (set equal to stage1 for a pure fine-tuning control)",
       [](const RunConfig& c) { return std::string(loss_kind_name(c.train.stage2_loss)); },
       [](RunConfig& c, const std::string& v) { c.train.stage2_loss = loss_kind_from_name(v); }},
      {"train.stage1_lr", "stage-1 learning rate",
       [](const RunConfig& c) { return fmt_double(c.train.stage1_lr); },
       [](RunConfig& c, const std::string& v) { c.train.stage1_lr = parse_double("train.stage1_lr", v); }},
      {"train.stage2_lr", "stage-2 learning rate",
       [](const RunConfig& c) { return fmt_double(c.train.stage2_lr); },
       [](RunConfig& c, const std::string& v) { c.train.stage2_lr = parse_double("train.stage2_lr", v); }},
      {"train.epochs_per_stage", "epochs per training stage",
       [](const RunConfig& c) { return std::to_string(c.train.epochs_per_stage); },
       [](RunConfig& c, const std::string& v) { c.train.epochs_per_stage = static_cast<int>(parse_int("train.epochs_per_stage", v)); }},
      {"train.batch_size", "tiles per optimization step",
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
       [](RunConfig& c, const std::string& v) { c.train.batch_size = static_cast<int>(parse_int("train.batch_size", v)); }},
      {"train.augment", "online augmentation during training: true|false",
       [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); }},
      {"train.adam_beta1", "Adam first-moment decay",
       [](const RunConfig& c) { return fmt_double(c.train.adam_beta1); },
       [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = parse_double("train.adam_beta1", v); }},
      {"train.adam_beta2", "Adam second-moment decay",
       [](const RunConfig& c) { return fmt_double(c.train.adam_beta2); },
       [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = parse_double("train.adam_beta2", v); }},
      {"train.adam_eps", "Adam epsilon",
       [](const RunConfig& c) { return fmt_double(c.train.adam_eps); },
       [](RunConfig& c, const std::string& v) { c.train.adam_eps = parse_double("train.adam_eps", v); }},

      {"aug.prob", "probability of each augmentation transform",
       [](const RunConfig& c) { return fmt_double(c.train.aug.prob); },
       [](RunConfig& c, const std::string& v) { c.train.aug.prob = parse_double("aug.prob", v); }},
      {"aug.max_rotate_deg", "rotation range in degrees",
       [](const RunConfig& c) { return fmt_double(c.train.aug.max_rotate_deg); },
       [](RunConfig& c, const std::string& v) { c.train.aug.max_rotate_deg = parse_double("aug.max_rotate_deg", v); }},
      {"aug.scale_min", "lower scale factor",
       [](const RunConfig& c) { return fmt_double(c.train.aug.scale_min); },
       [](RunConfig& c, const std::string& v) { c.train.aug.scale_min = parse_double("aug.scale_min", v); }},
      {"aug.scale_max", "upper scale factor",
       [](const RunConfig& c) { return fmt_double(c.train.aug.scale_max); },
       [](RunConfig& c, const std::string& v) { c.train.aug.scale_max = parse_double("aug.scale_max", v); }},
      {"aug.max_translate_frac", "translation range as a window fraction",
       [](const RunConfig& c) { return fmt_double(c.train.aug.max_translate_frac); },
       [](RunConfig& c, const std::string& v) { c.train.aug.max_translate_frac = parse_double("aug.max_translate_frac", v); }},

      {"sweep.param", "weight to sweep: alpha|beta",
       [](const RunConfig& c) { return c.sweep_param; },
       [](RunConfig& c, const std::string& v) {
         if (v != "alpha" && v != "beta") throw ConfigError("sweep.param: expected alpha or beta");
         c.sweep_param = v;
       }},
      {"sweep.values", "comma-separated weight values",
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.sweep_values.size(); ++i)
           s += (i ? "," : "") + fmt_double(c.sweep_values[i]);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         std::vector<double> vals;
         for (const auto& part : split_commas(v)) vals.push_back(parse_double("sweep.values", part));
         if (vals.empty()) throw ConfigError("sweep.values: empty list");
         c.sweep_values = std::move(vals);
       }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  gen.validate();
  net.validate();
  train.validate();
  if (prep_window < 4) throw ConfigError("prep.window: must be >= 4");
  if (prep_stride < 0) throw ConfigError("prep.stride: must be >= 0");
  if (prep_neg_keep_prob < 0 || prep_neg_keep_prob > 1)
    throw ConfigError("prep.neg_keep_prob: must lie in [0,1]");
  if (prep_split_ratio <= 0 || prep_split_ratio >= 1)
    throw ConfigError("prep.split_ratio: must lie in (0,1)");
  if (prep_test_subject_fraction < 0 || prep_test_subject_fraction >= 1)
    throw ConfigError("prep.test_subject_fraction: must lie in [0,1)");
  for (double v : sweep_values)
    if (v < 0 || v > 1) throw ConfigError("sweep.values: weights must lie in [0,1]");
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& spec : key_table()) {
    if (key == spec.name) {
      spec.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto ke = key.find_last_not_of(" \t");
    key = key.substr(0, ke == std::string::npos ? 0 : ke + 1);
    const auto vb = value.find_first_not_of(" \t");
    value = vb == std::string::npos ? "" : value.substr(vb);
    try {
      apply_key(cfg, key, value);
    } catch (const ConfigError& err) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + err.what());
    }
  }
}

std::string config_help() {
  std::string out;
  for (const auto& spec : key_table()) {
    RunConfig defaults;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %-28s %s (default: %s)\n", spec.name, spec.doc,
                  spec.get(defaults).c_str());
    out += buf;
  }
  return out;
}

std::string canonical_config_string(const RunConfig& cfg) {
  std::vector<std::string> lines;
  for (const auto& spec : key_table()) lines.push_back(std::string(spec.name) + "=" + spec.get(cfg));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  return to_hex(fnv1a64(canonical_config_string(cfg)));
}

}  // namespace hsl
