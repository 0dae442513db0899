#include "hsl/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "hsl/checkpoint.hpp"  // read_file / write_file

namespace hsl {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

// A lesion blob: a radial polygon around a center, filled by comparing each
// pixel's distance against the linearly interpolated vertex radius.
struct Blob {
  double cx, cy;
  std::vector<double> radii;  // vertex radii at angles 2*pi*k/K

  double radius_at(double angle) const {
    const int K = static_cast<int>(radii.size());
    double a = angle / (2.0 * kPi) * K;
    a -= std::floor(a / K) * K;
    const int k = static_cast<int>(a) % K;
    const double t = a - std::floor(a);
    return radii[static_cast<std::size_t>(k)] * (1.0 - t) +
           radii[static_cast<std::size_t>((k + 1) % K)] * t;
  }

  double max_radius() const {
    double m = 0;
    for (double r : radii) m = std::max(m, r);
    return m;
  }

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double d = std::sqrt(dx * dx + dy * dy);
    return d <= radius_at(std::atan2(dy, dx));
  }
};

Blob make_blob(Rng& rng, double cx, double cy, double mean_radius, double irregularity) {
  Blob b{cx, cy, {}};
  const int K = 16;
  b.radii.resize(K);
  for (auto& r : b.radii) r = mean_radius * (1.0 + irregularity * rng.uniform(-1.0, 1.0));
  // One smoothing pass so the outline stays blob-like rather than spiky.
  std::vector<double> sm(b.radii.size());
  for (int k = 0; k < K; ++k)
    sm[static_cast<std::size_t>(k)] = 0.25 * b.radii[static_cast<std::size_t>((k + K - 1) % K)] +
                                      0.5 * b.radii[static_cast<std::size_t>(k)] +
                                      0.25 * b.radii[static_cast<std::size_t>((k + 1) % K)];
  b.radii = std::move(sm);
  return b;
}

}  // namespace

Section generate_section(const GenParams& params) {
  params.validate();
  Rng rng(mix_seed(params.seed, 0x73656374696f6e73ull));

  Section s;
  s.image = RgbImage(params.width, params.height);
  s.mask = LabelMask(params.width, params.height);

  // Blob geometry first, then pixels, so the draw order is fixed.
  const int count = rng.uniform_int(params.count_min, params.count_max);
  const double area_budget = params.prevalence * params.width * params.height;
  std::vector<Blob> blobs;
  for (int i = 0; i < count; ++i) {
    const double share = area_budget / count * rng.uniform(0.7, 1.3);
    const double mean_r =
        std::clamp(std::sqrt(share / kPi), params.radius_min, params.radius_max);
    const double margin = mean_r * (1.0 + params.irregularity) + 1.0;
    if (2.0 * margin >= std::min(params.width, params.height))
      throw GenError("generate_section: lesion radius " + std::to_string(mean_r) +
                     " cannot fit a " + std::to_string(params.width) + "x" +
                     std::to_string(params.height) + " section");
    double cx = 0, cy = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      cx = rng.uniform(margin, params.width - margin);
      cy = rng.uniform(margin, params.height - margin);
      placed = true;
      for (const auto& other : blobs) {
        const double dx = cx - other.cx, dy = cy - other.cy;
        const double min_d = 0.8 * (mean_r + other.max_radius());
        if (dx * dx + dy * dy < min_d * min_d) {
          placed = false;
          break;
        }
      }
    }
    if (!placed)
      throw GenError("generate_section: could not place lesion " + std::to_string(i) +
                     " after bounded retries; lower prevalence or lesion count");
    blobs.push_back(make_blob(rng, cx, cy, mean_r, params.irregularity));
  }

  for (const auto& b : blobs) {
    const double rmax = b.max_radius();
    const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - rmax)));
    const int x1 = std::min(params.width - 1, static_cast<int>(std::ceil(b.cx + rmax)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - rmax)));
    const int y1 = std::min(params.height - 1, static_cast<int>(std::ceil(b.cy + rmax)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (b.contains(x + 0.5, y + 0.5)) s.mask.set(x, y, true);
  }

  // Tissue-like background vs lighter swollen lesion regions: the color
  // statistics separate the classes while the shared noise keeps the task
  // non-trivial.
  const double bg_r = 196 + rng.uniform(-8, 8);
  const double bg_g = 158 + rng.uniform(-8, 8);
  const double bg_b = 186 + rng.uniform(-8, 8);
  const double ls_r = 233 + rng.uniform(-5, 5);
  const double ls_g = 228 + rng.uniform(-5, 5);
  const double ls_b = 242 + rng.uniform(-5, 5);
  const double fx = rng.uniform(0.02, 0.06), fy = rng.uniform(0.02, 0.06);

  for (int y = 0; y < params.height; ++y) {
    for (int x = 0; x < params.width; ++x) {
      const double wave = 6.0 * std::sin(fx * x) * std::cos(fy * y);
      const double n0 = params.texture_amp * rng.uniform(-1.0, 1.0);
      const double n1 = params.texture_amp * rng.uniform(-1.0, 1.0);
      const double n2 = params.texture_amp * rng.uniform(-1.0, 1.0);
      if (s.mask.get(x, y)) {
        s.image.at(x, y, 0) = clamp_byte(ls_r + 0.5 * wave + n0);
        s.image.at(x, y, 1) = clamp_byte(ls_g + 0.5 * wave + n1);
        s.image.at(x, y, 2) = clamp_byte(ls_b + 0.5 * wave + n2);
      } else {
        s.image.at(x, y, 0) = clamp_byte(bg_r + wave + n0);
        s.image.at(x, y, 1) = clamp_byte(bg_g + wave + n1);
        s.image.at(x, y, 2) = clamp_byte(bg_b + wave + n2);
      }
    }
  }
  return s;
}

namespace {

std::vector<int> tile_origins(int extent, int window, int stride) {
  std::vector<int> out;
  const int last = extent - window;
  for (int k = 0;; k += stride) {
    const int o = std::min(k, last);
    out.push_back(o);
    if (o == last) break;
  }
  return out;
}

}  // namespace

std::vector<Tile> tile_section(const Section& section, int window, int stride) {
  const int W = section.image.width, H = section.image.height;
  if (window <= 0 || window > W || window > H)
    throw ContractError("tile_section: window " + std::to_string(window) +
                        " exceeds section " + std::to_string(W) + "x" + std::to_string(H));
  if (stride < 1) throw ContractError("tile_section: stride must be >= 1");
  if (!section.mask.same_dims(LabelMask(W, H)))
    throw ContractError("tile_section: image/mask dimensions disagree");

  std::vector<Tile> tiles;
  for (int oy : tile_origins(H, window, stride)) {
    for (int ox : tile_origins(W, window, stride)) {
      Tile t;
      t.origin_x = ox;
      t.origin_y = oy;
      t.image = RgbImage(window, window);
      t.mask = LabelMask(window, window);
      bool lesion = false;
      for (int y = 0; y < window; ++y) {
        for (int x = 0; x < window; ++x) {
          for (int ch = 0; ch < 3; ++ch)
            t.image.at(x, y, ch) = section.image.at(ox + x, oy + y, ch);
          const bool b = section.mask.get(ox + x, oy + y);
          t.mask.set(x, y, b);
          lesion = lesion || b;
        }
      }
      t.has_lesion = lesion;
      t.section_id = section.section_id;
      t.subject_id = section.subject_id;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_x%04d_y%04d", section.section_id.c_str(), ox, oy);
      t.tile_id = buf;
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

namespace {

double lesion_pixel_ratio(const std::vector<Tile>& tiles) {
  long long lesion = 0, total = 0;
  for (const auto& t : tiles) {
    lesion += t.mask.count_true();
    total += static_cast<long long>(t.mask.bits.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(lesion) / static_cast<double>(total);
}

}  // namespace

std::vector<Tile> clean_tiles(std::vector<Tile> tiles, double neg_keep_prob,
                              std::uint64_t seed, CleanReport* report) {
  if (neg_keep_prob < 0.0 || neg_keep_prob > 1.0)
    throw ConfigError("clean_tiles: neg_keep_prob must lie in [0,1]");
  CleanReport r;
  r.tiles_before = static_cast<long long>(tiles.size());
  r.pre_lesion_pixel_ratio = lesion_pixel_ratio(tiles);

  Rng rng(mix_seed(seed, 0x636c65616e696e67ull));
  std::vector<Tile> kept;
  kept.reserve(tiles.size());
  for (auto& t : tiles) {
    if (t.has_lesion) {
      ++r.lesion_tiles;
      kept.push_back(std::move(t));
    } else if (rng.bernoulli(neg_keep_prob)) {
      ++r.background_tiles_kept;
      kept.push_back(std::move(t));
    }
  }
  r.tiles_after = static_cast<long long>(kept.size());
  r.post_lesion_pixel_ratio = lesion_pixel_ratio(kept);
  if (report) *report = r;
  return kept;
}

std::pair<std::vector<Tile>, std::vector<Tile>> split_tiles(std::vector<Tile> tiles,
                                                            double ratio, std::uint64_t seed) {
  if (tiles.empty()) throw ContractError("split_tiles: empty tile list");
  if (ratio <= 0.0 || ratio >= 1.0) throw ConfigError("split_tiles: ratio must lie in (0,1)");
  Rng rng(mix_seed(seed, 0x73706c697474696eull));
  // Fisher-Yates with our own uniform_int so the permutation is portable.
  for (int i = static_cast<int>(tiles.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(tiles[static_cast<std::size_t>(i)], tiles[static_cast<std::size_t>(j)]);
  }
  const auto n = static_cast<long long>(tiles.size());
  auto n_first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_first = std::min<std::size_t>(n_first, tiles.size());
  std::vector<Tile> first(tiles.begin(), tiles.begin() + static_cast<std::ptrdiff_t>(n_first));
  std::vector<Tile> second(tiles.begin() + static_cast<std::ptrdiff_t>(n_first), tiles.end());
  return {std::move(first), std::move(second)};
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

// Row-major 2x3 affine: (x,y) -> (a x + b y + c, d x + e y + f).
struct Affine {
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;

  static Affine identity() { return {}; }

  static Affine compose(const Affine& m2, const Affine& m1) {  // m2 after m1
    return {m2.a * m1.a + m2.b * m1.d, m2.a * m1.b + m2.b * m1.e, m2.a * m1.c + m2.b * m1.f + m2.c,
            m2.d * m1.a + m2.e * m1.d, m2.d * m1.b + m2.e * m1.e, m2.d * m1.c + m2.e * m1.f + m2.f};
  }

  Affine inverse() const {
    const double det = a * e - b * d;
    const double ia = e / det, ib = -b / det, id = -d / det, ie = a / det;
    return {ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)};
  }

  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + b * y + c;
    oy = d * x + e * y + f;
  }
};

std::uint8_t bilinear_sample(const RgbImage& img, double sx, double sy, int ch) {
  // Pixel (i,j) carries its value at center (j+0.5, i+0.5); outside is zero.
  const double u = sx - 0.5, v = sy - 0.5;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double wx = u - x0, wy = v - y0;
  double acc = 0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int x = x0 + dx, y = y0 + dy;
      if (x < 0 || x >= img.width || y < 0 || y >= img.height) continue;
      const double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy);
      acc += w * img.at(x, y, ch);
    }
  }
  return clamp_byte(std::round(acc));
}

}  // namespace

Tile augment_tile(const Tile& tile, const AugmentConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6175676d656e7431ull));
  const int W = tile.image.width, H = tile.image.height;
  const double cx = W / 2.0, cy = H / 2.0;

  Affine fwd = Affine::identity();
  auto about_center = [&](const Affine& m) {
    const Affine to_origin{1, 0, -cx, 0, 1, -cy};
    const Affine back{1, 0, cx, 0, 1, cy};
    return Affine::compose(back, Affine::compose(m, to_origin));
  };

  bool any = false;
  if (rng.bernoulli(cfg.prob)) {  // horizontal flip
    fwd = Affine::compose(about_center({-1, 0, 0, 0, 1, 0}), fwd);
    any = true;
  }
  if (rng.bernoulli(cfg.prob)) {  // rotation
    const double th = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * kPi / 180.0;
    fwd = Affine::compose(about_center({std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0}), fwd);
    any = true;
  }
  if (rng.bernoulli(cfg.prob)) {  // scale
    const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
    fwd = Affine::compose(about_center({s, 0, 0, 0, s, 0}), fwd);
    any = true;
  }
  if (rng.bernoulli(cfg.prob)) {  // translation
    const double tx = rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * W;
    const double ty = rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * H;
    fwd = Affine::compose({1, 0, tx, 0, 1, ty}, fwd);
    any = true;
  }

  Tile out = tile;
  if (!any) return out;

  const Affine inv = fwd.inverse();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double sx, sy;
      inv.apply(x + 0.5, y + 0.5, sx, sy);
      for (int ch = 0; ch < 3; ++ch)
        out.image.at(x, y, ch) = bilinear_sample(tile.image, sx, sy, ch);
      const int nx = static_cast<int>(std::floor(sx));
      const int ny = static_cast<int>(std::floor(sy));
      const bool b = nx >= 0 && nx < W && ny >= 0 && ny < H && tile.mask.get(nx, ny);
      out.mask.set(x, y, b);
    }
  }
  out.has_lesion = out.mask.any();
  return out;
}

// ---------------------------------------------------------------------------
// PNM I/O
// ---------------------------------------------------------------------------

namespace {

struct PnmReader {
  const std::string& bytes;
  const std::string& path;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " at byte offset " + std::to_string(pos));
  }

  void skip_space() {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int read_int(const char* what) {
    skip_space();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      fail(std::string("expected ") + what);
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 24) fail(std::string("implausible ") + what);
      ++pos;
    }
    return static_cast<int>(v);
  }

  void expect_magic(const char* magic) {
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
      fail(std::string("expected magic ") + magic);
    pos = 2;
  }

  const std::uint8_t* payload(std::size_t n, const char* what) {
    // Single whitespace byte separates the header from the payload.
    if (pos >= bytes.size()) fail("missing payload separator");
    const char ch = bytes[pos];
    if (ch != ' ' && ch != '\t' && ch != '\r' && ch != '\n') fail("missing payload separator");
    ++pos;
    if (pos + n > bytes.size())
      throw ParseError(path + ": truncated " + what + " payload, expected " + std::to_string(n) +
                       " bytes from byte offset " + std::to_string(pos) + ", file has " +
                       std::to_string(bytes.size() - pos));
    return reinterpret_cast<const std::uint8_t*>(bytes.data()) + pos;
  }
};

}  // namespace

void write_ppm(const std::string& path, const RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(image.data.data()), image.data.size());
  write_file(path, out);
}

RgbImage read_ppm(const std::string& path) {
  const std::string bytes = read_file(path);
  PnmReader r{bytes, path};
  r.expect_magic("P6");
  const int w = r.read_int("width");
  const int h = r.read_int("height");
  const int maxval = r.read_int("maxval");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
  RgbImage img(w, h);
  const auto* p = r.payload(img.data.size(), "pixel");
  std::copy_n(p, img.data.size(), img.data.begin());
  return img;
}

void write_pgm_mask(const std::string& path, const LabelMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) +
                    "\n255\n";
  const auto bytes = mask.to_bytes();
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  write_file(path, out);
}

LabelMask read_pgm_mask(const std::string& path) {
  const std::string bytes = read_file(path);
  PnmReader r{bytes, path};
  r.expect_magic("P5");
  const int w = r.read_int("width");
  const int h = r.read_int("height");
  const int maxval = r.read_int("maxval");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const auto* p = r.payload(n, "mask");
  LabelMask m(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] != 0 && p[i] != 255)
      throw ParseError(path + ": illegal mask value " + std::to_string(p[i]) +
                       " at byte offset " + std::to_string(r.pos + i));
    m.bits[i] = p[i] ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

namespace {

nlohmann::json parse_manifest_line(const std::string& line, std::size_t line_no) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ParseError("manifest: malformed JSON object on line " + std::to_string(line_no));
  return j;
}

std::string require_string(const nlohmann::json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j[key].is_string())
    throw ParseError(std::string("manifest: missing string field '") + key + "' on line " +
                     std::to_string(line_no));
  return j[key].get<std::string>();
}

}  // namespace

std::string section_manifest_to_string(const std::vector<SectionEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::json j;
    j["section_id"] = e.section_id;
    j["subject_id"] = e.subject_id;
    j["image_path"] = e.image_path;
    j["mask_path"] = e.mask_path;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<SectionEntry> parse_section_manifest(const std::string& text) {
  std::vector<SectionEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse_manifest_line(line, line_no);
    SectionEntry e;
    e.section_id = require_string(j, "section_id", line_no);
    e.subject_id = require_string(j, "subject_id", line_no);
    e.image_path = require_string(j, "image_path", line_no);
    e.mask_path = require_string(j, "mask_path", line_no);
    out.push_back(std::move(e));
  }
  return out;
}

std::string tile_manifest_to_string(const std::vector<TileEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::json j;
    j["tile_id"] = e.tile_id;
    j["section_id"] = e.section_id;
    j["subject_id"] = e.subject_id;
    j["image_path"] = e.image_path;
    j["mask_path"] = e.mask_path;
    j["has_lesion"] = e.has_lesion;
    j["split"] = e.split;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<TileEntry> parse_tile_manifest(const std::string& text) {
  std::vector<TileEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse_manifest_line(line, line_no);
    TileEntry e;
    e.tile_id = require_string(j, "tile_id", line_no);
    e.section_id = require_string(j, "section_id", line_no);
    e.subject_id = require_string(j, "subject_id", line_no);
    e.image_path = require_string(j, "image_path", line_no);
    e.mask_path = require_string(j, "mask_path", line_no);
    if (!j.contains("has_lesion") || !j["has_lesion"].is_boolean())
      throw ParseError("manifest: missing boolean field 'has_lesion' on line " +
                       std::to_string(line_no));
    e.has_lesion = j["has_lesion"].get<bool>();
    e.split = require_string(j, "split", line_no);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace hsl
