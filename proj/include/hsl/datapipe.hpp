#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsl/common.hpp"
#include "hsl/mask.hpp"

namespace hsl {

// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // 3 bytes per pixel, row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw ShapeError("RgbImage: dimensions must be positive");
  }

  std::uint8_t& at(int x, int y, int ch) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  std::uint8_t at(int x, int y, int ch) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
};

// A full synthetic section with its ground-truth lesion mask. subject_id
// partitions sections so the test split can come from unseen subjects.
struct Section {
  RgbImage image;
  LabelMask mask;
  std::string section_id;
  std::string subject_id;
};

struct Tile {
  RgbImage image;
  LabelMask mask;
  int origin_x = 0;
  int origin_y = 0;
  bool has_lesion = false;
  std::string tile_id;
  std::string section_id;
  std::string subject_id;
  std::string split;  // "", "train", "valid", "test"
};

// Synthetic section generator parameters.
struct GenParams {
  int width = 256;
  int height = 256;
  int count_min = 1;
  int count_max = 3;
  double radius_min = 8.0;
  double radius_max = 26.0;
  double irregularity = 0.35;   // radial jitter of the blob outline
  double texture_amp = 12.0;    // background/lesion noise amplitude
  double prevalence = 0.05;     // target lesion pixel fraction
  std::uint64_t seed = 1;

  void validate() const {
    if (width < 8 || height < 8) throw ConfigError("gen: section size too small");
    if (count_min < 0 || count_max < count_min) throw ConfigError("gen: bad lesion count range");
    if (radius_min <= 0 || radius_max < radius_min) throw ConfigError("gen: bad radius range");
    if (irregularity < 0 || irregularity > 0.9) throw ConfigError("gen: irregularity must lie in [0,0.9]");
    if (texture_amp < 0) throw ConfigError("gen: texture_amp must be non-negative");
    if (prevalence <= 0 || prevalence >= 1) throw ConfigError("gen: prevalence must lie in (0,1)");
  }
};

// Deterministic per seed. Lesions are filled radial polygons with color and
// texture statistics distinct from the background; the mask marks exactly
// the blob supports.
Section generate_section(const GenParams& params);

// Sliding-window crop with stride and edge clamping: windows that would
// overhang are shifted back so their far edge aligns with the section edge,
// so the final row/column is always covered.
std::vector<Tile> tile_section(const Section& section, int window, int stride);

struct CleanReport {
  long long tiles_before = 0;
  long long tiles_after = 0;
  long long lesion_tiles = 0;
  long long background_tiles_kept = 0;
  double pre_lesion_pixel_ratio = 0;
  double post_lesion_pixel_ratio = 0;
};

// Keeps every lesion tile; keeps each background tile independently with
// probability neg_keep_prob.
std::vector<Tile> clean_tiles(std::vector<Tile> tiles, double neg_keep_prob,
                              std::uint64_t seed, CleanReport* report = nullptr);

// Seeded shuffle then partition; first element of the pair holds the `ratio`
// share.
std::pair<std::vector<Tile>, std::vector<Tile>> split_tiles(std::vector<Tile> tiles,
                                                            double ratio, std::uint64_t seed);

struct AugmentConfig {
  double prob = 0.5;              // independent coin per transform
  double max_rotate_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_translate_frac = 0.1;
};

// Random flip / rotate / scale / translate, each applied independently with
// probability `prob`. The same geometric transform hits the image (bilinear)
// and the mask (nearest-neighbour, so binarity survives); the result is
// re-cropped to the original window with zero padding. Deterministic per
// seed.
Tile augment_tile(const Tile& tile, const AugmentConfig& cfg, std::uint64_t seed);

// PNM I/O. Images are binary PPM (P6); masks are binary PGM (P5) restricted
// to values {0,255}.
void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);
void write_pgm_mask(const std::string& path, const LabelMask& mask);
LabelMask read_pgm_mask(const std::string& path);

// Manifests are JSON lines.
struct SectionEntry {
  std::string section_id, subject_id, image_path, mask_path;
};
struct TileEntry {
  std::string tile_id, section_id, subject_id, image_path, mask_path;
  bool has_lesion = false;
  std::string split;
};

std::string section_manifest_to_string(const std::vector<SectionEntry>& entries);
std::vector<SectionEntry> parse_section_manifest(const std::string& text);
std::string tile_manifest_to_string(const std::vector<TileEntry>& entries);
std::vector<TileEntry> parse_tile_manifest(const std::string& text);

}  // namespace hsl
