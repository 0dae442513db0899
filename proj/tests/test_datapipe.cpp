#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "hsl/checkpoint.hpp"
#include "hsl/datapipe.hpp"

using namespace hsl;
namespace fs = std::filesystem;

namespace {

GenParams small_params(std::uint64_t seed) {
  GenParams p;
  p.width = 128;
  p.height = 128;
  p.count_min = 1;
  p.count_max = 2;
  p.radius_min = 6;
  p.radius_max = 18;
  p.prevalence = 0.05;
  p.seed = seed;
  return p;
}

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "hsl_datapipe_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("generate_section: deterministic per seed; empty when count range is zero") {
  const auto a = generate_section(small_params(7));
  const auto b = generate_section(small_params(7));
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.bits == b.mask.bits);

  const auto c = generate_section(small_params(8));
  CHECK(a.image.data != c.image.data);

  GenParams none = small_params(7);
  none.count_min = 0;
  none.count_max = 0;
  CHECK(generate_section(none).mask.count_true() == 0);
}

TEST_CASE("generate_section: mean prevalence within +-50% of target over 100 seeds") {
  double total_ratio = 0;
  for (int s = 0; s < 100; ++s) {
    const auto sec = generate_section(small_params(1000 + static_cast<std::uint64_t>(s)));
    total_ratio += static_cast<double>(sec.mask.count_true()) /
                   static_cast<double>(sec.mask.bits.size());
  }
  const double mean = total_ratio / 100.0;
  CHECK(mean > 0.025);
  CHECK(mean < 0.075);
}

TEST_CASE("generate_section: lesion pixels have distinct color statistics") {
  const auto sec = generate_section(small_params(3));
  double lesion_sum = 0, bg_sum = 0;
  long long lesion_n = 0, bg_n = 0;
  for (int y = 0; y < sec.image.height; ++y)
    for (int x = 0; x < sec.image.width; ++x) {
      const double lum = sec.image.at(x, y, 0) + sec.image.at(x, y, 1) + sec.image.at(x, y, 2);
      if (sec.mask.get(x, y)) {
        lesion_sum += lum;
        ++lesion_n;
      } else {
        bg_sum += lum;
        ++bg_n;
      }
    }
  REQUIRE(lesion_n > 0);
  CHECK(lesion_sum / lesion_n > bg_sum / bg_n + 60.0);  // clearly separable
}

TEST_CASE("generate_section: infeasible parameters raise GenError") {
  GenParams p = small_params(1);
  p.width = 32;
  p.height = 32;
  p.radius_min = 30;
  p.radius_max = 40;
  p.prevalence = 0.9;
  CHECK_THROWS_AS(generate_section(p), GenError);
}

TEST_CASE("tile_section: exact single tile; clamped origins on a 100px section") {
  Section s;
  s.image = RgbImage(64, 64);
  s.mask = LabelMask(64, 64);
  s.section_id = "secA";
  const auto one = tile_section(s, 64, 32);
  REQUIRE(one.size() == 1);
  CHECK(one[0].origin_x == 0);
  CHECK(one[0].origin_y == 0);

  Section wide;
  wide.image = RgbImage(100, 64);
  wide.mask = LabelMask(100, 64);
  wide.section_id = "secB";
  const auto tiles = tile_section(wide, 64, 32);
  std::set<int> xs;
  for (const auto& t : tiles) xs.insert(t.origin_x);
  CHECK(xs == std::set<int>{0, 32, 36});

  CHECK_THROWS_AS(tile_section(wide, 128, 32), ContractError);
}

TEST_CASE("tile_section: coverage bitmap over randomized sizes; unique origins") {
  Rng rng(50);
  for (int trial = 0; trial < 40; ++trial) {
    const int W = rng.uniform_int(32, 140);
    const int H = rng.uniform_int(32, 140);
    const int window = rng.uniform_int(8, std::min({W, H, 64}));
    const int stride = window / 2 > 0 ? window / 2 : 1;

    Section s;
    s.image = RgbImage(W, H);
    s.mask = LabelMask(W, H);
    const auto tiles = tile_section(s, window, stride);

    std::vector<int> cover(static_cast<std::size_t>(W) * H, 0);
    std::set<std::pair<int, int>> origins;
    for (const auto& t : tiles) {
      CHECK(origins.insert({t.origin_x, t.origin_y}).second);  // no duplicates
      for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x)
          ++cover[static_cast<std::size_t>(t.origin_y + y) * W + t.origin_x + x];
    }
    for (int v : cover) REQUIRE(v >= 1);  // every pixel covered

    // Final row/column tiles present.
    bool has_last_x = false, has_last_y = false;
    for (const auto& t : tiles) {
      has_last_x = has_last_x || t.origin_x == W - window;
      has_last_y = has_last_y || t.origin_y == H - window;
    }
    CHECK(has_last_x);
    CHECK(has_last_y);
  }
}

TEST_CASE("tile_section: has_lesion flags exactly the lesion-bearing tiles") {
  auto sec = generate_section(small_params(12));
  const auto tiles = tile_section(sec, 32, 16);
  for (const auto& t : tiles) {
    CHECK(t.has_lesion == t.mask.any());
    // Patch content matches the section at the origin.
    CHECK(t.mask.get(0, 0) == sec.mask.get(t.origin_x, t.origin_y));
  }
}

TEST_CASE("clean_tiles: keep-all and drop-background endpoints; ratio never drops") {
  auto sec = generate_section(small_params(21));
  auto tiles = tile_section(sec, 32, 16);

  CleanReport all_report;
  const auto all = clean_tiles(tiles, 1.0, 5, &all_report);
  CHECK(all.size() == tiles.size());
  CHECK(all_report.pre_lesion_pixel_ratio == all_report.post_lesion_pixel_ratio);

  CleanReport none_report;
  const auto lesion_only = clean_tiles(tiles, 0.0, 5, &none_report);
  for (const auto& t : lesion_only) CHECK(t.has_lesion);
  CHECK(static_cast<long long>(lesion_only.size()) == none_report.lesion_tiles);

  CleanReport mid_report;
  clean_tiles(tiles, 0.1, 5, &mid_report);
  CHECK(mid_report.post_lesion_pixel_ratio >= mid_report.pre_lesion_pixel_ratio);

  // Determinism per seed.
  const auto again = clean_tiles(tiles, 0.1, 5, nullptr);
  const auto again2 = clean_tiles(tiles, 0.1, 5, nullptr);
  REQUIRE(again.size() == again2.size());
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].tile_id == again2[i].tile_id);
}

TEST_CASE("split_tiles: 9:1 on ten tiles; deterministic; disjoint and exhaustive") {
  std::vector<Tile> tiles(10);
  for (int i = 0; i < 10; ++i) tiles[static_cast<std::size_t>(i)].tile_id = "t" + std::to_string(i);

  auto [train, valid] = split_tiles(tiles, 0.9, 3);
  CHECK(train.size() == 9);
  CHECK(valid.size() == 1);

  auto [t2, v2] = split_tiles(tiles, 0.9, 3);
  CHECK(t2.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(t2[i].tile_id == train[i].tile_id);

  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(2, 40);
    std::vector<Tile> ts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ts[static_cast<std::size_t>(i)].tile_id = "x" + std::to_string(i);
    const double ratio = rng.uniform(0.1, 0.9);
    auto [a, b] = split_tiles(ts, ratio, rng.next_u64());
    CHECK(a.size() + b.size() == ts.size());
    std::set<std::string> seen;
    for (const auto& t : a) seen.insert(t.tile_id);
    for (const auto& t : b) CHECK(!seen.count(t.tile_id));
    const double exact = ratio * n;
    CHECK(std::abs(static_cast<double>(a.size()) - exact) <= 1.0);
  }

  CHECK_THROWS_AS(split_tiles({}, 0.9, 1), ContractError);
}

TEST_CASE("augment_tile: identity seed, flip-only seed, binarity, dimensions") {
  auto sec = generate_section(small_params(33));
  const auto tiles = tile_section(sec, 32, 16);
  const Tile* lesion_tile = nullptr;
  for (const auto& t : tiles)
    if (t.has_lesion) {
      lesion_tile = &t;
      break;
    }
  REQUIRE(lesion_tile != nullptr);
  AugmentConfig cfg;

  // Hunt seeds by observed effect: all four coins missing (identity) has
  // probability 1/16 per seed, a flip-only draw 1/16, so short scans find
  // both without peeking at the draw order.
  RgbImage mirror_img(32, 32);
  LabelMask mirror_mask(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      for (int ch = 0; ch < 3; ++ch)
        mirror_img.at(x, y, ch) = lesion_tile->image.at(31 - x, y, ch);
      mirror_mask.set(x, y, lesion_tile->mask.get(31 - x, y));
    }

  bool found_identity = false, found_flip = false;
  for (std::uint64_t s = 0; s < 4000 && !(found_identity && found_flip); ++s) {
    const auto out = augment_tile(*lesion_tile, cfg, s);
    if (out.image.data == lesion_tile->image.data && out.mask.bits == lesion_tile->mask.bits)
      found_identity = true;
    if (out.image.data == mirror_img.data && out.mask.bits == mirror_mask.bits)
      found_flip = true;
  }
  CHECK(found_identity);
  CHECK(found_flip);

  // Binarity and shape preservation across many seeds.
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto out = augment_tile(*lesion_tile, cfg, s);
    REQUIRE(out.image.width == 32);
    REQUIRE(out.mask.height == 32);
    for (auto b : out.mask.bits) REQUIRE((b == 0 || b == 1));
    REQUIRE(out.has_lesion == out.mask.any());
  }

  // Determinism per seed.
  const auto r1 = augment_tile(*lesion_tile, cfg, 271);
  const auto r2 = augment_tile(*lesion_tile, cfg, 271);
  CHECK(r1.image.data == r2.image.data);
  CHECK(r1.mask.bits == r2.mask.bits);
}

TEST_CASE("PNM round trips are byte-exact; malformed files are rejected") {
  const auto dir = temp_dir();
  Rng rng(99);

  RgbImage img(13, 7);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const auto ppm = (dir / "img.ppm").string();
  write_ppm(ppm, img);
  const auto back = read_ppm(ppm);
  CHECK(back.width == 13);
  CHECK(back.height == 7);
  CHECK(back.data == img.data);
  write_ppm((dir / "img2.ppm").string(), back);
  CHECK(read_file(ppm) == read_file((dir / "img2.ppm").string()));

  LabelMask one(1, 1);
  one.set(0, 0, true);
  const auto pgm = (dir / "one.pgm").string();
  write_pgm_mask(pgm, one);
  const auto mback = read_pgm_mask(pgm);
  CHECK(mback.width == 1);
  CHECK(mback.count_true() == 1);

  // Mask with an illegal gray value.
  write_file((dir / "bad.pgm").string(), std::string("P5\n2 1\n255\n") + '\x80' + '\x00');
  CHECK_THROWS_AS(read_pgm_mask((dir / "bad.pgm").string()), ParseError);
  try {
    read_pgm_mask((dir / "bad.pgm").string());
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  // Truncated payload.
  write_file((dir / "trunc.ppm").string(), "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(read_ppm((dir / "trunc.ppm").string()), ParseError);

  // Bad magic.
  write_file((dir / "magic.ppm").string(), "P7\n1 1\n255\nxyz");
  CHECK_THROWS_AS(read_ppm((dir / "magic.ppm").string()), ParseError);

  // Comments and whitespace in the header are tolerated.
  write_file((dir / "comment.pgm").string(), "P5 # comment\n# another\n 1 1 \n255\n\xff");
  CHECK(read_pgm_mask((dir / "comment.pgm").string()).count_true() == 1);

  fs::remove_all(dir);
}

TEST_CASE("manifests: JSONL round trip and error reporting") {
  std::vector<TileEntry> entries(2);
  entries[0] = {"t0", "sec0", "subj0", "tiles/t0.ppm", "tiles/t0.pgm", true, "train"};
  entries[1] = {"t1", "sec0", "subj0", "tiles/t1.ppm", "tiles/t1.pgm", false, "test"};
  const auto text = tile_manifest_to_string(entries);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);

  const auto back = parse_tile_manifest(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tile_id == "t0");
  CHECK(back[0].has_lesion);
  CHECK(back[1].split == "test");

  CHECK_THROWS_AS(parse_tile_manifest("{not json}\n"), ParseError);
  CHECK_THROWS_AS(parse_tile_manifest("{\"tile_id\": 3}\n"), ParseError);

  std::vector<SectionEntry> secs(1);
  secs[0] = {"sec0", "subj0", "sections/sec0.ppm", "sections/sec0.pgm"};
  const auto sback = parse_section_manifest(section_manifest_to_string(secs));
  REQUIRE(sback.size() == 1);
  CHECK(sback[0].subject_id == "subj0");
}
