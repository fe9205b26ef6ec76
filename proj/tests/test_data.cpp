#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rtn/data.hpp"

using namespace rtn;

namespace {

std::string temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() / (std::string("rtn_test_") + tag);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("zero deformation ranges give identical images and zero flow") {
  SyntheticConfig cfg;
  cfg.size = 48;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.rot_max_deg = 0.0;
  cfg.trans_max = 0.0;
  cfg.local_warp_amp = 0.0;
  SyntheticPair pair = gen_pair(5, cfg);
  REQUIRE(pair.source.pixels.size() == pair.target.pixels.size());
  for (std::size_t i = 0; i < pair.source.pixels.size(); ++i) {
    CHECK(pair.source.pixels[i] == pair.target.pixels[i]);
  }
  for (double v : pair.gt_flow.uv) CHECK(v == 0.0);
  CHECK(pair.mask_count() > 100);
}

TEST_CASE("pure translation yields a constant flow within the range") {
  SyntheticConfig cfg;
  cfg.size = 48;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.rot_max_deg = 0.0;
  cfg.trans_max = 5.0;
  cfg.local_warp_amp = 0.0;
  SyntheticPair pair = gen_pair(11, cfg);
  const double u0 = pair.gt_flow.u(0, 0);
  const double v0 = pair.gt_flow.v(0, 0);
  CHECK(std::fabs(u0) <= 5.0);
  CHECK(std::fabs(v0) <= 5.0);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      CHECK(pair.gt_flow.u(y, x) == u0);
      CHECK(pair.gt_flow.v(y, x) == v0);
      double t[6];
      pair.gt_field.fetch(y, x, t);
      CHECK(t[0] == 1.0);
      CHECK(t[3] == 1.0);
    }
  }
}

TEST_CASE("warping the clean frame through the ground truth reproduces the pair") {
  SyntheticConfig cfg;
  cfg.size = 64;
  SyntheticPair pair = gen_pair(17, cfg);
  // The source is the target pulled through gt_flow by construction.
  Image rebuilt = warp_image(pair.target, pair.gt_flow);
  double err_sum = 0.0;
  int count = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (!pair.masked(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        err_sum += std::fabs(rebuilt.at(y, x, c) - pair.source.at(y, x, c));
        ++count;
      }
    }
  }
  REQUIRE(count > 0);
  CHECK(err_sum / count < 0.02);
  CHECK(err_sum / count < 1e-12);  // same sampler, same values
}

TEST_CASE("the stored flow is the displacement part of the stored field") {
  SyntheticConfig cfg;
  cfg.size = 32;
  SyntheticPair pair = gen_pair(41, cfg);
  FlowField derived = flow_of(pair.gt_field);
  CHECK(derived.uv == pair.gt_flow.uv);
}

TEST_CASE("generation is bit-reproducible per seed and differs across seeds") {
  SyntheticConfig cfg;
  cfg.size = 32;
  SyntheticPair a = gen_pair(23, cfg);
  SyntheticPair b = gen_pair(23, cfg);
  SyntheticPair c = gen_pair(24, cfg);
  CHECK(a.source.pixels == b.source.pixels);
  CHECK(a.target.pixels == b.target.pixels);
  CHECK(a.gt_flow.uv == b.gt_flow.uv);
  CHECK(a.fg_mask == b.fg_mask);
  CHECK(a.source.pixels != c.source.pixels);
}

TEST_CASE("local warp amplitude honors the configured bound") {
  SyntheticConfig with;
  with.size = 48;
  with.local_warp_amp = 2.0;
  SyntheticConfig without = with;
  without.local_warp_amp = 0.0;
  for (std::uint64_t seed : {3ull, 9ull, 27ull}) {
    SyntheticPair a = gen_pair(seed, with);
    SyntheticPair b = gen_pair(seed, without);
    double worst = 0.0;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        worst = std::max(worst, std::fabs(a.gt_flow.u(y, x) - b.gt_flow.u(y, x)));
        worst = std::max(worst, std::fabs(a.gt_flow.v(y, x) - b.gt_flow.v(y, x)));
      }
    }
    CHECK(worst <= 2.0 + 1e-9);
    CHECK(worst > 0.0);
  }
}

TEST_CASE("degenerate ranges are rejected") {
  SyntheticConfig cfg;
  cfg.scale_min = 0.4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SyntheticConfig{};
  cfg.rot_max_deg = 60.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SyntheticConfig{};
  cfg.texture = "plaid";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("keypoints are unique, masked, and exactly transported") {
  SyntheticConfig cfg;
  cfg.size = 48;
  SyntheticPair pair = gen_pair(31, cfg);
  KeypointSet src, tgt;
  gen_keypoints(pair, 10, 31, &src, &tgt);
  REQUIRE(src.points.size() == 10);
  REQUIRE(tgt.points.size() == 10);
  for (const Keypoint& p : src.points) {
    const Keypoint* partner = tgt.find(p.id);
    REQUIRE(partner != nullptr);
    const int x = static_cast<int>(p.x), y = static_cast<int>(p.y);
    CHECK(pair.masked(y, x));
    CHECK(partner->x == p.x + pair.gt_flow.u(y, x));
    CHECK(partner->y == p.y + pair.gt_flow.v(y, x));
  }
}

TEST_CASE("ppm round trip is byte exact") {
  const std::string dir = temp_dir("ppm");
  Image img(3, 5);
  int k = 0;
  for (auto& p : img.pixels) p = static_cast<double>((k++ * 41) % 256) / 255.0;
  const std::string path = dir + "/img.ppm";
  save_ppm(img, path);
  Image back = load_ppm(path);
  REQUIRE(back.height == 3);
  REQUIRE(back.width == 5);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
  // Second save must produce identical bytes.
  const std::string path2 = dir + "/img2.ppm";
  save_ppm(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("hand-written ppm fixture parses to exact values") {
  const std::string dir = temp_dir("ppm_fixture");
  const std::string path = dir + "/tiny.ppm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n# tiny\n2 2\n255\n";
    const unsigned char bytes[12] = {0, 128, 255, 10, 20, 30, 250, 240, 230, 1, 2, 3};
    out.write(reinterpret_cast<const char*>(bytes), 12);
  }
  Image img = load_ppm(path);
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 2);
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 0, 1) == 128.0 / 255.0);
  CHECK(img.at(0, 0, 2) == 1.0);
  CHECK(img.at(1, 1, 2) == 3.0 / 255.0);
}

TEST_CASE("malformed ppm and keypoint files are rejected") {
  const std::string dir = temp_dir("bad_files");
  {
    std::ofstream out(dir + "/bad.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n";
    out << "xx";  // truncated pixel data
  }
  CHECK_THROWS_AS(load_ppm(dir + "/bad.ppm"), ParseError);
  {
    std::ofstream out(dir + "/bad.kps");
    out << "0 1.5 2.5\n0 3.5 4.5\n";  // duplicate id
  }
  CHECK_THROWS_AS(load_keypoints(dir + "/bad.kps"), DataError);
  {
    std::ofstream out(dir + "/bad2.kps");
    out << "0 1.5\n";
  }
  CHECK_THROWS_AS(load_keypoints(dir + "/bad2.kps"), ParseError);
}

TEST_CASE("keypoint files round trip") {
  const std::string dir = temp_dir("kps");
  KeypointSet set;
  set.points = {{0, 1.25, 2.5}, {3, 4.75, 8.125}, {7, 0.0, 47.0}};
  save_keypoints(set, dir + "/pts.kps");
  KeypointSet back = load_keypoints(dir + "/pts.kps");
  REQUIRE(back.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.points[i].id == set.points[i].id);
    CHECK(back.points[i].x == set.points[i].x);
    CHECK(back.points[i].y == set.points[i].y);
  }
}

TEST_CASE("pair save and load") {
  SyntheticConfig cfg;
  cfg.size = 32;
  SyntheticPair pair = gen_pair(37, cfg);
  const std::string dir = temp_dir("pair") + "/p0";
  save_pair(pair, dir);
  SyntheticPair back = load_pair(dir);
  CHECK(back.seed == pair.seed);
  CHECK(back.gt_flow.uv == pair.gt_flow.uv);
  CHECK(back.fg_mask == pair.fg_mask);
  CHECK(back.gt_field.params.values() == pair.gt_field.params.values());
  // Images pass through 8-bit quantization.
  for (std::size_t i = 0; i < pair.source.pixels.size(); ++i) {
    CHECK(std::fabs(back.source.pixels[i] - pair.source.pixels[i]) <= 0.5 / 255.0 + 1e-12);
  }
}
