#include <doctest.h>

#include "support.hpp"
#include "vstain/augment.hpp"
#include "vstain/phantom.hpp"

using namespace vstain;
using augment::AugmentConfig;

namespace {

AugmentConfig plain(int patch) {
  AugmentConfig c;
  c.patch_size = patch;
  c.rescale_min = c.rescale_max = 1.0;
  c.hflip = c.vflip = false;
  c.jitter = 0.0;
  return c;
}

augment::PreparedPair ramp_pair(int w, int h) {
  ImagePair p;
  p.id = "ramp";
  p.ct.pixels = Gray16(w, h, 1);
  p.histology.rgb = Image8(w, h, 3);
  p.mask.raster = Image8(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      p.ct.pixels.at(x, y) = static_cast<std::uint16_t>(x * 200 + y * 3);
      for (int c = 0; c < 3; ++c) p.histology.rgb.at(x, y, c) = static_cast<std::uint8_t>((x + 2 * y + 50 * c) % 256);
      p.mask.raster.at(x, y) = (x / 5 + y / 7) % 2;
    }
  }
  return augment::prepare(p);
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("disabled augmentation is an exact crop") {
    const auto pair = ramp_pair(90, 70);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 10; ++k) {
      const auto p = augment::sample_patch(pair, plain(32), rng);
      CHECK(p.crop_size == 32);
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const int sx = p.origin_x + x, sy = p.origin_y + y;
          for (int c = 0; c < 3; ++c) {
            REQUIRE(p.ct.at(0, c, y, x) == 2.0f * pair.ct.at(0, 0, sy, sx) - 1.0f);
            REQUIRE(p.histology.at(0, c, y, x) == 2.0f * pair.histology.at(0, c, sy, sx) - 1.0f);
          }
          REQUIRE(p.mask.at(0, 0, y, x) == pair.mask.at(0, 0, sy, sx));
        }
      }
    }
  }

  TEST_CASE("histology jitter keeps channel ratios") {
    for (double contrast : {0.9, 0.95, 1.05, 1.1}) {
      for (double brightness : {-0.1, 0.0, 0.07}) {
        float r = 100 / 255.0f, g = 50 / 255.0f, b = 25 / 255.0f;
        augment::jitter_rgb(&r, &g, &b, contrast, brightness);
        CHECK(r / g == doctest::Approx(2.0).epsilon(1e-5));
        CHECK(g / b == doctest::Approx(2.0).epsilon(1e-5));
        CHECK(r != doctest::Approx(100 / 255.0f).epsilon(1e-4));
      }
    }
    CHECK(augment::jitter_grey(0.5f, 1.1, 0.05) == doctest::Approx(0.6f));
    CHECK(augment::jitter_grey(0.99f, 1.1, 0.1) == 1.0f);
  }

  TEST_CASE("rescale 1.1 takes a 233 pixel window") {
    CHECK(augment::crop_size_for(256, 1.1) == testing::oracle()["rescale_crop_300_11"].get<int>());
    ImagePair big;
    big.id = "big";
    big.ct.pixels = Gray16(300, 300, 1, 1000);
    big.histology.rgb = Image8(300, 300, 3, 100);
    big.mask.raster = Image8(300, 300, 1, 1);
    auto cfg = plain(256);
    cfg.rescale_min = 1.0;
    cfg.rescale_max = 1.1;
    const auto prepared = augment::prepare(big);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 20; ++k) {
      const auto p = augment::sample_patch(prepared, cfg, rng);
      CHECK(p.ct.shape() == Shape{1, 3, 256, 256});
      CHECK(p.crop_size >= 233);
      CHECK(p.crop_size <= 256);
      CHECK(p.origin_x + p.crop_size <= 300);
    }
  }

  TEST_CASE("a pair smaller than the patch is rejected") {
    const auto pair = ramp_pair(20, 40);
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(augment::sample_patch(pair, plain(32), rng), InputError);
    auto cfg = plain(32);
    cfg.rescale_min = 0.5;
    cfg.rescale_max = 0.5;
    const auto ok = ramp_pair(40, 40);
    CHECK_THROWS_AS(augment::sample_patch(ok, cfg, rng), InputError);
  }

  TEST_CASE("configuration limits") {
    auto c = plain(16);
    CHECK_NOTHROW(augment::validate(c));
    c.jitter = 0.2;
    CHECK_THROWS_AS(augment::validate(c), ConfigError);
    c = plain(16);
    c.rescale_min = 1.05;
    c.rescale_max = 1.1;
    CHECK_THROWS_AS(augment::validate(c), ConfigError);
    c = plain(0);
    CHECK_THROWS_AS(augment::validate(c), ConfigError);
  }

  TEST_CASE("epoch size is pairs times patches per pair") {
    std::vector<augment::PreparedPair> pairs(40, ramp_pair(20, 20));
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].id = "p" + std::to_string(i);
    auto cfg = plain(16);
    cfg.patches_per_pair = 100;
    const augment::EpochStream s(pairs, cfg, 5);
    CHECK(s.size() == 4000);
    std::map<std::string, int> per;
    for (std::size_t i = 0; i < s.size(); ++i) ++per[s.pair_id(i)];
    CHECK(per.size() == 40);
    for (const auto& [id, n] : per) CHECK(n == 100);

    std::vector<augment::PreparedPair> one(1, ramp_pair(20, 20));
    cfg.patches_per_pair = 1;
    CHECK(augment::EpochStream(one, cfg, 5).size() == 1);
    CHECK_THROWS_AS(augment::EpochStream({}, cfg, 5), InputError);
  }

  TEST_CASE("a fixed epoch seed replays the stream") {
    std::vector<augment::PreparedPair> pairs = {ramp_pair(60, 50), ramp_pair(48, 64)};
    pairs[1].id = "second";
    AugmentConfig cfg;
    cfg.patch_size = 24;
    cfg.patches_per_pair = 6;
    const augment::EpochStream a(pairs, cfg, 77), b(pairs, cfg, 77), c(pairs, cfg, 78);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto pa = a.at(i), pb = b.at(i), pc = c.at(i);
      CHECK(testing::same(pa.ct, pb.ct));
      CHECK(testing::same(pa.histology, pb.histology));
      CHECK(testing::same(pa.mask, pb.mask));
      CHECK(pa.pair_id == pb.pair_id);
      differs = differs || !testing::same(pa.histology, pc.histology);
    }
    CHECK(differs);
    // Random access gives the same patches as sequential batching.
    const auto batch = augment::make_batch(a, 3, 4);
    CHECK(batch.ct.shape() == Shape{4, 3, 24, 24});
    const auto p5 = a.at(5);
    CHECK(std::equal(p5.ct.values().begin(), p5.ct.values().end(), batch.ct.sample(2)));
    CHECK(batch.ids[2] == a.pair_id(5));
  }

  TEST_CASE("augmented phantom patches stay aligned and binary") {
    auto spec = phantom::default_spec(Material::Ti, 13);
    spec.cracks = false;
    spec.striations = false;
    const auto pair = phantom::generate_phantom_pair(spec);
    const auto prepared = augment::prepare(pair);
    AugmentConfig cfg;
    cfg.patch_size = 96;
    cfg.jitter = 0.0;
    const float ct_cut = static_cast<float>(phantom::kRawCtBone * (1.0 + spec.contrast.ti) / 65535.0 - 1.0);
    const float dark = 2.0f * 60 / 255.0f - 1.0f;
    std::mt19937_64 rng(4);
    int screw_pixels = 0, mismatch = 0;
    for (int k = 0; k < 30; ++k) {
      const auto p = augment::sample_patch(prepared, cfg, rng);
      for (float v : p.mask.values()) REQUIRE((v == 0.0f || v == 1.0f));
      for (int y = 0; y < 96; ++y) {
        for (int x = 0; x < 96; ++x) {
          const bool ct = p.ct.at(0, 0, y, x) > ct_cut;
          const bool hi = p.histology.at(0, 0, y, x) < dark && p.histology.at(0, 2, y, x) < dark;
          screw_pixels += ct;
          mismatch += ct != hi;
        }
      }
    }
    REQUIRE(screw_pixels > 1000);
    CHECK(mismatch < screw_pixels / 20);  // resampled edge pixels only
  }

  TEST_CASE("geometry is shared exactly by the three rasters") {
    ImagePair p;
    p.id = "twin";
    p.ct.pixels = Gray16(80, 72, 1);
    p.histology.rgb = Image8(80, 72, 3);
    p.mask.raster = Image8(80, 72, 1);
    for (int y = 0; y < 72; ++y) {
      for (int x = 0; x < 80; ++x) {
        const int v = (x * 7 + y * 13 + (x * y) % 11) % 256;
        p.ct.pixels.at(x, y) = static_cast<std::uint16_t>(v * 257);
        for (int c = 0; c < 3; ++c) p.histology.rgb.at(x, y, c) = static_cast<std::uint8_t>(v);
        p.mask.raster.at(x, y) = v >= 128;
      }
    }
    const auto prepared = augment::prepare(p);
    AugmentConfig cfg;
    cfg.patch_size = 48;
    cfg.jitter = 0.0;
    std::mt19937_64 rng(6);
    for (int k = 0; k < 20; ++k) {
      const auto s = augment::sample_patch(prepared, cfg, rng);
      CHECK(testing::max_abs_diff(s.ct, s.histology) < 1e-5);
    }
  }

  TEST_CASE("jittered histology keeps its hue wherever nothing clips") {
    const auto pair = phantom::generate_phantom_pair(phantom::default_spec(Material::Mg, 14));
    const auto prepared = augment::prepare(pair);
    auto cfg = plain(64);
    cfg.jitter = 0.1;
    std::mt19937_64 rng(5);
    int checked = 0;
    for (int k = 0; k < 10; ++k) {
      auto rng_copy = rng;
      const auto jittered = augment::sample_patch(prepared, cfg, rng);
      auto flat_cfg = cfg;
      flat_cfg.jitter = 0.0;
      const auto raw = augment::sample_patch(prepared, flat_cfg, rng_copy);
      REQUIRE(raw.origin_x == jittered.origin_x);
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
          float a[3], b[3];
          bool clipped = false;
          for (int c = 0; c < 3; ++c) {
            a[c] = 0.5f * (raw.histology.at(0, c, y, x) + 1.0f);
            b[c] = 0.5f * (jittered.histology.at(0, c, y, x) + 1.0f);
            clipped = clipped || b[c] <= 0.0f || b[c] >= 1.0f || a[c] < 0.02f;
          }
          if (clipped) continue;
          CHECK(b[0] * a[1] == doctest::Approx(b[1] * a[0]).epsilon(1e-4));
          CHECK(b[2] * a[1] == doctest::Approx(b[1] * a[2]).epsilon(1e-4));
          ++checked;
        }
      }
    }
    CHECK(checked > 20000);
  }
}
