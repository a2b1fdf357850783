#include <doctest.h>

#include <algorithm>
#include <complex>
#include <numbers>

#include "support.hpp"
#include "vstain/eval.hpp"
#include "vstain/phantom.hpp"

using namespace vstain;

namespace {

Image8 fixture(const std::string& name) { return read_png8(testing::fixtures() / "oracle" / name); }

Image8 random_image(int w, int h, int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 255);
  Image8 img(w, h, c);
  for (auto& v : img.values()) v = static_cast<std::uint8_t>(u(rng));
  return img;
}

CorrespondenceMask full_mask(int w, int h, bool value = true) {
  return {Image8(w, h, 1, value ? 1 : 0), "test"};
}

double brute_mse(const Image8& a, const Image8& b) {
  double s = 0.0;
  int n = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      for (int c = 0; c < a.channels(); ++c) {
        const double d = double(a.at(x, y, c)) - b.at(x, y, c);
        s += d * d;
        ++n;
      }
    }
  }
  return s / n;
}

// Integer-frequency cosines with |k| <= cutoff on an n x n grid.
std::vector<double> band_limited(int n, int cutoff, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), amp(0.5, 1.5);
  std::vector<std::complex<double>> ex(static_cast<std::size_t>(n) * (2 * cutoff + 1));
  for (int k = -cutoff; k <= cutoff; ++k) {
    for (int x = 0; x < n; ++x) {
      ex[static_cast<std::size_t>(k + cutoff) * n + x] = std::polar(1.0, 2.0 * std::numbers::pi * k * x / n);
    }
  }
  std::vector<double> img(static_cast<std::size_t>(n) * n, 0.0);
  for (int ky = 0; ky <= cutoff; ++ky) {
    for (int kx = -cutoff; kx <= cutoff; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      if (kx * kx + ky * ky > cutoff * cutoff) continue;
      const auto a = std::polar(amp(rng), phase(rng));
      for (int y = 0; y < n; ++y) {
        const auto row = a * ex[static_cast<std::size_t>(ky + cutoff) * n + y];
        for (int x = 0; x < n; ++x) {
          img[static_cast<std::size_t>(y) * n + x] += (row * ex[static_cast<std::size_t>(kx + cutoff) * n + x]).real();
        }
      }
    }
  }
  return img;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("grid sampling keeps windows at least half inside the mask") {
    CHECK(eval::sample_eval_patches(full_mask(512, 512)).size() == 4);
    CHECK(eval::sample_eval_patches(full_mask(512, 512, false)).empty());
    CHECK(eval::grid_windows(600, 520, 256).size() == 4);  // partial windows are not part of the grid

    auto half = full_mask(256, 256, false);
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 256; ++x) half.raster.at(x, y) = 1;
    }
    auto kept = eval::sample_eval_patches(half);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].coverage == 0.5);
    half.raster.at(0, 0) = 0;
    CHECK(eval::sample_eval_patches(half).empty());
  }

  TEST_CASE("enlarging the mask never drops a window") {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 20; ++trial) {
      auto small = full_mask(192, 160, false);
      for (auto& v : small.raster.values()) v = coin(rng) && coin(rng) ? 1 : 0;
      auto big = small;
      for (auto& v : big.raster.values()) v = v || coin(rng) ? 1 : 0;
      const auto a = eval::sample_eval_patches(small, 32), b = eval::sample_eval_patches(big, 32);
      for (const auto& w : a) {
        CHECK(std::any_of(b.begin(), b.end(), [&](const eval::PatchWindow& o) { return o.x == w.x && o.y == w.y; }));
      }
    }
  }

  TEST_CASE("ssim, mse and psnr match the reference implementation") {
    for (const auto& entry : testing::oracle()["image_metrics"]) {
      CAPTURE(entry["x"].get<std::string>());
      const auto x = fixture(entry["x"]), y = fixture(entry["y"]);
      CHECK(eval::ssim(x, y) == doctest::Approx(entry["ssim"].get<double>()).epsilon(1e-9));
      CHECK(eval::mse(x, y) == doctest::Approx(entry["mse"].get<double>()).epsilon(1e-12));
      CHECK(eval::psnr(x, y) == doctest::Approx(entry["psnr"].get<double>()).epsilon(1e-12));
    }
    CHECK(eval::ssim(fixture("stripes.png"), fixture("stripes_inv.png")) < 0.0);
  }

  TEST_CASE("reflexive identities hold exactly") {
    std::mt19937_64 rng(5);
    for (int c : {1, 3}) {
      const auto x = random_image(24, 17, c, rng);
      CHECK(eval::ssim(x, x) == 1.0);
      CHECK(eval::mse(x, x) == 0.0);
      CHECK(std::isinf(eval::psnr(x, x)));
    }
  }

  TEST_CASE("constant images follow the closed form") {
    const auto ref = testing::oracle()["ssim_constant"];
    const Image8 a(16, 16, 1, ref["x"].get<int>()), b(16, 16, 1, ref["y"].get<int>());
    const double ma = ref["x"], mb = ref["y"];
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double expected = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);  // zero variances
    CHECK(expected == doctest::Approx(ref["ssim"].get<double>()).epsilon(1e-12));
    CHECK(eval::ssim(a, b) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("psnr agrees with brute-force mse on small images") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      std::uniform_int_distribution<int> side(7, 16);
      const int w = side(rng), h = side(rng), c = trial % 2 ? 3 : 1;
      const auto x = random_image(w, h, c, rng), y = random_image(w, h, c, rng);
      const double m = brute_mse(x, y);
      CHECK(eval::mse(x, y) == doctest::Approx(m).epsilon(1e-9));
      CHECK(eval::psnr(x, y) == doctest::Approx(10.0 * std::log10(255.0 * 255.0 / m)).epsilon(1e-9));
    }
    Image8 a(16, 16, 3, 100), b(16, 16, 3, 116);
    const double uniform = testing::oracle()["psnr_uniform16"];
    CHECK(eval::psnr(a, b) == doctest::Approx(uniform).epsilon(1e-12));
    CHECK(std::abs(eval::psnr(a, b) - 24.05) < 0.01);
    CHECK(eval::psnr_from_mse(255.0 * 255.0) == doctest::Approx(0.0));
  }

  TEST_CASE("lpips matches the reference network") {
    const auto dir = testing::fixtures() / "lpips";
    const auto ref = nlohmann::json::parse(std::ifstream(dir / "reference.json"));
    auto net = eval::Lpips::load(dir / ref["weights"].get<std::string>());
    REQUIRE(net.has_value());
    for (const auto& p : ref["pairs"]) {
      const auto a = read_png8(dir / p["a"].get<std::string>()), b = read_png8(dir / p["b"].get<std::string>());
      const double got = net->distance(a, b);
      CAPTURE(p["a"].get<std::string>());
      CAPTURE(p["b"].get<std::string>());
      CHECK(got == doctest::Approx(p["lpips"].get<double>()).epsilon(1e-4).scale(1e-3));
      CHECK(got >= 0.0);
      if (p["a"] == p["b"]) CHECK(got == 0.0);
      CHECK(net->distance(b, a) == got);
      CHECK(net->distance(a, b) == got);  // repeat run
    }
    CHECK_FALSE(eval::Lpips::load(dir / "missing.bin").has_value());
  }

  TEST_CASE("synthetic lpips is symmetric and zero on itself") {
    const auto net = eval::Lpips::synthetic(9);
    std::mt19937_64 rng(9);
    const auto a = random_image(64, 48, 3, rng), b = random_image(64, 48, 3, rng);
    CHECK(net.distance(a, a) == 0.0);
    CHECK(net.distance(a, b) > 0.0);
    CHECK(net.distance(a, b) == net.distance(b, a));
  }

  TEST_CASE("report medians come from the stored patches") {
    std::mt19937_64 rng(11);
    eval::MetricReport r;
    r.split = "test";
    r.variant = "modified";
    for (int k = 0; k < 3; ++k) {
      const auto real = random_image(96, 96, 3, rng);
      auto gen = real;
      for (auto& v : gen.values()) v = static_cast<std::uint8_t>(std::min(255, v + k * 7));
      auto mask = full_mask(96, 96, false);
      for (int y = 0; y < 96; ++y) {
        for (int x = 0; x < 96 - 16 * k; ++x) mask.raster.at(x, y) = 1;
      }
      eval::score_pair(r, "p" + std::to_string(k), real, gen, mask, 32, nullptr);
    }
    CHECK(r.excluded_total() == 3);  // a half-covered column is still kept
    std::vector<double> ssim, psnr;
    for (const auto& p : r.patches) {
      ssim.push_back(p.ssim);
      psnr.push_back(p.psnr);
      CHECK(std::isnan(p.lpips));
    }
    const auto all = r.overall();
    CHECK(all.patches == static_cast<int>(r.patches.size()));
    CHECK(all.ssim == eval::median(ssim));
    int inf = 0;
    CHECK(all.psnr == eval::finite_median(psnr, &inf));
    CHECK(inf == 9);  // the whole first pair is identical
    CHECK(all.psnr_infinite == inf);
    for (const auto& s : r.summaries()) {
      std::vector<double> mine;
      for (const auto& p : r.patches) {
        if (p.pair_id == s.pair_id) mine.push_back(p.ssim);
      }
      CHECK(s.patches == static_cast<int>(mine.size()));
      CHECK(s.ssim == eval::median(mine));
    }
    CHECK(eval::median({3.0, 1.0, 2.0, 10.0}) == 2.5);
    CHECK(std::isnan(eval::median({})));
  }

  TEST_CASE("ground truth scores perfectly against itself") {
    const auto lp = eval::Lpips::synthetic(2);
    const auto pair = phantom::generate_phantom_pair(phantom::default_spec(Material::Ti, 13));
    eval::MetricReport r;
    eval::score_pair(r, pair.id, pair.histology.rgb, pair.histology.rgb, pair.mask, 64, &lp);
    REQUIRE_FALSE(r.patches.empty());
    const auto all = r.overall();
    CHECK(all.ssim == 1.0);
    CHECK(all.lpips == 0.0);
    CHECK(all.psnr_infinite == all.patches);
  }

  TEST_CASE("evaluation follows the patch protocol") {
    const auto pairs = phantom::generate_phantom_dataset(2, {1.0, 0.0, 0.0}, 21);
    const infer::Translator identity = [](const Tensor<float>& t) { return t; };
    eval::EvalProtocol protocol;
    protocol.patch = 64;
    protocol.tile = 64;
    protocol.step = 32;
    const auto r = eval::evaluate_model(identity, pairs, "val", "untrained", protocol, nullptr);
    CHECK(r.split == "val");
    CHECK(r.variant == "untrained");
    CHECK_FALSE(r.lpips_available);
    std::size_t expected = 0;
    for (const auto& p : pairs) expected += eval::sample_eval_patches(p.mask, 64).size();
    CHECK(r.patches.size() == expected);

    const auto base = eval::baseline_cross_modality(pairs, "test", 64, nullptr);
    CHECK(base.variant == "baseline");
    CHECK(base.split == "test");
    CHECK(base.patches.size() == expected);
    CHECK(base.overall().ssim < 0.9);

    const auto dir = testing::scratch("eval_csv");
    eval::write_patch_csv(base, dir / "patches.csv");
    eval::write_summary_csv(base, dir / "summary.csv");
    eval::write_long_csv({base, r}, dir / "long.csv");
    std::ifstream in(dir / "long.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows > static_cast<int>(2 * expected));
  }

  TEST_CASE("frc curve matches the brute-force ring sums") {
    const auto ref = testing::oracle()["frc_curve"];
    const int n = ref["n"];
    const auto curve = eval::frc_curve(ref["a"].get<std::vector<double>>(), ref["b"].get<std::vector<double>>(), n);
    const auto expected = ref["correlation"].get<std::vector<double>>();
    REQUIRE(curve.correlation.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(curve.correlation[i] == doctest::Approx(expected[i]).epsilon(1e-9));
      CHECK(curve.frequency[i] == doctest::Approx(double(i + 1) / n));
    }
  }

  TEST_CASE("band-limited image resolves at its cutoff") {
    // Cutoff at a quarter of Nyquist: 0.125 cycles per pixel, period 8.
    const int n = 256;
    const auto img = band_limited(n, n / 8, 17);
    const auto res = eval::frc_resolution(img, n);
    REQUIRE(res.has_value());
    CHECK(*res > 0.0);
    CHECK(std::abs(*res - 8.0) <= 0.15 * 8.0);
    const auto coarse = eval::frc_resolution(band_limited(n, n / 16, 18), n);
    REQUIRE(coarse.has_value());
    CHECK(*coarse > *res);
  }

  TEST_CASE("frc reports no resolution without shared signal") {
    CHECK_FALSE(eval::frc_resolution(std::vector<double>(64 * 64, 7.0), 64).has_value());
    std::mt19937_64 rng(19);
    std::normal_distribution<double> g;
    std::vector<double> noise(128 * 128);
    for (auto& v : noise) v = g(rng);
    CHECK_FALSE(eval::frc_resolution(noise, 128).has_value());  // independent sub-lattices
    CHECK_THROWS_AS(eval::frc_resolution(std::vector<double>(63 * 63), 63), InputError);
  }

  TEST_CASE("frc fractions are ratios of the stored resolutions") {
    // Textured stand-ins with independent noise: phantom histology is too
    // flat to resolve at 64 px, and a noise-free texture never decorrelates.
    const int n = 128;
    auto fine = band_limited(n, 16, 23), coarse = band_limited(n, 6, 24);
    std::mt19937_64 rng(25);
    std::normal_distribution<double> noise(0.0, 3.0);
    for (auto& v : fine) v += noise(rng);
    for (auto& v : coarse) v += noise(rng);
    auto scaled = [&](const std::vector<double>& v, double top) {
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      std::vector<double> out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::round(top * (v[i] - *lo) / (*hi - *lo));
      return out;
    };
    const auto f8 = scaled(fine, 255.0), c16 = scaled(coarse, 65535.0);
    Image8 hist(n, n, 3);
    Gray16 ct(n, n, 1);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        for (int c = 0; c < 3; ++c) hist.at(x, y, c) = static_cast<std::uint8_t>(f8[y * n + x]);
        ct.at(x, y) = static_cast<std::uint16_t>(c16[y * n + x]);
      }
    }
    eval::FrcResult r;
    eval::frc_pair(r, "tex", hist, hist, ct, full_mask(n, n), 64);
    REQUIRE(r.pairs.size() == 1);
    double sums[3] = {0, 0, 0};
    int counts[3] = {0, 0, 0}, unresolved = 0;
    for (const auto& p : r.patches) {
      const int s = p.source == "generated" ? 0 : p.source == "histology" ? 1 : 2;
      if (!p.resolution_px) {
        ++unresolved;
        continue;
      }
      CHECK(*p.resolution_px > 0.0);
      sums[s] += *p.resolution_px;
      ++counts[s];
    }
    CHECK(unresolved == r.unresolved);
    const auto& f = r.pairs[0];
    {
      CHECK(f.generated == doctest::Approx(sums[0] / counts[0]));
      CHECK(f.vs_histology == doctest::Approx(f.generated / f.histology));
      CHECK(f.vs_histology == doctest::Approx(1.0));
    }
    REQUIRE((counts[0] == 4 && counts[1] == 4 && counts[2] == 4));
    CHECK(f.ct == doctest::Approx(sums[2] / counts[2]));
    CHECK(f.vs_ct < 1.0);  // the coarser CT texture resolves worse
    CHECK(f.vs_ct == doctest::Approx(f.generated / f.ct));
  }
}
