#include <doctest.h>

#include "support.hpp"
#include "vstain/masking.hpp"
#include "vstain/phantom.hpp"

using namespace vstain;

namespace {

// Co-registered synthetic pair: CT disc of radius rc, histology disc of
// radius rh, both centred.
ImagePair discs(int size, double rc, double rh) {
  ImagePair p;
  p.id = "disc";
  p.ct.pixels = Gray16(size, size, 1, 9000);
  p.histology.rgb = Image8(size, size, 3, 235);
  p.mask.raster = Image8(size, size, 1, 1);
  const double c = 0.5 * (size - 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double r = std::hypot(x - c, y - c);
      if (r <= rc) p.ct.pixels.at(x, y) = 31000;
      if (r <= rh) {
        p.histology.rgb.at(x, y, 0) = 140;
        p.histology.rgb.at(x, y, 1) = 70;
        p.histology.rgb.at(x, y, 2) = 150;
      }
    }
  }
  return p;
}

std::int64_t count(const Image8& m) {
  return std::count_if(m.values().begin(), m.values().end(), [](std::uint8_t v) { return v != 0; });
}

Tensor<double> constant(Shape s, double v) { return Tensor<double>(s, v); }

}  // namespace

TEST_SUITE("masking") {
  TEST_CASE("disc pair gives the disc hull") {
    const double r = 40.0;
    const auto mask = masking::build_correspondence_mask(discs(128, r, r));
    CHECK(mask.provenance.rfind("auto hull", 0) == 0);
    CHECK(static_cast<double>(mask.count()) == doctest::Approx(3.14159265358979 * r * r).epsilon(0.02));
  }

  TEST_CASE("a manual mask that excludes everything makes the pair untrainable") {
    const auto pair = discs(64, 20, 20);
    CorrespondenceMask none{Image8(64, 64, 1, 0), "manual"};
    const auto mask = masking::build_correspondence_mask(pair, {none});
    CHECK(mask.empty());
    CHECK(mask.provenance.find("untrainable") != std::string::npos);
  }

  TEST_CASE("a CT hull inside the histology hull is the result") {
    const auto pair = discs(96, 25, 38);
    const auto mask = masking::build_correspondence_mask(pair);
    CHECK(mask.raster == masking::ct_hull(pair.ct));
  }

  TEST_CASE("manual masks intersect") {
    const auto pair = discs(64, 25, 25);
    CorrespondenceMask left{Image8(64, 64, 1, 0), "manual"};
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 32; ++x) left.raster.at(x, y) = 1;
    }
    const auto full = masking::build_correspondence_mask(pair);
    const auto cut = masking::build_correspondence_mask(pair, {left});
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) CHECK(cut.at(x, y) == (full.at(x, y) && x < 32));
    }
  }

  TEST_CASE("empty segmentation is an error") {
    ImagePair flat = discs(32, 0, 0);
    flat.ct.pixels = Gray16(32, 32, 1, 5000);
    CHECK_THROWS_AS(masking::ct_hull(flat.ct), InputError);
    HistologySlide blank{Image8(32, 32, 3, 240), 1.0};
    CHECK_THROWS_AS(masking::histology_hull(blank), InputError);
  }

  TEST_CASE("phantom masks are the intersection of two convex hulls") {
    for (Material m : kMaterials) {
      const auto pair = phantom::generate_phantom_pair(phantom::default_spec(m, 41));
      const auto ct = masking::ct_hull(pair.ct);
      const auto hi = masking::histology_hull(pair.histology);
      const auto mask = masking::build_correspondence_mask(pair);
      const int w = mask.raster.width(), h = mask.raster.height();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) REQUIRE(mask.at(x, y) == (ct.at(x, y) && hi.at(x, y)));
      }
      // Integer midpoints of true pixel pairs are true.
      std::vector<Point> on;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (mask.at(x, y)) on.push_back({x, y});
        }
      }
      REQUIRE(on.size() > 1000);
      std::mt19937_64 rng(7);
      std::uniform_int_distribution<std::size_t> pick(0, on.size() - 1);
      int checked = 0;
      while (checked < 5000) {
        const auto a = on[pick(rng)], b = on[pick(rng)];
        if ((a.x + b.x) % 2 || (a.y + b.y) % 2) continue;
        CHECK(mask.at((a.x + b.x) / 2, (a.y + b.y) / 2));
        ++checked;
      }
    }
  }

  TEST_CASE("convex hull helpers") {
    std::vector<std::uint8_t> b(10 * 10, 0);
    b[2 * 10 + 2] = b[2 * 10 + 7] = b[7 * 10 + 2] = b[7 * 10 + 7] = b[4 * 10 + 4] = 1;
    const auto hull = masking::convex_hull(b, 10, 10);
    CHECK(hull.size() == 4);
    const auto filled = masking::fill_hull(hull, 10, 10);
    CHECK(count(filled) == 36);
    CHECK(filled.at(2, 2) == 1);
    CHECK(filled.at(8, 8) == 0);
    std::vector<std::uint8_t> two(8 * 8, 0);
    two[0] = two[1] = 1;
    two[5 * 8 + 5] = two[5 * 8 + 6] = two[6 * 8 + 5] = 1;
    const auto big = masking::largest_component(two, 8, 8);
    CHECK(std::count(big.begin(), big.end(), 1) == 3);
    CHECK(big[0] == 0);
  }

  TEST_CASE("Otsu splits a bimodal sample between its modes") {
    std::vector<double> v(100, 10.0);
    v.insert(v.end(), 100, 200.0);
    const double t = masking::otsu_threshold(v);
    CHECK(t > 10.0);
    CHECK(t < 200.0);
  }

  TEST_CASE("apply_mask fills exactly the false pixels") {
    Image8 img(6, 4, 3);
    for (std::size_t i = 0; i < img.values().size(); ++i) img.values()[i] = static_cast<std::uint8_t>(i);
    CorrespondenceMask all{Image8(6, 4, 1, 1), ""};
    CHECK(masking::apply_mask(img, all, 77) == img);
    CorrespondenceMask none{Image8(6, 4, 1, 0), ""};
    CHECK(masking::apply_mask(img, none, 77) == Image8(6, 4, 3, 77));
    CorrespondenceMask half{Image8(6, 4, 1, 0), ""};
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 3; ++x) half.raster.at(x, y) = 1;
    }
    const auto out = masking::apply_mask(img, half, std::vector<std::uint8_t>{1, 2, 3});
    int filled = 0;
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) {
        for (int c = 0; c < 3; ++c) {
          if (x < 3) {
            CHECK(out.at(x, y, c) == img.at(x, y, c));
          } else {
            CHECK(out.at(x, y, c) == c + 1);
            ++filled;
          }
        }
      }
    }
    CHECK(filled == 36);
    Gray16 g(2, 1, 1, 500);
    CorrespondenceMask one{Image8(2, 1, 1, 0), ""};
    one.raster.at(0, 0) = 1;
    const auto gm = masking::apply_mask(g, one, 9);
    CHECK(gm.at(0, 0) == 500);
    CHECK(gm.at(1, 0) == 9);
  }

  TEST_CASE("masked l1 examples") {
    std::mt19937_64 rng(8);
    const auto a = testing::random_tensor<double>({2, 3, 5, 4}, rng);
    CHECK(masking::masked_l1(a, a, constant({2, 1, 5, 4}, 1.0)) == 0.0);
    auto shifted = a;
    for (auto& v : shifted.values()) v += 3.0;
    CHECK(masking::masked_l1(a, shifted, constant({2, 1, 5, 4}, 0.0)) == 0.0);

    // Equal where masked, different elsewhere.
    auto b = a;
    Tensor<double> m({2, 1, 5, 4});
    for (int n = 0; n < 2; ++n) {
      for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 4; ++x) {
          const bool keep = (x + y) % 3 == 0;
          m.at(n, 0, y, x) = keep ? 1.0 : 0.0;
          if (!keep) {
            for (int c = 0; c < 3; ++c) b.at(n, c, y, x) += 5.0;
          }
        }
      }
    }
    CHECK(masking::masked_l1(a, b, m) == 0.0);

    // 40% of the pixels masked with a - b = 2 there.
    const auto c = testing::random_tensor<double>({1, 3, 10, 10}, rng);
    auto d = testing::random_tensor<double>({1, 3, 10, 10}, rng, -9.0, 9.0);
    Tensor<double> m40({1, 1, 10, 10});
    for (int y = 0; y < 10; ++y) {
      for (int x = 0; x < 4; ++x) {
        m40.at(0, 0, y, x) = 1.0;
        for (int ch = 0; ch < 3; ++ch) d.at(0, ch, y, x) = c.at(0, ch, y, x) - 2.0;
      }
    }
    CHECK(masking::masked_l1(c, d, m40) == doctest::Approx(2.0).epsilon(1e-14));
  }

  TEST_CASE("masked l1 ignores excluded pixels and reduces to the MAE") {
    std::mt19937_64 rng(9);
    const auto a = testing::random_tensor<float>({2, 3, 8, 8}, rng);
    const auto b = testing::random_tensor<float>({2, 3, 8, 8}, rng);
    Tensor<float> m({2, 1, 8, 8});
    std::bernoulli_distribution coin(0.3);
    for (auto& v : m.values()) v = coin(rng) ? 1.0f : 0.0f;
    const float base = masking::masked_l1(a, b, m);
    for (int trial = 0; trial < 20; ++trial) {
      auto p = b;
      std::uniform_real_distribution<float> u(-100.0f, 100.0f);
      for (int n = 0; n < 2; ++n) {
        for (int c = 0; c < 3; ++c) {
          for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
              if (m.at(n, 0, y, x) == 0.0f) p.at(n, c, y, x) = u(rng);
            }
          }
        }
      }
      CHECK(masking::masked_l1(a, p, m) == base);
    }
    double mae = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) mae += std::abs(double(a[i]) - b[i]);
    mae /= static_cast<double>(a.size());
    CHECK(masking::masked_l1(a, b, Tensor<float>({2, 1, 8, 8}, 1.0f)) == doctest::Approx(mae).epsilon(1e-5));
    // A full-shape mask is accepted too.
    CHECK(masking::masked_l1(a, b, Tensor<float>(a.shape(), 1.0f)) == doctest::Approx(mae).epsilon(1e-5));
  }
}
