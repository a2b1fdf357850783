#include <doctest.h>

#include "support.hpp"
#include "vstain/core/kernels.hpp"

using namespace vstain;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct ConvCase {
  int n, cin, cout, h, w, k;
  ConvGeometry g;
};

const ConvCase kConvCases[] = {
    {1, 3, 4, 9, 9, 3, {1, 1, 0}}, {2, 5, 3, 8, 11, 4, {2, 1, 0}}, {1, 6, 8, 7, 7, 1, {1, 0, 0}},
    {3, 2, 2, 12, 10, 7, {1, 3, 0}}, {1, 4, 6, 16, 16, 4, {2, 1, 0}}, {2, 8, 8, 5, 6, 3, {1, 0, 0}},
};

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("output sizes") {
    CHECK(conv_out_size(256, 4, {2, 1, 0}) == 128);
    CHECK(conv_out_size(32, 4, {1, 1, 0}) == 31);
    CHECK(conv_transpose_out_size(64, 3, {2, 1, 1}) == 128);
    CHECK(pool_out_size(111, {3, 2, true}) == 55);
    CHECK(pool_out_size(12, {3, 2, true}) == 6);
    CHECK(pool_out_size(12, {3, 2, false}) == 5);
  }

  TEST_CASE("reflect index mirrors without repeating the edge") {
    CHECK(reflect_index(-1, 5) == 1);
    CHECK(reflect_index(-3, 5) == 3);
    CHECK(reflect_index(5, 5) == 3);
    CHECK(reflect_index(7, 5) == 1);
    CHECK(reflect_index(2, 5) == 2);
    CHECK(reflect_index(-4, 1) == 0);
  }

  TEST_CASE_TEMPLATE("conv2d forward and backward match the direct loops", T, float, double) {
    std::mt19937_64 rng(11);
    const double tol = std::is_same_v<T, float> ? 2e-4 : 1e-11;
    for (const auto& c : kConvCases) {
      CAPTURE(c.k);
      CAPTURE(c.g.stride);
      const auto x = random_tensor<T>({c.n, c.cin, c.h, c.w}, rng);
      const auto wt = random_tensor<T>({c.cout, c.cin, c.k, c.k}, rng);
      const auto b = random_tensor<T>({1, c.cout, 1, 1}, rng);
      Tensor<T> y, yr;
      kernels::conv2d_forward(x, wt, &b, c.g, y);
      reference::conv2d_forward(x, wt, &b, c.g, yr);
      REQUIRE(y.shape() == yr.shape());
      CHECK(max_abs_diff(y, yr) < tol);

      const auto dy = random_tensor<T>(y.shape(), rng);
      Tensor<T> dx(x.shape()), dxr(x.shape()), dw(wt.shape()), dwr(wt.shape()), db(b.shape()), dbr(b.shape());
      kernels::conv2d_backward_input(dy, wt, c.g, dx);
      reference::conv2d_backward_input(dy, wt, c.g, dxr);
      kernels::conv2d_backward_weight(x, dy, c.g, dw, &db);
      reference::conv2d_backward_weight(x, dy, c.g, dwr, &dbr);
      CHECK(max_abs_diff(dx, dxr) < tol);
      CHECK(max_abs_diff(dw, dwr) < 10 * tol);
      CHECK(max_abs_diff(db, dbr) < 10 * tol);
    }
  }

  TEST_CASE_TEMPLATE("transposed conv forward and backward match the direct loops", T, float, double) {
    std::mt19937_64 rng(12);
    const double tol = std::is_same_v<T, float> ? 2e-4 : 1e-11;
    const ConvCase cases[] = {{1, 4, 3, 6, 6, 3, {2, 1, 1}}, {2, 3, 5, 5, 7, 4, {2, 1, 0}}, {1, 2, 2, 4, 4, 3, {1, 1, 0}}};
    for (const auto& c : cases) {
      const auto x = random_tensor<T>({c.n, c.cin, c.h, c.w}, rng);
      const auto wt = random_tensor<T>({c.cin, c.cout, c.k, c.k}, rng);
      const auto b = random_tensor<T>({1, c.cout, 1, 1}, rng);
      Tensor<T> y, yr;
      kernels::conv_transpose2d_forward(x, wt, &b, c.g, y);
      reference::conv_transpose2d_forward(x, wt, &b, c.g, yr);
      REQUIRE(y.shape() == yr.shape());
      CHECK(y.h() == conv_transpose_out_size(c.h, c.k, c.g));
      CHECK(max_abs_diff(y, yr) < tol);

      const auto dy = random_tensor<T>(y.shape(), rng);
      Tensor<T> dx(x.shape()), dxr(x.shape()), dw(wt.shape()), dwr(wt.shape()), db(b.shape()), dbr(b.shape());
      kernels::conv_transpose2d_backward_input(dy, wt, c.g, dx);
      reference::conv_transpose2d_backward_input(dy, wt, c.g, dxr);
      kernels::conv_transpose2d_backward_weight(x, dy, c.g, dw, &db);
      reference::conv_transpose2d_backward_weight(x, dy, c.g, dwr, &dbr);
      CHECK(max_abs_diff(dx, dxr) < tol);
      CHECK(max_abs_diff(dw, dwr) < 10 * tol);
      CHECK(max_abs_diff(db, dbr) < 10 * tol);
    }
  }

  TEST_CASE("backward kernels accumulate") {
    std::mt19937_64 rng(13);
    const auto x = random_tensor<double>({1, 2, 6, 6}, rng);
    const auto wt = random_tensor<double>({3, 2, 3, 3}, rng);
    const ConvGeometry g{1, 1, 0};
    Tensor<double> y;
    kernels::conv2d_forward<double>(x, wt, nullptr, g, y);
    const auto dy = random_tensor<double>(y.shape(), rng);
    Tensor<double> once(x.shape()), twice(x.shape());
    kernels::conv2d_backward_input(dy, wt, g, once);
    kernels::conv2d_backward_input(dy, wt, g, twice);
    kernels::conv2d_backward_input(dy, wt, g, twice);
    for (std::int64_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2 * once[i]));
  }

  TEST_CASE("reflect pad matches the direct loop and its adjoint") {
    std::mt19937_64 rng(14);
    const auto x = random_tensor<double>({2, 3, 7, 5}, rng);
    Tensor<double> y, yr;
    kernels::reflect_pad_forward(x, 3, y);
    reference::reflect_pad_forward(x, 3, yr);
    CHECK(y.shape() == Shape{2, 3, 13, 11});
    CHECK(max_abs_diff(y, yr) == 0.0);
    CHECK(y.at(0, 0, 0, 0) == x.at(0, 0, 3, 3));
    CHECK(y.at(1, 2, 12, 10) == x.at(1, 2, 3, 1));
    // <pad(x), dy> = <x, pad^T(dy)>
    const auto dy = random_tensor<double>(y.shape(), rng);
    Tensor<double> dx(x.shape());
    kernels::reflect_pad_backward(dy, 3, dx);
    double lhs = 0.0, rhs = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE_TEMPLATE("instance norm matches the direct loop", T, float, double) {
    std::mt19937_64 rng(15);
    const auto x = random_tensor<T>({3, 4, 9, 8}, rng, -3.0, 5.0);
    Tensor<T> y, s, yr, sr;
    kernels::instance_norm_forward(x, T(1e-5), y, s);
    reference::instance_norm_forward(x, T(1e-5), yr, sr);
    CHECK(max_abs_diff(y, yr) < (std::is_same_v<T, float> ? 1e-5 : 1e-12));
    CHECK(max_abs_diff(s, sr) < (std::is_same_v<T, float> ? 1e-4 : 1e-12));
    // Every plane comes out zero-mean, unit-variance.
    for (int n = 0; n < 3; ++n) {
      for (int c = 0; c < 4; ++c) {
        double m = 0.0, v = 0.0;
        for (int i = 0; i < 72; ++i) m += y.plane(n, c)[i];
        m /= 72;
        for (int i = 0; i < 72; ++i) v += (y.plane(n, c)[i] - m) * (y.plane(n, c)[i] - m);
        CHECK(std::abs(m) < 1e-5);
        CHECK(v / 72 == doctest::Approx(1.0).epsilon(1e-3));
      }
    }
  }

  TEST_CASE_TEMPLATE("ceil-mode max pooling matches the direct loop", T, float, double) {
    std::mt19937_64 rng(16);
    for (int size : {7, 8, 12, 13, 55}) {
      const auto x = random_tensor<T>({2, 3, size, size + 1}, rng);
      Tensor<T> y, yr;
      kernels::maxpool2d_forward(x, {3, 2, true}, y);
      reference::maxpool2d_forward(x, {3, 2, true}, yr);
      REQUIRE(y.shape() == yr.shape());
      CHECK(y.h() == pool_out_size(size, {3, 2, true}));
      CHECK(max_abs_diff(y, yr) == 0.0);
    }
  }

  TEST_CASE("separable Gaussian equals the direct 3D convolution") {
    std::mt19937_64 rng(17);
    for (double sigma : {0.6, 1.0, 1.7}) {
      const auto x = random_tensor<double>({6, 1, 9, 10}, rng, 0.0, 1000.0);
      Tensor<double> y, yr;
      kernels::gaussian_filter3d(x, sigma, 4.0, y);
      reference::gaussian_filter3d(x, sigma, 4.0, yr);
      CHECK(max_abs_diff(y, yr) < 1e-9);
    }
  }

  TEST_CASE("Gaussian filter agrees with the scipy oracle") {
    const auto o = testing::oracle();
    for (const char* key : {"gaussian_impulse", "gaussian_corner"}) {
      CAPTURE(key);
      const auto& g = o[key];
      const auto shape = g["shape"].get<std::vector<int>>();
      Tensor<double> x({shape[0], 1, shape[1], shape[2]});
      const auto expected = g["filtered"].get<std::vector<double>>();
      if (std::string(key) == "gaussian_impulse") {
        x.at(4, 0, 5, 6) = 1000.0;
      } else {
        x.at(0, 0, 0, 0) = 1000.0;
      }
      Tensor<double> y;
      kernels::gaussian_filter3d(x, 1.0, 4.0, y);
      double worst = 0.0;
      for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(y[i] - expected[i]));
      CHECK(worst < 1e-9);
    }
  }

  TEST_CASE("Gaussian filter preserves constants") {
    Tensor<float> x({5, 1, 6, 7}, 123.5f), y;
    kernels::gaussian_filter3d(x, 1.0, 4.0, y);
    for (float v : y.values()) CHECK(v == doctest::Approx(123.5f).epsilon(1e-6));
  }
}
