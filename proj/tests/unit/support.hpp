#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vstain/core/autograd.hpp"
#include "vstain/core/tensor.hpp"

namespace testing {

inline std::filesystem::path fixtures() { return VSTAIN_FIXTURES; }

inline nlohmann::json oracle() {
  std::ifstream f(fixtures() / "oracle" / "values.json");
  return nlohmann::json::parse(f);
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vstain_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename T>
vstain::Tensor<T> random_tensor(vstain::Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  vstain::Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
double max_abs_diff(const vstain::Tensor<T>& a, const vstain::Tensor<T>& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <typename T>
bool same(const vstain::Tensor<T>& a, const vstain::Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-4) for every
// input, central differences with step h. `loss` rebuilds the graph on each
// call. The floor keeps inputs with a vanishing gradient (a bias feeding an
// instance norm) from turning difference round-off into a relative error of 1.
inline double gradient_error(const std::function<vstain::ag::Var<double>()>& loss,
                             std::vector<vstain::ag::Var<double>*> inputs, double h = 1e-6) {
  for (auto* v : inputs) v->zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto* v : inputs) {
    const vstain::Tensor<double> analytic = v->grad().empty() ? vstain::Tensor<double>(v->shape()) : v->grad();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::int64_t i = 0; i < analytic.size(); ++i) {
      double& x = v->mutable_value()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss().item();
      x = saved - h;
      const double down = loss().item();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(std::max(a2, n2)), 1e-4);
    worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

}  // namespace testing
