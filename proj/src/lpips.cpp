#include <cmath>
#include <random>

#include "vstain/archive.hpp"
#include "vstain/core/kernels.hpp"
#include "vstain/errors.hpp"
#include "vstain/eval.hpp"

namespace vstain::eval {

namespace {

struct FireSpec {
  int index, in, squeeze, expand;
};

// SqueezeNet 1.1 feature stack.
constexpr FireSpec kFires[] = {{3, 64, 16, 64},   {4, 128, 16, 64},  {6, 128, 32, 128},  {7, 256, 32, 128},
                               {9, 256, 48, 192}, {10, 384, 48, 192}, {11, 384, 64, 256}, {12, 512, 64, 256}};
constexpr int kTapChannels[7] = {64, 128, 256, 384, 384, 512, 512};
constexpr float kShift[3] = {-0.030f, -0.088f, -0.188f};
constexpr float kScale[3] = {0.458f, 0.448f, 0.450f};

void relu(Tensor<float>& t) {
  for (auto& v : t.values()) v = v > 0.0f ? v : 0.0f;
}

}  // namespace

struct Lpips::Net {
  TensorArchive w;

  const Tensor<float>& get(const std::string& key) const {
    const auto it = w.find(key);
    if (it == w.end()) throw IoError("LPIPS weights lack " + key);
    return it->second;
  }

  Tensor<float> conv(const Tensor<float>& x, const std::string& name, int stride, int pad) const {
    Tensor<float> y;
    kernels::conv2d_forward(x, get(name + ".weight"), &get(name + ".bias"), ConvGeometry{stride, pad, 0}, y);
    relu(y);
    return y;
  }

  Tensor<float> fire(const Tensor<float>& x, int index) const {
    const std::string p = "features." + std::to_string(index) + ".";
    const Tensor<float> s = conv(x, p + "squeeze", 1, 0);
    const Tensor<float> a = conv(s, p + "expand1x1", 1, 0);
    const Tensor<float> b = conv(s, p + "expand3x3", 1, 1);
    Tensor<float> out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
    const std::int64_t pa = a.shape().plane() * a.c(), pb = b.shape().plane() * b.c();
    for (int n = 0; n < a.n(); ++n) {
      std::copy_n(a.sample(n), pa, out.sample(n));
      std::copy_n(b.sample(n), pb, out.sample(n) + pa);
    }
    return out;
  }

  static Tensor<float> pool(const Tensor<float>& x) {
    Tensor<float> y;
    kernels::maxpool2d_forward(x, PoolGeometry{3, 2, true}, y);
    return y;
  }

  std::vector<Tensor<float>> taps(const Image8& img) const {
    Tensor<float> x(Shape{1, 3, img.height(), img.width()});
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < img.height(); ++y) {
        for (int xx = 0; xx < img.width(); ++xx) {
          const float v = static_cast<float>(img.at(xx, y, c) / 127.5 - 1.0);
          x.at(0, c, y, xx) = (v - kShift[c]) / kScale[c];
        }
      }
    }
    std::vector<Tensor<float>> out;
    Tensor<float> h = conv(x, "features.0", 2, 0);
    out.push_back(h);
    h = fire(fire(pool(h), 3), 4);
    out.push_back(h);
    h = fire(fire(pool(h), 6), 7);
    out.push_back(h);
    h = fire(pool(h), 9);
    out.push_back(h);
    h = fire(h, 10);
    out.push_back(h);
    h = fire(h, 11);
    out.push_back(h);
    h = fire(h, 12);
    out.push_back(h);
    return out;
  }
};

std::vector<std::pair<std::string, Shape>> Lpips::weight_layout() {
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"features.0.weight", Shape{64, 3, 3, 3}});
  out.push_back({"features.0.bias", Shape{1, 64, 1, 1}});
  for (const auto& f : kFires) {
    const std::string p = "features." + std::to_string(f.index) + ".";
    out.push_back({p + "squeeze.weight", Shape{f.squeeze, f.in, 1, 1}});
    out.push_back({p + "squeeze.bias", Shape{1, f.squeeze, 1, 1}});
    out.push_back({p + "expand1x1.weight", Shape{f.expand, f.squeeze, 1, 1}});
    out.push_back({p + "expand1x1.bias", Shape{1, f.expand, 1, 1}});
    out.push_back({p + "expand3x3.weight", Shape{f.expand, f.squeeze, 3, 3}});
    out.push_back({p + "expand3x3.bias", Shape{1, f.expand, 1, 1}});
  }
  for (int k = 0; k < 7; ++k) out.push_back({"lin" + std::to_string(k) + ".weight", Shape{1, kTapChannels[k], 1, 1}});
  return out;
}

Lpips::Lpips(std::unique_ptr<Net> net) : net_(std::move(net)) {}
Lpips::Lpips(Lpips&&) noexcept = default;
Lpips& Lpips::operator=(Lpips&&) noexcept = default;
Lpips::~Lpips() = default;

std::optional<Lpips> Lpips::load(const std::filesystem::path& weights) {
  if (weights.empty() || !std::filesystem::exists(weights)) return std::nullopt;
  auto net = std::make_unique<Net>();
  net->w = read_archive(weights);
  for (const auto& [name, shape] : weight_layout()) {
    const Tensor<float>& t = net->get(name);
    // Biases may be stored flat; only the element count must agree.
    if (t.size() != shape.numel()) throw IoError("LPIPS weight " + name + " has " + t.shape().str());
    net->w[name].reshape(shape);
  }
  return Lpips(std::move(net));
}

Lpips Lpips::synthetic(std::uint64_t seed) {
  auto net = std::make_unique<Net>();
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : weight_layout()) {
    Tensor<float> t(shape);
    const bool lin = name.rfind("lin", 0) == 0;
    const bool bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
    std::normal_distribution<double> nd(0.0, lin ? 0.1 : std::sqrt(2.0 / fan_in));
    for (auto& v : t.values()) {
      const double d = bias ? 0.01 * nd(rng) : nd(rng);
      v = static_cast<float>(lin ? std::fabs(d) : d);
    }
    net->w[name] = std::move(t);
  }
  return Lpips(std::move(net));
}

double Lpips::distance(const Image8& x, const Image8& y) const {
  if (!x.same_size(y) || x.channels() != 3 || y.channels() != 3) throw InputError("LPIPS needs equal RGB images");
  if (x.width() < 32 || x.height() < 32) throw InputError("LPIPS needs images of at least 32x32");
  const auto fx = net_->taps(x), fy = net_->taps(y);
  double total = 0.0;
  for (std::size_t k = 0; k < fx.size(); ++k) {
    const Tensor<float>& a = fx[k];
    const Tensor<float>& b = fy[k];
    const Tensor<float>& lin = net_->get("lin" + std::to_string(k) + ".weight");
    const int C = a.c();
    const std::int64_t plane = a.shape().plane();
    double layer = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      double na = 0.0, nb = 0.0;
      for (int c = 0; c < C; ++c) {
        na += static_cast<double>(a.plane(0, c)[i]) * a.plane(0, c)[i];
        nb += static_cast<double>(b.plane(0, c)[i]) * b.plane(0, c)[i];
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      double s = 0.0;
      for (int c = 0; c < C; ++c) {
        const double d = a.plane(0, c)[i] / na - b.plane(0, c)[i] / nb;
        s += lin[c] * d * d;
      }
      layer += s;
    }
    total += layer / static_cast<double>(plane);
  }
  return total;
}

}  // namespace vstain::eval
