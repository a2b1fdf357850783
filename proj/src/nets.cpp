#include "vstain/nets.hpp"

#include <random>
#include <stdexcept>

namespace vstain::nets {

GeneratorKind parse_generator_kind(const std::string& name) {
  if (name == "resnet" || name == "resnet9") return GeneratorKind::resnet;
  if (name == "unet") return GeneratorKind::unet;
  throw std::invalid_argument("unknown generator kind '" + name + "'");
}

std::string to_string(GeneratorKind kind) { return kind == GeneratorKind::resnet ? "resnet" : "unet"; }

namespace {

// Zero-mean Gaussian weights (sigma 0.02), zero bias.
template <typename T>
ConvLayer<T> make_conv(std::mt19937_64& rng, int in, int out, int k, ConvGeometry g, bool transposed) {
  std::normal_distribution<double> normal(0.0, 0.02);
  Shape ws = transposed ? Shape{in, out, k, k} : Shape{out, in, k, k};
  Tensor<T> w(ws);
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(normal(rng));
  ConvLayer<T> layer;
  layer.weight = ag::Var<T>(std::move(w), true);
  layer.bias = ag::Var<T>(Tensor<T>(Shape{1, out, 1, 1}), true);
  layer.geometry = g;
  layer.transposed = transposed;
  return layer;
}

template <typename T>
ag::Var<T> norm_relu(const ag::Var<T>& x) {
  return ag::relu(ag::instance_norm(x));
}

}  // namespace

template <typename T>
ag::Var<T> ConvLayer<T>::operator()(const ag::Var<T>& x) const {
  return transposed ? ag::conv_transpose2d(x, weight, &bias, geometry)
                    : ag::conv2d(x, weight, &bias, geometry);
}

template <typename T>
std::vector<NamedParam<T>> Module<T>::parameters() {
  std::vector<NamedParam<T>> out;
  for (auto& [name, layer] : layer_registry_) {
    out.push_back({name + ".weight", &layer->weight});
    out.push_back({name + ".bias", &layer->bias});
  }
  return out;
}

template <typename T>
std::int64_t Module<T>::parameter_count() {
  std::int64_t count = 0;
  for (auto& p : parameters()) count += p.var->value().size();
  return count;
}

template <typename T>
void Module<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.var->set_requires_grad(on);
}

template <typename T>
void Module<T>::zero_grad() {
  for (auto& p : parameters()) p.var->zero_grad();
}

template <typename T>
Tensor<T> Generator<T>::translate(const Tensor<T>& batch) const {
  ag::NoGradGuard guard;
  return this->forward(ag::Var<T>(batch)).value();
}

template <typename T>
ResnetGenerator<T>::ResnetGenerator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.width < 1) throw std::invalid_argument("generator width must be >= 1");
  if (spec.residual_blocks < 0) throw std::invalid_argument("residual block count must be >= 0");
  std::mt19937_64 rng(seed);
  const int w = spec.width;
  stem_ = make_conv<T>(rng, spec.channels, w, 7, {1, 0, 0}, false);
  down_.push_back(make_conv<T>(rng, w, 2 * w, 3, {2, 1, 0}, false));
  down_.push_back(make_conv<T>(rng, 2 * w, 4 * w, 3, {2, 1, 0}, false));
  for (int b = 0; b < spec.residual_blocks; ++b) {
    blocks_.push_back(make_conv<T>(rng, 4 * w, 4 * w, 3, {1, 0, 0}, false));
    blocks_.push_back(make_conv<T>(rng, 4 * w, 4 * w, 3, {1, 0, 0}, false));
  }
  up_.push_back(make_conv<T>(rng, 4 * w, 2 * w, 3, {2, 1, 1}, true));
  up_.push_back(make_conv<T>(rng, 2 * w, w, 3, {2, 1, 1}, true));
  head_ = make_conv<T>(rng, w, spec.channels, 7, {1, 0, 0}, false);

  auto& reg = this->layer_registry_;
  reg.emplace_back("stem", &stem_);
  for (std::size_t i = 0; i < down_.size(); ++i) reg.emplace_back("down" + std::to_string(i), &down_[i]);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    reg.emplace_back("res" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2), &blocks_[i]);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) reg.emplace_back("up" + std::to_string(i), &up_[i]);
  reg.emplace_back("head", &head_);
}

template <typename T>
ag::Var<T> ResnetGenerator<T>::forward(const ag::Var<T>& x) const {
  if (x.shape().c != spec_.channels) {
    throw std::invalid_argument("generator expects " + std::to_string(spec_.channels) + " channels, got " + x.shape().str());
  }
  if (x.shape().h % 4 != 0 || x.shape().w % 4 != 0) {
    throw std::invalid_argument("resnet generator input must be divisible by 4: " + x.shape().str());
  }
  auto h = norm_relu(stem_(ag::reflect_pad(x, 3)));
  for (const auto& d : down_) h = norm_relu(d(h));
  for (std::size_t b = 0; b < blocks_.size(); b += 2) {
    auto r = norm_relu(blocks_[b](ag::reflect_pad(h, 1)));
    r = ag::instance_norm(blocks_[b + 1](ag::reflect_pad(r, 1)));
    h = ag::add(h, r);
  }
  for (const auto& u : up_) h = norm_relu(u(h));
  return ag::tanh(head_(ag::reflect_pad(h, 3)));
}

namespace {
int unet_channels(int width, int level) { return width * std::min(1 << std::min(level, 3), 8); }
}  // namespace

template <typename T>
UnetGenerator<T>::UnetGenerator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.width < 1) throw std::invalid_argument("generator width must be >= 1");
  if (spec.unet_depth < 2) throw std::invalid_argument("unet depth must be >= 2");
  std::mt19937_64 rng(seed);
  const int depth = spec.unet_depth;
  const ConvGeometry g{2, 1, 0};
  for (int i = 0; i < depth; ++i) {
    const int in = i == 0 ? spec.channels : unet_channels(spec.width, i - 1);
    down_.push_back(make_conv<T>(rng, in, unet_channels(spec.width, i), 4, g, false));
  }
  for (int i = 0; i < depth; ++i) {
    const int in = i == depth - 1 ? unet_channels(spec.width, i) : 2 * unet_channels(spec.width, i);
    const int out = i == 0 ? spec.channels : unet_channels(spec.width, i - 1);
    up_.push_back(make_conv<T>(rng, in, out, 4, g, true));
  }
  auto& reg = this->layer_registry_;
  for (int i = 0; i < depth; ++i) reg.emplace_back("down" + std::to_string(i), &down_[static_cast<std::size_t>(i)]);
  for (int i = 0; i < depth; ++i) reg.emplace_back("up" + std::to_string(i), &up_[static_cast<std::size_t>(i)]);
}

template <typename T>
ag::Var<T> UnetGenerator<T>::forward(const ag::Var<T>& x) const {
  const int depth = spec_.unet_depth;
  const int div = 1 << depth;
  if (x.shape().c != spec_.channels) {
    throw std::invalid_argument("generator expects " + std::to_string(spec_.channels) + " channels, got " + x.shape().str());
  }
  if (x.shape().h % div != 0 || x.shape().w % div != 0) {
    throw std::invalid_argument("unet input must be divisible by " + std::to_string(div) + ": " + x.shape().str());
  }
  const T slope = T(0.2);
  std::vector<ag::Var<T>> skips;
  auto h = down_[0](x);
  skips.push_back(h);
  for (int i = 1; i < depth; ++i) {
    h = down_[static_cast<std::size_t>(i)](ag::leaky_relu(h, slope));
    if (i < depth - 1) h = ag::instance_norm(h);
    skips.push_back(h);
  }
  for (int i = depth - 1; i >= 1; --i) {
    h = ag::instance_norm(up_[static_cast<std::size_t>(i)](ag::relu(h)));
    h = ag::concat_channels(skips[static_cast<std::size_t>(i - 1)], h);
  }
  return ag::tanh(up_[0](ag::relu(h)));
}

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(const DiscriminatorSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.width < 1 || spec.layers < 1) throw std::invalid_argument("invalid discriminator spec");
  std::mt19937_64 rng(seed);
  int in = input_channels();
  int ch = spec.width;
  convs_.push_back(make_conv<T>(rng, in, ch, 4, {2, 1, 0}, false));
  for (int i = 1; i <= spec.layers; ++i) {
    const int out = spec.width * std::min(1 << i, 8);
    const int stride = i < spec.layers ? 2 : 1;
    convs_.push_back(make_conv<T>(rng, ch, out, 4, {stride, 1, 0}, false));
    ch = out;
  }
  convs_.push_back(make_conv<T>(rng, ch, 1, 4, {1, 1, 0}, false));
  for (std::size_t i = 0; i < convs_.size(); ++i) this->layer_registry_.emplace_back("conv" + std::to_string(i), &convs_[i]);
}

template <typename T>
ag::Var<T> PatchDiscriminator<T>::forward(const ag::Var<T>& x) const {
  if (x.shape().c != input_channels()) {
    throw std::invalid_argument("discriminator expects " + std::to_string(input_channels()) +
                                " input channels, got " + x.shape().str());
  }
  const T slope = T(0.2);
  auto h = ag::leaky_relu(convs_[0](x), slope);
  for (std::size_t i = 1; i + 1 < convs_.size(); ++i) h = ag::leaky_relu(ag::instance_norm(convs_[i](h)), slope);
  return convs_.back()(h);
}

template <typename T>
int PatchDiscriminator<T>::receptive_field() const {
  std::vector<std::pair<int, int>> ks;
  for (const auto& c : convs_) ks.emplace_back(c.kernel(), c.geometry.stride);
  return nets::receptive_field(ks);
}

int receptive_field(const std::vector<std::pair<int, int>>& kernel_stride) {
  int rf = 1;
  int jump = 1;
  for (const auto& [k, s] : kernel_stride) {
    rf += (k - 1) * jump;
    jump *= s;
  }
  return rf;
}

template <typename T>
std::unique_ptr<Generator<T>> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case GeneratorKind::resnet: return std::make_unique<ResnetGenerator<T>>(spec, seed);
    case GeneratorKind::unet: return std::make_unique<UnetGenerator<T>>(spec, seed);
  }
  throw std::invalid_argument("unknown generator kind");
}

template <typename T>
std::unique_ptr<PatchDiscriminator<T>> build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  return std::make_unique<PatchDiscriminator<T>>(spec, seed);
}

#define VSTAIN_INSTANTIATE_NETS(T)                                                                  \
  template struct ConvLayer<T>;                                                                   \
  template class Module<T>;                                                                       \
  template class Generator<T>;                                                                    \
  template class ResnetGenerator<T>;                                                              \
  template class UnetGenerator<T>;                                                                \
  template class PatchDiscriminator<T>;                                                           \
  template std::unique_ptr<Generator<T>> build_generator<T>(const GeneratorSpec&, std::uint64_t); \
  template std::unique_ptr<PatchDiscriminator<T>> build_discriminator<T>(const DiscriminatorSpec&, std::uint64_t);

VSTAIN_INSTANTIATE_NETS(float)
VSTAIN_INSTANTIATE_NETS(double)
#undef VSTAIN_INSTANTIATE_NETS

}  // namespace vstain::nets
