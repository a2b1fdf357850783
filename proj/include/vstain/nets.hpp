#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vstain/core/autograd.hpp"

namespace vstain::nets {

enum class GeneratorKind { resnet, unet };

GeneratorKind parse_generator_kind(const std::string& name);
std::string to_string(GeneratorKind kind);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::resnet;
  int width = 64;
  int residual_blocks = 9;
  // Number of stride-2 stages of the U-Net; inputs must be divisible by
  // 2^depth. 8 for 256-pixel patches.
  int unet_depth = 8;
  int channels = 3;
};

struct DiscriminatorSpec {
  bool conditional = false;
  int width = 64;
  int layers = 3;  // stride-2 stages; 3 gives the 70-pixel receptive field
  int image_channels = 3;
};

template <typename T>
struct NamedParam {
  std::string name;
  ag::Var<T>* var;
};

// A convolution (or transposed convolution) with bias.
template <typename T>
struct ConvLayer {
  ag::Var<T> weight;
  ag::Var<T> bias;
  ConvGeometry geometry;
  bool transposed = false;

  ag::Var<T> operator()(const ag::Var<T>& x) const;
  int kernel() const { return weight.shape().h; }
};

template <typename T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;
  virtual ag::Var<T> forward(const ag::Var<T>& x) const = 0;

  std::vector<NamedParam<T>> parameters();
  std::int64_t parameter_count();
  void set_requires_grad(bool on);
  void zero_grad();

 protected:
  // Registered layers, in a stable order that defines parameter names.
  std::vector<std::pair<std::string, ConvLayer<T>*>> layer_registry_;
};

template <typename T>
class Generator : public Module<T> {
 public:
  // Inference without graph recording.
  Tensor<T> translate(const Tensor<T>& batch) const;
  virtual GeneratorSpec spec() const = 0;
};

// Stem 7x7, two stride-2 downsamplings, residual blocks at 4x width, two
// transposed-convolution upsamplings, 7x7 head with tanh. Reflection padding
// around all non-strided convolutions; instance normalisation throughout.
template <typename T>
class ResnetGenerator final : public Generator<T> {
 public:
  ResnetGenerator(const GeneratorSpec& spec, std::uint64_t seed);
  ag::Var<T> forward(const ag::Var<T>& x) const override;
  GeneratorSpec spec() const override { return spec_; }

 private:
  GeneratorSpec spec_;
  ConvLayer<T> stem_;
  std::vector<ConvLayer<T>> down_;
  std::vector<ConvLayer<T>> blocks_;  // two per residual block
  std::vector<ConvLayer<T>> up_;
  ConvLayer<T> head_;
};

// Encoder-decoder with skip connections (4x4 stride-2 convolutions).
template <typename T>
class UnetGenerator final : public Generator<T> {
 public:
  UnetGenerator(const GeneratorSpec& spec, std::uint64_t seed);
  ag::Var<T> forward(const ag::Var<T>& x) const override;
  GeneratorSpec spec() const override { return spec_; }

 private:
  GeneratorSpec spec_;
  std::vector<ConvLayer<T>> down_;
  std::vector<ConvLayer<T>> up_;
};

// Patch classifier: `layers` stride-2 4x4 convolutions, one stride-1 4x4
// convolution and a 1-channel stride-1 4x4 output layer.
template <typename T>
class PatchDiscriminator final : public Module<T> {
 public:
  PatchDiscriminator(const DiscriminatorSpec& spec, std::uint64_t seed);
  ag::Var<T> forward(const ag::Var<T>& x) const override;
  const DiscriminatorSpec& spec() const { return spec_; }
  int input_channels() const { return spec_.conditional ? 2 * spec_.image_channels : spec_.image_channels; }
  // Receptive field of one output score, from the layer stack.
  int receptive_field() const;

 private:
  DiscriminatorSpec spec_;
  std::vector<ConvLayer<T>> convs_;
};

template <typename T>
std::unique_ptr<Generator<T>> build_generator(const GeneratorSpec& spec, std::uint64_t seed);
template <typename T>
std::unique_ptr<PatchDiscriminator<T>> build_discriminator(const DiscriminatorSpec& spec,
                                                           std::uint64_t seed);

// Receptive field of a stack of (kernel, stride) layers.
int receptive_field(const std::vector<std::pair<int, int>>& kernel_stride);

}  // namespace vstain::nets
