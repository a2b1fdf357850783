#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vstain/core/tensor.hpp"
#include "vstain/dataio.hpp"

namespace vstain::augment {

struct AugmentConfig {
  int patch_size = 256;
  double rescale_min = 0.9;
  double rescale_max = 1.1;
  bool hflip = true;
  bool vflip = true;
  double jitter = 0.10;  // contrast and brightness amplitude
  int patches_per_pair = 100;
};

// Throws ConfigError on a jitter outside [0, 0.1], a rescale range not
// containing 1, or non-positive sizes.
void validate(const AugmentConfig& cfg);

// A pair converted once to model-range planes: CT [1,1,H,W] in [0,1],
// histology [1,3,H,W] in [0,1], mask [1,1,H,W] of 0/1.
struct PreparedPair {
  std::string id;
  Material material = Material::Mg;
  Tensor<float> ct;
  Tensor<float> histology;
  Tensor<float> mask;
  int width() const { return ct.w(); }
  int height() const { return ct.h(); }
};

PreparedPair prepare(const ImagePair& pair);

// Tensors in model range [-1, 1]; CT replicated to three channels.
struct PatchPair {
  Tensor<float> ct;         // [1,3,P,P]
  Tensor<float> histology;  // [1,3,P,P]
  Tensor<float> mask;       // [1,1,P,P]
  std::string pair_id;
  int origin_x = 0;
  int origin_y = 0;
  int crop_size = 0;
  bool flip_h = false;
  bool flip_v = false;
};

// Random crop + rescale + flips shared by the three rasters and an
// independent contrast/brightness jitter per modality. Histology jitter acts
// on luminance and rescales R, G, B by one common factor, so channel ratios
// hold wherever nothing clips. InputError if the pair cannot hold the crop.
PatchPair sample_patch(const PreparedPair& pair, const AugmentConfig& cfg, std::mt19937_64& rng);

// Size of the square source window for a rescale factor.
int crop_size_for(int patch, double scale);

// Jitter of one normalised grey value and of one normalised RGB triple.
float jitter_grey(float v, double contrast, double brightness);
void jitter_rgb(float* r, float* g, float* b, double contrast, double brightness);

// The patches of one epoch, generated lazily: entry i is a deterministic
// function of (epoch_seed, i). Order is a seeded shuffle of
// patches_per_pair copies of every pair.
class EpochStream {
 public:
  EpochStream(const std::vector<PreparedPair>& pairs, const AugmentConfig& cfg, std::uint64_t epoch_seed);
  std::size_t size() const { return order_.size(); }
  PatchPair at(std::size_t i) const;
  const std::string& pair_id(std::size_t i) const;

 private:
  const std::vector<PreparedPair>* pairs_;
  AugmentConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;  // pair index per entry
};

// Stacks patches [begin, begin + count) of a stream into batches.
struct Batch {
  Tensor<float> ct;
  Tensor<float> histology;
  Tensor<float> mask;
  std::vector<std::string> ids;
};
Batch make_batch(const EpochStream& stream, std::size_t begin, std::size_t count);
Batch stack(const std::vector<PatchPair>& patches);

}  // namespace vstain::augment
