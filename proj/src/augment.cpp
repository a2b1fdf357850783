#include "vstain/augment.hpp"

#include <algorithm>
#include <cmath>

#include "vstain/core/seed.hpp"

namespace vstain::augment {

void validate(const AugmentConfig& cfg) {
  if (cfg.patch_size < 1) throw ConfigError("patch size must be positive");
  if (cfg.patches_per_pair < 1) throw ConfigError("patches per pair must be positive");
  if (cfg.jitter < 0.0 || cfg.jitter > 0.1 + 1e-12) throw ConfigError("jitter amplitude must lie in [0, 0.1]");
  if (!(cfg.rescale_min > 0.0) || cfg.rescale_min > 1.0 || cfg.rescale_max < 1.0) {
    throw ConfigError("rescale range must be positive and contain 1");
  }
}

PreparedPair prepare(const ImagePair& pair) {
  check_aligned(pair);
  const int w = pair.ct.pixels.width(), h = pair.ct.pixels.height();
  PreparedPair p;
  p.id = pair.id;
  p.material = pair.material;
  p.ct = Tensor<float>(Shape{1, 1, h, w});
  p.histology = Tensor<float>(Shape{1, 3, h, w});
  p.mask = Tensor<float>(Shape{1, 1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      p.ct.at(0, 0, y, x) = static_cast<float>(pair.ct.pixels.at(x, y) / 65535.0);
      for (int c = 0; c < 3; ++c) p.histology.at(0, c, y, x) = static_cast<float>(pair.histology.rgb.at(x, y, c) / 255.0);
      p.mask.at(0, 0, y, x) = pair.mask.at(x, y) ? 1.0f : 0.0f;
    }
  }
  return p;
}

int crop_size_for(int patch, double scale) { return static_cast<int>(std::lround(patch / scale)); }

float jitter_grey(float v, double contrast, double brightness) {
  return static_cast<float>(std::clamp(contrast * v + brightness, 0.0, 1.0));
}

void jitter_rgb(float* r, float* g, float* b, double contrast, double brightness) {
  const double lum = 0.299 * *r + 0.587 * *g + 0.114 * *b;
  if (lum <= 1e-12) return;
  const double target = std::max(0.0, contrast * lum + brightness);
  const double k = target / lum;
  *r = static_cast<float>(std::clamp(k * *r, 0.0, 1.0));
  *g = static_cast<float>(std::clamp(k * *g, 0.0, 1.0));
  *b = static_cast<float>(std::clamp(k * *b, 0.0, 1.0));
}

namespace {

// Bilinear sample of plane `src` (w x h) at continuous coordinates with
// edge clamping.
float bilinear(const float* src, int w, int h, double sx, double sy) {
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - x0, fy = sy - y0;
  const double top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
  const double bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace

PatchPair sample_patch(const PreparedPair& pair, const AugmentConfig& cfg, std::mt19937_64& rng) {
  const int P = cfg.patch_size;
  const int w = pair.width(), h = pair.height();
  if (w < P || h < P) throw InputError("pair '" + pair.id + "' is smaller than the patch size");
  std::uniform_real_distribution<double> uscale(cfg.rescale_min, cfg.rescale_max);
  std::uniform_real_distribution<double> ujit(-cfg.jitter, cfg.jitter);
  std::bernoulli_distribution coin(0.5);

  const double scale = uscale(rng);
  const int crop = crop_size_for(P, scale);
  if (crop > w || crop > h) throw InputError("pair '" + pair.id + "' is smaller than the rescaled crop");
  std::uniform_int_distribution<int> ux(0, w - crop), uy(0, h - crop);
  PatchPair out;
  out.pair_id = pair.id;
  out.crop_size = crop;
  out.origin_x = ux(rng);
  out.origin_y = uy(rng);
  out.flip_h = coin(rng) && cfg.hflip;
  out.flip_v = coin(rng) && cfg.vflip;
  const double ct_c = 1.0 + ujit(rng), ct_b = ujit(rng);
  const double hi_c = 1.0 + ujit(rng), hi_b = ujit(rng);

  out.ct = Tensor<float>(Shape{1, 3, P, P});
  out.histology = Tensor<float>(Shape{1, 3, P, P});
  out.mask = Tensor<float>(Shape{1, 1, P, P});
  const double step = static_cast<double>(crop) / P;
  const bool exact = crop == P;
  for (int oy = 0; oy < P; ++oy) {
    const int ty = out.flip_v ? P - 1 - oy : oy;
    const double sy = out.origin_y + (ty + 0.5) * step - 0.5;
    const int ny = out.origin_y + std::min(crop - 1, static_cast<int>(std::floor((ty + 0.5) * step)));
    for (int ox = 0; ox < P; ++ox) {
      const int tx = out.flip_h ? P - 1 - ox : ox;
      const double sx = out.origin_x + (tx + 0.5) * step - 0.5;
      const int nx = out.origin_x + std::min(crop - 1, static_cast<int>(std::floor((tx + 0.5) * step)));
      auto sample = [&](const Tensor<float>& t, int c) {
        return exact ? t.at(0, c, ny, nx) : bilinear(t.plane(0, c), w, h, sx, sy);
      };
      const float v = jitter_grey(sample(pair.ct, 0), ct_c, ct_b);
      float r = sample(pair.histology, 0), g = sample(pair.histology, 1), b = sample(pair.histology, 2);
      jitter_rgb(&r, &g, &b, hi_c, hi_b);
      for (int c = 0; c < 3; ++c) out.ct.at(0, c, oy, ox) = 2.0f * v - 1.0f;
      out.histology.at(0, 0, oy, ox) = 2.0f * r - 1.0f;
      out.histology.at(0, 1, oy, ox) = 2.0f * g - 1.0f;
      out.histology.at(0, 2, oy, ox) = 2.0f * b - 1.0f;
      out.mask.at(0, 0, oy, ox) = pair.mask.at(0, 0, ny, nx) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

EpochStream::EpochStream(const std::vector<PreparedPair>& pairs, const AugmentConfig& cfg, std::uint64_t epoch_seed)
    : pairs_(&pairs), cfg_(cfg), seed_(epoch_seed) {
  if (pairs.empty()) throw InputError("epoch stream over an empty dataset");
  validate(cfg);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (int k = 0; k < cfg.patches_per_pair; ++k) order_.push_back(p);
  }
  std::mt19937_64 rng(derive_seed(epoch_seed, 0));
  std::shuffle(order_.begin(), order_.end(), rng);
}

PatchPair EpochStream::at(std::size_t i) const {
  std::mt19937_64 rng(derive_seed(seed_, i + 1));
  return sample_patch((*pairs_)[order_.at(i)], cfg_, rng);
}

const std::string& EpochStream::pair_id(std::size_t i) const { return (*pairs_)[order_.at(i)].id; }

Batch stack(const std::vector<PatchPair>& patches) {
  if (patches.empty()) throw InputError("empty batch");
  const int n = static_cast<int>(patches.size());
  const int P = patches.front().ct.h();
  Batch b;
  b.ct = Tensor<float>(Shape{n, 3, P, P});
  b.histology = Tensor<float>(Shape{n, 3, P, P});
  b.mask = Tensor<float>(Shape{n, 1, P, P});
  for (int i = 0; i < n; ++i) {
    const auto& p = patches[static_cast<std::size_t>(i)];
    std::copy(p.ct.values().begin(), p.ct.values().end(), b.ct.sample(i));
    std::copy(p.histology.values().begin(), p.histology.values().end(), b.histology.sample(i));
    std::copy(p.mask.values().begin(), p.mask.values().end(), b.mask.sample(i));
    b.ids.push_back(p.pair_id);
  }
  return b;
}

Batch make_batch(const EpochStream& stream, std::size_t begin, std::size_t count) {
  std::vector<PatchPair> patches;
  for (std::size_t i = begin; i < std::min(begin + count, stream.size()); ++i) patches.push_back(stream.at(i));
  return stack(patches);
}

}  // namespace vstain::augment
