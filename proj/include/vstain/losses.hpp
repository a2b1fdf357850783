#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vstain/core/autograd.hpp"

namespace vstain::losses {

template <typename T>
using Net = std::function<ag::Var<T>(const ag::Var<T>&)>;

struct LossWeights {
  double cyc = 6.0;
  double id = 3.0;
  double px = 6.0;
  double gs = 1.0;
  double l1 = 20.0;  // pix2pix only

  // ConfigError on any negative weight.
  void validate() const;
};

// One step's loss terms. For pix2pix only gan, l1 and total are used.
struct LossBreakdown {
  double gan = 0.0;
  double cyc = 0.0;
  double id = 0.0;
  double px = 0.0;
  double gs = 0.0;
  double l1 = 0.0;
  double total = 0.0;
  double d = 0.0;  // discriminator objective of the same step
};

// Least-squares GAN terms.
template <typename T>
ag::Var<T> lsgan(const ag::Var<T>& scores, bool real);

// Translations needed by the paired objective, computed once per step.
// X is CT, Y is histology; g_xy: X -> Y, g_yx: Y -> X.
template <typename T>
struct CycleOutputs {
  ag::Var<T> fake_y, rec_x, fake_x, rec_y, id_y, id_x;
};
template <typename T>
CycleOutputs<T> run_cycle(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y);

template <typename T>
ag::Var<T> cycle_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                      const Tensor<T>& mask_y);
template <typename T>
ag::Var<T> identity_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                         const Tensor<T>& mask_y);
template <typename T>
ag::Var<T> pixelwise_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                          const Tensor<T>& mask_y);
template <typename T>
ag::Var<T> generator_gan_term(const Net<T>& d_x, const Net<T>& d_y, const CycleOutputs<T>& o);

// Network-level forms.
template <typename T>
ag::Var<T> cycle_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y,
                      const Tensor<T>& mask_x, const Tensor<T>& mask_y);
template <typename T>
ag::Var<T> adversarial_generator_loss(const Net<T>& d_x, const Net<T>& d_y, const Net<T>& g_xy, const Net<T>& g_yx,
                                      const ag::Var<T>& x, const ag::Var<T>& y);
// 0.5 * (mean (D(real) - 1)^2 + mean D(fake)^2).
template <typename T>
ag::Var<T> adversarial_discriminator_loss(const Net<T>& d, const ag::Var<T>& real, const ag::Var<T>& fake);
template <typename T>
ag::Var<T> identity_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y,
                         const Tensor<T>& mask_x, const Tensor<T>& mask_y);
template <typename T>
ag::Var<T> pixelwise_supervision_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x,
                                      const ag::Var<T>& y, const Tensor<T>& mask_x, const Tensor<T>& mask_y);
// Mean over pixels of |r-g| + |r-b| + |g-b| of g_yx(y). Not masked.
template <typename T>
ag::Var<T> greyscale_loss(const Net<T>& g_yx, const ag::Var<T>& y);

// Weighted totals over one-element component terms.
template <typename T>
ag::Var<T> total_paired_loss(const ag::Var<T>& gan, const ag::Var<T>& cyc, const ag::Var<T>& id, const ag::Var<T>& px,
                             const ag::Var<T>& gs, const LossWeights& w);
template <typename T>
ag::Var<T> total_unpaired_loss(const ag::Var<T>& gan, const ag::Var<T>& cyc, const ag::Var<T>& id,
                               const LossWeights& w);

// Plain-number form of the paired total, for breakdown bookkeeping.
double total_paired(const LossBreakdown& c, const LossWeights& w);

// Every generator-side component of the paired objective plus the total.
template <typename T>
struct PairedTerms {
  ag::Var<T> gan, cyc, id, px, gs, total;
};
template <typename T>
PairedTerms<T> paired_objective(const Net<T>& g_xy, const Net<T>& g_yx, const Net<T>& d_x, const Net<T>& d_y,
                                const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                                const Tensor<T>& mask_y, const LossWeights& w, CycleOutputs<T>* outputs = nullptr);

// Conditional discriminator input: channel concatenation (condition, image).
template <typename T>
ag::Var<T> condition(const ag::Var<T>& x, const ag::Var<T>& image);

template <typename T>
struct Pix2PixTerms {
  ag::Var<T> gan, l1, total;
};
// gan = mean (D(x, G(x)) - 1)^2; total = gan + l1_weight * masked l1(G(x), y).
template <typename T>
Pix2PixTerms<T> pix2pix_losses(const Net<T>& g, const Net<T>& d, const ag::Var<T>& x, const ag::Var<T>& y,
                               const Tensor<T>& mask, T l1_weight, ag::Var<T>* fake = nullptr);
template <typename T>
ag::Var<T> pix2pix_discriminator_loss(const Net<T>& d, const ag::Var<T>& x, const ag::Var<T>& y,
                                      const ag::Var<T>& fake);

}  // namespace vstain::losses
