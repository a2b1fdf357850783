#include "vstain/losses.hpp"

#include "vstain/errors.hpp"

namespace vstain::losses {

void LossWeights::validate() const {
  if (cyc < 0 || id < 0 || px < 0 || gs < 0 || l1 < 0) throw ConfigError("loss weights must be non-negative");
}

template <typename T>
ag::Var<T> lsgan(const ag::Var<T>& scores, bool real) {
  return ag::mean_squared_to(scores, real ? T{1} : T{0});
}

template <typename T>
CycleOutputs<T> run_cycle(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y) {
  CycleOutputs<T> o;
  o.fake_y = g_xy(x);
  o.rec_x = g_yx(o.fake_y);
  o.fake_x = g_yx(y);
  o.rec_y = g_xy(o.fake_x);
  o.id_y = g_xy(y);
  o.id_x = g_yx(x);
  return o;
}

template <typename T>
ag::Var<T> cycle_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                      const Tensor<T>& mask_y) {
  return ag::add(ag::masked_l1(o.rec_x, x, mask_x), ag::masked_l1(o.rec_y, y, mask_y));
}

template <typename T>
ag::Var<T> identity_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                         const Tensor<T>& mask_y) {
  return ag::add(ag::masked_l1(o.id_y, y, mask_y), ag::masked_l1(o.id_x, x, mask_x));
}

template <typename T>
ag::Var<T> pixelwise_term(const CycleOutputs<T>& o, const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                          const Tensor<T>& mask_y) {
  return ag::add(ag::masked_l1(o.fake_y, y, mask_y), ag::masked_l1(o.fake_x, x, mask_x));
}

template <typename T>
ag::Var<T> generator_gan_term(const Net<T>& d_x, const Net<T>& d_y, const CycleOutputs<T>& o) {
  return ag::add(lsgan(d_y(o.fake_y), true), lsgan(d_x(o.fake_x), true));
}

template <typename T>
ag::Var<T> cycle_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y,
                      const Tensor<T>& mask_x, const Tensor<T>& mask_y) {
  CycleOutputs<T> o;
  o.fake_y = g_xy(x);
  o.rec_x = g_yx(o.fake_y);
  o.fake_x = g_yx(y);
  o.rec_y = g_xy(o.fake_x);
  return cycle_term(o, x, y, mask_x, mask_y);
}

template <typename T>
ag::Var<T> adversarial_generator_loss(const Net<T>& d_x, const Net<T>& d_y, const Net<T>& g_xy, const Net<T>& g_yx,
                                      const ag::Var<T>& x, const ag::Var<T>& y) {
  CycleOutputs<T> o;
  o.fake_y = g_xy(x);
  o.fake_x = g_yx(y);
  return generator_gan_term(d_x, d_y, o);
}

template <typename T>
ag::Var<T> adversarial_discriminator_loss(const Net<T>& d, const ag::Var<T>& real, const ag::Var<T>& fake) {
  return ag::weighted_sum<T>({lsgan(d(real), true), lsgan(d(fake), false)}, {T(0.5), T(0.5)});
}

template <typename T>
ag::Var<T> identity_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x, const ag::Var<T>& y,
                         const Tensor<T>& mask_x, const Tensor<T>& mask_y) {
  CycleOutputs<T> o;
  o.id_y = g_xy(y);
  o.id_x = g_yx(x);
  return identity_term(o, x, y, mask_x, mask_y);
}

template <typename T>
ag::Var<T> pixelwise_supervision_loss(const Net<T>& g_xy, const Net<T>& g_yx, const ag::Var<T>& x,
                                      const ag::Var<T>& y, const Tensor<T>& mask_x, const Tensor<T>& mask_y) {
  CycleOutputs<T> o;
  o.fake_y = g_xy(x);
  o.fake_x = g_yx(y);
  return pixelwise_term(o, x, y, mask_x, mask_y);
}

template <typename T>
ag::Var<T> greyscale_loss(const Net<T>& g_yx, const ag::Var<T>& y) {
  return ag::channel_spread(g_yx(y));
}

template <typename T>
ag::Var<T> total_paired_loss(const ag::Var<T>& gan, const ag::Var<T>& cyc, const ag::Var<T>& id, const ag::Var<T>& px,
                             const ag::Var<T>& gs, const LossWeights& w) {
  return ag::weighted_sum<T>({gan, cyc, id, px, gs},
                             {T{1}, static_cast<T>(w.cyc), static_cast<T>(w.id), static_cast<T>(w.px), static_cast<T>(w.gs)});
}

template <typename T>
ag::Var<T> total_unpaired_loss(const ag::Var<T>& gan, const ag::Var<T>& cyc, const ag::Var<T>& id,
                               const LossWeights& w) {
  return ag::weighted_sum<T>({gan, cyc, id}, {T{1}, static_cast<T>(w.cyc), static_cast<T>(w.id)});
}

double total_paired(const LossBreakdown& c, const LossWeights& w) {
  return c.gan + w.cyc * c.cyc + w.id * c.id + w.px * c.px + w.gs * c.gs;
}

template <typename T>
PairedTerms<T> paired_objective(const Net<T>& g_xy, const Net<T>& g_yx, const Net<T>& d_x, const Net<T>& d_y,
                                const ag::Var<T>& x, const ag::Var<T>& y, const Tensor<T>& mask_x,
                                const Tensor<T>& mask_y, const LossWeights& w, CycleOutputs<T>* outputs) {
  CycleOutputs<T> o = run_cycle(g_xy, g_yx, x, y);
  PairedTerms<T> t;
  t.gan = generator_gan_term(d_x, d_y, o);
  t.cyc = cycle_term(o, x, y, mask_x, mask_y);
  t.id = identity_term(o, x, y, mask_x, mask_y);
  t.px = pixelwise_term(o, x, y, mask_x, mask_y);
  t.gs = ag::channel_spread(o.fake_x);
  t.total = total_paired_loss(t.gan, t.cyc, t.id, t.px, t.gs, w);
  if (outputs) *outputs = std::move(o);
  return t;
}

template <typename T>
ag::Var<T> condition(const ag::Var<T>& x, const ag::Var<T>& image) {
  return ag::concat_channels(x, image);
}

template <typename T>
Pix2PixTerms<T> pix2pix_losses(const Net<T>& g, const Net<T>& d, const ag::Var<T>& x, const ag::Var<T>& y,
                               const Tensor<T>& mask, T l1_weight, ag::Var<T>* fake) {
  const ag::Var<T> out = g(x);
  Pix2PixTerms<T> t;
  t.gan = lsgan(d(condition(x, out)), true);
  t.l1 = ag::masked_l1(out, y, mask);
  t.total = ag::weighted_sum<T>({t.gan, t.l1}, {T{1}, l1_weight});
  if (fake) *fake = out;
  return t;
}

template <typename T>
ag::Var<T> pix2pix_discriminator_loss(const Net<T>& d, const ag::Var<T>& x, const ag::Var<T>& y,
                                      const ag::Var<T>& fake) {
  return ag::weighted_sum<T>({lsgan(d(condition(x, y)), true), lsgan(d(condition(x, fake)), false)},
                             {T(0.5), T(0.5)});
}

#define VSTAIN_INSTANTIATE_LOSSES(T)                                                                                  \
  template ag::Var<T> lsgan<T>(const ag::Var<T>&, bool);                                                             \
  template CycleOutputs<T> run_cycle<T>(const Net<T>&, const Net<T>&, const ag::Var<T>&, const ag::Var<T>&);        \
  template ag::Var<T> cycle_term<T>(const CycleOutputs<T>&, const ag::Var<T>&, const ag::Var<T>&, const Tensor<T>&, \
                                    const Tensor<T>&);                                                               \
  template ag::Var<T> identity_term<T>(const CycleOutputs<T>&, const ag::Var<T>&, const ag::Var<T>&,                \
                                       const Tensor<T>&, const Tensor<T>&);                                          \
  template ag::Var<T> pixelwise_term<T>(const CycleOutputs<T>&, const ag::Var<T>&, const ag::Var<T>&,               \
                                        const Tensor<T>&, const Tensor<T>&);                                         \
  template ag::Var<T> generator_gan_term<T>(const Net<T>&, const Net<T>&, const CycleOutputs<T>&);                   \
  template ag::Var<T> cycle_loss<T>(const Net<T>&, const Net<T>&, const ag::Var<T>&, const ag::Var<T>&,             \
                                    const Tensor<T>&, const Tensor<T>&);                                             \
  template ag::Var<T> adversarial_generator_loss<T>(const Net<T>&, const Net<T>&, const Net<T>&, const Net<T>&,     \
                                                    const ag::Var<T>&, const ag::Var<T>&);                           \
  template ag::Var<T> adversarial_discriminator_loss<T>(const Net<T>&, const ag::Var<T>&, const ag::Var<T>&);       \
  template ag::Var<T> identity_loss<T>(const Net<T>&, const Net<T>&, const ag::Var<T>&, const ag::Var<T>&,          \
                                       const Tensor<T>&, const Tensor<T>&);                                          \
  template ag::Var<T> pixelwise_supervision_loss<T>(const Net<T>&, const Net<T>&, const ag::Var<T>&,                \
                                                    const ag::Var<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template ag::Var<T> greyscale_loss<T>(const Net<T>&, const ag::Var<T>&);                                          \
  template ag::Var<T> total_paired_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&,                 \
                                           const ag::Var<T>&, const ag::Var<T>&, const LossWeights&);                \
  template ag::Var<T> total_unpaired_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&,               \
                                             const LossWeights&);                                                    \
  template PairedTerms<T> paired_objective<T>(const Net<T>&, const Net<T>&, const Net<T>&, const Net<T>&,           \
                                              const ag::Var<T>&, const ag::Var<T>&, const Tensor<T>&,               \
                                              const Tensor<T>&, const LossWeights&, CycleOutputs<T>*);              \
  template ag::Var<T> condition<T>(const ag::Var<T>&, const ag::Var<T>&);                                           \
  template Pix2PixTerms<T> pix2pix_losses<T>(const Net<T>&, const Net<T>&, const ag::Var<T>&, const ag::Var<T>&,    \
                                             const Tensor<T>&, T, ag::Var<T>*);                                      \
  template ag::Var<T> pix2pix_discriminator_loss<T>(const Net<T>&, const ag::Var<T>&, const ag::Var<T>&,            \
                                                    const ag::Var<T>&);

VSTAIN_INSTANTIATE_LOSSES(float)
VSTAIN_INSTANTIATE_LOSSES(double)
#undef VSTAIN_INSTANTIATE_LOSSES

}  // namespace vstain::losses
