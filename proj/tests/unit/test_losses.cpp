#include <doctest.h>

#include "support.hpp"
#include "vstain/errors.hpp"
#include "vstain/losses.hpp"
#include "vstain/nets.hpp"

using namespace vstain;
using ag::Var;
using Net = losses::Net<double>;

namespace {

const Shape kShape{2, 3, 6, 6};
const Shape kMaskShape{2, 1, 6, 6};

Net identity() {
  return [](const Var<double>& v) { return v; };
}

Net shift(double d) {
  return [d](const Var<double>& v) { return ag::add(v, Var<double>(Tensor<double>(v.shape(), d))); };
}

// Ignores its input and returns a fixed tensor.
Net constant_net(const Var<double>& out) {
  return [out](const Var<double>&) { return out; };
}

// Discriminator returning a constant score grid.
Net scores(double s) {
  return [s](const Var<double>& v) { return Var<double>(Tensor<double>(Shape{v.shape().n, 1, 3, 3}, s)); };
}

Tensor<double> ones() { return Tensor<double>(kMaskShape, 1.0); }
Tensor<double> zeros() { return Tensor<double>(kMaskShape, 0.0); }

Var<double> random_var(std::mt19937_64& rng) { return Var<double>(testing::random_tensor<double>(kShape, rng)); }

// Pointwise generator: equal inputs give equal outputs pixel by pixel.
Net squash(double a, double b) {
  return [a, b](const Var<double>& v) {
    return ag::tanh(ag::add(v, ag::tanh(ag::add(v, Var<double>(Tensor<double>(v.shape(), a + b))))));
  };
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("cycle loss examples") {
    std::mt19937_64 rng(1);
    const auto x = random_var(rng), y = random_var(rng);
    CHECK(losses::cycle_loss(identity(), identity(), x, y, ones(), ones()).item() == 0.0);
    const double d = 0.125;
    CHECK(losses::cycle_loss(shift(d), identity(), x, y, ones(), ones()).item() == doctest::Approx(2 * d));
    CHECK(losses::cycle_loss(squash(0.3, 0.1), shift(2.0), x, y, zeros(), zeros()).item() == 0.0);
  }

  TEST_CASE("generator adversarial loss examples") {
    std::mt19937_64 rng(2);
    const auto x = random_var(rng), y = random_var(rng);
    CHECK(losses::adversarial_generator_loss(scores(1), scores(1), identity(), identity(), x, y).item() == 0.0);
    CHECK(losses::adversarial_generator_loss(scores(0), scores(0), identity(), identity(), x, y).item() ==
          doctest::Approx(2.0));
    CHECK(losses::adversarial_generator_loss(scores(0.5), scores(0.5), identity(), identity(), x, y).item() ==
          doctest::Approx(0.5));
  }

  TEST_CASE("discriminator loss examples") {
    std::mt19937_64 rng(3);
    const auto real = random_var(rng);
    auto fake = real;
    fake.mutable_value().values()[0] += 1.0;  // distinguishable by identity
    const Var<double> r(real.value()), f(Tensor<double>(kShape, 7.0));
    auto perfect = [&](const Var<double>& v) {
      const bool is_real = v.value()[0] == real.value()[0];
      return Var<double>(Tensor<double>({2, 1, 3, 3}, is_real ? 1.0 : 0.0));
    };
    auto fooled = [&](const Var<double>& v) {
      const bool is_real = v.value()[0] == real.value()[0];
      return Var<double>(Tensor<double>({2, 1, 3, 3}, is_real ? 0.0 : 1.0));
    };
    CHECK(losses::adversarial_discriminator_loss<double>(perfect, r, f).item() == 0.0);
    CHECK(losses::adversarial_discriminator_loss<double>(scores(0.5), r, f).item() == doctest::Approx(0.25));
    CHECK(losses::adversarial_discriminator_loss<double>(fooled, r, f).item() == doctest::Approx(1.0));
  }

  TEST_CASE("identity loss examples") {
    std::mt19937_64 rng(4);
    const auto x = random_var(rng), y = random_var(rng);
    CHECK(losses::identity_loss(identity(), identity(), x, y, ones(), ones()).item() == 0.0);
    CHECK(losses::identity_loss(shift(0.3), shift(-0.3), x, y, ones(), ones()).item() == doctest::Approx(0.6));
    CHECK(losses::identity_loss(shift(0.3), shift(-0.3), x, y, zeros(), zeros()).item() == 0.0);
  }

  TEST_CASE("pixelwise supervision examples") {
    std::mt19937_64 rng(5);
    const auto x = random_var(rng), y = random_var(rng);
    CHECK(losses::pixelwise_supervision_loss(constant_net(y), constant_net(x), x, y, ones(), ones()).item() == 0.0);
    const double d = 0.2;
    const auto y_shift = shift(d)(y);
    CHECK(losses::pixelwise_supervision_loss(constant_net(y_shift), constant_net(x), x, y, ones(), ones()).item() ==
          doctest::Approx(d));
    // Unmasked pixels of y do not matter.
    Tensor<double> half(kMaskShape);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 18; ++i) half.plane(n, 0)[i] = 1.0;
    }
    auto y2 = y;
    Var<double> yp(y.value());
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int i = 18; i < 36; ++i) yp.mutable_value().plane(n, c)[i] = 100.0 + i;
      }
    }
    const auto g = squash(0.1, 0.2);
    CHECK(losses::pixelwise_supervision_loss(g, g, x, y2, half, half).item() ==
          losses::pixelwise_supervision_loss(g, g, x, yp, half, half).item());
  }

  TEST_CASE("greyscale loss examples") {
    std::mt19937_64 rng(6);
    const auto y = random_var(rng);
    Tensor<double> grey(kShape);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 36; ++i) {
        const double v = std::sin(i + n);
        for (int c = 0; c < 3; ++c) grey.plane(n, c)[i] = v;
      }
    }
    CHECK(losses::greyscale_loss(constant_net(Var<double>(grey)), y).item() == 0.0);
    Tensor<double> tinted(kShape);
    const double level[3] = {10 / 255.0, 20 / 255.0, 40 / 255.0};
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 36; ++i) tinted.plane(n, c)[i] = level[c];
      }
    }
    CHECK(losses::greyscale_loss(constant_net(Var<double>(tinted)), y).item() ==
          doctest::Approx((10 + 30 + 20) / 255.0));
    // Zero only for exactly grey images.
    for (int k = 0; k < 20; ++k) {
      const auto r = random_var(rng);
      CHECK(losses::greyscale_loss(constant_net(r), y).item() > 0.0);
    }
  }

  TEST_CASE("paired total weights the components") {
    const losses::LossWeights w;  // 6, 3, 6, 1
    const Var<double> one(Tensor<double>({1, 1, 1, 1}, 1.0)), zero(Tensor<double>({1, 1, 1, 1}, 0.0));
    CHECK(losses::total_paired_loss(one, one, one, one, one, w).item() == 17.0);
    CHECK(losses::total_paired_loss(zero, zero, zero, zero, zero, w).item() == 0.0);
    losses::LossBreakdown b{1, 1, 1, 1, 1, 0, 0, 0};
    CHECK(losses::total_paired(b, w) == 17.0);
    losses::LossWeights bad;
    bad.id = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("ablated paired total equals the unpaired total exactly") {
    std::mt19937_64 rng(7);
    losses::LossWeights w;
    w.px = 0;
    w.gs = 0;
    for (int k = 0; k < 50; ++k) {
      std::uniform_real_distribution<double> u(0.0, 5.0);
      auto v = [&] { return Var<double>(Tensor<double>({1, 1, 1, 1}, u(rng))); };
      const auto gan = v(), cyc = v(), id = v(), px = v(), gs = v();
      CHECK(losses::total_paired_loss(gan, cyc, id, px, gs, w).item() ==
            losses::total_unpaired_loss(gan, cyc, id, w).item());
    }
  }

  TEST_CASE("pix2pix examples") {
    std::mt19937_64 rng(8);
    const auto x = random_var(rng), y = random_var(rng);
    const auto p = losses::pix2pix_losses<double>(constant_net(y), scores(1), x, y, ones(), 20.0);
    CHECK(p.total.item() == 0.0);
    const double d = 0.05;
    const auto q = losses::pix2pix_losses<double>(constant_net(shift(d)(y)), scores(1), x, y, ones(), 20.0);
    CHECK(q.l1.item() == doctest::Approx(d));
    CHECK(q.total.item() == doctest::Approx(20 * d));
    // The conditional discriminator sees (condition, image).
    Var<double> fake;
    auto probe = [&](const Var<double>& v) {
      CHECK(v.shape().c == 6);
      return Var<double>(Tensor<double>({2, 1, 3, 3}, 0.0));
    };
    const auto r = losses::pix2pix_losses<double>(identity(), probe, x, y, ones(), 20.0, &fake);
    CHECK(r.gan.item() == 1.0);
    CHECK(testing::same(fake.value(), x.value()));
    CHECK(losses::pix2pix_discriminator_loss<double>(scores(0.5), x, y, fake).item() == doctest::Approx(0.25));
  }

  TEST_CASE("l1-family terms ignore everything outside the mask") {
    std::mt19937_64 rng(9);
    const auto x = random_var(rng), y = random_var(rng);
    Tensor<double> m(kMaskShape);
    std::bernoulli_distribution coin(0.4);
    for (auto& v : m.values()) v = coin(rng) ? 1.0 : 0.0;
    Var<double> xp(x.value()), yp(y.value());
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 36; ++i) {
        if (m.plane(n, 0)[i] != 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          xp.mutable_value().plane(n, c)[i] = -3.0 + i * 0.1;
          yp.mutable_value().plane(n, c)[i] = 4.0 - c;
        }
      }
    }
    const auto gxy = squash(0.2, -0.1), gyx = squash(-0.4, 0.05);
    const auto a = losses::paired_objective(gxy, gyx, scores(0.3), scores(0.6), x, y, m, m, {});
    const auto b = losses::paired_objective(gxy, gyx, scores(0.3), scores(0.6), xp, yp, m, m, {});
    CHECK(a.cyc.item() == b.cyc.item());
    CHECK(a.id.item() == b.id.item());
    CHECK(a.px.item() == b.px.item());
    const auto p = losses::pix2pix_losses<double>(gxy, scores(0.2), x, y, m, 20.0);
    const auto q = losses::pix2pix_losses<double>(gxy, scores(0.2), xp, yp, m, 20.0);
    CHECK(p.l1.item() == q.l1.item());
    // The greyscale term is not masked.
    CHECK(a.gs.item() != b.gs.item());
  }

  TEST_CASE("breakdown totals and non-negativity with real networks") {
    nets::GeneratorSpec gs;
    gs.width = 2;
    gs.residual_blocks = 1;
    nets::DiscriminatorSpec ds;
    ds.width = 2;
    ds.layers = 1;
    auto gxy = nets::build_generator<double>(gs, 1), gyx = nets::build_generator<double>(gs, 2);
    auto dx = nets::build_discriminator<double>(ds, 3), dy = nets::build_discriminator<double>(ds, 4);
    auto net = [](auto& m) { return [&m](const Var<double>& v) { return m->forward(v); }; };
    std::mt19937_64 rng(10);
    Var<double> x(testing::random_tensor<double>({1, 3, 8, 8}, rng)), y(testing::random_tensor<double>({1, 3, 8, 8}, rng));
    Tensor<double> m({1, 1, 8, 8});
    std::bernoulli_distribution coin(0.7);
    for (auto& v : m.values()) v = coin(rng) ? 1.0 : 0.0;
    const losses::LossWeights w;
    const auto t = losses::paired_objective<double>(net(gxy), net(gyx), net(dx), net(dy), x, y, m, m, w);
    for (const auto* term : {&t.gan, &t.cyc, &t.id, &t.px, &t.gs, &t.total}) CHECK(term->item() >= 0.0);
    const losses::LossBreakdown b{t.gan.item(), t.cyc.item(), t.id.item(), t.px.item(), t.gs.item(), 0, 0, 0};
    CHECK(losses::total_paired(b, w) == doctest::Approx(t.total.item()).epsilon(1e-15));

    // Gradients of the composite objective through every network.
    std::vector<Var<double>*> vars;
    for (auto* mod : std::initializer_list<nets::Module<double>*>{gxy.get(), gyx.get(), dx.get(), dy.get()}) {
      for (auto& p : mod->parameters()) vars.push_back(p.var);
    }
    auto f = [&] { return losses::paired_objective<double>(net(gxy), net(gyx), net(dx), net(dy), x, y, m, m, w).total; };
    CHECK(testing::gradient_error(f, vars) < 1e-3);
    nets::DiscriminatorSpec cs = ds;
    cs.conditional = true;
    auto dc = nets::build_discriminator<double>(cs, 5);
    auto f3 = [&] { return losses::pix2pix_losses<double>(net(gxy), net(dc), x, y, m, 20.0).total; };
    std::vector<Var<double>*> pvars;
    for (auto& p : gxy->parameters()) pvars.push_back(p.var);
    for (auto& p : dc->parameters()) pvars.push_back(p.var);
    CHECK(testing::gradient_error(f3, pvars) < 1e-3);
  }
}
