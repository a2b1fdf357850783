#include "vstain/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "vstain/core/seed.hpp"
#include "vstain/errors.hpp"
#include "vstain/phantom.hpp"

namespace vstain::train {

using json = nlohmann::json;
using losses::LossBreakdown;

Variant parse_variant(const std::string& name) {
  if (name == "modified_cyclegan") return Variant::modified_cyclegan;
  if (name == "standard_cyclegan") return Variant::standard_cyclegan;
  if (name == "standard_cyclegan_inverted_ct") return Variant::standard_cyclegan_inverted_ct;
  if (name == "pix2pix") return Variant::pix2pix;
  throw ConfigError("unknown model variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::modified_cyclegan: return "modified_cyclegan";
    case Variant::standard_cyclegan: return "standard_cyclegan";
    case Variant::standard_cyclegan_inverted_ct: return "standard_cyclegan_inverted_ct";
    case Variant::pix2pix: return "pix2pix";
  }
  return "?";
}

bool is_cyclegan(Variant v) { return v != Variant::pix2pix; }
bool inverts_ct(Variant v) { return v == Variant::standard_cyclegan_inverted_ct; }

void TrainConfig::validate() const {
  weights.validate();
  augment::validate(augment);
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (epochs < 0) throw ConfigError("epoch count must be non-negative");
  if (buffer_capacity < 0) throw ConfigError("buffer capacity must be non-negative");
  if (generator.width < 1 || discriminator.width < 1) throw ConfigError("network widths must be positive");
  if (generator.residual_blocks < 0) throw ConfigError("residual block count must be non-negative");
  if (val_patches_per_pair < 0) throw ConfigError("validation patch count must be non-negative");
  if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1) {
    throw ConfigError("optimiser needs lr > 0 and betas in [0, 1)");
  }
  if (variant == Variant::pix2pix) {
    const int p = augment.patch_size;
    if (p < 2 || (p & (p - 1)) != 0) throw ConfigError("pix2pix U-Net needs a power-of-two patch size");
  }
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig r = *this;
  if (variant == Variant::standard_cyclegan || variant == Variant::standard_cyclegan_inverted_ct) {
    r.weights.px = 0.0;
    r.weights.gs = 0.0;
  }
  r.generator.channels = 3;
  r.discriminator.image_channels = 3;
  if (variant == Variant::pix2pix) {
    r.generator.kind = nets::GeneratorKind::unet;
    int depth = 0;
    while ((1 << (depth + 1)) <= augment.patch_size && depth < 8) ++depth;
    r.generator.unet_depth = depth;
    r.discriminator.conditional = true;
  } else {
    r.generator.kind = nets::GeneratorKind::resnet;
    r.discriminator.conditional = false;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Image buffer

ImageBuffer::ImageBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 0) throw ConfigError("buffer capacity must be non-negative");
}

Tensor<float> ImageBuffer::query(const Tensor<float>& fresh, std::mt19937_64& rng) {
  if (capacity_ == 0) return fresh;
  const Shape s = fresh.shape();
  const Shape one{1, s.c, s.h, s.w};
  const std::int64_t per = one.numel();
  Tensor<float> out(s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, capacity_ - 1);
  for (int i = 0; i < s.n; ++i) {
    Tensor<float> img(one);
    std::copy(fresh.sample(i), fresh.sample(i) + per, img.data());
    const float* src = img.data();
    Tensor<float> swapped;
    if (size() < capacity_) {
      images_.push_back(img);
    } else if (u(rng) > 0.5) {
      const int k = pick(rng);
      swapped = std::move(images_[static_cast<std::size_t>(k)]);
      images_[static_cast<std::size_t>(k)] = img;
      src = swapped.data();
    }
    std::copy(src, src + per, out.sample(i));
  }
  return out;
}

void ImageBuffer::store(const std::string& prefix, TensorArchive& archive) const {
  char key[32];
  for (std::size_t i = 0; i < images_.size(); ++i) {
    std::snprintf(key, sizeof key, "%05zu", i);
    archive[prefix + key] = images_[i];
  }
}

void ImageBuffer::load(const std::string& prefix, const TensorArchive& archive) {
  images_.clear();
  for (auto it = archive.lower_bound(prefix); it != archive.end() && it->first.rfind(prefix, 0) == 0; ++it) {
    images_.push_back(it->second);
  }
  if (size() > capacity_) throw IoError("stored buffer exceeds its capacity");
}

// ---------------------------------------------------------------------------
// Fold planning

std::vector<PairRef> pair_refs(const std::vector<ImagePair>& pairs) {
  std::vector<PairRef> out;
  for (const auto& p : pairs) out.push_back({p.id, p.material});
  return out;
}

namespace {

int material_index(Material m) {
  for (int i = 0; i < 3; ++i) {
    if (kMaterials[i] == m) return i;
  }
  return 0;
}

std::array<std::vector<std::string>, 3> by_material(const std::vector<PairRef>& refs) {
  std::array<std::vector<std::string>, 3> out;
  for (const auto& r : refs) out[static_cast<std::size_t>(material_index(r.material))].push_back(r.id);
  return out;
}

}  // namespace

std::vector<std::string> choose_test_ids(const std::vector<PairRef>& dataset, const std::array<int, 3>& counts,
                                         std::uint64_t seed) {
  auto groups = by_material(dataset);
  std::vector<std::string> out;
  for (int m = 0; m < 3; ++m) {
    auto& g = groups[static_cast<std::size_t>(m)];
    if (counts[static_cast<std::size_t>(m)] < 0 || counts[static_cast<std::size_t>(m)] > static_cast<int>(g.size())) {
      throw PlanningError("cannot hold out " + std::to_string(counts[static_cast<std::size_t>(m)]) + " " +
                          to_string(kMaterials[m]) + " pairs from " + std::to_string(g.size()));
    }
    std::mt19937_64 rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(m)));
    std::shuffle(g.begin(), g.end(), rng);
    out.insert(out.end(), g.begin(), g.begin() + counts[static_cast<std::size_t>(m)]);
  }
  return out;
}

FoldPlan make_folds(const std::vector<PairRef>& dataset, int k, const std::array<double, 3>& ratio,
                    std::uint64_t seed, const std::vector<std::string>& test_ids, double val_fraction) {
  if (k < 1) throw PlanningError("fold count must be at least 1");
  std::set<std::string> seen;
  for (const auto& r : dataset) {
    if (!seen.insert(r.id).second) throw PlanningError("duplicate pair id '" + r.id + "'");
  }
  const std::set<std::string> test(test_ids.begin(), test_ids.end());
  for (const auto& id : test) {
    if (!seen.count(id)) throw PlanningError("test id '" + id + "' is not in the dataset");
  }
  std::vector<PairRef> pool;
  for (const auto& r : dataset) {
    if (!test.count(r.id)) pool.push_back(r);
  }
  auto groups = by_material(pool);
  for (int m = 0; m < 3; ++m) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(m)));
    std::shuffle(groups[static_cast<std::size_t>(m)].begin(), groups[static_cast<std::size_t>(m)].end(), rng);
  }

  FoldPlan plan;
  plan.test_ids = test_ids;
  std::vector<std::vector<std::string>> val(static_cast<std::size_t>(k));
  const int n = static_cast<int>(pool.size());
  if (k == 1) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw PlanningError("validation fraction must lie in [0, 1)");
    const int nval = static_cast<int>(std::lround(val_fraction * n));
    const auto want = phantom::material_counts(nval, ratio);
    for (int m = 0; m < 3; ++m) {
      const auto& g = groups[static_cast<std::size_t>(m)];
      if (want[static_cast<std::size_t>(m)] > static_cast<int>(g.size())) {
        throw PlanningError("validation split needs " + std::to_string(want[static_cast<std::size_t>(m)]) + " " +
                            to_string(kMaterials[m]) + " pairs, pool has " + std::to_string(g.size()));
      }
      val[0].insert(val[0].end(), g.begin(), g.begin() + want[static_cast<std::size_t>(m)]);
    }
  } else {
    if (n < k) throw PlanningError("fewer pairs than folds");
    int offset = 0;
    for (int m = 0; m < 3; ++m) {
      const auto& g = groups[static_cast<std::size_t>(m)];
      for (std::size_t j = 0; j < g.size(); ++j) {
        val[static_cast<std::size_t>((offset + static_cast<int>(j)) % k)].push_back(g[j]);
      }
      offset += static_cast<int>(g.size());
    }
    for (int f = 0; f < k; ++f) {
      const auto& v = val[static_cast<std::size_t>(f)];
      const auto want = phantom::material_counts(static_cast<int>(v.size()), ratio);
      std::array<int, 3> have{};
      for (const auto& r : pool) {
        if (std::find(v.begin(), v.end(), r.id) != v.end()) ++have[static_cast<std::size_t>(material_index(r.material))];
      }
      for (int m = 0; m < 3; ++m) {
        if (std::abs(have[static_cast<std::size_t>(m)] - want[static_cast<std::size_t>(m)]) > 1) {
          throw PlanningError("fold " + std::to_string(f) + " cannot honour the material ratio: " +
                              std::to_string(have[static_cast<std::size_t>(m)]) + " " + to_string(kMaterials[m]) +
                              " pairs, ratio asks for " + std::to_string(want[static_cast<std::size_t>(m)]));
        }
      }
    }
  }
  for (int f = 0; f < k; ++f) {
    Fold fold;
    const std::set<std::string> vs(val[static_cast<std::size_t>(f)].begin(), val[static_cast<std::size_t>(f)].end());
    for (const auto& r : pool) {
      (vs.count(r.id) ? fold.val_ids : fold.train_ids).push_back(r.id);
    }
    if (fold.train_ids.empty()) throw PlanningError("fold " + std::to_string(f) + " has no training pairs");
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Checkpoints

bool CheckpointSet::offer(const std::string& component, int epoch, double value, const std::filesystem::path& dir) {
  if (!std::isfinite(value)) return false;
  auto it = records_.find(component);
  if (it != records_.end() && !(value < it->second.value)) return false;
  records_[component] = {component, epoch, value, dir};
  return true;
}

const CheckpointRecord* CheckpointSet::find(const std::string& component) const {
  const auto it = records_.find(component);
  return it == records_.end() ? nullptr : &it->second;
}

std::vector<std::string> tracked_components(Variant v) {
  if (v == Variant::pix2pix) return {"gan", "l1", "total", "val_px"};
  return {"gan", "cyc", "id", "px", "gs", "total", "val_px"};
}

double component_value(const LossBreakdown& b, const std::string& c) {
  if (c == "gan") return b.gan;
  if (c == "cyc") return b.cyc;
  if (c == "id") return b.id;
  if (c == "px") return b.px;
  if (c == "gs") return b.gs;
  if (c == "l1") return b.l1;
  if (c == "total") return b.total;
  if (c == "d") return b.d;
  throw ConfigError("unknown loss component '" + c + "'");
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

constexpr std::uint64_t kSeedGxy = 11, kSeedGyx = 12, kSeedDx = 13, kSeedDy = 14;
constexpr std::uint64_t kSeedEpochs = 5, kSeedBuffer = 7, kSeedVal = 9;

std::vector<nets::NamedParam<float>> prefixed(nets::Module<float>& m, const std::string& prefix) {
  auto ps = m.parameters();
  for (auto& p : ps) p.name = prefix + p.name;
  return ps;
}

augment::PreparedPair prepare_for(const ImagePair& pair, bool invert) {
  auto p = augment::prepare(pair);
  if (invert) {
    for (auto& v : p.ct.values()) v = 1.0f - v;
  }
  return p;
}

json breakdown_json(const LossBreakdown& b) {
  return {{"gan", b.gan}, {"cyc", b.cyc}, {"id", b.id}, {"px", b.px},
          {"gs", b.gs},   {"l1", b.l1},   {"total", b.total}, {"d", b.d}};
}

double number_or_nan(const json& j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

LossBreakdown breakdown_from(const json& j) {
  LossBreakdown b;
  b.gan = number_or_nan(j.at("gan"));
  b.cyc = number_or_nan(j.at("cyc"));
  b.id = number_or_nan(j.at("id"));
  b.px = number_or_nan(j.at("px"));
  b.gs = number_or_nan(j.at("gs"));
  b.l1 = number_or_nan(j.at("l1"));
  b.total = number_or_nan(j.at("total"));
  b.d = number_or_nan(j.at("d"));
  return b;
}

json generator_json(const nets::GeneratorSpec& g) {
  return {{"kind", nets::to_string(g.kind)},
          {"width", g.width},
          {"residual_blocks", g.residual_blocks},
          {"unet_depth", g.unet_depth},
          {"channels", g.channels}};
}

bool all_finite(const LossBreakdown& b) {
  for (double v : {b.gan, b.cyc, b.id, b.px, b.gs, b.l1, b.total, b.d}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("short write to " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

struct Trainer::Impl {
  std::vector<augment::PreparedPair> train;
  std::vector<augment::Batch> val_batches;
  std::unique_ptr<nets::Generator<float>> g_xy, g_yx;
  std::unique_ptr<nets::PatchDiscriminator<float>> d_x, d_y;
  std::unique_ptr<optim::Adam> opt_g, opt_d;
  ImageBuffer buf_x{0}, buf_y{0};

  losses::Net<float> net(nets::Module<float>& m) {
    return [&m](const ag::Var<float>& v) { return m.forward(v); };
  }
};

Trainer::Trainer(const TrainConfig& cfg, const std::vector<ImagePair>& train_pairs,
                 const std::vector<ImagePair>& val_pairs, std::filesystem::path out_dir)
    : impl_(std::make_unique<Impl>()), cfg_(cfg.resolved()), out_dir_(std::move(out_dir)) {
  cfg_.validate();
  if (train_pairs.empty()) throw InputError("training needs at least one pair");
  const bool invert = inverts_ct(cfg_.variant);
  for (const auto& p : train_pairs) impl_->train.push_back(prepare_for(p, invert));

  // Validation patches: unaugmented crops at fixed seeded positions.
  augment::AugmentConfig plain = cfg_.augment;
  plain.rescale_min = plain.rescale_max = 1.0;
  plain.hflip = plain.vflip = false;
  plain.jitter = 0.0;
  std::vector<augment::PatchPair> vp;
  for (std::size_t i = 0; i < val_pairs.size(); ++i) {
    const auto prepared = prepare_for(val_pairs[i], invert);
    std::mt19937_64 rng(derive_seed(derive_seed(cfg_.seed, kSeedVal), i));
    for (int k = 0; k < cfg_.val_patches_per_pair; ++k) vp.push_back(augment::sample_patch(prepared, plain, rng));
  }
  for (std::size_t b = 0; b < vp.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
    const auto end = std::min(vp.size(), b + static_cast<std::size_t>(cfg_.batch_size));
    impl_->val_batches.push_back(augment::stack({vp.begin() + static_cast<std::ptrdiff_t>(b),
                                                 vp.begin() + static_cast<std::ptrdiff_t>(end)}));
  }

  auto& I = *impl_;
  I.g_xy = nets::build_generator<float>(cfg_.generator, derive_seed(cfg_.seed, kSeedGxy));
  I.d_y = nets::build_discriminator<float>(cfg_.discriminator, derive_seed(cfg_.seed, kSeedDy));
  auto gp = prefixed(*I.g_xy, "g_xy.");
  auto dp = prefixed(*I.d_y, "d_y.");
  if (is_cyclegan(cfg_.variant)) {
    I.g_yx = nets::build_generator<float>(cfg_.generator, derive_seed(cfg_.seed, kSeedGyx));
    I.d_x = nets::build_discriminator<float>(cfg_.discriminator, derive_seed(cfg_.seed, kSeedDx));
    auto gq = prefixed(*I.g_yx, "g_yx.");
    auto dq = prefixed(*I.d_x, "d_x.");
    gp.insert(gp.end(), gq.begin(), gq.end());
    dp.insert(dp.end(), dq.begin(), dq.end());
    I.buf_x = ImageBuffer(cfg_.buffer_capacity);
    I.buf_y = ImageBuffer(cfg_.buffer_capacity);
  }
  I.opt_g = std::make_unique<optim::Adam>(gp, cfg_.adam);
  I.opt_d = std::make_unique<optim::Adam>(dp, cfg_.adam);
}

Trainer::~Trainer() = default;

nets::Generator<float>& Trainer::forward_generator() { return *impl_->g_xy; }

int Trainer::network_count() const {
  const auto& I = *impl_;
  return (I.g_xy ? 1 : 0) + (I.g_yx ? 1 : 0) + (I.d_x ? 1 : 0) + (I.d_y ? 1 : 0);
}

LossBreakdown Trainer::step(const augment::Batch& batch) {
  auto& I = *impl_;
  const ag::Var<float> x(batch.ct), y(batch.histology);
  const Tensor<float>& mask = batch.mask;
  LossBreakdown b;
  std::mt19937_64 rng(derive_seed(derive_seed(cfg_.seed, kSeedBuffer), static_cast<std::uint64_t>(global_step_)));

  if (is_cyclegan(cfg_.variant)) {
    I.d_x->set_requires_grad(false);
    I.d_y->set_requires_grad(false);
    losses::CycleOutputs<float> o;
    auto t = losses::paired_objective(I.net(*I.g_xy), I.net(*I.g_yx), I.net(*I.d_x), I.net(*I.d_y), x, y, mask, mask,
                                      cfg_.weights, &o);
    b.gan = t.gan.item();
    b.cyc = t.cyc.item();
    b.id = t.id.item();
    b.px = t.px.item();
    b.gs = t.gs.item();
    b.total = t.total.item();
    I.opt_g->zero_grad();
    t.total.backward();
    I.opt_g->step();

    I.d_x->set_requires_grad(true);
    I.d_y->set_requires_grad(true);
    const ag::Var<float> pool_y(I.buf_y.query(o.fake_y.value(), rng));
    const ag::Var<float> pool_x(I.buf_x.query(o.fake_x.value(), rng));
    o = {};
    auto ly = losses::adversarial_discriminator_loss(I.net(*I.d_y), y, pool_y);
    auto lx = losses::adversarial_discriminator_loss(I.net(*I.d_x), x, pool_x);
    auto ld = ag::add(ly, lx);
    b.d = ld.item();
    I.opt_d->zero_grad();
    ld.backward();
    I.opt_d->step();
  } else {
    I.d_y->set_requires_grad(false);
    ag::Var<float> fake;
    auto t = losses::pix2pix_losses(I.net(*I.g_xy), I.net(*I.d_y), x, y, mask, static_cast<float>(cfg_.weights.l1),
                                    &fake);
    b.gan = t.gan.item();
    b.l1 = t.l1.item();
    b.total = t.total.item();
    I.opt_g->zero_grad();
    t.total.backward();
    I.opt_g->step();

    I.d_y->set_requires_grad(true);
    auto ld = losses::pix2pix_discriminator_loss(I.net(*I.d_y), x, y, fake.detach());
    b.d = ld.item();
    I.opt_d->zero_grad();
    ld.backward();
    I.opt_d->step();
  }
  I.opt_g->zero_grad();
  I.opt_d->zero_grad();
  ++global_step_;
  if (!all_finite(b)) {
    dump_divergence(b, batch.ids);
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", step " +
                        std::to_string(global_step_) + "; state dumped to " + (out_dir_ / "divergence.json").string());
  }
  return b;
}

double Trainer::validation_px() {
  auto& I = *impl_;
  if (I.val_batches.empty()) return std::numeric_limits<double>::quiet_NaN();
  ag::NoGradGuard guard;
  double sum = 0.0;
  int count = 0;
  for (const auto& vb : I.val_batches) {
    const ag::Var<float> x(vb.ct), y(vb.histology);
    double v = 0.0;
    if (is_cyclegan(cfg_.variant)) {
      losses::CycleOutputs<float> o;
      o.fake_y = I.g_xy->forward(x);
      o.fake_x = I.g_yx->forward(y);
      v = losses::pixelwise_term(o, x, y, vb.mask, vb.mask).item();
    } else {
      v = ag::masked_l1(I.g_xy->forward(x), y, vb.mask).item();
    }
    sum += v * vb.ct.n();
    count += vb.ct.n();
  }
  return sum / count;
}

EpochRow Trainer::run_epoch() {
  auto& I = *impl_;
  const auto t0 = std::chrono::steady_clock::now();
  const int epoch = epoch_ + 1;
  augment::EpochStream stream(I.train, cfg_.augment,
                              derive_seed(derive_seed(cfg_.seed, kSeedEpochs), static_cast<std::uint64_t>(epoch)));
  LossBreakdown sum;
  int steps = 0;
  for (std::size_t begin = 0; begin < stream.size(); begin += static_cast<std::size_t>(cfg_.batch_size)) {
    const auto batch = augment::make_batch(stream, begin, static_cast<std::size_t>(cfg_.batch_size));
    if (on_batch) on_batch(batch.ids);
    const LossBreakdown b = step(batch);
    if (on_step) on_step(epoch, steps, b);
    sum.gan += b.gan;
    sum.cyc += b.cyc;
    sum.id += b.id;
    sum.px += b.px;
    sum.gs += b.gs;
    sum.l1 += b.l1;
    sum.total += b.total;
    sum.d += b.d;
    ++steps;
  }
  EpochRow row;
  row.epoch = epoch;
  row.mean = sum;
  for (double* v : {&row.mean.gan, &row.mean.cyc, &row.mean.id, &row.mean.px, &row.mean.gs, &row.mean.l1,
                    &row.mean.total, &row.mean.d}) {
    *v /= steps;
  }
  row.val_px = validation_px();
  epoch_ = epoch;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log_.push_back(row);

  for (const auto& c : tracked_components(cfg_.variant)) {
    const double v = c == "val_px" ? row.val_px : component_value(row.mean, c);
    if (checkpoints_.offer(c, epoch, v, out_dir_ / "checkpoints" / c)) write_checkpoint(c, epoch, v);
  }
  write_log();
  save_state(out_dir_ / "state");
  return row;
}

TrainResult Trainer::run() {
  while (epoch_ < cfg_.epochs) run_epoch();
  TrainResult r;
  r.log = log_;
  r.checkpoints = checkpoints_;
  const auto* best = checkpoints_.find("val_px");
  if (!best) best = checkpoints_.find(cfg_.variant == Variant::pix2pix ? "l1" : "px");
  if (best) r.final_checkpoint = best->dir;
  return r;
}

void Trainer::write_checkpoint(const std::string& component, int epoch, double value) {
  auto& I = *impl_;
  const auto dir = out_dir_ / "checkpoints" / component;
  TensorArchive a;
  store_parameters(*I.g_xy, "g_xy.", a);
  store_parameters(*I.d_y, "d_y.", a);
  if (I.g_yx) store_parameters(*I.g_yx, "g_yx.", a);
  if (I.d_x) store_parameters(*I.d_x, "d_x.", a);
  write_archive(a, dir / "model.bin");
  const json manifest = {{"variant", to_string(cfg_.variant)},
                         {"generator", generator_json(cfg_.generator)},
                         {"discriminator", {{"width", cfg_.discriminator.width},
                                            {"layers", cfg_.discriminator.layers},
                                            {"conditional", cfg_.discriminator.conditional}}},
                         {"seed", cfg_.seed},
                         {"epoch", epoch},
                         {"component", component},
                         {"value", value},
                         {"patch_size", cfg_.augment.patch_size},
                         {"invert_ct", inverts_ct(cfg_.variant)},
                         {"fingerprint", archive_fingerprint(a)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void Trainer::write_log() const {
  std::string text = "epoch,gan,cyc,id,px,gs,l1,total,d,val_px,seconds\n";
  char line[512];
  for (const auto& r : log_) {
    const auto& m = r.mean;
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.epoch, m.gan, m.cyc,
                  m.id, m.px, m.gs, m.l1, m.total, m.d, r.val_px, r.seconds);
    text += line;
  }
  write_text(out_dir_ / "log.csv", text);
}

void Trainer::dump_divergence(const LossBreakdown& b, const std::vector<std::string>& ids) const {
  auto& I = *impl_;
  json params = json::object();
  auto norms = [&](nets::Module<float>* m, const std::string& prefix) {
    if (!m) return;
    for (const auto& p : m->parameters()) {
      double maxabs = 0.0;
      bool finite = true;
      for (float v : p.var->value().values()) {
        finite = finite && std::isfinite(v);
        maxabs = std::max(maxabs, static_cast<double>(std::fabs(v)));
      }
      params[prefix + p.name] = finite ? json(maxabs) : json("non-finite");
    }
  };
  norms(I.g_xy.get(), "g_xy.");
  norms(I.g_yx.get(), "g_yx.");
  norms(I.d_x.get(), "d_x.");
  norms(I.d_y.get(), "d_y.");
  json losses_j = json::object();
  for (const auto& [k, v] : breakdown_json(b).items()) {
    const double d = v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
    losses_j[k] = std::isfinite(d) ? json(d) : json(std::to_string(d));
  }
  const json dump = {{"epoch", epoch_ + 1}, {"global_step", global_step_}, {"batch_ids", ids},
                     {"losses", losses_j},  {"param_max_abs", params}};
  try {
    write_text(out_dir_ / "divergence.json", dump.dump(2) + "\n");
  } catch (const Error&) {
    // The training error that follows is the one to report.
  }
}

void Trainer::save_state(const std::filesystem::path& dir) const {
  auto& I = *impl_;
  TensorArchive a;
  store_parameters(*I.g_xy, "g_xy.", a);
  store_parameters(*I.d_y, "d_y.", a);
  if (I.g_yx) store_parameters(*I.g_yx, "g_yx.", a);
  if (I.d_x) store_parameters(*I.d_x, "d_x.", a);
  I.opt_g->store("opt_g.", a);
  I.opt_d->store("opt_d.", a);
  I.buf_x.store("buf_x.", a);
  I.buf_y.store("buf_y.", a);
  write_archive(a, dir / "state.bin");

  json log = json::array();
  for (const auto& r : log_) {
    log.push_back({{"epoch", r.epoch}, {"mean", breakdown_json(r.mean)}, {"val_px", r.val_px}, {"seconds", r.seconds}});
  }
  json ckpt = json::array();
  for (const auto& [name, rec] : checkpoints_.records()) {
    ckpt.push_back({{"component", name}, {"epoch", rec.epoch}, {"value", rec.value}, {"dir", rec.dir.string()}});
  }
  const json meta = {{"variant", to_string(cfg_.variant)},
                     {"seed", cfg_.seed},
                     {"epoch", epoch_},
                     {"global_step", global_step_},
                     {"log", log},
                     {"checkpoints", ckpt}};
  write_text(dir / "state.json", meta.dump(2) + "\n");
}

void Trainer::load_state(const std::filesystem::path& dir) {
  auto& I = *impl_;
  const json meta = read_json(dir / "state.json");
  if (meta.at("variant").get<std::string>() != to_string(cfg_.variant) ||
      meta.at("seed").get<std::uint64_t>() != cfg_.seed) {
    throw ConfigError("resume state in " + dir.string() + " belongs to a different variant or seed");
  }
  const TensorArchive a = read_archive(dir / "state.bin");
  load_parameters(*I.g_xy, "g_xy.", a);
  load_parameters(*I.d_y, "d_y.", a);
  if (I.g_yx) load_parameters(*I.g_yx, "g_yx.", a);
  if (I.d_x) load_parameters(*I.d_x, "d_x.", a);
  I.opt_g->load("opt_g.", a);
  I.opt_d->load("opt_d.", a);
  I.buf_x.load("buf_x.", a);
  I.buf_y.load("buf_y.", a);
  epoch_ = meta.at("epoch").get<int>();
  global_step_ = meta.at("global_step").get<std::int64_t>();
  log_.clear();
  for (const auto& r : meta.at("log")) {
    EpochRow row;
    row.epoch = r.at("epoch").get<int>();
    row.mean = breakdown_from(r.at("mean"));
    row.val_px = number_or_nan(r.at("val_px"));
    row.seconds = r.at("seconds").get<double>();
    log_.push_back(row);
  }
  checkpoints_ = CheckpointSet();
  for (const auto& c : meta.at("checkpoints")) {
    checkpoints_.offer(c.at("component").get<std::string>(), c.at("epoch").get<int>(), c.at("value").get<double>(),
                       c.at("dir").get<std::string>());
  }
}

// ---------------------------------------------------------------------------

LoadedModel load_model(const std::filesystem::path& checkpoint_dir) {
  const json m = read_json(checkpoint_dir / "manifest.json");
  LoadedModel out;
  nets::GeneratorSpec g;
  try {
    out.variant = parse_variant(m.at("variant").get<std::string>());
    const auto& gj = m.at("generator");
    g.kind = nets::parse_generator_kind(gj.at("kind").get<std::string>());
    g.width = gj.at("width").get<int>();
    g.residual_blocks = gj.at("residual_blocks").get<int>();
    g.unet_depth = gj.at("unet_depth").get<int>();
    g.channels = gj.at("channels").get<int>();
    out.component = m.at("component").get<std::string>();
    out.epoch = m.at("epoch").get<int>();
    out.patch_size = m.at("patch_size").get<int>();
    out.invert_ct = m.at("invert_ct").get<bool>();
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest in " + checkpoint_dir.string() + ": " + e.what());
  }
  out.generator = nets::build_generator<float>(g, 0);
  load_parameters(*out.generator, "g_xy.", read_archive(checkpoint_dir / "model.bin"));
  return out;
}

std::unique_ptr<nets::Generator<float>> initial_generator(const TrainConfig& cfg) {
  const TrainConfig r = cfg.resolved();
  return nets::build_generator<float>(r.generator, derive_seed(r.seed, kSeedGxy));
}

TrainResult train_fold(const TrainConfig& cfg, const FoldPlan& plan, int fold, const std::vector<ImagePair>& dataset,
                       const std::filesystem::path& out_dir, bool resume) {
  if (fold < 0 || fold >= static_cast<int>(plan.folds.size())) {
    throw ConfigError("fold " + std::to_string(fold) + " is outside the plan of " + std::to_string(plan.folds.size()));
  }
  const Fold& f = plan.folds[static_cast<std::size_t>(fold)];
  const std::set<std::string> test(plan.test_ids.begin(), plan.test_ids.end());
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<ImagePair> out;
    for (const auto& id : ids) {
      if (test.count(id)) throw PlanningError("test pair '" + id + "' appears in a training fold");
      const auto it = std::find_if(dataset.begin(), dataset.end(), [&](const ImagePair& p) { return p.id == id; });
      if (it == dataset.end()) throw InputError("fold names unknown pair '" + id + "'");
      out.push_back(*it);
    }
    return out;
  };
  Trainer trainer(cfg, pick(f.train_ids), pick(f.val_ids), out_dir);
  if (resume && std::filesystem::exists(out_dir / "state" / "state.json")) trainer.load_state(out_dir / "state");
  return trainer.run();
}

}  // namespace vstain::train
