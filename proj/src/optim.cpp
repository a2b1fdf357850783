#include "vstain/optim.hpp"

#include <cmath>

#include "vstain/errors.hpp"

namespace vstain::optim {

Adam::Adam(std::vector<nets::NamedParam<float>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr > 0) || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 || !(cfg.eps > 0)) {
    throw ConfigError("Adam needs lr > 0, betas in [0, 1) and eps > 0");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.var->shape());
    v_.emplace_back(p.var->shape());
  }
}

void Adam::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step = cfg_.lr / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>& g = params_[i].var->grad();
    if (g.empty()) continue;
    float* p = params_[i].var->mutable_value().data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::int64_t n = g.size();
    for (std::int64_t j = 0; j < n; ++j) {
      const double gj = g[j];
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * gj * gj);
      const double denom = std::sqrt(static_cast<double>(v[j])) * inv_sqrt_c2 + cfg_.eps;
      p[j] = static_cast<float>(p[j] - step * m[j] / denom);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

void Adam::store(const std::string& prefix, TensorArchive& archive) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    archive[prefix + "m." + params_[i].name] = m_[i];
    archive[prefix + "v." + params_[i].name] = v_[i];
  }
  archive[prefix + "t"] = Tensor<float>::scalar(static_cast<float>(t_));
}

void Adam::load(const std::string& prefix, const TensorArchive& archive) {
  auto fetch = [&](const std::string& key, const Shape& shape) -> const Tensor<float>& {
    const auto it = archive.find(key);
    if (it == archive.end() || !(it->second.shape() == shape)) throw IoError("optimiser state lacks " + key);
    return it->second;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = fetch(prefix + "m." + params_[i].name, params_[i].var->shape());
    v_[i] = fetch(prefix + "v." + params_[i].name, params_[i].var->shape());
  }
  t_ = static_cast<std::int64_t>(fetch(prefix + "t", Shape{}).item());
}

}  // namespace vstain::optim
