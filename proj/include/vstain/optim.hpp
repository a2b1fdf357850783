#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vstain/archive.hpp"
#include "vstain/nets.hpp"

namespace vstain::optim {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction, applied in place to the parameters of one or
// more modules. A parameter without a gradient this step is skipped but
// still counts towards the step number.
class Adam {
 public:
  Adam(std::vector<nets::NamedParam<float>> params, AdamConfig cfg);
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void store(const std::string& prefix, TensorArchive& archive) const;
  void load(const std::string& prefix, const TensorArchive& archive);

 private:
  std::vector<nets::NamedParam<float>> params_;
  AdamConfig cfg_;
  std::vector<Tensor<float>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace vstain::optim
