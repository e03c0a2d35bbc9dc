#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pathtext/tensor.hpp"

namespace pathtext::ad {

using ParamMap = std::map<std::string, Tensor>;

void zero_grads(ParamMap& params);

// Returns the pre-clip global norm.
double clip_global_norm(ParamMap& params, double max_norm);

// Inverse-sqrt schedule with linear warmup; step counts from 1.
double noam_lr(int64_t step, int d_model, int warmup);

struct Sgd {
  double lr = 0.1;

  explicit Sgd(double lr_) : lr(lr_) {}
  void step(ParamMap& params);
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::vector<double>> m, v;

  explicit Adam(double lr_) : lr(lr_) {}
  Adam(double lr_, double beta1_, double beta2_, double eps_)
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}
  void step(ParamMap& params);
};

}  // namespace pathtext::ad
