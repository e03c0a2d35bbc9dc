#include "pathtext/optim.hpp"

#include <cmath>

#include "pathtext/errors.hpp"

namespace pathtext::ad {

void zero_grads(ParamMap& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

double clip_global_norm(ParamMap& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.grad_buffer()) g = quantize_value(g * factor);
    }
  }
  return norm;
}

double noam_lr(int64_t step, int d_model, int warmup) {
  if (step < 1) throw InvalidStep("noam_lr: step must be >= 1, got " + std::to_string(step));
  if (d_model < 1 || warmup < 1) {
    throw InvalidStep("noam_lr: d_model and warmup must be positive");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void Sgd::step(ParamMap& params) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& val = p.values();
    for (size_t i = 0; i < val.size(); ++i) val[i] = quantize_value(val[i] - lr * g[i]);
  }
}

void Adam::step(ParamMap& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& val = p.values();
    auto& mi = m[name];
    auto& vi = v[name];
    if (mi.empty()) mi.assign(val.size(), 0.0);
    if (vi.empty()) vi.assign(val.size(), 0.0);
    for (size_t i = 0; i < val.size(); ++i) {
      mi[i] = quantize_value(beta1 * mi[i] + (1.0 - beta1) * g[i]);
      vi[i] = quantize_value(beta2 * vi[i] + (1.0 - beta2) * g[i] * g[i]);
      const double mhat = mi[i] / bc1;
      const double vhat = vi[i] / bc2;
      val[i] = quantize_value(val[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

}  // namespace pathtext::ad
