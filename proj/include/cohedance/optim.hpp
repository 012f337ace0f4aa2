#pragma once

#include "cohedance/autodiff.hpp"

#include <cmath>
#include <map>
#include <string>

namespace cohedance {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

/// Adam over a ParamStore; moment buffers are keyed by parameter name.
template <class S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return step_; }

  /// Returns the global gradient norm before clipping.
  double step(ParamStore<S>& store, const std::map<std::string, Mat<S>>& grads) {
    double sq = 0.0;
    for (const auto& [_, g] : grads) sq += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq);
    const double scale = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& [name, g] : grads) {
      Mat<S>& w = store.at(name);
      auto [it, inserted] = m_.try_emplace(name, Mat<S>::Zero(w.rows(), w.cols()));
      Mat<S>& m = it->second;
      Mat<S>& v = v_.try_emplace(name, Mat<S>::Zero(w.rows(), w.cols())).first->second;
      const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
      const Mat<S> gs = g * static_cast<S>(scale);
      m = b1 * m + (S(1) - b1) * gs;
      v = b2 * v + (S(1) - b2) * gs.cwiseProduct(gs);
      const S lr = static_cast<S>(cfg_.lr / bc1);
      const S denom_scale = static_cast<S>(1.0 / std::sqrt(bc2));
      w.array() -= lr * m.array() / ((v.array().sqrt() * denom_scale) + static_cast<S>(cfg_.eps));
    }
    return norm;
  }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::map<std::string, Mat<S>> m_;
  std::map<std::string, Mat<S>> v_;
};

}  // namespace cohedance
