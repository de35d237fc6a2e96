#pragma once

#include <cmath>
#include <cstdint>

#include "flatner/common.hpp"
#include "flatner/params.hpp"

namespace flatner {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(lr > 0.0, cat("adam: lr must be positive, got ", lr));
    require(beta1 >= 0.0 && beta1 < 1.0, cat("adam: beta1 must be in [0, 1), got ", beta1));
    require(beta2 >= 0.0 && beta2 < 1.0, cat("adam: beta2 must be in [0, 1), got ", beta2));
    require(eps > 0.0, cat("adam: eps must be positive, got ", eps));
  }
};

// First/second moment accumulators, laid out to mirror a ParamStore.
template <typename T>
struct AdamState {
  ParamStore<T> m;
  ParamStore<T> v;
  std::uint64_t step = 0;

  static AdamState init(const ParamStore<T>& params) {
    AdamState s;
    for (const auto& e : params.entries()) {
      s.m.add(e.first, Array<T>(e.second.shape()));
      s.v.add(e.first, Array<T>(e.second.shape()));
    }
    return s;
  }
};

// One bias-corrected update in place. Gradients must cover exactly the
// parameter set (missing or extra names are a caller bug).
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  cfg.validate();
  require(grads.count() == params.count(),
          cat("adam: ", grads.count(), " gradients for ", params.count(), " params"));
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& e : params.entries()) {
    const Array<T>& g = grads.get(e.first);
    require(g.same_shape(e.second), cat("adam: gradient shape ", shape_str(g.shape()),
                                        " does not match param ", e.first, " ",
                                        shape_str(e.second.shape())));
    Array<T>& m = state.m.get(e.first);
    Array<T>& v = state.v.get(e.first);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = T(cfg.beta1) * m[i] + T(1.0 - cfg.beta1) * g[i];
      v[i] = T(cfg.beta2) * v[i] + T(1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      e.second[i] -= T(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace flatner
