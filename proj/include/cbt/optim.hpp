#pragma once

#include <cmath>
#include <map>
#include <string>

#include "cbt/checkpoint.hpp"
#include "cbt/errors.hpp"

namespace cbt {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are held in double and stored in a
// StateMap under `adam.m.<param>` / `adam.v.<param>`; each parameter group
// keeps its own step count under `adam.t.<group>`.
class Adam {
 public:
  Adam() = default;
  explicit Adam(StateMap state) : state_(std::move(state)) {}

  // Updates every parameter of `params` that has an entry in `grads`.
  void step(ParamMap& params, const std::map<std::string, Tensor<float>>& grads, const std::string& group,
            const AdamHyper& h) {
    auto& count = slot("adam.t." + group, Shape{1});
    count[0] += 1.0;
    const double t = count[0];
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (const auto& [name, g] : grads) {
      auto it = params.find(name);
      if (it == params.end()) continue;
      Tensor<float>& p = it->second;
      if (g.shape() != p.shape()) throw DimensionError("gradient shape mismatch for '" + name + "'");
      auto& m = slot("adam.m." + name, p.shape());
      auto& v = slot("adam.v." + name, p.shape());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
        const double upd = h.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
        p[i] = static_cast<float>(static_cast<double>(p[i]) - upd);
      }
    }
  }

  const StateMap& state() const noexcept { return state_; }

 private:
  Tensor<double>& slot(const std::string& key, const Shape& shape) {
    auto it = state_.find(key);
    if (it == state_.end()) it = state_.emplace(key, Tensor<double>(shape)).first;
    else if (it->second.shape() != shape) throw DimensionError("optimizer state '" + key + "' has the wrong shape");
    return it->second;
  }

  StateMap state_;
};

}  // namespace cbt
