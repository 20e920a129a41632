#pragma once

#include <vector>

#include "ssl2/core/errors.hpp"
#include "ssl2/nn/layers.hpp"

namespace ssl2 {

// Plain SGD, momentum off by default.
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
  }

  void step(nn::ParamRegistry<Scalar>& params) {
    if (momentum_ > 0.0 && velocity_.empty()) {
      velocity_.resize(params.entries.size());
      for (std::size_t i = 0; i < params.entries.size(); ++i)
        velocity_[i].assign(static_cast<std::size_t>(params.entries[i].size), Scalar(0));
    }
    const Scalar lr = static_cast<Scalar>(lr_);
    const Scalar mu = static_cast<Scalar>(momentum_);
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      auto& e = params.entries[i];
      if (momentum_ > 0.0) {
        Scalar* v = velocity_[i].data();
        for (index_t k = 0; k < e.size; ++k) {
          v[k] = mu * v[k] + e.grad[k];
          e.value[k] -= lr * v[k];
        }
      } else {
        for (index_t k = 0; k < e.size; ++k) e.value[k] -= lr * e.grad[k];
      }
    }
  }

  double lr_;
  double momentum_;

 private:
  std::vector<std::vector<Scalar>> velocity_;
};

// EMA shadow of a parameter set: shadow <- decay * shadow + (1 - decay) * student.
template <typename Scalar>
struct EMAState {
  double decay = 0.99;
  std::vector<std::vector<Scalar>> shadow;

  static EMAState from(const nn::ParamRegistry<Scalar>& params, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("EMA decay must be in [0,1]");
    EMAState s;
    s.decay = decay;
    s.shadow.reserve(params.entries.size());
    for (const auto& e : params.entries)
      s.shadow.emplace_back(e.value, e.value + e.size);
    return s;
  }

  void copy_into(nn::ParamRegistry<Scalar>& params) const {
    if (shadow.size() != params.entries.size()) throw ShapeMismatch("EMA shadow/param mismatch");
    for (std::size_t i = 0; i < shadow.size(); ++i)
      std::copy(shadow[i].begin(), shadow[i].end(), params.entries[i].value);
  }
};

template <typename Scalar>
void ema_update(EMAState<Scalar>& state, const nn::ParamRegistry<Scalar>& student) {
  if (state.shadow.size() != student.entries.size()) throw ShapeMismatch("EMA shadow/param mismatch");
  const Scalar d = static_cast<Scalar>(state.decay);
  const Scalar od = Scalar(1) - d;
  for (std::size_t i = 0; i < state.shadow.size(); ++i) {
    Scalar* s = state.shadow[i].data();
    const Scalar* v = student.entries[i].value;
    const index_t n = student.entries[i].size;
    if (static_cast<index_t>(state.shadow[i].size()) != n) throw ShapeMismatch("EMA entry size mismatch");
    for (index_t k = 0; k < n; ++k) s[k] = d * s[k] + od * v[k];
  }
}

}  // namespace ssl2
