// Bias-corrected adaptive-moment optimizer over named parameter matrices.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/matrix.hpp"

namespace craf::ad {

struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
  const Matrix* grad = nullptr;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;  // first moments, one per parameter
  std::vector<Matrix> v;  // second moments
};

// scale the whole gradient set down when its global L2 norm exceeds max_norm
inline double clip_gradients(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads)
    for (double v : g.raw()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Matrix& g : grads)
      for (double& v : g.raw()) v *= scale;
  }
  return norm;
}

inline void adam_step(std::vector<ParamRef>& params, AdamState& state) {
  if (state.m.empty()) {
    for (const ParamRef& p : params) {
      state.m.emplace_back(p.value->rows(), p.value->cols());
      state.v.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                " accumulators for " + std::to_string(params.size()) + " params");

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const ParamRef& p = params[pi];
    if (!p.grad->same_shape(*p.value) || !state.m[pi].same_shape(*p.value))
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
    if (!p.grad->all_finite())
      throw std::invalid_argument("adam_step: non-finite gradient for " + p.name);
  }

  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& x = *params[pi].value;
    const Matrix& g = *params[pi].grad;
    Matrix& m = state.m[pi];
    Matrix& v = state.v[pi];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g.raw()[i];
      m.raw()[i] = state.beta1 * m.raw()[i] + (1.0 - state.beta1) * gi;
      v.raw()[i] = state.beta2 * v.raw()[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m.raw()[i] / c1;
      const double vhat = v.raw()[i] / c2;
      x.raw()[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace craf::ad
