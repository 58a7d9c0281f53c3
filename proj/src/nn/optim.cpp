#include "mosaic/nn/optim.hpp"

#include <cmath>

namespace mosaic::nn {
namespace {

Matrix& slot(std::map<std::string, Matrix, std::less<>>& store, const ParamEntry& e) {
  auto it = store.find(e.name);
  if (it == store.end()) {
    it = store.emplace(e.name, Matrix::Zero(e.value.rows(), e.value.cols())).first;
  }
  return it->second;
}

}  // namespace

void optimizer_step(ParamSet& params, const Gradients& grads, OptimizerState& state,
                    const OptimizerConfig& config) {
  grads.check_matches(params);
  ++state.steps;
  for (ParamEntry& e : params.mutable_entries()) {
    if (!is_trainable(e.role)) continue;
    const Matrix& g = grads.at(e.name);
    if (const auto* sgd = std::get_if<SgdConfig>(&config)) {
      if (sgd->momentum == 0.0) {
        e.value -= sgd->lr * g;
      } else {
        Matrix& velocity = slot(state.first, e);
        velocity = sgd->momentum * velocity + g;
        e.value -= sgd->lr * velocity;
      }
    } else {
      const auto& adam = std::get<AdamConfig>(config);
      Matrix& m = slot(state.first, e);
      Matrix& v = slot(state.second, e);
      m = adam.beta1 * m + (1.0 - adam.beta1) * g;
      v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
      const double t = static_cast<double>(state.steps);
      const double bias1 = 1.0 - std::pow(adam.beta1, t);
      const double bias2 = 1.0 - std::pow(adam.beta2, t);
      e.value.array() -= adam.lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + adam.eps);
    }
  }
}

}  // namespace mosaic::nn
