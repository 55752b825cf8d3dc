#include "renas/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace renas {

double CosineSchedule::at(int t) const {
  if (t >= total_steps) return 0.0;
  if (t < 0) t = 0;
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * double(t) / double(total_steps)));
}

void sgd_momentum_step(std::vector<double>& param, const std::vector<double>& grad,
                       SgdMomentumState& state, int step_index) {
  if (param.size() != grad.size())
    throw std::invalid_argument("sgd_momentum_step: param size " +
                                std::to_string(param.size()) + " != grad size " +
                                std::to_string(grad.size()));
  if (state.velocity.empty()) state.velocity.assign(param.size(), 0.0);
  if (state.velocity.size() != param.size())
    throw std::invalid_argument("sgd_momentum_step: velocity size mismatch");
  const double eta = state.schedule.at(step_index);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] + grad[i];
    param[i] -= eta * state.velocity[i];
  }
}

void adam_step(std::vector<double>& param, const std::vector<double>& grad,
               AdamState& state) {
  if (param.size() != grad.size())
    throw std::invalid_argument("adam_step: param size " +
                                std::to_string(param.size()) + " != grad size " +
                                std::to_string(grad.size()));
  if (state.m.empty()) state.m.assign(param.size(), 0.0);
  if (state.v.empty()) state.v.assign(param.size(), 0.0);
  if (state.m.size() != param.size() || state.v.size() != param.size())
    throw std::invalid_argument("adam_step: moment size mismatch");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step_count));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

}  // namespace renas
