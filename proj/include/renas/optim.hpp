#ifndef RENAS_OPTIM_HPP
#define RENAS_OPTIM_HPP

#include <vector>

namespace renas {

/// Half-cosine annealing from lr0 down to 0 over total_steps.
struct CosineSchedule {
  double lr0 = 0.1;
  int total_steps = 1;

  double at(int t) const;
};

struct SgdMomentumState {
  std::vector<double> velocity;
  double momentum = 0.9;
  CosineSchedule schedule;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  double lr = 0.006;
};

/// v <- mu*v + g;  p <- p - eta(t)*v
void sgd_momentum_step(std::vector<double>& param, const std::vector<double>& grad,
                       SgdMomentumState& state, int step_index);

/// Bias-corrected Adam update; increments state.step_count.
void adam_step(std::vector<double>& param, const std::vector<double>& grad,
               AdamState& state);

}  // namespace renas

#endif
