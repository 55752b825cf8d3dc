#ifndef RENAS_SEARCH_HPP
#define RENAS_SEARCH_HPP

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "renas/dataset.hpp"
#include "renas/optim.hpp"
#include "renas/supergraph.hpp"

namespace renas {

/// Two distinct candidate operations drawn from the multinomial over
/// softmax(alpha), with probabilities renormalized to the pair.
struct TwoPathSample {
  int op_m = 0;
  int op_n = 0;
  double p_m = 1.0;
  double p_n = 0.0;
};

struct TrainState {
  long step = 0;
  ParentNetwork net;
  std::vector<SgdMomentumState> w_states;      // aligned with weight_params()
  std::vector<SgdMomentumState> gamma_states;  // aligned with gamma_params()
  AdamState alpha_state;                       // over the flattened alpha table
  std::mt19937_64 rng;
  std::vector<double> loss_history;
  double val_loss_initial = 0.0;
  double val_loss_final = 0.0;
  double last_val_loss = 0.0;
};

/// Disjoint (weight-train, alpha-val) index partition, sampled uniformly
/// without replacement, deterministic by seed.
std::pair<std::vector<int>, std::vector<int>> split_dataset(int train_size,
                                                            int val_size,
                                                            std::uint64_t seed);

TwoPathSample sample_two_paths(const std::vector<double>& alpha_row,
                               std::mt19937_64& rng);

/// Score-gradient contributions for the two sampled ops given dL/dg of each
/// path. The two returned values always sum to zero.
std::pair<double, double> alpha_grad(const TwoPathSample& sample, double dl_dg_m,
                                     double dl_dg_n);

/// Scales all populated gradients so their global L2 norm is at most
/// max_norm; returns the factor applied (1.0 when under the bound).
double clip_gradients(const std::vector<TensorPtr>& params, double max_norm);

/// Global-norm bound applied to every (w, gamma) gradient step; keeps the
/// unnormalized supernet stable under the default lr schedule.
inline constexpr double kGradClipNorm = 1.0;

/// One SGD-momentum update of all w and gamma reached by freshly sampled ops,
/// with gradients clipped to kGradClipNorm; alpha untouched. Increments
/// state.step.
void weight_step(TrainState& state, const ImageBatch& batch);

/// One Adam update of alpha from the two-path estimator; w and gamma untouched.
void alpha_step(TrainState& state, const ImageBatch& val_batch);

struct StepMetrics {
  long step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  int samples = 0;
};

/// Deterministic loss/accuracy over (a prefix of) a dataset with fixed op
/// choices and optional connection mask.
EvalResult evaluate(const ParentNetwork& net, const Dataset& data,
                    const std::vector<int>& op_choices,
                    const ConnectionMask* mask = nullptr, int max_images = 0,
                    int batch_size = 16);

std::vector<int> argmax_ops(const ParentNetwork& net);

/// Fresh TrainState for a config: built parent, zeroed optimizer states,
/// seeded rng.
TrainState init_train_state(const SearchConfig& config);

TrainState run_search(
    const SearchConfig& config,
    const std::function<void(const StepMetrics&)>& on_step = {},
    const std::function<void(const TrainState&)>& on_checkpoint = {});

// -- checkpoint file ---------------------------------------------------------
//
// Binary layout (little-endian), fields in order:
//   magic "RNCK", u32 version (1)
//   u64 length + bytes: config JSON
//   i64 step
//   u64 length + bytes: mt19937_64 state text
//   u64 tensor count; per tensor: u64 name length + name, 4 x i32 shape,
//     f64 values           (weight params in declared order, then gammas)
//   u64 node count, u64 op count, f64 alpha values row-major
//   per weight/gamma tensor: f64 SGD velocity (zero-filled when unused)
//   AdamState over alpha: i64 step_count, f64 m values, f64 v values
//   f64 val_loss_initial, f64 val_loss_final

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
/// FNV-1a 64 over the file bytes.
std::uint64_t file_hash(const std::string& path);

}  // namespace renas

#endif
