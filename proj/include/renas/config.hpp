#ifndef RENAS_CONFIG_HPP
#define RENAS_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace renas {

/// One candidate node operation: a plain or depthwise-separable convolution
/// with a square odd kernel.
struct OpSpec {
  bool separable = false;
  int kernel = 3;

  std::string name() const;
  static OpSpec parse(const std::string& name);
  bool operator==(const OpSpec&) const = default;
};

std::vector<OpSpec> default_op_set();

/// Dataset selector: either the CIFAR-10 binary directory or a synthetic
/// pattern-classification set.
struct DatasetDesc {
  std::string kind = "synthetic";  // "cifar10" | "synthetic"
  std::string path;                // cifar10 only
  int classes = 4;                 // synthetic only
  int side = 16;
  double noise_sigma = 0.3;
  int samples_per_class = 500;
};

struct SearchConfig {
  std::uint64_t seed = 0;
  int M = 2;   // DAG count
  int N = 4;   // nodes per DAG
  int K = 4;   // channel blocks per node
  int C0 = 16; // stem output channels
  std::vector<OpSpec> op_set = default_op_set();
  int classes = 10;
  int in_channels = 3;
  int input_size = 32;
  int batch_size = 8;
  int total_steps = 1000;
  double lr_w = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double lr_alpha = 0.006;
  int val_size = 5000;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  int retrain_steps = 0;
  bool augment = false;
  DatasetDesc dataset;

  int op_count() const { return int(op_set.size()); }
  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;

  std::string to_json() const;
  /// Parses and validates; unknown keys are rejected.
  static SearchConfig from_json(const std::string& text);
};

}  // namespace renas

#endif
