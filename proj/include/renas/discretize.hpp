#ifndef RENAS_DISCRETIZE_HPP
#define RENAS_DISCRETIZE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "renas/search.hpp"
#include "renas/supergraph.hpp"

namespace renas {

/// Unbounded nonnegative integer, base 1e9 limbs. Just enough arithmetic for
/// exact search-space counting.
class BigUint {
 public:
  BigUint() : limbs_{0} {}
  explicit BigUint(std::uint64_t v);

  BigUint& mul(std::uint32_t m);
  BigUint& mul_pow(std::uint32_t base, int exponent);
  std::string to_string() const;
  double log10() const;
  bool operator==(const BigUint& other) const { return limbs_ == other.limbs_; }

 private:
  std::vector<std::uint32_t> limbs_;  // little-endian, < 1e9 each
};

/// Exact M * O^N * 2^(N(N-1)/2).
BigUint search_space_size(int M, int N, int O);

/// One retained block connection feeding a node.
struct ArchConnection {
  int src_node = 0;
  int src_block = 0;
  int dst_block = 0;
  double gamma = 0.0;
};

/// Discretized search result: one op per node, retained connections with
/// their frozen gamma values, and provenance back to the checkpoint.
struct DerivedArchitecture {
  int M = 0, N = 0, K = 0, C0 = 0, classes = 0;
  std::vector<OpSpec> op_set;
  std::vector<int> ops;  // [M*N], global node order
  // [dag][node][connections]; node 0 of each DAG has none
  std::vector<std::vector<std::vector<ArchConnection>>> in;
  std::uint64_t seed = 0;
  long step = 0;
  std::string checkpoint_hash;
  long param_count = 0;

  ConnectionMask mask;  // rebuilt on import
  /// Weights frozen from the checkpoint; present only when derived
  /// in-process, not after a JSON round trip.
  std::shared_ptr<ParentNetwork> net;
};

/// Per target node, ranks all incoming block connections by gamma descending
/// and retains the top half (ceil on odd counts); ties keep the lowest
/// (src_node, src_block, dst_block) index.
std::map<std::pair<int, int>, std::vector<std::uint8_t>> prune_connections(
    const GammaTensor& gamma, int node_count);

ConnectionMask prune_network(const ParentNetwork& net);

std::vector<int> select_operations(const std::vector<std::vector<double>>& alpha);

DerivedArchitecture derive(const TrainState& checkpoint,
                           const std::string& checkpoint_hash = "");
DerivedArchitecture derive_from_file(const std::string& checkpoint_path);

/// Max absolute logit difference between the derived network and the parent
/// evaluated with the derived op choices and pruned gammas zeroed.
double check_equivalence(const ParentNetwork& parent,
                         const DerivedArchitecture& derived,
                         const TensorPtr& batch);

std::string export_arch_json(const DerivedArchitecture& arch);
DerivedArchitecture import_arch_json(const std::string& text);
std::string export_arch_dot(const DerivedArchitecture& arch);

/// Fresh network with the architecture's wiring: retained gammas frozen to
/// their searched values, pruned ones zero, weights re-initialized from seed.
ParentNetwork instantiate(const DerivedArchitecture& arch, int in_channels,
                          int input_size, std::uint64_t seed);

/// Plain SGD retraining of a (derived) network with fixed ops and mask.
void retrain(ParentNetwork& net, const std::vector<int>& ops,
             const ConnectionMask& mask, const Dataset& train, int steps,
             double lr0, double momentum, int batch_size, std::uint64_t seed);

}  // namespace renas

#endif
