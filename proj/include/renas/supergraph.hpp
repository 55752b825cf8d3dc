#ifndef RENAS_SUPERGRAPH_HPP
#define RENAS_SUPERGRAPH_HPP

#include <map>
#include <random>
#include <utility>
#include <vector>

#include "renas/config.hpp"
#include "renas/tensor.hpp"

namespace renas {

/// Per ordered node pair (i, j), i < j, a K x K matrix of block connection
/// weights; entry [l*K + k] weights source block l of node i into target
/// block k of node j.
struct GammaTensor {
  int K = 1;
  std::map<std::pair<int, int>, TensorPtr> entries;  // (i, j) -> (1,1,K,K)

  const TensorPtr& at(int i, int j) const;
};

/// Boolean retention mask over block connections, same keying as GammaTensor;
/// byte [l*K + k] is 1 when the connection survives pruning.
struct ConnectionMask {
  std::vector<std::map<std::pair<int, int>, std::vector<std::uint8_t>>> dags;
};

/// Candidate-operation weights for one node. The first node of a DAG maps
/// the previous DAG's full output to C channels at stride 2 and has a single
/// weight set per op; later nodes carry independent weights per channel block.
struct NodeWeights {
  // [op][block][tensor]; plain conv: {w}, separable: {w_depth, w_point}
  std::vector<std::vector<std::vector<TensorPtr>>> ops;
};

struct DagSpec {
  int channels = 0;          // node width C inside this DAG
  std::vector<NodeWeights> nodes;
  GammaTensor gamma;
};

/// The over-parameterized parent: stem conv, M chained complete DAGs with
/// block routing, global-average-pool + linear head, plus the per-node
/// operation scores alpha.
struct ParentNetwork {
  SearchConfig cfg;
  TensorPtr stem_w;
  std::vector<DagSpec> dags;
  TensorPtr head_w, head_b;
  std::vector<std::vector<double>> alpha;  // [M*N][O]

  int node_count() const { return cfg.M * cfg.N; }
  /// All w-parameters plus gamma tensors, in fixed declared order.
  std::vector<TensorPtr> weight_params() const;
  std::vector<TensorPtr> gamma_params() const;
  void set_params_requires_grad(bool w, bool gamma);
  void zero_param_grads();
};

ParentNetwork build_parent(const SearchConfig& config);

/// Block routing: weighted sum of every source block of every
/// predecessor into target block k of node j. Masked-out connections
/// contribute exactly zero (they are skipped).
TensorPtr route_blocks(
    Tape& tape, const std::vector<std::pair<int, TensorPtr>>& predecessor_outputs,
    const GammaTensor& gamma, int target_node, int k,
    const std::map<std::pair<int, int>, std::vector<std::uint8_t>>* mask = nullptr);

/// Applies the chosen op (own weights per block) to each routed block, ReLU,
/// then channel-concatenates the K results in block order.
TensorPtr apply_node(Tape& tape, const NodeWeights& node, const OpSpec& op_spec,
                     const std::vector<TensorPtr>& routed_blocks, int op_choice);

TensorPtr network_forward(const ParentNetwork& net, Tape& tape,
                          const TensorPtr& batch,
                          const std::vector<int>& op_choices,
                          const ConnectionMask* mask = nullptr);

/// Two-path forward for the alpha step: each node's output is
/// g_m * out(op_m) + g_n * out(op_n) with the g scalars initialized to
/// (p_m, p_n) and marked differentiable so backward yields dL/dg.
struct TwoPathChoice {
  int op_m = 0, op_n = 0;
  double p_m = 1.0, p_n = 0.0;
  TensorPtr g_m, g_n;  // filled by network_forward_two_path
};

TensorPtr network_forward_two_path(const ParentNetwork& net, Tape& tape,
                                   const TensorPtr& batch,
                                   std::vector<TwoPathChoice>& choices);

/// Trainable weight scalars in w; alpha and gamma are excluded. With
/// op_choices given, counts only the chosen op per node (derived network).
long count_params(const ParentNetwork& net,
                  const std::vector<int>* op_choices = nullptr);

}  // namespace renas

#endif
