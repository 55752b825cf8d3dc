#include "renas/supergraph.hpp"

#include <cmath>
#include <stdexcept>

namespace renas {

const TensorPtr& GammaTensor::at(int i, int j) const {
  auto it = entries.find({i, j});
  if (it == entries.end())
    throw std::out_of_range("gamma: no edge (" + std::to_string(i) + ", " +
                            std::to_string(j) + ")");
  return it->second;
}

namespace {

TensorPtr init_tensor(std::array<int, 4> shape, int fan_in, std::mt19937_64& rng,
                      const std::string& name) {
  auto t = make_tensor(shape, true);
  const double bound = std::sqrt(3.0 / double(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t->values) v = u(rng);
  t->name = name;
  return t;
}

// Weight tensors for one candidate op mapping in_ch -> out_ch.
std::vector<TensorPtr> make_op_weights(const OpSpec& op, int in_ch, int out_ch,
                                       std::mt19937_64& rng,
                                       const std::string& prefix) {
  const int k = op.kernel;
  if (op.separable)
    return {init_tensor({in_ch, 1, k, k}, k * k, rng, prefix + ".wd"),
            init_tensor({out_ch, in_ch, 1, 1}, in_ch, rng, prefix + ".wp")};
  return {init_tensor({out_ch, in_ch, k, k}, in_ch * k * k, rng, prefix + ".w")};
}

TensorPtr apply_op(Tape& tape, const std::vector<TensorPtr>& w, const OpSpec& op,
                   const TensorPtr& x, int stride) {
  const int pad = (op.kernel - 1) / 2;
  if (op.separable) return dw_separable_conv(tape, x, w[0], w[1], stride, pad);
  return conv2d(tape, x, w[0], stride, pad);
}

}  // namespace

ParentNetwork build_parent(const SearchConfig& config) {
  config.validate();
  ParentNetwork net;
  net.cfg = config;
  std::mt19937_64 rng(config.seed);

  net.stem_w = init_tensor({config.C0, config.in_channels, 3, 3},
                           config.in_channels * 9, rng, "stem.w");

  int in_ch = config.C0;
  for (int d = 0; d < config.M; ++d) {
    DagSpec dag;
    dag.channels = in_ch * 2;
    dag.gamma.K = config.K;
    const int block = dag.channels / config.K;
    for (int n = 0; n < config.N; ++n) {
      NodeWeights node;
      for (int o = 0; o < config.op_count(); ++o) {
        const std::string prefix = "dag" + std::to_string(d) + ".node" +
                                   std::to_string(n) + ".op" + std::to_string(o);
        std::vector<std::vector<TensorPtr>> blocks;
        if (n == 0) {
          blocks.push_back(make_op_weights(config.op_set[o], in_ch, dag.channels,
                                           rng, prefix));
        } else {
          for (int b = 0; b < config.K; ++b)
            blocks.push_back(make_op_weights(config.op_set[o], block, block, rng,
                                             prefix + ".block" + std::to_string(b)));
        }
        node.ops.push_back(std::move(blocks));
      }
      dag.nodes.push_back(std::move(node));
    }
    for (int i = 0; i < config.N; ++i)
      for (int j = i + 1; j < config.N; ++j) {
        auto g = make_tensor({1, 1, config.K, config.K}, true);
        for (auto& v : g->values) v = 1.0 / config.K;
        g->name = "dag" + std::to_string(d) + ".gamma." + std::to_string(i) +
                  "_" + std::to_string(j);
        dag.gamma.entries[{i, j}] = g;
      }
    net.dags.push_back(std::move(dag));
    in_ch = net.dags.back().channels;
  }

  const int feat = in_ch;
  net.head_w = init_tensor({config.classes, feat, 1, 1}, feat, rng, "head.w");
  net.head_b = make_tensor({1, 1, 1, config.classes}, true);
  net.head_b->name = "head.b";

  net.alpha.assign(std::size_t(config.M) * config.N,
                   std::vector<double>(std::size_t(config.op_count()), 0.0));
  return net;
}

std::vector<TensorPtr> ParentNetwork::weight_params() const {
  std::vector<TensorPtr> out{stem_w};
  for (const auto& dag : dags)
    for (const auto& node : dag.nodes)
      for (const auto& op : node.ops)
        for (const auto& blk : op)
          for (const auto& t : blk) out.push_back(t);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

std::vector<TensorPtr> ParentNetwork::gamma_params() const {
  std::vector<TensorPtr> out;
  for (const auto& dag : dags)
    for (const auto& [edge, g] : dag.gamma.entries) out.push_back(g);
  return out;
}

void ParentNetwork::set_params_requires_grad(bool w, bool gamma) {
  for (auto& t : weight_params()) t->requires_grad = w;
  for (auto& t : gamma_params()) t->requires_grad = gamma;
}

void ParentNetwork::zero_param_grads() {
  for (auto& t : weight_params()) t->zero_grad();
  for (auto& t : gamma_params()) t->zero_grad();
}

TensorPtr route_blocks(
    Tape& tape, const std::vector<std::pair<int, TensorPtr>>& predecessor_outputs,
    const GammaTensor& gamma, int target_node, int k,
    const std::map<std::pair<int, int>, std::vector<std::uint8_t>>* mask) {
  if (predecessor_outputs.empty())
    throw std::invalid_argument("route_blocks: no predecessors");
  const int K = gamma.K;
  const auto& first = predecessor_outputs.front().second;
  const int C = first->shape[1];
  if (C % K != 0)
    throw std::invalid_argument("route_blocks: " + std::to_string(C) +
                                " channels not divisible by K=" + std::to_string(K));
  const int Cb = C / K;
  for (const auto& [i, x] : predecessor_outputs)
    if (x->shape != first->shape)
      throw std::invalid_argument(
          "route_blocks: predecessor " + std::to_string(i) +
          " shape mismatch against predecessor " +
          std::to_string(predecessor_outputs.front().first));

  TensorPtr acc;
  for (const auto& [i, x] : predecessor_outputs) {
    const auto& g = gamma.at(i, target_node);
    const std::vector<std::uint8_t>* keep = nullptr;
    if (mask) {
      auto it = mask->find({i, target_node});
      if (it == mask->end())
        throw std::invalid_argument("route_blocks: mask missing edge (" +
                                    std::to_string(i) + ", " +
                                    std::to_string(target_node) + ")");
      keep = &it->second;
    }
    for (int l = 0; l < K; ++l) {
      if (keep && !(*keep)[std::size_t(l) * K + k]) continue;
      auto coeff = element(tape, g, std::int64_t(l) * K + k);
      auto term =
          scale(tape, slice_channels(tape, x, l * Cb, (l + 1) * Cb), coeff);
      acc = acc ? add(tape, acc, term) : term;
    }
  }
  if (!acc)  // every incoming connection of this block was pruned
    acc = make_tensor({first->shape[0], Cb, first->shape[2], first->shape[3]});
  return acc;
}

TensorPtr apply_node(Tape& tape, const NodeWeights& node, const OpSpec& op_spec,
                     const std::vector<TensorPtr>& routed_blocks, int op_choice) {
  if (op_choice < 0 || op_choice >= int(node.ops.size()))
    throw std::invalid_argument("apply_node: op index " +
                                std::to_string(op_choice) + " out of range [0, " +
                                std::to_string(node.ops.size()) + ")");
  const auto& blocks = node.ops[std::size_t(op_choice)];
  if (blocks.size() != routed_blocks.size())
    throw std::invalid_argument("apply_node: " +
                                std::to_string(routed_blocks.size()) +
                                " routed blocks for a node with " +
                                std::to_string(blocks.size()) + " block weight sets");
  std::vector<TensorPtr> outs;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    outs.push_back(
        relu(tape, apply_op(tape, blocks[b], op_spec, routed_blocks[b], 1)));
  return outs.size() == 1 ? outs[0] : concat_channels(tape, outs);
}

namespace {

// Shared pass structure; `select` evaluates the node output for the given
// global node from a per-op evaluator.
TensorPtr forward_impl(
    const ParentNetwork& net, Tape& tape, const TensorPtr& batch,
    const ConnectionMask* mask,
    const std::function<TensorPtr(Tape&, int,
                                  const std::function<TensorPtr(int)>&)>& select) {
  const auto& cfg = net.cfg;
  const int H = batch->shape[2], W = batch->shape[3];
  if (H >> cfg.M < 1 || W >> cfg.M < 1 || H % (1 << cfg.M) != 0 ||
      W % (1 << cfg.M) != 0)
    throw std::invalid_argument("network_forward: spatial size " +
                                std::to_string(H) + "x" + std::to_string(W) +
                                " incompatible with " + std::to_string(cfg.M) +
                                " halvings");
  if (mask && int(mask->dags.size()) != cfg.M)
    throw std::invalid_argument("network_forward: mask covers " +
                                std::to_string(mask->dags.size()) + " DAGs, need " +
                                std::to_string(cfg.M));

  TensorPtr x = relu(tape, conv2d(tape, batch, net.stem_w, 1, 1));
  for (int d = 0; d < cfg.M; ++d) {
    const DagSpec& dag = net.dags[std::size_t(d)];
    std::vector<TensorPtr> outs(std::size_t(cfg.N));
    const TensorPtr dag_input = x;
    outs[0] = select(tape, d * cfg.N, [&](int o) {
      return relu(tape, apply_op(tape, dag.nodes[0].ops[std::size_t(o)][0],
                                 cfg.op_set[std::size_t(o)], dag_input, 2));
    });
    for (int j = 1; j < cfg.N; ++j) {
      std::vector<std::pair<int, TensorPtr>> preds;
      for (int i = 0; i < j; ++i) preds.emplace_back(i, outs[std::size_t(i)]);
      std::vector<TensorPtr> blocks;
      for (int k = 0; k < cfg.K; ++k)
        blocks.push_back(route_blocks(tape, preds, dag.gamma, j, k,
                                      mask ? &mask->dags[std::size_t(d)] : nullptr));
      outs[std::size_t(j)] = select(tape, d * cfg.N + j, [&](int o) {
        return apply_node(tape, dag.nodes[std::size_t(j)],
                          cfg.op_set[std::size_t(o)], blocks, o);
      });
    }
    x = outs[std::size_t(cfg.N - 1)];
  }
  return linear(tape, global_avg_pool(tape, x), net.head_w, net.head_b);
}

}  // namespace

TensorPtr network_forward(const ParentNetwork& net, Tape& tape,
                          const TensorPtr& batch,
                          const std::vector<int>& op_choices,
                          const ConnectionMask* mask) {
  if (int(op_choices.size()) != net.node_count())
    throw std::invalid_argument("network_forward: " +
                                std::to_string(op_choices.size()) +
                                " op choices for " +
                                std::to_string(net.node_count()) + " nodes");
  return forward_impl(net, tape, batch, mask,
                      [&](Tape&, int gnode, const std::function<TensorPtr(int)>& eval) {
                        return eval(op_choices[std::size_t(gnode)]);
                      });
}

TensorPtr network_forward_two_path(const ParentNetwork& net, Tape& tape,
                                   const TensorPtr& batch,
                                   std::vector<TwoPathChoice>& choices) {
  if (int(choices.size()) != net.node_count())
    throw std::invalid_argument("network_forward_two_path: " +
                                std::to_string(choices.size()) +
                                " choices for " +
                                std::to_string(net.node_count()) + " nodes");
  return forward_impl(
      net, tape, batch, nullptr,
      [&](Tape& tp, int gnode, const std::function<TensorPtr(int)>& eval) {
        TwoPathChoice& c = choices[std::size_t(gnode)];
        if (c.op_n < 0) {  // single-op node, no sampling
          c.g_m = make_scalar(c.p_m, true);
          return scale(tp, eval(c.op_m), c.g_m);
        }
        c.g_m = make_scalar(c.p_m, true);
        c.g_n = make_scalar(c.p_n, true);
        return add(tp, scale(tp, eval(c.op_m), c.g_m),
                   scale(tp, eval(c.op_n), c.g_n));
      });
}

long count_params(const ParentNetwork& net, const std::vector<int>* op_choices) {
  long total = net.stem_w->numel() + net.head_w->numel() + net.head_b->numel();
  for (int d = 0; d < net.cfg.M; ++d)
    for (int n = 0; n < net.cfg.N; ++n) {
      const auto& node = net.dags[std::size_t(d)].nodes[std::size_t(n)];
      for (int o = 0; o < int(node.ops.size()); ++o) {
        if (op_choices && (*op_choices)[std::size_t(d * net.cfg.N + n)] != o)
          continue;
        for (const auto& blk : node.ops[std::size_t(o)])
          for (const auto& t : blk) total += t->numel();
      }
    }
  return total;
}

}  // namespace renas
