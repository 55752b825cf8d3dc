#include "renas/discretize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace renas {

using nlohmann::json;

BigUint::BigUint(std::uint64_t v) {
  do {
    limbs_.push_back(std::uint32_t(v % 1000000000ULL));
    v /= 1000000000ULL;
  } while (v > 0);
}

BigUint& BigUint::mul(std::uint32_t m) {
  std::uint64_t carry = 0;
  for (auto& limb : limbs_) {
    const std::uint64_t cur = std::uint64_t(limb) * m + carry;
    limb = std::uint32_t(cur % 1000000000ULL);
    carry = cur / 1000000000ULL;
  }
  while (carry > 0) {
    limbs_.push_back(std::uint32_t(carry % 1000000000ULL));
    carry /= 1000000000ULL;
  }
  return *this;
}

BigUint& BigUint::mul_pow(std::uint32_t base, int exponent) {
  for (int i = 0; i < exponent; ++i) mul(base);
  return *this;
}

std::string BigUint::to_string() const {
  std::ostringstream os;
  os << limbs_.back();
  for (auto it = limbs_.rbegin() + 1; it != limbs_.rend(); ++it) {
    std::string part = std::to_string(*it);
    os << std::string(9 - part.size(), '0') << part;
  }
  return os.str();
}

double BigUint::log10() const {
  const std::string s = to_string();
  if (s == "0") return -std::numeric_limits<double>::infinity();
  double lead = 0.0;
  for (std::size_t i = 0; i < std::min<std::size_t>(s.size(), 15); ++i)
    lead = lead * 10.0 + (s[i] - '0');
  return std::log10(lead) + double(s.size() - std::min<std::size_t>(s.size(), 15));
}

BigUint search_space_size(int M, int N, int O) {
  if (M < 1 || N < 1 || O < 1)
    throw std::invalid_argument("search_space_size: M, N, O must be >= 1");
  BigUint r{std::uint64_t(M)};
  r.mul_pow(std::uint32_t(O), N);
  r.mul_pow(2, N * (N - 1) / 2);
  return r;
}

std::map<std::pair<int, int>, std::vector<std::uint8_t>> prune_connections(
    const GammaTensor& gamma, int node_count) {
  const int K = gamma.K;
  std::map<std::pair<int, int>, std::vector<std::uint8_t>> mask;
  for (const auto& [edge, g] : gamma.entries)
    mask[edge].assign(std::size_t(K) * K, 0);

  for (int j = 1; j < node_count; ++j) {
    // incoming connections in ascending (i, l, k) order
    struct Conn {
      double value;
      long ordinal;
      int i, l, k;
    };
    std::vector<Conn> conns;
    for (int i = 0; i < j; ++i) {
      const auto& g = gamma.at(i, j);
      for (int l = 0; l < K; ++l)
        for (int k = 0; k < K; ++k)
          conns.push_back(Conn{g->values[std::size_t(l) * K + k],
                               long(conns.size()), i, l, k});
    }
    const std::size_t retain = (conns.size() + 1) / 2;
    std::sort(conns.begin(), conns.end(), [](const Conn& a, const Conn& b) {
      if (a.value != b.value) return a.value > b.value;
      return a.ordinal < b.ordinal;
    });
    for (std::size_t r = 0; r < retain; ++r)
      mask[{conns[r].i, j}][std::size_t(conns[r].l) * K + conns[r].k] = 1;
  }
  return mask;
}

ConnectionMask prune_network(const ParentNetwork& net) {
  ConnectionMask mask;
  for (const auto& dag : net.dags)
    mask.dags.push_back(prune_connections(dag.gamma, net.cfg.N));
  return mask;
}

std::vector<int> select_operations(const std::vector<std::vector<double>>& alpha) {
  std::vector<int> out;
  for (const auto& row : alpha) {
    int best = 0;
    for (int o = 1; o < int(row.size()); ++o)
      if (row[std::size_t(o)] > row[std::size_t(best)]) best = o;
    out.push_back(best);
  }
  return out;
}

namespace {

ParentNetwork deep_copy(const ParentNetwork& src) {
  ParentNetwork dst = build_parent(src.cfg);
  auto sp = src.weight_params(), dp = dst.weight_params();
  for (std::size_t i = 0; i < sp.size(); ++i) dp[i]->values = sp[i]->values;
  auto sg = src.gamma_params(), dg = dst.gamma_params();
  for (std::size_t i = 0; i < sg.size(); ++i) dg[i]->values = sg[i]->values;
  dst.alpha = src.alpha;
  return dst;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace

DerivedArchitecture derive(const TrainState& checkpoint,
                           const std::string& checkpoint_hash) {
  const ParentNetwork& net = checkpoint.net;
  DerivedArchitecture arch;
  arch.M = net.cfg.M;
  arch.N = net.cfg.N;
  arch.K = net.cfg.K;
  arch.C0 = net.cfg.C0;
  arch.classes = net.cfg.classes;
  arch.op_set = net.cfg.op_set;
  arch.seed = net.cfg.seed;
  arch.step = checkpoint.step;
  arch.checkpoint_hash = checkpoint_hash;
  arch.ops = select_operations(net.alpha);
  arch.mask = prune_network(net);

  const int K = arch.K;
  for (int d = 0; d < arch.M; ++d) {
    std::vector<std::vector<ArchConnection>> nodes(std::size_t(arch.N));
    for (int j = 1; j < arch.N; ++j)
      for (int i = 0; i < j; ++i) {
        const auto& keep = arch.mask.dags[std::size_t(d)].at({i, j});
        const auto& g = net.dags[std::size_t(d)].gamma.at(i, j);
        for (int l = 0; l < K; ++l)
          for (int k = 0; k < K; ++k)
            if (keep[std::size_t(l) * K + k])
              nodes[std::size_t(j)].push_back(
                  ArchConnection{i, l, k, g->values[std::size_t(l) * K + k]});
      }
    arch.in.push_back(std::move(nodes));
  }

  arch.net = std::make_shared<ParentNetwork>(deep_copy(net));
  arch.param_count = count_params(*arch.net, &arch.ops);
  return arch;
}

DerivedArchitecture derive_from_file(const std::string& checkpoint_path) {
  TrainState state = load_checkpoint(checkpoint_path);
  return derive(state, hash_hex(file_hash(checkpoint_path)));
}

double check_equivalence(const ParentNetwork& parent,
                         const DerivedArchitecture& derived,
                         const TensorPtr& batch) {
  if (!derived.net)
    throw std::invalid_argument("check_equivalence: derived carries no weights");
  Tape tp, td;
  auto parent_logits =
      network_forward(parent, tp, batch, derived.ops, &derived.mask);
  auto derived_logits =
      network_forward(*derived.net, td, batch, derived.ops, &derived.mask);
  if (parent_logits->shape != derived_logits->shape)
    throw std::invalid_argument("check_equivalence: logit shape mismatch");
  double max_diff = 0.0;
  for (std::size_t i = 0; i < parent_logits->values.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(parent_logits->values[i] -
                                            derived_logits->values[i]));
  return max_diff;
}

std::string export_arch_json(const DerivedArchitecture& arch) {
  json ops_names = json::array();
  for (const auto& op : arch.op_set) ops_names.push_back(op.name());
  json dags = json::array();
  for (int d = 0; d < arch.M; ++d) {
    json nodes = json::array();
    for (int n = 0; n < arch.N; ++n) {
      json in = json::array();
      for (const auto& c : arch.in[std::size_t(d)][std::size_t(n)])
        in.push_back({{"src_node", c.src_node},
                      {"src_block", c.src_block},
                      {"dst_block", c.dst_block},
                      {"gamma", c.gamma}});
      nodes.push_back(
          {{"op", arch.ops[std::size_t(d * arch.N + n)]}, {"in", in}});
    }
    dags.push_back({{"nodes", nodes}});
  }
  json j = {{"version", 1},
            {"config",
             {{"M", arch.M},
              {"N", arch.N},
              {"K", arch.K},
              {"C0", arch.C0},
              {"classes", arch.classes},
              {"op_set", ops_names}}},
            {"dags", dags},
            {"provenance",
             {{"seed", arch.seed},
              {"step", arch.step},
              {"checkpoint_hash", arch.checkpoint_hash}}},
            {"param_count", arch.param_count}};
  return j.dump(2) + "\n";
}

DerivedArchitecture import_arch_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("architecture JSON: ") + e.what());
  }
  if (j.value("version", 0) != 1)
    throw std::invalid_argument("architecture JSON: unsupported version");
  DerivedArchitecture arch;
  const json& cfg = j.at("config");
  arch.M = cfg.at("M").get<int>();
  arch.N = cfg.at("N").get<int>();
  arch.K = cfg.at("K").get<int>();
  arch.C0 = cfg.at("C0").get<int>();
  arch.classes = cfg.at("classes").get<int>();
  for (const auto& name : cfg.at("op_set"))
    arch.op_set.push_back(OpSpec::parse(name.get<std::string>()));
  const json& prov = j.at("provenance");
  arch.seed = prov.at("seed").get<std::uint64_t>();
  arch.step = prov.at("step").get<long>();
  arch.checkpoint_hash = prov.at("checkpoint_hash").get<std::string>();
  arch.param_count = j.at("param_count").get<long>();

  const json& dags = j.at("dags");
  if (int(dags.size()) != arch.M)
    throw std::invalid_argument("architecture JSON: DAG count mismatch");
  arch.mask.dags.resize(std::size_t(arch.M));
  for (int d = 0; d < arch.M; ++d) {
    const json& nodes = dags[std::size_t(d)].at("nodes");
    if (int(nodes.size()) != arch.N)
      throw std::invalid_argument("architecture JSON: node count mismatch");
    std::vector<std::vector<ArchConnection>> in(std::size_t(arch.N));
    for (int i = 0; i < arch.N; ++i)
      for (int jn = i + 1; jn < arch.N; ++jn)
        arch.mask.dags[std::size_t(d)][{i, jn}].assign(
            std::size_t(arch.K) * arch.K, 0);
    for (int n = 0; n < arch.N; ++n) {
      const json& node = nodes[std::size_t(n)];
      arch.ops.push_back(node.at("op").get<int>());
      for (const auto& c : node.at("in")) {
        ArchConnection conn{c.at("src_node").get<int>(),
                            c.at("src_block").get<int>(),
                            c.at("dst_block").get<int>(),
                            c.at("gamma").get<double>()};
        if (conn.src_node < 0 || conn.src_node >= n)
          throw std::invalid_argument("architecture JSON: bad src_node");
        arch.mask.dags[std::size_t(d)][{conn.src_node, n}]
                      [std::size_t(conn.src_block) * arch.K + conn.dst_block] = 1;
        in[std::size_t(n)].push_back(conn);
      }
    }
    arch.in.push_back(std::move(in));
  }
  return arch;
}

std::string export_arch_dot(const DerivedArchitecture& arch) {
  std::ostringstream os;
  os << "digraph arch {\n  rankdir=LR;\n  stem [shape=box];\n  head [shape=box];\n";
  auto block_id = [&](int d, int n, int k) {
    return "d" + std::to_string(d) + "_n" + std::to_string(n) + "_b" +
           std::to_string(k);
  };
  for (int d = 0; d < arch.M; ++d) {
    os << "  subgraph cluster_dag" << d << " {\n    label=\"dag " << d << "\";\n";
    for (int n = 0; n < arch.N; ++n)
      for (int k = 0; k < arch.K; ++k)
        os << "    " << block_id(d, n, k) << " [label=\""
           << arch.op_set[std::size_t(arch.ops[std::size_t(d * arch.N + n)])].name()
           << " b" << k << "\"];\n";
    os << "  }\n";
  }
  // chain: stem feeds dag 0, each dag feeds the next, last dag feeds head
  for (int k = 0; k < arch.K; ++k)
    os << "  stem -> " << block_id(0, 0, k) << " [style=dashed];\n";
  for (int d = 1; d < arch.M; ++d)
    for (int k = 0; k < arch.K; ++k)
      os << "  " << block_id(d - 1, arch.N - 1, k) << " -> " << block_id(d, 0, k)
         << " [style=dashed];\n";
  for (int k = 0; k < arch.K; ++k)
    os << "  " << block_id(arch.M - 1, arch.N - 1, k) << " -> head [style=dashed];\n";
  for (int d = 0; d < arch.M; ++d)
    for (int n = 0; n < arch.N; ++n)
      for (const auto& c : arch.in[std::size_t(d)][std::size_t(n)])
        os << "  " << block_id(d, c.src_node, c.src_block) << " -> "
           << block_id(d, n, c.dst_block) << " [label=\"g=" << c.gamma << "\"];\n";
  os << "}\n";
  return os.str();
}

ParentNetwork instantiate(const DerivedArchitecture& arch, int in_channels,
                          int input_size, std::uint64_t seed) {
  SearchConfig cfg;
  cfg.seed = seed;
  cfg.M = arch.M;
  cfg.N = arch.N;
  cfg.K = arch.K;
  cfg.C0 = arch.C0;
  cfg.op_set = arch.op_set;
  cfg.classes = arch.classes;
  cfg.in_channels = in_channels;
  cfg.input_size = input_size;
  ParentNetwork net = build_parent(cfg);
  for (int d = 0; d < arch.M; ++d) {
    for (auto& [edge, g] : net.dags[std::size_t(d)].gamma.entries)
      std::fill(g->values.begin(), g->values.end(), 0.0);
    for (int n = 0; n < arch.N; ++n)
      for (const auto& c : arch.in[std::size_t(d)][std::size_t(n)])
        net.dags[std::size_t(d)].gamma.at(c.src_node, n)->values
            [std::size_t(c.src_block) * arch.K + c.dst_block] = c.gamma;
  }
  for (std::size_t g = 0; g < net.alpha.size(); ++g) {
    std::fill(net.alpha[g].begin(), net.alpha[g].end(), 0.0);
    net.alpha[g][std::size_t(arch.ops[g])] = 1.0;
  }
  return net;
}

void retrain(ParentNetwork& net, const std::vector<int>& ops,
             const ConnectionMask& mask, const Dataset& train, int steps,
             double lr0, double momentum, int batch_size, std::uint64_t seed) {
  auto params = net.weight_params();
  auto gammas = net.gamma_params();
  net.set_params_requires_grad(true, false);  // searched gammas stay frozen
  std::vector<SgdMomentumState> states(params.size());
  const CosineSchedule sched{lr0, std::max(steps, 1)};
  for (auto& s : states) {
    s.momentum = momentum;
    s.schedule = sched;
  }
  int epoch = 0;
  BatchIter iter(train, batch_size, seed, epoch);
  for (int t = 0; t < steps; ++t) {
    ImageBatch batch;
    if (!iter.next(batch)) {
      iter = BatchIter(train, batch_size, seed, ++epoch);
      iter.next(batch);
    }
    net.zero_param_grads();
    Tape tape;
    auto logits = network_forward(net, tape, batch.images, ops, &mask);
    auto loss = cross_entropy(tape, logits, batch.labels);
    backward(tape, loss);
    clip_gradients(params, kGradClipNorm);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->grad.empty()) continue;
      sgd_momentum_step(params[i]->values, params[i]->grad, states[i], t);
    }
  }
}

}  // namespace renas
