#include "renas/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace renas {

std::pair<std::vector<int>, std::vector<int>> split_dataset(int train_size,
                                                            int val_size,
                                                            std::uint64_t seed) {
  if (val_size > train_size)
    throw std::invalid_argument("split_dataset: val_size " +
                                std::to_string(val_size) + " exceeds dataset size " +
                                std::to_string(train_size));
  std::vector<int> order(std::size_t(train_size), 0);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> val(order.begin(), order.begin() + val_size);
  std::vector<int> train(order.begin() + val_size, order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

TwoPathSample sample_two_paths(const std::vector<double>& alpha_row,
                               std::mt19937_64& rng) {
  const int O = int(alpha_row.size());
  if (O < 2)
    throw std::invalid_argument("sample_two_paths: need at least 2 operations, got " +
                                std::to_string(O));
  const auto s = softmax_row(alpha_row);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  auto draw = [&](int exclude) {
    double total = 0.0;
    for (int i = 0; i < O; ++i)
      if (i != exclude) total += s[std::size_t(i)];
    double r = u(rng) * total;
    int last = -1;
    for (int i = 0; i < O; ++i) {
      if (i == exclude) continue;
      last = i;
      r -= s[std::size_t(i)];
      if (r <= 0.0) return i;
    }
    return last;  // r lands past the end through rounding
  };

  TwoPathSample out;
  out.op_m = draw(-1);
  out.op_n = draw(out.op_m);
  const double sm = s[std::size_t(out.op_m)], sn = s[std::size_t(out.op_n)];
  out.p_m = sm / (sm + sn);
  out.p_n = sn / (sm + sn);
  return out;
}

std::pair<double, double> alpha_grad(const TwoPathSample& sample, double dl_dg_m,
                                     double dl_dg_n) {
  // factored form of sum_n dL/dg_n * p_n * (delta_mn - p_m) using p_m+p_n=1;
  // makes the pair-sum-zero identity exact in floating point
  const double gm = sample.p_m * sample.p_n * (dl_dg_m - dl_dg_n);
  return {gm, -gm};
}

namespace {

void check_finite(const Tape& tape, const TensorPtr& loss, const char* where) {
  if (std::isfinite(loss->values[0])) return;
  for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
    const auto& out = tape.nodes()[i].output;
    if (!out->all_finite()) {
      std::string ident = "op #" + std::to_string(i);
      for (const auto& in : tape.nodes()[i].inputs)
        if (!in->name.empty()) ident += " (input " + in->name + ")";
      throw std::runtime_error(std::string(where) +
                               ": non-finite value first appears at tape " + ident);
    }
  }
  throw std::runtime_error(std::string(where) + ": non-finite loss");
}

int sample_multinomial(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    r -= probs[i];
    if (r <= 0.0) return int(i);
  }
  return int(probs.size()) - 1;
}

}  // namespace

double clip_gradients(const std::vector<TensorPtr>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& p : params)
    for (double& g : p->grad) g *= scale;
  return scale;
}

std::vector<int> argmax_ops(const ParentNetwork& net) {
  std::vector<int> out;
  for (const auto& row : net.alpha) {
    int best = 0;
    for (int o = 1; o < int(row.size()); ++o)
      if (row[std::size_t(o)] > row[std::size_t(best)]) best = o;
    out.push_back(best);
  }
  return out;
}

void weight_step(TrainState& state, const ImageBatch& batch) {
  ParentNetwork& net = state.net;
  net.set_params_requires_grad(true, true);
  net.zero_param_grads();

  std::vector<int> choices;
  for (const auto& row : net.alpha)
    choices.push_back(row.size() < 2
                          ? 0
                          : sample_multinomial(softmax_row(row), state.rng));

  Tape tape;
  auto logits = network_forward(net, tape, batch.images, choices);
  auto loss = cross_entropy(tape, logits, batch.labels);
  check_finite(tape, loss, "weight_step");
  backward(tape, loss);

  const double wd = net.cfg.weight_decay;
  if (wd > 0.0)
    for (const auto& p : net.weight_params())
      if (!p->grad.empty())
        for (std::size_t i = 0; i < p->grad.size(); ++i)
          p->grad[i] += wd * p->values[i];
  std::vector<TensorPtr> all = net.weight_params();
  for (const auto& g : net.gamma_params()) all.push_back(g);
  clip_gradients(all, kGradClipNorm);

  auto update_group = [&](const std::vector<TensorPtr>& params,
                          std::vector<SgdMomentumState>& states) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->grad.empty()) continue;  // not reached by the sampled ops
      sgd_momentum_step(params[i]->values, params[i]->grad, states[i],
                        int(state.step));
    }
  };
  update_group(net.weight_params(), state.w_states);
  update_group(net.gamma_params(), state.gamma_states);

  state.loss_history.push_back(loss->values[0]);
  state.step += 1;
}

void alpha_step(TrainState& state, const ImageBatch& val_batch) {
  ParentNetwork& net = state.net;
  net.set_params_requires_grad(false, false);
  net.zero_param_grads();

  const int O = net.cfg.op_count();
  std::vector<TwoPathSample> samples(std::size_t(net.node_count()));
  std::vector<TwoPathChoice> choices(std::size_t(net.node_count()));
  for (int g = 0; g < net.node_count(); ++g) {
    if (O < 2) {
      choices[std::size_t(g)] = TwoPathChoice{0, -1, 1.0, 0.0, nullptr, nullptr};
      continue;
    }
    samples[std::size_t(g)] = sample_two_paths(net.alpha[std::size_t(g)], state.rng);
    const auto& s = samples[std::size_t(g)];
    choices[std::size_t(g)] = TwoPathChoice{s.op_m, s.op_n, s.p_m, s.p_n,
                                            nullptr, nullptr};
  }

  Tape tape;
  auto logits = network_forward_two_path(net, tape, val_batch.images, choices);
  auto loss = cross_entropy(tape, logits, val_batch.labels);
  check_finite(tape, loss, "alpha_step");
  backward(tape, loss);

  std::vector<double> flat_alpha, flat_grad;
  for (int g = 0; g < net.node_count(); ++g) {
    std::vector<double> row_grad(std::size_t(O), 0.0);
    if (O >= 2) {
      const auto& c = choices[std::size_t(g)];
      const double dm = c.g_m->grad.empty() ? 0.0 : c.g_m->grad[0];
      const double dn = c.g_n->grad.empty() ? 0.0 : c.g_n->grad[0];
      auto [gm, gn] = alpha_grad(samples[std::size_t(g)], dm, dn);
      row_grad[std::size_t(c.op_m)] = gm;
      row_grad[std::size_t(c.op_n)] = gn;
    }
    flat_alpha.insert(flat_alpha.end(), net.alpha[std::size_t(g)].begin(),
                      net.alpha[std::size_t(g)].end());
    flat_grad.insert(flat_grad.end(), row_grad.begin(), row_grad.end());
  }
  adam_step(flat_alpha, flat_grad, state.alpha_state);
  for (int g = 0; g < net.node_count(); ++g)
    std::copy(flat_alpha.begin() + std::ptrdiff_t(g) * O,
              flat_alpha.begin() + std::ptrdiff_t(g + 1) * O,
              net.alpha[std::size_t(g)].begin());

  state.last_val_loss = loss->values[0];
}

EvalResult evaluate(const ParentNetwork& net, const Dataset& data,
                    const std::vector<int>& op_choices, const ConnectionMask* mask,
                    int max_images, int batch_size) {
  const int n = max_images > 0 ? std::min(max_images, data.size()) : data.size();
  EvalResult res;
  double loss_sum = 0.0;
  int correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + batch_size, n); ++i) idx.push_back(i);
    auto batch = make_batch(data, idx);
    Tape tape;
    auto logits = network_forward(net, tape, batch.images, op_choices, mask);
    auto loss = cross_entropy(tape, logits, batch.labels);
    loss_sum += loss->values[0] * double(idx.size());
    const int C = logits->shape[1];
    for (std::size_t b = 0; b < idx.size(); ++b) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (logits->values[b * std::size_t(C) + std::size_t(c)] >
            logits->values[b * std::size_t(C) + std::size_t(best)])
          best = c;
      if (best == batch.labels[b]) ++correct;
    }
  }
  res.samples = n;
  res.loss = n > 0 ? loss_sum / n : 0.0;
  res.accuracy = n > 0 ? double(correct) / n : 0.0;
  return res;
}

TrainState init_train_state(const SearchConfig& cfg) {
  TrainState state;
  state.net = build_parent(cfg);
  const CosineSchedule sched{cfg.lr_w, std::max(cfg.total_steps, 1)};
  state.w_states.resize(state.net.weight_params().size());
  state.gamma_states.resize(state.net.gamma_params().size());
  for (auto* group : {&state.w_states, &state.gamma_states})
    for (auto& s : *group) {
      s.momentum = cfg.momentum;
      s.schedule = sched;
    }
  state.alpha_state.lr = cfg.lr_alpha;
  state.rng.seed(cfg.seed);
  return state;
}

TrainState run_search(const SearchConfig& config,
                      const std::function<void(const StepMetrics&)>& on_step,
                      const std::function<void(const TrainState&)>& on_checkpoint) {
  SearchConfig cfg = config;
  auto [train, test] = open_dataset(cfg.dataset, cfg.seed);
  (void)test;
  cfg.classes = train.classes();
  cfg.in_channels = train.channels();
  cfg.input_size = train.height();
  cfg.validate();
  if (cfg.val_size > train.size())
    throw std::invalid_argument("run_search: val_size " +
                                std::to_string(cfg.val_size) +
                                " exceeds training set size " +
                                std::to_string(train.size()));

  auto [w_idx, val_idx] = split_dataset(train.size(), cfg.val_size, cfg.seed);
  Dataset w_train = train.subset(w_idx);
  Dataset alpha_val = train.subset(val_idx);

  TrainState state = init_train_state(cfg);
  const int eval_cap = 256;
  const Dataset& eval_set = alpha_val.size() > 0 ? alpha_val : w_train;
  state.val_loss_initial =
      evaluate(state.net, eval_set, argmax_ops(state.net), nullptr, eval_cap).loss;

  int train_epoch = 0, val_epoch = 0;
  BatchIter train_iter(w_train, cfg.batch_size, cfg.seed, train_epoch);
  BatchIter val_iter(alpha_val.size() > 0 ? alpha_val : w_train, cfg.batch_size,
                     cfg.seed ^ 0x5bf0f3ULL, val_epoch);

  for (int t = 0; t < cfg.total_steps; ++t) {
    ImageBatch batch;
    if (!train_iter.next(batch)) {
      train_iter = BatchIter(w_train, cfg.batch_size, cfg.seed, ++train_epoch);
      train_iter.next(batch);
    }
    if (cfg.augment) batch = augment_flip(batch, state.rng);
    weight_step(state, batch);

    if (alpha_val.size() > 0) {
      ImageBatch vb;
      if (!val_iter.next(vb)) {
        val_iter = BatchIter(alpha_val, cfg.batch_size, cfg.seed ^ 0x5bf0f3ULL,
                             ++val_epoch);
        val_iter.next(vb);
      }
      alpha_step(state, vb);
    }

    if (on_step)
      on_step(StepMetrics{state.step, state.loss_history.back(),
                          state.last_val_loss,
                          state.w_states.front().schedule.at(int(state.step) - 1)});
    if (on_checkpoint && cfg.checkpoint_interval > 0 &&
        state.step % cfg.checkpoint_interval == 0)
      on_checkpoint(state);
  }

  state.val_loss_final =
      evaluate(state.net, eval_set, argmax_ops(state.net), nullptr, eval_cap).loss;
  return state;
}

// -- checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_i64(std::ostream& os, std::int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_f64s(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * sizeof(double)));
}
void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::int64_t get_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void get_f64s(std::istream& is, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
}
std::string get_str(std::istream& is) {
  const auto n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  return s;
}

void corrupt(const std::string& path, const std::string& why) {
  throw std::runtime_error("checkpoint " + path + ": " + why);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_str(os, state.net.cfg.to_json());
    put_i64(os, state.step);
    std::ostringstream rng;
    rng << state.rng;
    put_str(os, rng.str());

    auto params = state.net.weight_params();
    auto gammas = state.net.gamma_params();
    std::vector<TensorPtr> all(params);
    all.insert(all.end(), gammas.begin(), gammas.end());
    put_u64(os, all.size());
    for (const auto& t : all) {
      put_str(os, t->name);
      for (int i = 0; i < 4; ++i) put_u32(os, std::uint32_t(t->shape[i]));
      put_f64s(os, t->values);
    }
    put_u64(os, state.net.alpha.size());
    put_u64(os, state.net.alpha.empty() ? 0 : state.net.alpha.front().size());
    for (const auto& row : state.net.alpha) put_f64s(os, row);

    auto dump_velocity = [&](const std::vector<SgdMomentumState>& states,
                             const std::vector<TensorPtr>& group) {
      for (std::size_t i = 0; i < group.size(); ++i) {
        std::vector<double> v = states[i].velocity;
        v.resize(group[i]->values.size(), 0.0);
        put_f64s(os, v);
      }
    };
    dump_velocity(state.w_states, params);
    dump_velocity(state.gamma_states, gammas);

    const std::size_t alpha_n =
        state.net.alpha.size() *
        (state.net.alpha.empty() ? 0 : state.net.alpha.front().size());
    put_i64(os, state.alpha_state.step_count);
    std::vector<double> m = state.alpha_state.m, v = state.alpha_state.v;
    m.resize(alpha_n, 0.0);
    v.resize(alpha_n, 0.0);
    put_f64s(os, m);
    put_f64s(os, v);
    put_f64s(os, {state.val_loss_initial, state.val_loss_final});
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot rename " + tmp + " to " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) corrupt(path, "cannot open");
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) corrupt(path, "bad magic");
  const auto version = get_u32(is);
  if (version != kVersion)
    corrupt(path, "version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
  SearchConfig cfg = SearchConfig::from_json(get_str(is));
  TrainState state = init_train_state(cfg);
  state.step = get_i64(is);
  {
    std::istringstream rng(get_str(is));
    rng >> state.rng;
  }
  auto params = state.net.weight_params();
  auto gammas = state.net.gamma_params();
  std::vector<TensorPtr> all(params);
  all.insert(all.end(), gammas.begin(), gammas.end());
  const auto count = get_u64(is);
  if (count != all.size())
    corrupt(path, "tensor count " + std::to_string(count) + ", expected " +
                      std::to_string(all.size()));
  for (auto& t : all) {
    const std::string name = get_str(is);
    if (name != t->name)
      corrupt(path, "tensor '" + name + "' where '" + t->name + "' expected");
    for (int i = 0; i < 4; ++i)
      if (int(get_u32(is)) != t->shape[i]) corrupt(path, name + ": shape mismatch");
    get_f64s(is, t->values, std::size_t(t->numel()));
  }
  const auto nodes = get_u64(is);
  const auto ops = get_u64(is);
  if (nodes != state.net.alpha.size() ||
      (nodes > 0 && ops != state.net.alpha.front().size()))
    corrupt(path, "alpha table shape mismatch");
  for (auto& row : state.net.alpha) get_f64s(is, row, ops);

  auto read_velocity = [&](std::vector<SgdMomentumState>& states,
                           const std::vector<TensorPtr>& group) {
    for (std::size_t i = 0; i < group.size(); ++i)
      get_f64s(is, states[i].velocity, group[i]->values.size());
  };
  read_velocity(state.w_states, params);
  read_velocity(state.gamma_states, gammas);
  state.alpha_state.step_count = get_i64(is);
  get_f64s(is, state.alpha_state.m, nodes * ops);
  get_f64s(is, state.alpha_state.v, nodes * ops);
  std::vector<double> tail;
  get_f64s(is, tail, 2);
  state.val_loss_initial = tail[0];
  state.val_loss_final = tail[1];
  if (!is) corrupt(path, "truncated");
  return state;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("file_hash: cannot open " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= std::uint8_t(buf[i]);
      h *= 1099511628211ULL;
    }
    if (is.eof()) break;
  }
  return h;
}

}  // namespace renas
