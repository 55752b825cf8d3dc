#include "renas/config.hpp"

#include <set>
#include <stdexcept>

#include <json.hpp>

namespace renas {

using nlohmann::json;

std::string OpSpec::name() const {
  const std::string k = std::to_string(kernel);
  return (separable ? "dw_sep_" : "conv_") + k + "x" + k;
}

OpSpec OpSpec::parse(const std::string& name) {
  OpSpec op;
  std::string rest;
  if (name.rfind("dw_sep_", 0) == 0) {
    op.separable = true;
    rest = name.substr(7);
  } else if (name.rfind("conv_", 0) == 0) {
    op.separable = false;
    rest = name.substr(5);
  } else {
    throw std::invalid_argument("unknown operation name: " + name);
  }
  const auto x = rest.find('x');
  if (x == std::string::npos)
    throw std::invalid_argument("unknown operation name: " + name);
  op.kernel = std::stoi(rest.substr(0, x));
  if (op.kernel < 1 || op.kernel % 2 == 0 ||
      rest != std::to_string(op.kernel) + "x" + std::to_string(op.kernel))
    throw std::invalid_argument("unknown operation name: " + name);
  return op;
}

std::vector<OpSpec> default_op_set() {
  return {{true, 3}, {true, 5}, {true, 7}, {false, 3}, {false, 5}, {false, 7}};
}

void SearchConfig::validate() const {
  if (M < 1) throw std::invalid_argument("config: M must be >= 1");
  if (N < 1) throw std::invalid_argument("config: N must be >= 1");
  if (K < 1) throw std::invalid_argument("config: K must be >= 1");
  if (C0 < 1) throw std::invalid_argument("config: C0 must be >= 1");
  if (op_set.empty()) throw std::invalid_argument("config: op_set is empty");
  if (classes < 2) throw std::invalid_argument("config: classes must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
  if (val_size < 0) throw std::invalid_argument("config: val_size must be >= 0");
  // every DAG's channel count must split into K blocks
  long c = C0;
  for (int d = 0; d < M; ++d) {
    c *= 2;
    if (c % K != 0)
      throw std::invalid_argument("config: DAG " + std::to_string(d) +
                                  " channels " + std::to_string(c) +
                                  " not divisible by K=" + std::to_string(K));
  }
  if (C0 % K != 0)
    throw std::invalid_argument("config: C0=" + std::to_string(C0) +
                                " not divisible by K=" + std::to_string(K));
  if (input_size >> M < 1)
    throw std::invalid_argument("config: input size " + std::to_string(input_size) +
                                " underflows after " + std::to_string(M) +
                                " halvings");
  if (dataset.kind != "cifar10" && dataset.kind != "synthetic")
    throw std::invalid_argument("config: unknown dataset kind '" + dataset.kind + "'");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " +
                                  where);
}

}  // namespace

std::string SearchConfig::to_json() const {
  json ops = json::array();
  for (const auto& op : op_set) ops.push_back(op.name());
  json ds = {{"kind", dataset.kind}};
  if (dataset.kind == "cifar10") {
    ds["path"] = dataset.path;
  } else {
    ds["classes"] = dataset.classes;
    ds["side"] = dataset.side;
    ds["noise_sigma"] = dataset.noise_sigma;
    ds["samples_per_class"] = dataset.samples_per_class;
  }
  json j = {{"seed", seed},
            {"M", M},
            {"N", N},
            {"K", K},
            {"C0", C0},
            {"op_set", ops},
            {"classes", classes},
            {"in_channels", in_channels},
            {"input_size", input_size},
            {"batch_size", batch_size},
            {"total_steps", total_steps},
            {"lr_w", lr_w},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"lr_alpha", lr_alpha},
            {"val_size", val_size},
            {"checkpoint_interval", checkpoint_interval},
            {"retrain_steps", retrain_steps},
            {"augment", augment},
            {"dataset", ds}};
  return j.dump(2);
}

SearchConfig SearchConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: JSON parse error: ") + e.what());
  }
  reject_unknown(j, {"seed", "M", "N", "K", "C0", "op_set", "classes",
                     "in_channels", "input_size", "batch_size", "total_steps",
                     "lr_w", "momentum", "weight_decay", "lr_alpha", "val_size",
                     "checkpoint_interval", "retrain_steps", "augment", "dataset"},
                 "config");
  SearchConfig c;
  c.seed = j.value("seed", c.seed);
  c.M = j.value("M", c.M);
  c.N = j.value("N", c.N);
  c.K = j.value("K", c.K);
  c.C0 = j.value("C0", c.C0);
  if (j.contains("op_set")) {
    c.op_set.clear();
    for (const auto& name : j.at("op_set"))
      c.op_set.push_back(OpSpec::parse(name.get<std::string>()));
  }
  c.classes = j.value("classes", c.classes);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.lr_w = j.value("lr_w", c.lr_w);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_alpha = j.value("lr_alpha", c.lr_alpha);
  c.val_size = j.value("val_size", c.val_size);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.retrain_steps = j.value("retrain_steps", c.retrain_steps);
  c.augment = j.value("augment", c.augment);
  if (j.contains("dataset")) {
    const json& ds = j.at("dataset");
    reject_unknown(ds, {"kind", "path", "classes", "side", "noise_sigma",
                        "samples_per_class"},
                   "dataset");
    c.dataset.kind = ds.value("kind", c.dataset.kind);
    c.dataset.path = ds.value("path", c.dataset.path);
    c.dataset.classes = ds.value("classes", c.dataset.classes);
    c.dataset.side = ds.value("side", c.dataset.side);
    c.dataset.noise_sigma = ds.value("noise_sigma", c.dataset.noise_sigma);
    c.dataset.samples_per_class =
        ds.value("samples_per_class", c.dataset.samples_per_class);
  }
  c.validate();
  return c;
}

}  // namespace renas
