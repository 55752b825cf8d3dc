#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "renas/discretize.hpp"
#include "renas/search.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

void apply_env_seed(renas::SearchConfig& cfg) {
  if (const char* env = std::getenv("RENAS_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
    std::cerr << "seed overridden by RENAS_SEED=" << cfg.seed << "\n";
  }
}

renas::DatasetDesc parse_dataset_arg(const std::string& arg) {
  const std::string text = !arg.empty() && arg.front() == '{' ? arg : read_file(arg);
  json j = json::parse(text);
  renas::DatasetDesc desc;
  desc.kind = j.value("kind", desc.kind);
  desc.path = j.value("path", desc.path);
  desc.classes = j.value("classes", desc.classes);
  desc.side = j.value("side", desc.side);
  desc.noise_sigma = j.value("noise_sigma", desc.noise_sigma);
  desc.samples_per_class = j.value("samples_per_class", desc.samples_per_class);
  return desc;
}

int cmd_search(const std::string& config_path, const std::string& out_dir,
               long seed_override, int steps_override) {
  renas::SearchConfig cfg = renas::SearchConfig::from_json(read_file(config_path));
  if (seed_override >= 0) cfg.seed = std::uint64_t(seed_override);
  if (steps_override >= 0) cfg.total_steps = steps_override;
  apply_env_seed(cfg);
  cfg.validate();

  fs::create_directories(out_dir);
  std::ostringstream metrics;
  auto state = renas::run_search(
      cfg,
      [&](const renas::StepMetrics& m) {
        json row = {{"step", m.step},
                    {"train_loss", m.train_loss},
                    {"val_loss", m.val_loss},
                    {"lr", m.lr}};
        metrics << row.dump() << "\n";
      },
      [&](const renas::TrainState& s) {
        renas::save_checkpoint(
            s, out_dir + "/checkpoint_step" + std::to_string(s.step) + ".bin");
      });
  renas::save_checkpoint(state, out_dir + "/checkpoint.bin");
  write_file_atomic(out_dir + "/metrics.jsonl", metrics.str());
  std::cout << "search done: step " << state.step << ", val loss "
            << state.val_loss_initial << " -> " << state.val_loss_final << "\n";
  return 0;
}

int cmd_derive(const std::string& checkpoint_path, const std::string& out_path,
               const std::string& dot_path) {
  auto arch = renas::derive_from_file(checkpoint_path);
  write_file_atomic(out_path, renas::export_arch_json(arch));
  if (!dot_path.empty())
    write_file_atomic(dot_path, renas::export_arch_dot(arch));

  long retained = 0;
  for (const auto& dag : arch.in)
    for (const auto& node : dag) retained += long(node.size());
  const long total =
      long(arch.M) * (long(arch.N) * (arch.N - 1) / 2) * arch.K * arch.K;
  std::cout << "param_count " << arch.param_count << "\n";
  std::cout << "retained_fraction "
            << (total > 0 ? double(retained) / double(total) : 0.0) << "\n";
  return 0;
}

int cmd_eval(const std::string& arch_path, const std::string& data_arg,
             int retrain_steps, long seed_arg) {
  auto arch = renas::import_arch_json(read_file(arch_path));
  auto desc = parse_dataset_arg(data_arg);
  const std::uint64_t seed = seed_arg >= 0 ? std::uint64_t(seed_arg) : arch.seed;
  auto [train, test] = renas::open_dataset(desc, seed);
  if (train.classes() != arch.classes)
    throw std::invalid_argument("dataset has " + std::to_string(train.classes()) +
                                " classes, architecture expects " +
                                std::to_string(arch.classes));
  auto net = renas::instantiate(arch, train.channels(), train.height(), seed);
  if (retrain_steps > 0)
    renas::retrain(net, arch.ops, arch.mask, train, retrain_steps, 0.05, 0.9, 8,
                   seed);
  auto res = renas::evaluate(net, test, arch.ops, &arch.mask);
  json out = {{"accuracy", res.accuracy},
              {"loss", res.loss},
              {"param_count", renas::count_params(net, &arch.ops)},
              {"samples", res.samples},
              {"retrain_steps", retrain_steps}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_space_size(int dags, int nodes, int ops) {
  auto n = renas::search_space_size(dags, nodes, ops);
  std::cout << n.to_string() << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "log10 %.3f", n.log10());
  std::cout << buf << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"backbone-free architecture search over channel-block wiring"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  long seed_override = -1;
  int steps_override = -1;
  auto* search = app.add_subcommand("search", "run the bilevel search");
  search->add_option("--config", config_path, "search config JSON")->required();
  search->add_option("--out", out_dir, "output directory");
  search->add_option("--seed", seed_override, "override config seed");
  search->add_option("--total-steps", steps_override, "override config total_steps");

  std::string ckpt_path, arch_out = "arch.json", dot_path;
  auto* derive = app.add_subcommand("derive", "discretize a checkpoint");
  derive->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  derive->add_option("--out", arch_out, "architecture JSON output");
  derive->add_option("--dot", dot_path, "optional DOT output");

  std::string arch_path, data_arg;
  int retrain_steps = 0;
  long eval_seed = -1;
  auto* eval = app.add_subcommand("eval", "evaluate a derived architecture");
  eval->add_option("--arch", arch_path, "architecture JSON")->required();
  eval->add_option("--data", data_arg, "dataset descriptor (JSON file or inline)")
      ->required();
  eval->add_option("--retrain", retrain_steps, "SGD steps before evaluation");
  eval->add_option("--seed", eval_seed, "weight init / data seed");

  int dags = 0, nodes = 0, opcount = 0;
  auto* space = app.add_subcommand("space-size", "exact search-space count");
  space->add_option("--dags", dags, "M")->required();
  space->add_option("--nodes", nodes, "N")->required();
  space->add_option("--ops", opcount, "O")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (search->parsed())
      return cmd_search(config_path, out_dir, seed_override, steps_override);
    if (derive->parsed()) return cmd_derive(ckpt_path, arch_out, dot_path);
    if (eval->parsed())
      return cmd_eval(arch_path, data_arg, retrain_steps, eval_seed);
    if (space->parsed()) return cmd_space_size(dags, nodes, opcount);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
