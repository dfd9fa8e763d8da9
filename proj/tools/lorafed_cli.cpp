// Command-line front end: run, sweep, partition-report, cost-report, ckpt inspect.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lorafed/lorafed.hpp"

namespace {

using namespace lorafed;
using Json = nlohmann::ordered_json;

struct ConfigArgs {
  std::string path;
  std::string preset;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
  cmd->add_option("--preset", args.preset, "Base preset (toy or paper)")->check(CLI::IsMember({"toy", "paper"}));
  cmd->add_option("-s,--set", args.overrides, "Override a setting, key=value (repeatable)");
}

ConfigFile load_config(const ConfigArgs& args) {
  ConfigFile cf = args.path.empty() ? ConfigFile{} : load_config_file(args.path);
  if (!args.preset.empty()) cf.preset = args.preset;
  std::string text;
  for (const auto& o : args.overrides) {
    if (o.find('=') == std::string::npos) fail(ErrorCode::kConfig, "--set expects key=value, got '" + o + "'");
    text += o + "\n";
  }
  for (auto& [key, values] : parse_config_text(text).entries) {
    auto it = std::find_if(cf.entries.begin(), cf.entries.end(), [&](const auto& e) { return e.first == key; });
    if (it != cf.entries.end()) it->second = values;
    else cf.entries.emplace_back(key, values);
  }
  return cf;
}

void print_json(const Json& j) { std::cout << j.dump(2) << std::endl; }

int cmd_run(const ConfigArgs& cargs, const std::string& out, std::string run_id, std::size_t workers, bool timing,
            bool quiet) {
  const ExperimentConfig config = resolve_scalar_config(load_config(cargs));
  if (run_id.empty()) run_id = config_checksum(config);
  const PreparedExperiment prep = prepare_experiment(config);
  const auto observer = [&](const RoundRecord& r) {
    if (!quiet) {
      std::fprintf(stderr, "round %zu/%zu acc %.4f loss_u %.4f loss_g %.4f\n", r.round, config.rounds,
                   r.global_metrics.accuracy, r.global_metrics.loss_u, r.global_metrics.loss_g);
    }
  };
  const ExperimentResult res = run_experiment(prep, workers, timing, observer);
  write_run_outputs(out, run_id, prep, res);
  print_json(run_summary(run_id, prep, res));
  return 0;
}

int cmd_sweep(const ConfigArgs& cargs, const std::string& out, std::size_t workers, bool quiet) {
  const SweepSpec spec = parse_sweep(load_config(cargs));
  const auto rows = run_sweep(spec, out, workers, [&](const SweepRow& row) {
    if (!quiet) {
      std::fprintf(stderr, "%s %s final_acc %.4f\n", row.cell.run_id().c_str(), row.reused ? "reused" : "done",
                   row.summary.at("final_accuracy").get<double>());
    }
  });
  Json j;
  j["results"] = (std::filesystem::path(out) / kSweepResultsFile).string();
  j["cells"] = rows.size();
  std::size_t reused = 0;
  for (const auto& r : rows) reused += r.reused;
  j["reused"] = reused;
  auto& means = j["seed_mean_accuracy"] = Json::array();
  for (const auto& [key, acc] : seed_mean_accuracy(rows)) {
    means.push_back({{"clients", key.first}, {"dirichlet_alpha", key.second}, {"final_accuracy", acc}});
  }
  print_json(j);
  return 0;
}

int cmd_partition_report(const ConfigArgs& cargs, const std::string& manifest_path) {
  const ExperimentConfig config = resolve_scalar_config(load_config(cargs));
  DatasetConfig dc;
  dc.samples = config.samples;
  dc.classes = config.classes;
  dc.d_v = config.dims.d_v;
  dc.d_t = config.dims.d_t;
  dc.d_g = config.dims.d_g;
  RandomSource rs(config.seed, StreamRole::kData);
  const SyntheticDataset ds = generate_dataset(dc, rs);
  const Partition part = partition(ds, config.clients, config.dirichlet_alpha, config.seed);
  Json j;
  j["clients"] = config.clients;
  j["dirichlet_alpha"] = config.dirichlet_alpha;
  j["seed"] = config.seed;
  j["samples"] = config.samples;
  j["heterogeneity_index"] = heterogeneity_index(part.spec);
  std::size_t lo = ds.size(), hi = 0;
  auto& shards = j["shards"] = Json::array();
  for (const auto& s : part.shards) {
    lo = std::min(lo, s.size());
    hi = std::max(hi, s.size());
    shards.push_back({{"client_id", s.client_id},
                      {"n_train", s.train.size()},
                      {"n_validation", s.validation.size()},
                      {"class_histogram", s.class_histogram}});
  }
  j["min_shard"] = lo;
  j["max_shard"] = hi;
  if (!manifest_path.empty()) write_file(manifest_path, shard_manifest(part).dump(2) + "\n");
  print_json(j);
  return 0;
}

int cmd_cost_report(const CostModel& cm, double stated_total_gb, bool measured) {
  const ReductionReport r = reduction_report(cm);
  Json j;
  j["full_update_gb_per_round"] = cm.full_update_gb_per_round;
  j["adapter_update_gb_per_round"] = cm.adapter_update_gb_per_round;
  j["rounds"] = cm.rounds;
  j["clients"] = cm.clients;
  j["gb_definition"] = "1e9 bytes";
  j["per_round_reduction_pct"] = r.per_round_reduction_pct;
  char rounded[16];
  std::snprintf(rounded, sizeof rounded, "%.1f%%", r.per_round_reduction_pct);
  j["per_round_reduction_rounded"] = rounded;
  j["total_gb_if_adapter_size_is_per_round_total"] = r.total_gb;
  j["total_gb_if_adapter_size_is_per_client"] = r.total_gb_per_client;
  j["full_model_total_gb"] = r.full_total_gb;
  if (stated_total_gb > 0.0) {
    const bool matches =
        std::abs(stated_total_gb - r.total_gb) < 1e-9 || std::abs(stated_total_gb - r.total_gb_per_client) < 1e-9;
    j["stated_total_gb"] = stated_total_gb;
    j["stated_total_consistent"] = matches;
    if (!matches) {
      char note[160];
      std::snprintf(note, sizeof note, "stated total %.3g GB matches neither %.4g GB nor %.4g GB", stated_total_gb,
                    r.total_gb, r.total_gb_per_client);
      j["discrepancy"] = note;
    }
  }
  if (measured) {
    const ExperimentConfig toy = ExperimentConfig::toy_preset();
    const ToyModel model = ToyModel::create(toy.dims, toy.seed);
    RandomSource rs(toy.seed, StreamRole::kAdapterInit);
    const AdapterSet adapters = model.init_adapters(toy.lora_rank, toy.lora_alpha, rs);
    const CommunicationRatio c = communication_ratio(model, adapters);
    j["measured_toy"] = {{"trainable_params", c.trainable_params},
                         {"frozen_params", c.frozen_params},
                         {"adapter_payload_bytes", c.adapter_bytes},
                         {"adapter_data_bytes", payload_data_bytes(adapters)},
                         {"full_payload_bytes", c.full_bytes},
                         {"byte_ratio", c.byte_ratio()},
                         {"trainable_fraction", c.trainable_fraction()}};
  }
  print_json(j);
  return 0;
}

int cmd_ckpt_inspect(const std::string& path) {
  const std::string bytes = read_file(path);
  const auto records = decode_checkpoint(bytes);
  Json j;
  j["path"] = path;
  j["file_bytes"] = bytes.size();
  j["predicted_bytes"] = checkpoint_size(records);
  j["version"] = kCheckpointVersion;
  std::size_t params = 0;
  auto& tensors = j["tensors"] = Json::array();
  for (const auto& [name, t] : records) {
    params += t.size();
    tensors.push_back({{"name", name}, {"dims", t.dims()}, {"numel", t.size()}, {"norm", norm2(t)}});
  }
  j["parameters"] = params;
  print_json(j);
  return 0;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << Json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LoRA fine-tuning simulator"};
  app.require_subcommand(1);

  ConfigArgs run_cfg, sweep_cfg, part_cfg;
  std::string run_out = "run", run_id, sweep_out = "sweep", manifest;
  std::size_t run_workers = 1, sweep_workers = 1;
  bool timing = false, quiet = false;

  auto* run = app.add_subcommand("run", "Run one federation and write metrics.csv, final.fumm, summary.json");
  add_config_options(run, run_cfg);
  run->add_option("-o,--out", run_out, "Output directory");
  run->add_option("--run-id", run_id, "Run identifier (default: config checksum)");
  run->add_option("-w,--workers", run_workers, "Client worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--timing", timing, "Record wall-clock times in the CSV");
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* sweep = app.add_subcommand("sweep", "Grid over federation.clients x data.dirichlet_alpha x seed");
  add_config_options(sweep, sweep_cfg);
  sweep->add_option("-o,--out", sweep_out, "Output directory");
  sweep->add_option("-w,--workers", sweep_workers, "Cells run concurrently")->check(CLI::PositiveNumber);
  sweep->add_flag("-q,--quiet", quiet, "No per-cell progress");

  auto* part = app.add_subcommand("partition-report", "Dirichlet partition statistics");
  add_config_options(part, part_cfg);
  part->add_option("--manifest", manifest, "Also write the shard manifest JSON here");

  CostModel cm;
  double stated_total = 7.6;
  bool measured = false;
  auto* cost = app.add_subcommand("cost-report", "Communication cost arithmetic");
  cost->add_option("--full-gb", cm.full_update_gb_per_round, "Full-model update size per round, GB")->check(CLI::PositiveNumber);
  cost->add_option("--adapter-gb", cm.adapter_update_gb_per_round, "Adapter update size per round, GB")->check(CLI::PositiveNumber);
  cost->add_option("--rounds", cm.rounds, "Communication rounds");
  cost->add_option("--clients", cm.clients, "Clients per round");
  cost->add_option("--stated-total-gb", stated_total, "Published total to check against (0 disables)");
  cost->add_flag("--measured", measured, "Also count exact toy-preset payloads");

  auto* ckpt = app.add_subcommand("ckpt", "Checkpoint utilities");
  ckpt->require_subcommand(1);
  std::string ckpt_path;
  auto* inspect = ckpt->add_subcommand("inspect", "List the tensors of a checkpoint");
  inspect->add_option("path", ckpt_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) print_error("usage", e.what());
    return app.exit(e, std::cout, std::cerr);
  }

  try {
    if (*run) return cmd_run(run_cfg, run_out, run_id, run_workers, timing, quiet);
    if (*sweep) return cmd_sweep(sweep_cfg, sweep_out, sweep_workers, quiet);
    if (*part) return cmd_partition_report(part_cfg, manifest);
    if (*cost) return cmd_cost_report(cm, stated_total, measured);
    if (*inspect) return cmd_ckpt_inspect(ckpt_path);
  } catch (const Error& e) {
    print_error(std::string(to_string(e.code())), e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 3;
  }
  return 1;
}
