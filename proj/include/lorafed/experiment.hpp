#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorafed/checkpoint.hpp"
#include "lorafed/config.hpp"
#include "lorafed/data.hpp"
#include "lorafed/federation.hpp"
#include "lorafed/ledger.hpp"
#include "lorafed/random.hpp"
#include "lorafed/toy_model.hpp"

namespace lorafed {

/// Everything a run needs before the first round, derived from the config
/// seed alone.
struct PreparedExperiment {
  ExperimentConfig config;
  SyntheticDataset dataset;
  Partition partition;
  std::vector<ClientData> clients;
  ToyModel model;
};

inline PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
  validate(config);
  DatasetConfig dc;
  dc.samples = config.samples;
  dc.classes = config.classes;
  dc.d_v = config.dims.d_v;
  dc.d_t = config.dims.d_t;
  dc.d_g = config.dims.d_g;
  RandomSource data_rs(config.seed, StreamRole::kData);
  SyntheticDataset ds = generate_dataset(dc, data_rs);
  Partition part = partition(ds, config.clients, config.dirichlet_alpha, config.seed);
  std::vector<ClientData> clients = materialize_clients(ds, part, config.modality_shift, config.seed);
  ToyModel model = ToyModel::create(config.dims, config.seed);
  return {config, std::move(ds), std::move(part), std::move(clients), std::move(model)};
}

struct ExperimentResult {
  FederationResult federation;
  std::vector<LedgerEntry> ledger;
  CommunicationRatio communication;
  double heterogeneity = 0.0;
};

inline ExperimentResult run_experiment(const PreparedExperiment& prep, std::size_t workers = 1, bool timing = false,
                                       const RoundObserver& observer = {}) {
  ExperimentResult r;
  r.federation = run_federation(prep.model, prep.clients, to_federation_config(prep.config, workers), observer);
  r.ledger = ledger_entries(r.federation, prep.model.frozen_parameter_count(), timing);
  r.communication = communication_ratio(prep.model, r.federation.final_global());
  r.heterogeneity = heterogeneity_index(prep.partition.spec);
  return r;
}

inline nlohmann::ordered_json run_summary(const std::string& run_id, const PreparedExperiment& prep,
                                          const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config_checksum"] = config_checksum(prep.config);
  j["clients"] = prep.config.clients;
  j["dirichlet_alpha"] = prep.config.dirichlet_alpha;
  j["seed"] = prep.config.seed;
  j["rounds"] = r.federation.history.size();
  j["heterogeneity_index"] = r.heterogeneity;
  j["initial_accuracy"] = r.federation.initial_metrics.accuracy;
  const LossBreakdown final_metrics =
      r.federation.history.empty() ? r.federation.initial_metrics : r.federation.history.back().global_metrics;
  j["final_accuracy"] = final_metrics.accuracy;
  j["final_loss_u"] = final_metrics.loss_u;
  j["final_loss_g"] = final_metrics.loss_g;
  j["trainable_params"] = r.communication.trainable_params;
  j["frozen_params"] = r.communication.frozen_params;
  j["adapter_payload_bytes"] = r.communication.adapter_bytes;
  j["full_payload_bytes"] = r.communication.full_bytes;
  std::size_t up = 0, down = 0;
  for (const auto& rr : r.federation.history) {
    up += rr.server_bytes_up;
    down += rr.server_bytes_down;
  }
  j["total_bytes_up"] = up;
  j["total_bytes_down"] = down;
  return j;
}

inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kCheckpointFile = "final.fumm";
inline constexpr const char* kSummaryFile = "summary.json";

/// Writes metrics.csv, final.fumm and summary.json into `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const std::string& run_id,
                              const PreparedExperiment& prep, const ExperimentResult& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create '" + dir.string() + "': " + ec.message());
  write_file((dir / kMetricsFile).string(), metrics_csv(run_id, r.ledger));
  save_checkpoint(r.federation.final_global(), (dir / kCheckpointFile).string());
  write_file((dir / kSummaryFile).string(), run_summary(run_id, prep, r).dump(2) + "\n");
}

}  // namespace lorafed
