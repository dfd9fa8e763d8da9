#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lorafed/checkpoint.hpp"
#include "lorafed/error.hpp"
#include "lorafed/federation.hpp"
#include "lorafed/toy_model.hpp"

namespace lorafed {

inline constexpr double kBytesPerGb = 1e9;

/// Per-round transmission sizes of a full-model and an adapter-only update.
struct CostModel {
  double full_update_gb_per_round = 28.6;
  double adapter_update_gb_per_round = 0.094;
  std::size_t rounds = 100;
  std::size_t clients = 8;
};

struct ReductionReport {
  double per_round_reduction_pct = 0.0;
  double total_gb = 0.0;             // adapter size read as the whole round's traffic
  double total_gb_per_client = 0.0;  // adapter size read as one client's traffic, times K
  double full_total_gb = 0.0;
};

inline ReductionReport reduction_report(const CostModel& cm) {
  if (!(cm.full_update_gb_per_round > 0.0)) fail(ErrorCode::kInvalidArgument, "cost model: full update size must be positive");
  if (!(cm.adapter_update_gb_per_round > 0.0)) fail(ErrorCode::kInvalidArgument, "cost model: adapter update size must be positive");
  if (cm.rounds == 0) fail(ErrorCode::kInvalidArgument, "cost model: rounds must be positive");
  ReductionReport r;
  r.per_round_reduction_pct = (1.0 - cm.adapter_update_gb_per_round / cm.full_update_gb_per_round) * 100.0;
  const double rounds = static_cast<double>(cm.rounds);
  r.total_gb = cm.adapter_update_gb_per_round * rounds;
  r.total_gb_per_client = cm.adapter_update_gb_per_round * rounds * static_cast<double>(cm.clients);
  r.full_total_gb = cm.full_update_gb_per_round * rounds;
  return r;
}

/// Exact byte counts of one adapter update versus shipping every frozen
/// weight of the same network, both in checkpoint encoding.
struct CommunicationRatio {
  std::size_t trainable_params = 0;
  std::size_t frozen_params = 0;
  std::size_t adapter_bytes = 0;
  std::size_t full_bytes = 0;

  double byte_ratio() const { return static_cast<double>(full_bytes) / static_cast<double>(adapter_bytes); }
  double trainable_fraction() const {
    return static_cast<double>(trainable_params) / static_cast<double>(trainable_params + frozen_params);
  }
};

inline std::size_t full_model_payload_bytes(const ToyModel& model) {
  std::vector<NamedTensor> weights;
  for (const auto& d : model.registry()) weights.emplace_back(d.name + ".weight", model.weight(d.name));
  return checkpoint_size(weights);
}

inline CommunicationRatio communication_ratio(const ToyModel& model, const AdapterSet& adapters) {
  model.require_matching(adapters);
  return {adapters.parameter_count(), model.frozen_parameter_count(), payload_bytes(adapters),
          full_model_payload_bytes(model)};
}

/// One CSV row. `client_id` is empty for the server row.
struct LedgerEntry {
  std::size_t round = 0;
  std::optional<std::size_t> client_id;
  std::size_t n_k = 0;
  double w_k = 0.0;
  LossBreakdown metrics;
  std::size_t bytes_up = 0;
  std::size_t bytes_down = 0;
  std::size_t trainable_params = 0;
  std::size_t frozen_params = 0;
  double wall_ms = 0.0;
};

/// K client rows followed by one server row per round. The server row
/// carries pooled validation metrics and the round's total up/down traffic.
/// Wall times are zeroed unless `timing` is set, so ledgers are reproducible.
inline std::vector<LedgerEntry> ledger_entries(const FederationResult& result, std::size_t frozen_params,
                                               bool timing = false) {
  std::vector<LedgerEntry> out;
  for (const auto& rr : result.history) {
    const std::size_t trainable = rr.global.parameter_count();
    LedgerEntry server;
    server.round = rr.round;
    server.metrics = rr.global_metrics;
    server.trainable_params = trainable;
    server.frozen_params = frozen_params;
    server.bytes_up = rr.server_bytes_up;
    server.bytes_down = rr.server_bytes_down;
    server.wall_ms = timing ? rr.server_wall_ms : 0.0;
    for (const auto& c : rr.clients) {
      LedgerEntry e;
      e.round = rr.round;
      e.client_id = c.client_id;
      e.n_k = c.n_k;
      e.w_k = c.weight;
      e.metrics = c.metrics;
      e.bytes_up = c.bytes_up;
      e.bytes_down = c.bytes_down;
      e.trainable_params = trainable;
      e.frozen_params = frozen_params;
      e.wall_ms = timing ? c.wall_ms : 0.0;
      server.n_k += c.n_k;
      server.w_k += c.weight;
      out.push_back(e);
    }
    out.push_back(server);
  }
  return out;
}

inline constexpr const char* kCsvHeader = "run_id,round,client_id,n_k,w_k,loss_u,loss_g,acc,bytes_up,bytes_down,wall_ms";

namespace detail {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::string metrics_csv(const std::string& run_id, const std::vector<LedgerEntry>& entries) {
  using detail::format_real;
  if (run_id.find_first_of(",\"\n") != std::string::npos) fail(ErrorCode::kInvalidArgument, "run id must not contain CSV delimiters");
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& e : entries) {
    os << run_id << ',' << e.round << ',' << (e.client_id ? std::to_string(*e.client_id) : std::string("SERVER")) << ','
       << e.n_k << ',' << format_real(e.w_k) << ',' << format_real(e.metrics.loss_u) << ','
       << format_real(e.metrics.loss_g) << ',' << format_real(e.metrics.accuracy) << ',' << e.bytes_up << ','
       << e.bytes_down << ',' << format_real(e.wall_ms) << '\n';
  }
  return os.str();
}

}  // namespace lorafed
