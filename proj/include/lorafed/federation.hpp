#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "lorafed/adapter.hpp"
#include "lorafed/checkpoint.hpp"
#include "lorafed/data.hpp"
#include "lorafed/error.hpp"
#include "lorafed/optimizer.hpp"
#include "lorafed/random.hpp"
#include "lorafed/split.hpp"
#include "lorafed/toy_model.hpp"

namespace lorafed {

enum class Aggregator { kFedAvg, kFusion, kFedProx, kFedOpt };

inline std::string_view to_string(Aggregator a) {
  switch (a) {
    case Aggregator::kFedAvg: return "fedavg";
    case Aggregator::kFusion: return "fusion";
    case Aggregator::kFedProx: return "fedprox";
    case Aggregator::kFedOpt: return "fedopt";
  }
  return "unknown";
}

inline Aggregator parse_aggregator(std::string_view s) {
  if (s == "fedavg") return Aggregator::kFedAvg;
  if (s == "fusion") return Aggregator::kFusion;
  if (s == "fedprox") return Aggregator::kFedProx;
  if (s == "fedopt") return Aggregator::kFedOpt;
  fail(ErrorCode::kConfig, "unknown aggregator '" + std::string(s) + "'");
}

struct SplitSettings {
  bool enabled = false;
  InterfacePolicy policy;
};

struct FederationConfig {
  std::size_t clients = 4;
  std::size_t rounds = 100;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  Aggregator aggregator = Aggregator::kFusion;
  double prox_mu = 0.01;
  double server_lr = 1.0;
  double server_momentum = 0.9;
  bool quality_weighting = true;  // honoured by the fusion aggregator
  std::uint64_t seed = 0;
  std::size_t lora_rank = 16;
  double lora_alpha = 32.0;
  OptimizerConfig optimizer;
  LossWeights loss;
  SplitSettings split;
  std::size_t workers = 1;
};

inline void validate(const FederationConfig& c) {
  if (c.clients < 1) fail(ErrorCode::kConfig, "federation needs at least one client");
  if (c.batch_size < 1) fail(ErrorCode::kConfig, "batch size must be >= 1");
  if (c.prox_mu < 0.0) fail(ErrorCode::kConfig, "prox_mu must be >= 0");
  if (!(c.server_lr > 0.0)) fail(ErrorCode::kConfig, "server_lr must be positive");
  if (c.server_momentum < 0.0 || c.server_momentum >= 1.0) fail(ErrorCode::kConfig, "server momentum must lie in [0, 1)");
  if (c.workers < 1) fail(ErrorCode::kConfig, "workers must be >= 1");
  validate_policy(c.split.policy);
}

/// Server -> client message for one round.
struct RoundTask {
  std::size_t round = 1;  // 1-based
  AdapterSet snapshot;
  std::vector<std::uint64_t> client_streams;  // indexed by client id
};

inline std::uint64_t client_stream(std::size_t client_id, std::size_t round) {
  return derive_stream(StreamRole::kClient, {client_id, round});
}

/// Client -> server message.
struct ClientUpdate {
  std::size_t client_id = 0;
  AdapterSet params;
  std::size_t n_k = 0;
  double val_score = 0.0;
  LossBreakdown val_metrics;
  std::size_t bytes_up = 0;
  std::size_t bytes_down = 0;
  std::size_t split_bytes = 0;  // activation/gradient traffic across the device/edge cut
  double wall_ms = 0.0;
};

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

/// E epochs of seeded mini-batch training from the round snapshot, then
/// scoring on the client's validation split (training split if it has none).
inline ClientUpdate run_client(const RoundTask& task, const ClientData& client, const ToyModel& model,
                               const FederationConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t id = client.shard.client_id;
  if (client.train.size() == 0) fail(ErrorCode::kInvalidArgument, "client " + std::to_string(id) + " has an empty shard");
  model.require_matching(task.snapshot);
  if (id >= task.client_streams.size()) fail(ErrorCode::kInvalidArgument, "round task has no stream for client " + std::to_string(id));

  ClientUpdate up;
  up.client_id = id;
  up.n_k = client.train.size();
  up.params = task.snapshot;
  up.bytes_down = payload_bytes(task.snapshot);

  const std::size_t n = client.train.size();
  const std::size_t spe = steps_per_epoch(n, config.batch_size);
  OptimizerConfig opt = config.optimizer;
  opt.total_steps = config.rounds * config.local_epochs * spe;
  OptState state;
  state.schedule_step = (task.round - 1) * config.local_epochs * spe;

  RandomSource rs(config.seed, task.client_streams[id]);
  RandomSource interface_rs(config.seed, StreamRole::kSplitInterface, {id, task.round});
  const SplitPlan plan = SplitPlan::encoders_on_device();
  const bool proximal = config.aggregator == Aggregator::kFedProx && config.prox_mu > 0.0;

  std::vector<std::size_t> rows;
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    const auto perm = random_permutation(rs, n);
    for (std::size_t s = 0; s < spe; ++s) {
      const std::size_t lo = s * config.batch_size;
      const std::size_t hi = std::min(n, lo + config.batch_size);
      rows.assign(perm.begin() + lo, perm.begin() + hi);
      const Batch batch = gather(client.train, rows);
      LossAndGrads lg;
      if (config.split.enabled) {
        auto step = split_loss_and_grads(model, up.params, batch, plan, config.split.policy, config.loss, interface_rs);
        up.split_bytes += step.bytes_forward + step.bytes_backward;
        lg = std::move(step.loss_and_grads);
      } else {
        lg = loss_and_grads(model, up.params, batch, config.loss);
      }
      if (proximal) {
        // d/dθ (mu/2)||θ - θ_snapshot||^2
        auto g = parameter_view(lg.grads);
        auto p = parameter_view(std::as_const(up.params));
        auto s0 = parameter_view(task.snapshot);
        for (std::size_t k = 0; k < g.size(); ++k)
          for (std::size_t i = 0; i < g[k].second->size(); ++i)
            (*g[k].second)[i] += config.prox_mu * ((*p[k].second)[i] - (*s0[k].second)[i]);
      }
      local_step(up.params, lg.grads, state, opt);
    }
  }
  if (!all_finite(up.params)) fail(ErrorCode::kNumeric, "client " + std::to_string(id) + " diverged");

  const Batch& scored = client.validation ? *client.validation : client.train;
  up.val_metrics = evaluate(model, up.params, scored, config.loss);
  up.val_score = up.val_metrics.accuracy;
  up.bytes_up = payload_bytes(up.params);
  up.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return up;
}

inline constexpr double kQualityEpsilon = 0.01;

/// Importance weights w_k = (n_k / sum_j n_j) * alpha_k, renormalized to sum
/// to one. alpha_k = 1 without quality weighting, otherwise
/// (val_k + eps) / (mean_j val_j + eps).
inline std::vector<double> compute_weights(const std::vector<ClientUpdate>& updates, bool quality_weighting) {
  if (updates.empty()) fail(ErrorCode::kInvalidArgument, "compute_weights: no updates");
  double total_n = 0.0;
  double mean_val = 0.0;
  for (const auto& u : updates) {
    if (u.n_k < 1) fail(ErrorCode::kInvalidArgument, "compute_weights: client " + std::to_string(u.client_id) + " has n_k = 0");
    total_n += static_cast<double>(u.n_k);
    mean_val += u.val_score;
  }
  mean_val /= static_cast<double>(updates.size());
  std::vector<double> w(updates.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const double quality =
        quality_weighting ? (updates[k].val_score + kQualityEpsilon) / (mean_val + kQualityEpsilon) : 1.0;
    w[k] = static_cast<double>(updates[k].n_k) / total_n * quality;
    sum += w[k];
  }
  for (double& x : w) x /= sum;
  return w;
}

/// theta_global = sum_k w_k theta_k, accumulated in the order given (callers
/// pass ascending client id).
inline AdapterSet aggregate(const std::vector<ClientUpdate>& updates, const std::vector<double>& weights) {
  if (updates.empty() || updates.size() != weights.size()) {
    fail(ErrorCode::kInvalidArgument, "aggregate: need one weight per update");
  }
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorCode::kInvalidArgument, "aggregate: invalid weight");
  for (std::size_t k = 1; k < updates.size(); ++k) require_congruent(updates[0].params, updates[k].params, "aggregate");

  AdapterSet out = updates[0].params;
  auto acc = parameter_view(out);
  for (auto& [_, t] : acc)
    for (double& v : t->data()) v *= weights[0];
  for (std::size_t k = 1; k < updates.size(); ++k) {
    auto src = parameter_view(updates[k].params);
    for (std::size_t p = 0; p < acc.size(); ++p) {
      auto d = acc[p].second->data();
      auto s = src[p].second->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += weights[k] * s[i];
    }
  }
  return out;
}

struct ServerOptState {
  std::optional<AdapterSet> momentum;
};

/// Server momentum SGD on the pseudo-gradient prev - aggregated.
inline AdapterSet server_opt_step(const AdapterSet& prev_global, const AdapterSet& aggregated, ServerOptState& state,
                                  double server_lr, double momentum) {
  require_congruent(prev_global, aggregated, "server_opt_step");
  if (!state.momentum) state.momentum = zeros_like(prev_global);
  require_congruent(prev_global, *state.momentum, "server_opt_step");
  AdapterSet next = prev_global;
  auto m = parameter_view(*state.momentum);
  auto p = parameter_view(prev_global);
  auto a = parameter_view(aggregated);
  auto out = parameter_view(next);
  for (std::size_t k = 0; k < m.size(); ++k) {
    for (std::size_t i = 0; i < m[k].second->size(); ++i) {
      const double prev = (*p[k].second)[i], agg = (*a[k].second)[i];
      double& mi = (*m[k].second)[i];
      const double carried = momentum * mi;
      mi = carried + (prev - agg);
      // prev - lr * m, arranged so that lr = 1 without momentum yields agg exactly.
      (*out[k].second)[i] = (1.0 - server_lr) * prev + server_lr * agg - server_lr * carried;
    }
  }
  return next;
}

struct ClientRecord {
  std::size_t client_id = 0;
  std::size_t n_k = 0;
  double weight = 0.0;
  LossBreakdown metrics;  // on the client's validation split after local training
  std::size_t bytes_up = 0;
  std::size_t bytes_down = 0;
  std::size_t split_bytes = 0;
  double wall_ms = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  AdapterSet global;
  LossBreakdown global_metrics;  // pooled validation set
  std::vector<ClientRecord> clients;
  std::size_t server_bytes_up = 0;    // received from all clients
  std::size_t server_bytes_down = 0;  // broadcast to all clients
  double server_wall_ms = 0.0;
};

struct FederationResult {
  AdapterSet initial;
  LossBreakdown initial_metrics;
  std::vector<RoundRecord> history;
  const AdapterSet& final_global() const { return history.empty() ? initial : history.back().global; }
};

/// Union of every client's validation split (training splits when no client
/// holds validation data).
inline Batch pooled_validation(const std::vector<ClientData>& clients) {
  std::vector<const Batch*> parts;
  for (const auto& c : clients)
    if (c.validation) parts.push_back(&*c.validation);
  if (parts.empty())
    for (const auto& c : clients) parts.push_back(&c.train);
  return concat(parts);
}

using RoundObserver = std::function<void(const RoundRecord&)>;

namespace detail {

inline std::vector<ClientUpdate> run_round_clients(const RoundTask& task, const std::vector<ClientData>& clients,
                                                   const ToyModel& model, const FederationConfig& config) {
  std::vector<ClientUpdate> updates(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());
  auto work = [&](std::size_t k) {
    try {
      updates[k] = run_client(task, clients[k], model, config);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(config.workers, clients.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < clients.size(); ++k) work(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < clients.size();) work(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (!errors[k]) continue;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(errors[k]);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    fail(ErrorCode::kClientFailure, "round " + std::to_string(task.round) + ", client " +
                                        std::to_string(clients[k].shard.client_id) + ": " + what);
  }
  return updates;
}

}  // namespace detail

/// Controller loop: broadcast, local training on every client, weighting,
/// aggregation, optional server step, pooled evaluation. Output is a pure
/// function of (model, clients, config) for any worker count.
inline FederationResult run_federation(const ToyModel& model, const std::vector<ClientData>& clients,
                                       const FederationConfig& config, const RoundObserver& observer = {}) {
  validate(config);
  if (clients.size() != config.clients) {
    fail(ErrorCode::kConfig, "expected " + std::to_string(config.clients) + " client shards, got " +
                                 std::to_string(clients.size()));
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (clients[k].shard.client_id != k) fail(ErrorCode::kConfig, "client shards must be ordered by client id");
  }

  FederationResult result;
  RandomSource init_rs(config.seed, StreamRole::kAdapterInit);
  result.initial = model.init_adapters(config.lora_rank, config.lora_alpha, init_rs);
  const Batch pooled = pooled_validation(clients);
  result.initial_metrics = evaluate(model, result.initial, pooled, config.loss);

  const bool quality = config.aggregator == Aggregator::kFusion && config.quality_weighting;
  ServerOptState server_state;
  AdapterSet global = result.initial;
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    RoundTask task;
    task.round = t;
    task.snapshot = global;
    for (std::size_t k = 0; k < clients.size(); ++k) task.client_streams.push_back(client_stream(k, t));

    std::vector<ClientUpdate> updates = detail::run_round_clients(task, clients, model, config);

    const auto server_start = std::chrono::steady_clock::now();
    const auto weights = compute_weights(updates, quality);
    AdapterSet next = aggregate(updates, weights);
    if (config.aggregator == Aggregator::kFedOpt) {
      next = server_opt_step(global, next, server_state, config.server_lr, config.server_momentum);
    }
    global = std::move(next);

    RoundRecord rec;
    rec.round = t;
    rec.global = global;
    rec.global_metrics = evaluate(model, global, pooled, config.loss);
    for (std::size_t k = 0; k < updates.size(); ++k) {
      const auto& u = updates[k];
      rec.clients.push_back({u.client_id, u.n_k, weights[k], u.val_metrics, u.bytes_up, u.bytes_down, u.split_bytes,
                             u.wall_ms});
      rec.server_bytes_up += u.bytes_up;
      rec.server_bytes_down += u.bytes_down;
    }
    rec.server_wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - server_start).count();
    if (observer) observer(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace lorafed
