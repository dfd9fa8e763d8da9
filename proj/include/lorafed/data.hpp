#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lorafed/error.hpp"
#include "lorafed/random.hpp"
#include "lorafed/tensor.hpp"
#include "lorafed/toy_model.hpp"

namespace lorafed {

struct DatasetConfig {
  std::size_t samples = 20000;
  std::size_t classes = 10;
  std::size_t d_v = 32;
  std::size_t d_t = 32;
  std::size_t d_g = 16;
  double gen_noise = 0.05;  // half-width of the uniform noise on generation targets
};

/// Synthetic multimodal samples labelled by a hidden linear teacher over the
/// concatenated (vision, text) inputs, so the task is learnable.
struct SyntheticDataset {
  Batch samples;
  std::size_t classes = 0;
  std::uint64_t teacher_seed = 0;
  std::vector<std::size_t> class_histogram;

  std::size_t size() const { return samples.size(); }
};

namespace detail {

inline std::vector<int> teacher_labels(const Tensor& teacher, const Tensor& vision, const Tensor& text) {
  const std::size_t n = vision.rows(), dv = vision.cols(), dt = text.cols();
  const std::size_t classes = teacher.rows();
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = vision.row(i);
    auto t = text.row(i);
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      auto w = teacher.row(c);
      double s = 0.0;
      for (std::size_t j = 0; j < dv; ++j) s += w[j] * v[j];
      for (std::size_t j = 0; j < dt; ++j) s += w[dv + j] * t[j];
      if (c == 0 || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace detail

/// Inputs ~ N(0, 1); label = argmax of teacher logits; generation target is a
/// fixed linear map of the inputs plus uniform noise in [-gen_noise, gen_noise].
/// A teacher that leaves some class empty is redrawn.
inline SyntheticDataset generate_dataset(const DatasetConfig& cfg, RandomSource& rs) {
  if (cfg.classes < 2) fail(ErrorCode::kInvalidArgument, "generate_dataset: need at least 2 classes");
  if (cfg.samples < 1) fail(ErrorCode::kInvalidArgument, "generate_dataset: need at least 1 sample");
  if (cfg.samples < cfg.classes) {
    std::clog << "warning: " << cfg.samples << " samples cannot cover " << cfg.classes << " classes\n";
  }
  const std::size_t n = cfg.samples;
  const std::size_t d_in = cfg.d_v + cfg.d_t;

  SyntheticDataset ds;
  ds.classes = cfg.classes;
  ds.samples.vision = sample_gaussian(rs, {n, cfg.d_v}, 0.0, 1.0, "vision");
  ds.samples.text = sample_gaussian(rs, {n, cfg.d_t}, 0.0, 1.0, "text");

  const bool can_cover = n >= cfg.classes;
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t teacher_seed = rs.next_u64();
    RandomSource trs(teacher_seed, StreamRole::kTeacher);
    Tensor teacher = sample_gaussian(trs, {cfg.classes, d_in}, 0.0, 1.0, "teacher");
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      auto w = teacher.row(c);
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : w) x /= norm;
    }
    auto labels = detail::teacher_labels(teacher, ds.samples.vision, ds.samples.text);
    std::vector<std::size_t> hist(cfg.classes, 0);
    for (int y : labels) ++hist[static_cast<std::size_t>(y)];
    const bool covered = std::all_of(hist.begin(), hist.end(), [](std::size_t c) { return c > 0; });
    if (covered || !can_cover || attempt >= 1000) {
      if (can_cover && !covered) fail(ErrorCode::kNumeric, "generate_dataset: no teacher covers every class");
      ds.teacher_seed = teacher_seed;
      ds.samples.labels = std::move(labels);
      ds.class_histogram = std::move(hist);

      Tensor mix = sample_gaussian(trs, {cfg.d_g, d_in}, 0.0, 1.0 / std::sqrt(double(d_in)), "gen_map");
      ds.samples.gen_targets = Tensor("gen_targets", {n, cfg.d_g});
      for (std::size_t i = 0; i < n; ++i) {
        auto v = ds.samples.vision.row(i);
        auto t = ds.samples.text.row(i);
        auto g = ds.samples.gen_targets.row(i);
        for (std::size_t o = 0; o < cfg.d_g; ++o) {
          auto w = mix.row(o);
          double s = 0.0;
          for (std::size_t j = 0; j < cfg.d_v; ++j) s += w[j] * v[j];
          for (std::size_t j = 0; j < cfg.d_t; ++j) s += w[cfg.d_v + j] * t[j];
          g[o] = s + trs.uniform(-cfg.gen_noise, cfg.gen_noise);
        }
      }
      return ds;
    }
  }
}

/// Per-class client proportions drawn from a symmetric Dirichlet.
struct PartitionSpec {
  double dirichlet_alpha = 1.0;
  std::size_t clients = 1;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> proportions;  // [client][class]
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> class_histogram;

  std::size_t n_k() const { return train.size(); }
  std::size_t size() const { return train.size() + validation.size(); }
};

struct Partition {
  PartitionSpec spec;
  std::vector<ClientShard> shards;
};

namespace detail {

// Largest-remainder apportionment of `total` items by `weights`; ties go to the
// lower index.
inline std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k, ++assigned) ++counts[order[i]];
  return counts;
}

}  // namespace detail

/// Dirichlet label-skew partition: for each class c, p[.][c] ~ Dir(alpha) and
/// that class's (shuffled) indices are split by those fractions. Every client
/// ends up non-empty. Each shard holds out floor(10%) of its samples for
/// validation.
inline Partition partition(std::span<const int> labels, std::size_t classes, std::size_t clients, double alpha,
                           std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (clients == 0) fail(ErrorCode::kInvalidArgument, "partition: need at least one client");
  if (!(alpha > 0.0)) fail(ErrorCode::kInvalidArgument, "partition: dirichlet alpha must be positive");
  if (clients > n) {
    fail(ErrorCode::kInvalidArgument, "partition: " + std::to_string(clients) + " clients exceed " +
                                          std::to_string(n) + " samples");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) fail(ErrorCode::kInvalidArgument, "partition: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }

  Partition out;
  out.spec.dirichlet_alpha = alpha;
  out.spec.clients = clients;
  out.spec.seed = seed;

  std::vector<std::vector<std::size_t>> counts;  // [class][client]
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    RandomSource rs(seed, StreamRole::kPartition, {attempt});
    std::vector<std::vector<double>> p(clients, std::vector<double>(classes));
    counts.assign(classes, {});
    std::vector<std::size_t> totals(clients, 0);
    for (std::size_t c = 0; c < classes; ++c) {
      const auto draw = sample_dirichlet(rs, alpha, clients);
      for (std::size_t k = 0; k < clients; ++k) p[k][c] = draw[k];
      counts[c] = detail::apportion(draw, by_class[c].size());
      for (std::size_t k = 0; k < clients; ++k) totals[k] += counts[c][k];
    }
    out.spec.proportions = std::move(p);
    if (std::all_of(totals.begin(), totals.end(), [](std::size_t t) { return t > 0; })) break;
  }

  std::vector<std::vector<std::size_t>> members(clients);
  RandomSource shuffle_rs(seed, StreamRole::kPartition, {1u << 20});
  for (std::size_t c = 0; c < classes; ++c) {
    auto idx = by_class[c];
    shuffle(shuffle_rs, idx);
    std::size_t at = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      members[k].insert(members[k].end(), idx.begin() + at, idx.begin() + at + counts[c][k]);
      at += counts[c][k];
    }
  }
  // Empty-client repair: move one sample from the largest shard.
  for (std::size_t k = 0; k < clients; ++k) {
    if (!members[k].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t j = 1; j < clients; ++j)
      if (members[j].size() > members[largest].size()) largest = j;
    members[k].push_back(members[largest].back());
    members[largest].pop_back();
  }

  out.shards.resize(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    auto& shard = out.shards[k];
    shard.client_id = k;
    shard.class_histogram.assign(classes, 0);
    for (std::size_t i : members[k]) ++shard.class_histogram[static_cast<std::size_t>(labels[i])];
    RandomSource vrs(seed, StreamRole::kValidationSplit, {k});
    auto idx = members[k];
    std::sort(idx.begin(), idx.end());
    shuffle(vrs, idx);
    const std::size_t n_val = idx.size() / 10;
    shard.validation.assign(idx.begin(), idx.begin() + n_val);
    shard.train.assign(idx.begin() + n_val, idx.end());
    std::sort(shard.validation.begin(), shard.validation.end());
    std::sort(shard.train.begin(), shard.train.end());
  }
  return out;
}

inline Partition partition(const SyntheticDataset& ds, std::size_t clients, double alpha, std::uint64_t seed) {
  return partition(ds.samples.labels, ds.classes, clients, alpha, seed);
}

/// Mean over classes of (max_k p[k][c] - 1/K) / (1 - 1/K): 0 for uniform
/// proportions, 1 when every class lives on a single client.
inline double heterogeneity_index(const PartitionSpec& spec) {
  const std::size_t k = spec.clients;
  if (k <= 1 || spec.proportions.empty()) return 0.0;
  const std::size_t classes = spec.proportions.front().size();
  if (classes == 0) return 0.0;
  const double floor = 1.0 / static_cast<double>(k);
  double acc = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double top = 0.0;
    for (std::size_t j = 0; j < k; ++j) top = std::max(top, spec.proportions[j][c]);
    acc += (top - floor) / (1.0 - floor);
  }
  return std::clamp(acc / static_cast<double>(classes), 0.0, 1.0);
}

/// Client-specific affine distortion of the vision inputs only:
/// v' = v + strength * (R_k v + b_k), with R_k, b_k drawn from the client's
/// own stream. strength == 0 returns the samples untouched.
inline Batch modality_shift(const Batch& samples, std::size_t client_id, double strength, std::uint64_t seed = 0) {
  if (strength < 0.0) fail(ErrorCode::kInvalidArgument, "modality_shift: strength must be >= 0");
  if (strength == 0.0) return samples;
  const std::size_t dv = samples.vision.cols();
  RandomSource rs(seed, StreamRole::kModalityShift, {client_id});
  const Tensor mix = sample_gaussian(rs, {dv, dv}, 0.0, 1.0 / std::sqrt(double(dv)), "shift");
  const Tensor bias = sample_gaussian(rs, {dv}, 0.0, 1.0, "shift_bias");
  Batch out = samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto v = samples.vision.row(i);
    auto o = out.vision.row(i);
    for (std::size_t r = 0; r < dv; ++r) {
      auto m = mix.row(r);
      double s = bias[r];
      for (std::size_t j = 0; j < dv; ++j) s += m[j] * v[j];
      o[r] = v[r] + strength * s;
    }
  }
  return out;
}

/// A client's materialized local data (after any modality shift).
struct ClientData {
  ClientShard shard;
  Batch train;
  std::optional<Batch> validation;
};

inline std::vector<ClientData> materialize_clients(const SyntheticDataset& ds, const Partition& part,
                                                   double shift_strength = 0.0, std::uint64_t seed = 0) {
  std::vector<ClientData> out;
  out.reserve(part.shards.size());
  for (const auto& shard : part.shards) {
    if (shard.train.empty()) fail(ErrorCode::kInvalidArgument, "client " + std::to_string(shard.client_id) + " has no training data");
    ClientData cd;
    cd.shard = shard;
    cd.train = modality_shift(gather(ds.samples, shard.train), shard.client_id, shift_strength, seed);
    if (!shard.validation.empty()) {
      cd.validation = modality_shift(gather(ds.samples, shard.validation), shard.client_id, shift_strength, seed);
    }
    out.push_back(std::move(cd));
  }
  return out;
}

}  // namespace lorafed
