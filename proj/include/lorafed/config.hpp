#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lorafed/error.hpp"
#include "lorafed/federation.hpp"

namespace lorafed {

/// Every knob of one experiment. Field names mirror the dotted config keys.
struct ExperimentConfig {
  // federation.*
  std::size_t clients = 4;
  std::size_t rounds = 30;
  std::size_t local_epochs = 5;
  Aggregator aggregator = Aggregator::kFusion;
  double prox_mu = 0.01;
  double server_lr = 1.0;
  double server_momentum = 0.9;
  bool quality_weighting = true;
  // data.*
  std::size_t samples = 20000;
  std::size_t classes = 10;
  double dirichlet_alpha = 1.0;
  double modality_shift = 0.0;
  // model.*
  ToyDims dims;
  std::size_t lora_rank = 16;
  double lora_alpha = 32.0;
  // opt.*
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double lr = 1e-2;
  double weight_decay = 0.05;
  std::size_t batch_size = 32;
  bool cosine_schedule = true;
  // loss.*
  double lambda_u = 1.0;
  double lambda_g = 1.0;
  // split.*, privacy.*, compress.*
  bool split_enabled = false;
  double privacy_sigma = 0.0;
  double compress_topk = 1.0;
  unsigned compress_bits = 0;
  std::uint64_t seed = 0;

  /// Desk-scale defaults used throughout the test suite.
  static ExperimentConfig toy_preset() { return {}; }

  /// The published training recipe mapped onto the toy network: 100 rounds,
  /// AdamW at 2e-5. Far too small a learning rate for the toy task.
  static ExperimentConfig paper_preset() {
    ExperimentConfig c;
    c.clients = 8;
    c.rounds = 100;
    c.dirichlet_alpha = 0.5;
    c.lr = 2e-5;
    return c;
  }
};

inline std::vector<std::string> config_keys() {
  return {"federation.clients", "federation.rounds", "federation.local_epochs", "federation.aggregator",
          "federation.prox_mu", "federation.server_lr", "federation.server_momentum",
          "federation.quality_weighting", "data.samples", "data.classes", "data.dirichlet_alpha",
          "data.modality_shift", "model.dims.d_v", "model.dims.d_t", "model.dims.h", "model.dims.C",
          "model.dims.d_g", "model.lora_rank", "model.lora_alpha", "opt.optimizer", "opt.lr",
          "opt.weight_decay", "opt.batch_size", "opt.cosine_schedule", "loss.lambda_u", "loss.lambda_g",
          "split.enabled", "privacy.sigma", "compress.topk", "compress.bits", "seed"};
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(ErrorCode::kConfig, key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  double out = 0.0;
  in >> out;
  if (in.fail() || !in.eof() || !std::isfinite(out)) fail(ErrorCode::kConfig, key + ": expected a real number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  fail(ErrorCode::kConfig, key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Sets one dotted key from its textual value. Unknown keys and ill-typed
/// values are rejected.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_real;
  using detail::parse_uint;
  const std::string& v = value;
  if (key == "federation.clients") c.clients = parse_uint(key, v);
  else if (key == "federation.rounds") c.rounds = parse_uint(key, v);
  else if (key == "federation.local_epochs") c.local_epochs = parse_uint(key, v);
  else if (key == "federation.aggregator") c.aggregator = parse_aggregator(v);
  else if (key == "federation.prox_mu") c.prox_mu = parse_real(key, v);
  else if (key == "federation.server_lr") c.server_lr = parse_real(key, v);
  else if (key == "federation.server_momentum") c.server_momentum = parse_real(key, v);
  else if (key == "federation.quality_weighting") c.quality_weighting = parse_bool(key, v);
  else if (key == "data.samples") c.samples = parse_uint(key, v);
  else if (key == "data.classes") c.classes = c.dims.classes = parse_uint(key, v);
  else if (key == "data.dirichlet_alpha") c.dirichlet_alpha = parse_real(key, v);
  else if (key == "data.modality_shift") c.modality_shift = parse_real(key, v);
  else if (key == "model.dims.d_v") c.dims.d_v = parse_uint(key, v);
  else if (key == "model.dims.d_t") c.dims.d_t = parse_uint(key, v);
  else if (key == "model.dims.h") c.dims.h = parse_uint(key, v);
  else if (key == "model.dims.C") c.dims.classes = c.classes = parse_uint(key, v);
  else if (key == "model.dims.d_g") c.dims.d_g = parse_uint(key, v);
  else if (key == "model.lora_rank") c.lora_rank = parse_uint(key, v);
  else if (key == "model.lora_alpha") c.lora_alpha = parse_real(key, v);
  else if (key == "opt.optimizer") {
    if (v == "adamw") c.optimizer = OptimizerKind::kAdamW;
    else if (v == "sgd") c.optimizer = OptimizerKind::kSgd;
    else fail(ErrorCode::kConfig, key + ": expected adamw or sgd, got '" + v + "'");
  } else if (key == "opt.lr") c.lr = parse_real(key, v);
  else if (key == "opt.weight_decay") c.weight_decay = parse_real(key, v);
  else if (key == "opt.batch_size") c.batch_size = parse_uint(key, v);
  else if (key == "opt.cosine_schedule") c.cosine_schedule = parse_bool(key, v);
  else if (key == "loss.lambda_u") c.lambda_u = parse_real(key, v);
  else if (key == "loss.lambda_g") c.lambda_g = parse_real(key, v);
  else if (key == "split.enabled") c.split_enabled = parse_bool(key, v);
  else if (key == "privacy.sigma") c.privacy_sigma = parse_real(key, v);
  else if (key == "compress.topk") c.compress_topk = parse_real(key, v);
  else if (key == "compress.bits") c.compress_bits = static_cast<unsigned>(parse_uint(key, v));
  else if (key == "seed") c.seed = parse_uint(key, v);
  else fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
}

inline void validate(const ExperimentConfig& c) {
  if (c.clients < 1) fail(ErrorCode::kConfig, "federation.clients must be >= 1");
  if (c.samples < 1) fail(ErrorCode::kConfig, "data.samples must be >= 1");
  if (c.classes < 2) fail(ErrorCode::kConfig, "data.classes must be >= 2");
  if (c.clients > c.samples) fail(ErrorCode::kConfig, "federation.clients exceeds data.samples");
  if (!(c.dirichlet_alpha > 0.0)) fail(ErrorCode::kConfig, "data.dirichlet_alpha must be positive");
  if (c.modality_shift < 0.0) fail(ErrorCode::kConfig, "data.modality_shift must be >= 0");
  if (c.dims.d_v == 0 || c.dims.d_t == 0 || c.dims.h == 0 || c.dims.d_g == 0) fail(ErrorCode::kConfig, "model dims must be positive");
  if (c.lora_rank < 1) fail(ErrorCode::kConfig, "model.lora_rank must be >= 1");
  if (!(c.lora_alpha > 0.0)) fail(ErrorCode::kConfig, "model.lora_alpha must be positive");
  if (c.lr < 0.0) fail(ErrorCode::kConfig, "opt.lr must be >= 0");
  if (c.weight_decay < 0.0) fail(ErrorCode::kConfig, "opt.weight_decay must be >= 0");
  if (c.batch_size < 1) fail(ErrorCode::kConfig, "opt.batch_size must be >= 1");
  if (c.lambda_u < 0.0 || c.lambda_g < 0.0 || (c.lambda_u == 0.0 && c.lambda_g == 0.0)) {
    fail(ErrorCode::kConfig, "loss weights must be >= 0 and not both zero");
  }
  if (c.prox_mu < 0.0) fail(ErrorCode::kConfig, "federation.prox_mu must be >= 0");
  if (!(c.server_lr > 0.0)) fail(ErrorCode::kConfig, "federation.server_lr must be positive");
  if (c.server_momentum < 0.0 || c.server_momentum >= 1.0) fail(ErrorCode::kConfig, "federation.server_momentum must lie in [0, 1)");
  try {
    validate_policy({c.privacy_sigma, c.compress_topk, c.compress_bits});
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
}

inline FederationConfig to_federation_config(const ExperimentConfig& c, std::size_t workers = 1) {
  FederationConfig f;
  f.clients = c.clients;
  f.rounds = c.rounds;
  f.local_epochs = c.local_epochs;
  f.batch_size = c.batch_size;
  f.aggregator = c.aggregator;
  f.prox_mu = c.prox_mu;
  f.server_lr = c.server_lr;
  f.server_momentum = c.server_momentum;
  f.quality_weighting = c.quality_weighting;
  f.seed = c.seed;
  f.lora_rank = c.lora_rank;
  f.lora_alpha = c.lora_alpha;
  f.optimizer.kind = c.optimizer;
  f.optimizer.lr = c.lr;
  f.optimizer.weight_decay = c.weight_decay;
  f.optimizer.cosine_schedule = c.cosine_schedule;
  f.loss = {c.lambda_u, c.lambda_g};
  f.split.enabled = c.split_enabled;
  f.split.policy = {c.privacy_sigma, c.compress_topk, c.compress_bits};
  f.workers = workers;
  return f;
}

/// Canonical `key = value` rendering of every setting, in config_keys() order.
inline std::string canonical_string(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto kv = [&](const char* k, const auto& v) { os << k << " = " << v << '\n'; };
  kv("federation.clients", c.clients);
  kv("federation.rounds", c.rounds);
  kv("federation.local_epochs", c.local_epochs);
  kv("federation.aggregator", to_string(c.aggregator));
  kv("federation.prox_mu", c.prox_mu);
  kv("federation.server_lr", c.server_lr);
  kv("federation.server_momentum", c.server_momentum);
  kv("federation.quality_weighting", c.quality_weighting ? "true" : "false");
  kv("data.samples", c.samples);
  kv("data.classes", c.classes);
  kv("data.dirichlet_alpha", c.dirichlet_alpha);
  kv("data.modality_shift", c.modality_shift);
  kv("model.dims.d_v", c.dims.d_v);
  kv("model.dims.d_t", c.dims.d_t);
  kv("model.dims.h", c.dims.h);
  kv("model.dims.C", c.dims.classes);
  kv("model.dims.d_g", c.dims.d_g);
  kv("model.lora_rank", c.lora_rank);
  kv("model.lora_alpha", c.lora_alpha);
  kv("opt.optimizer", c.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd");
  kv("opt.lr", c.lr);
  kv("opt.weight_decay", c.weight_decay);
  kv("opt.batch_size", c.batch_size);
  kv("opt.cosine_schedule", c.cosine_schedule ? "true" : "false");
  kv("loss.lambda_u", c.lambda_u);
  kv("loss.lambda_g", c.lambda_g);
  kv("split.enabled", c.split_enabled ? "true" : "false");
  kv("privacy.sigma", c.privacy_sigma);
  kv("compress.topk", c.compress_topk);
  kv("compress.bits", c.compress_bits);
  kv("seed", c.seed);
  return os.str();
}

inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_checksum(const ExperimentConfig& c) { return fnv1a_hex(canonical_string(c)); }

/// A parsed config file: `key = value` lines, `#` comments. A value may be a
/// comma-separated list (optionally in brackets); only sweep axes accept lists.
struct ConfigFile {
  std::string preset = "toy";
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
};

inline std::vector<std::string> split_list(const std::string& raw) {
  std::string body = detail::trim(raw);
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') fail(ErrorCode::kConfig, "unterminated list '" + raw + "'");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::string> items;
  std::stringstream ss(body);
  for (std::string item; std::getline(ss, item, ',');) {
    item = detail::trim(item);
    if (item.empty()) fail(ErrorCode::kConfig, "empty list element in '" + raw + "'");
    items.push_back(item);
  }
  if (items.empty()) fail(ErrorCode::kConfig, "empty value");
  return items;
}

inline ConfigFile parse_config_text(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value != "toy" && value != "paper") fail(ErrorCode::kConfig, "preset must be 'toy' or 'paper'");
      cf.preset = value;
      continue;
    }
    const auto keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": unknown config key '" + key + "'");
    }
    for (const auto& [k, _] : cf.entries)
      if (k == key) fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    cf.entries.emplace_back(key, split_list(value));
  }
  return cf;
}

inline ConfigFile load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline ExperimentConfig preset_config(const std::string& name) {
  if (name == "toy") return ExperimentConfig::toy_preset();
  if (name == "paper") return ExperimentConfig::paper_preset();
  fail(ErrorCode::kConfig, "unknown preset '" + name + "'");
}

/// Resolves a config file whose values are all scalars.
inline ExperimentConfig resolve_scalar_config(const ConfigFile& cf) {
  ExperimentConfig c = preset_config(cf.preset);
  for (const auto& [key, values] : cf.entries) {
    if (values.size() != 1) fail(ErrorCode::kConfig, key + ": list values are only allowed in sweeps");
    apply_setting(c, key, values.front());
  }
  validate(c);
  return c;
}

}  // namespace lorafed
