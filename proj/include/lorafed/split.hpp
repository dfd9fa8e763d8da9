#pragma once

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lorafed/adapter.hpp"
#include "lorafed/error.hpp"
#include "lorafed/random.hpp"
#include "lorafed/tensor.hpp"
#include "lorafed/toy_model.hpp"

namespace lorafed {

/// Which layers run on the device and which on the edge. The alignment token
/// always lives with the fusion block on the edge.
struct SplitPlan {
  std::set<std::string> device_layers;
  std::set<std::string> edge_layers;

  static SplitPlan encoders_on_device() {
    return {{layers::kVision, layers::kText}, {layers::kFusion, layers::kUnderstanding, layers::kGeneration}};
  }
};

/// The toy network has a single admissible cut, after the modality encoders.
inline void validate_plan(const SplitPlan& plan, const ToyModel& model) {
  std::set<std::string> registry;
  for (const auto& d : model.registry()) registry.insert(d.name);
  std::set<std::string> both;
  std::set_union(plan.device_layers.begin(), plan.device_layers.end(), plan.edge_layers.begin(),
                 plan.edge_layers.end(), std::inserter(both, both.end()));
  std::vector<std::string> overlap;
  std::set_intersection(plan.device_layers.begin(), plan.device_layers.end(), plan.edge_layers.begin(),
                        plan.edge_layers.end(), std::back_inserter(overlap));
  if (both != registry || !overlap.empty()) {
    fail(ErrorCode::kInvalidArgument, "split plan does not partition the model registry");
  }
  const auto expected = SplitPlan::encoders_on_device();
  if (plan.device_layers != expected.device_layers) {
    fail(ErrorCode::kInvalidArgument, "split plan: only the encoder/fusion cut is supported by this model");
  }
}

/// Treatment applied to every tensor that crosses the device/edge cut, in
/// both directions: top-k sparsification, then uniform quantization, then
/// Gaussian noise.
struct InterfacePolicy {
  double noise_sigma = 0.0;
  double topk_fraction = 1.0;
  unsigned quant_bits = 0;  // 0 = off, else 2..16

  bool is_identity() const { return noise_sigma == 0.0 && topk_fraction == 1.0 && quant_bits == 0; }
};

inline void validate_policy(const InterfacePolicy& p) {
  if (!(p.noise_sigma >= 0.0) || !std::isfinite(p.noise_sigma)) {
    fail(ErrorCode::kInvalidArgument, "interface policy: noise sigma must be finite and >= 0");
  }
  if (!(p.topk_fraction > 0.0 && p.topk_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "interface policy: topk fraction must lie in (0, 1]");
  }
  if (p.quant_bits != 0 && (p.quant_bits < 2 || p.quant_bits > 16)) {
    fail(ErrorCode::kInvalidArgument, "interface policy: quantization bits must be 0 (off) or 2..16, got " +
                                          std::to_string(p.quant_bits));
  }
}

struct CompressResult {
  Tensor values;  // what the receiver reconstructs
  std::size_t payload_bytes = 0;
  std::size_t kept = 0;
  double max_abs = 0.0;  // quantizer range M
  double step = 0.0;     // quantizer step, 0 when quantization is off
};

/// Wire size of one crossing: the cheaper of a dense encoding and a sparse
/// (value + 32-bit index) encoding. Values are 32 bits unless quantized.
inline std::size_t interface_payload_bytes(std::size_t length, std::size_t kept, unsigned quant_bits) {
  const std::size_t value_bits = quant_bits ? quant_bits : 32;
  const std::size_t dense = (length * value_bits + 7) / 8;
  if (kept >= length) return dense;
  const std::size_t sparse = (kept * (value_bits + 32) + 7) / 8;
  return std::min(dense, sparse);
}

inline std::size_t topk_count(std::size_t length, double fraction) {
  const double exact = fraction * static_cast<double>(length);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * static_cast<double>(length)));
  return std::clamp<std::size_t>(k, 1, length);
}

inline CompressResult compress(const Tensor& x, const InterfacePolicy& policy, RandomSource& rs) {
  validate_policy(policy);
  CompressResult r;
  r.values = x;
  const std::size_t len = x.size();
  r.kept = len;
  if (policy.is_identity()) {
    r.payload_bytes = 4 * len;
    return r;
  }

  std::vector<std::size_t> kept_idx(len);
  std::iota(kept_idx.begin(), kept_idx.end(), std::size_t{0});
  const bool sparse = policy.topk_fraction < 1.0;
  if (sparse) {
    const std::size_t k = topk_count(len, policy.topk_fraction);
    auto by_magnitude = [&](std::size_t a, std::size_t b) {
      const double ma = std::abs(x[a]), mb = std::abs(x[b]);
      return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(kept_idx.begin(), kept_idx.begin() + static_cast<std::ptrdiff_t>(k - 1), kept_idx.end(),
                     by_magnitude);
    kept_idx.resize(k);
    std::sort(kept_idx.begin(), kept_idx.end());
    std::vector<double> dense(len, 0.0);
    for (std::size_t i : kept_idx) dense[i] = x[i];
    std::copy(dense.begin(), dense.end(), r.values.data().begin());
    r.kept = k;
  }

  if (policy.quant_bits) {
    double m = 0.0;
    for (std::size_t i : kept_idx) m = std::max(m, std::abs(x[i]));
    r.max_abs = m;
    if (m > 0.0) {
      const double levels = std::ldexp(1.0, static_cast<int>(policy.quant_bits)) - 1.0;
      const double step = 2.0 * m / levels;
      r.step = step;
      for (std::size_t i : kept_idx) {
        const double v = x[i];
        const double q = std::clamp(std::nearbyint((v + m) / step), 0.0, levels);
        double best = -m + q * step;
        for (double cand : {q - 1.0, q + 1.0}) {
          if (cand < 0.0 || cand > levels) continue;
          const double alt = -m + cand * step;
          if (std::abs(v - alt) < std::abs(v - best)) best = alt;
        }
        r.values[i] = best;
      }
    }
  }

  if (policy.noise_sigma > 0.0) {
    for (std::size_t i : kept_idx) r.values[i] += rs.normal(0.0, policy.noise_sigma);
  }
  r.payload_bytes = interface_payload_bytes(len, r.kept, policy.quant_bits);
  return r;
}

/// Forward state of one split execution, held by the client's worker.
struct SplitCache {
  EncoderCache device;
  HeadCache edge;
  std::size_t bytes_forward = 0;
  bool valid = false;
};

struct SplitForwardResult {
  Tensor logits;
  Tensor gen_out;
  SplitCache cache;
};

/// Device computes the encoder outputs, the interface compresses each, and the
/// edge runs fusion and both heads on what it received.
inline SplitForwardResult split_forward(const ToyModel& model, const AdapterSet& adapters, const Batch& batch,
                                        const SplitPlan& plan, const InterfacePolicy& policy, RandomSource& rs) {
  validate_plan(plan, model);
  validate_batch(batch, model.dims());
  model.require_matching(adapters);
  SplitForwardResult r;
  r.cache.device = encode(model, adapters, batch);
  const auto zv = compress(r.cache.device.z_vision, policy, rs);
  const auto zt = compress(r.cache.device.z_text, policy, rs);
  r.cache.bytes_forward = zv.payload_bytes + zt.payload_bytes;
  r.cache.edge = fuse_and_decode(model, adapters, zv.values, zt.values);
  r.cache.valid = true;
  r.logits = r.cache.edge.logits;
  r.gen_out = r.cache.edge.gen_out;
  return r;
}

/// Gradients the edge sends back across the cut.
struct CutGradients {
  Tensor d_z_vision;
  Tensor d_z_text;
};

struct DeviceGradients {
  AdapterSet grads;  // only the device-side adapters, no alignment token
  std::size_t bytes_backward = 0;
};

/// Compresses the cut gradients and backpropagates them through the device
/// encoders.
inline DeviceGradients split_backward(const ToyModel& model, const AdapterSet& adapters, const SplitCache& cache,
                                      const CutGradients& cut, const SplitPlan& plan, const InterfacePolicy& policy,
                                      RandomSource& rs) {
  if (!cache.valid) fail(ErrorCode::kInvalidArgument, "split_backward: no forward cache");
  validate_plan(plan, model);
  const auto gv = compress(cut.d_z_vision, policy, rs);
  const auto gt = compress(cut.d_z_text, policy, rs);
  AdapterSet full = zeros_like(adapters);
  encoders_backward(model, adapters, cache.device, gv.values, gt.values, full);
  DeviceGradients out;
  for (const auto& name : plan.device_layers) out.grads.adapters.emplace(name, std::move(full.at(name)));
  out.bytes_backward = gv.payload_bytes + gt.payload_bytes;
  return out;
}

struct SplitStepResult {
  LossAndGrads loss_and_grads;
  std::size_t bytes_forward = 0;
  std::size_t bytes_backward = 0;
};

/// Full split training step: labels and the loss live on the edge.
inline SplitStepResult split_loss_and_grads(const ToyModel& model, const AdapterSet& adapters, const Batch& batch,
                                            const SplitPlan& plan, const InterfacePolicy& policy,
                                            const LossWeights& weights, RandomSource& rs) {
  SplitForwardResult fwd = split_forward(model, adapters, batch, plan, policy, rs);
  OutputLoss ol = output_loss(fwd.logits, fwd.gen_out, batch, weights);
  SplitStepResult r;
  r.loss_and_grads.loss = ol.breakdown;
  r.loss_and_grads.grads = zeros_like(adapters);
  auto [dz_v, dz_t] = heads_backward(model, adapters, fwd.cache.edge, ol.d_logits, ol.d_gen, r.loss_and_grads.grads);
  DeviceGradients dev = split_backward(model, adapters, fwd.cache, {std::move(dz_v), std::move(dz_t)}, plan, policy, rs);
  for (auto& [name, g] : dev.grads.adapters) r.loss_and_grads.grads.at(name) = std::move(g);
  r.bytes_forward = fwd.cache.bytes_forward;
  r.bytes_backward = dev.bytes_backward;
  return r;
}

}  // namespace lorafed
