#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "lorafed/adapter.hpp"
#include "lorafed/error.hpp"
#include "lorafed/random.hpp"
#include "lorafed/tensor.hpp"

namespace lorafed {

struct ToyDims {
  std::size_t d_v = 32;
  std::size_t d_t = 32;
  std::size_t h = 64;
  std::size_t classes = 10;
  std::size_t d_g = 16;

  std::size_t d_align() const { return 2 * h; }
  bool operator==(const ToyDims&) const = default;
};

namespace layers {
inline const std::string kVision = "vision_encoder";
inline const std::string kText = "text_encoder";
inline const std::string kFusion = "fusion";
inline const std::string kUnderstanding = "understanding_head";
inline const std::string kGeneration = "generation_head";
}  // namespace layers

/// One mini-batch (or a whole split) of multimodal samples.
struct Batch {
  Tensor vision;             // n x d_v
  Tensor text;               // n x d_t
  std::vector<int> labels;   // n, in [0, C)
  Tensor gen_targets;        // n x d_g

  std::size_t size() const { return labels.size(); }
};

inline void validate_batch(const Batch& b, const ToyDims& dims) {
  const std::size_t n = b.labels.size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "batch is empty");
  auto check = [&](const Tensor& t, std::size_t cols, const char* what) {
    if (t.ndim() != 2 || t.rows() != n || t.cols() != cols) {
      fail(ErrorCode::kShape, std::string("batch ") + what + " has dims " + dims_to_string(t.dims()) +
                                  ", expected [" + std::to_string(n) + "x" + std::to_string(cols) + "]");
    }
  };
  check(b.vision, dims.d_v, "vision");
  check(b.text, dims.d_t, "text");
  check(b.gen_targets, dims.d_g, "gen_targets");
  for (int y : b.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= dims.classes) {
      fail(ErrorCode::kInvalidArgument, "batch label " + std::to_string(y) + " out of range");
    }
  }
}

/// Copies the selected rows of `src` into a new batch.
inline Batch gather(const Batch& src, std::span<const std::size_t> rows) {
  if (rows.empty()) fail(ErrorCode::kInvalidArgument, "gather: no rows selected");
  auto take = [&](const Tensor& t) {
    const std::size_t cols = t.cols();
    Tensor out(t.name(), {rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = t.row(rows[i]);
      std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
  };
  Batch b;
  b.vision = take(src.vision);
  b.text = take(src.text);
  b.gen_targets = take(src.gen_targets);
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(src.labels[r]);
  return b;
}

/// Row-wise concatenation of batches with identical column layouts.
inline Batch concat(const std::vector<const Batch*>& parts) {
  std::size_t n = 0;
  for (const auto* p : parts) n += p->size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "concat: nothing to concatenate");
  const Batch* first = nullptr;
  for (const auto* p : parts)
    if (p->size()) { first = p; break; }
  auto stack = [&](auto member) {
    const Tensor& proto = first->*member;
    Tensor out(proto.name(), {n, proto.cols()});
    std::size_t at = 0;
    for (const auto* p : parts) {
      if (!p->size()) continue;
      const auto src = (p->*member).data();
      std::copy(src.begin(), src.end(), out.data().begin() + at * proto.cols());
      at += p->size();
    }
    return out;
  };
  Batch b;
  b.vision = stack(&Batch::vision);
  b.text = stack(&Batch::text);
  b.gen_targets = stack(&Batch::gen_targets);
  for (const auto* p : parts) b.labels.insert(b.labels.end(), p->labels.begin(), p->labels.end());
  return b;
}

struct LossBreakdown {
  double loss_u = 0.0;    // mean cross-entropy, nats
  double loss_g = 0.0;    // mean squared error over all generation outputs
  double total = 0.0;     // lambda_u * loss_u + lambda_g * loss_g
  double accuracy = 0.0;  // argmax-correct fraction
};

struct LossWeights {
  double understanding = 1.0;
  double generation = 1.0;
};

/// Frozen "unified multimodal" stand-in: two modality encoders, a fusion block
/// and two heads. Every layer carries an adapter; the weights never change.
class ToyModel {
 public:
  static ToyModel create(const ToyDims& dims, std::uint64_t seed) {
    if (dims.d_v == 0 || dims.d_t == 0 || dims.h == 0 || dims.d_g == 0 || dims.classes < 2) {
      fail(ErrorCode::kInvalidArgument, "ToyModel: invalid dimensions");
    }
    ToyModel m;
    m.dims_ = dims;
    m.registry_ = {
        {layers::kVision, dims.d_v, dims.h, Modality::kVision},
        {layers::kText, dims.d_t, dims.h, Modality::kText},
        {layers::kFusion, 2 * dims.h, dims.h, Modality::kFusion},
        {layers::kUnderstanding, dims.h, dims.classes, Modality::kFusion},
        {layers::kGeneration, dims.h, dims.d_g, Modality::kFusion},
    };
    RandomSource rs(seed, StreamRole::kModel);
    for (const auto& d : m.registry_) {
      Tensor w = sample_gaussian(rs, {d.d_out, d.d_in}, 0.0, 1.0 / std::sqrt(double(d.d_in)), d.name + ".weight");
      m.frozen_t_.push_back(transpose(w));
      m.frozen_.push_back(std::move(w));
    }
    return m;
  }

  const ToyDims& dims() const { return dims_; }
  const std::vector<LayerDescriptor>& registry() const { return registry_; }

  const Tensor& weight(const std::string& layer) const { return frozen_[index_of(layer)]; }
  const Tensor& weight_t(const std::string& layer) const { return frozen_t_[index_of(layer)]; }

  std::size_t frozen_parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : frozen_) n += w.size();
    return n;
  }

  /// FNV-1a over the bytes of every frozen weight.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& w : frozen_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(w.data().data());
      for (std::size_t i = 0; i < w.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

  AdapterSet init_adapters(std::size_t rank, double lora_alpha, RandomSource& rs) const {
    return init_adapter_set(registry_, rank, lora_alpha, dims_.d_align(), rs);
  }

  void require_matching(const AdapterSet& set) const {
    if (set.adapters.size() != registry_.size()) {
      fail(ErrorCode::kCongruence, "adapter set does not match the model registry");
    }
    for (const auto& d : registry_) {
      auto it = set.adapters.find(d.name);
      if (it == set.adapters.end() || it->second.d_in() != d.d_in || it->second.d_out() != d.d_out ||
          it->second.B.cols() != it->second.rank()) {
        fail(ErrorCode::kCongruence, "adapter for layer '" + d.name + "' missing or mis-shaped");
      }
    }
    if (set.alignment_token.ndim() != 1 || set.alignment_token.size() != dims_.d_align()) {
      fail(ErrorCode::kCongruence, "alignment token must have " + std::to_string(dims_.d_align()) + " entries");
    }
  }

 private:
  std::size_t index_of(const std::string& layer) const {
    for (std::size_t i = 0; i < registry_.size(); ++i)
      if (registry_[i].name == layer) return i;
    fail(ErrorCode::kInvalidArgument, "unknown layer '" + layer + "'");
  }

  ToyDims dims_;
  std::vector<LayerDescriptor> registry_;
  std::vector<Tensor> frozen_;
  std::vector<Tensor> frozen_t_;
};

/// Activations kept for the backward pass of one adapted linear layer.
struct LinearCache {
  Tensor input;  // n x d_in
  Tensor low;    // n x r, input * A^T
};

namespace detail {

inline Tensor adapted_linear(const ToyModel& model, const LoraAdapter& ad, const Tensor& x, LinearCache* cache) {
  const Tensor& wt = model.weight_t(ad.layer_name);
  const std::size_t n = x.rows();
  Tensor y(ad.layer_name + ".out", {n, wt.cols()});
  gemm_nn_acc(x.data().data(), wt.data().data(), y.data().data(), n, wt.rows(), wt.cols());
  const Tensor at = transpose(ad.A);
  Tensor low(ad.layer_name + ".low", {n, ad.rank()});
  gemm_nn_acc(x.data().data(), at.data().data(), low.data().data(), n, at.rows(), at.cols());
  Tensor bt = transpose(ad.B);
  const double s = ad.scaling();
  for (double& v : bt.data()) v *= s;
  gemm_nn_acc(low.data().data(), bt.data().data(), y.data().data(), n, bt.rows(), bt.cols());
  if (cache) {
    cache->input = x;
    cache->low = std::move(low);
  }
  return y;
}

// Accumulates dA, dB into `grad` and returns dX when requested.
inline Tensor adapted_linear_backward(const ToyModel& model, const LoraAdapter& ad, const LinearCache& cache,
                                      const Tensor& dy, LoraAdapter& grad, bool want_input_grad) {
  const std::size_t n = dy.rows();
  const double s = ad.scaling();
  Tensor dys = dy;
  for (double& v : dys.data()) v *= s;
  // dB += s * dY^T U
  gemm_tn_acc(dys.data().data(), cache.low.data().data(), grad.B.data().data(), n, ad.d_out(), ad.rank());
  // dU = s * dY B
  Tensor du("du", {n, ad.rank()});
  gemm_nn_acc(dys.data().data(), ad.B.data().data(), du.data().data(), n, ad.d_out(), ad.rank());
  // dA += dU^T X
  gemm_tn_acc(du.data().data(), cache.input.data().data(), grad.A.data().data(), n, ad.rank(), ad.d_in());
  if (!want_input_grad) return Tensor();
  const Tensor& w = model.weight(ad.layer_name);
  Tensor dx("dx", {n, ad.d_in()});
  gemm_nn_acc(dy.data().data(), w.data().data(), dx.data().data(), n, ad.d_out(), ad.d_in());
  gemm_nn_acc(du.data().data(), ad.A.data().data(), dx.data().data(), n, ad.rank(), ad.d_in());
  return dx;
}

inline void tanh_inplace(Tensor& t) {
  for (double& v : t.data()) v = std::tanh(v);
}

// dPre = dOut * (1 - out^2)
inline Tensor tanh_backward(const Tensor& out, const Tensor& dout) {
  Tensor d = dout;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - out[i] * out[i];
  return d;
}

}  // namespace detail

/// Device-side half of the network: the two modality encoders.
struct EncoderCache {
  LinearCache vision;
  LinearCache text;
  Tensor z_vision;  // n x h
  Tensor z_text;    // n x h
};

/// Edge-side half: alignment-token injection, fusion block and both heads.
struct HeadCache {
  Tensor fusion_in;  // n x 2h, concat(z_v, z_t) + token
  LinearCache fusion;
  Tensor fused;      // n x h
  LinearCache understanding;
  LinearCache generation;
  Tensor logits;     // n x C
  Tensor gen_out;    // n x d_g
};

inline EncoderCache encode(const ToyModel& model, const AdapterSet& adapters, const Batch& batch) {
  EncoderCache c;
  c.z_vision = detail::adapted_linear(model, adapters.at(layers::kVision), batch.vision, &c.vision);
  detail::tanh_inplace(c.z_vision);
  c.z_text = detail::adapted_linear(model, adapters.at(layers::kText), batch.text, &c.text);
  detail::tanh_inplace(c.z_text);
  return c;
}

inline HeadCache fuse_and_decode(const ToyModel& model, const AdapterSet& adapters, const Tensor& z_vision,
                                 const Tensor& z_text) {
  const std::size_t n = z_vision.rows();
  const std::size_t h = model.dims().h;
  HeadCache c;
  c.fusion_in = Tensor("fusion_in", {n, 2 * h});
  const auto& token = adapters.alignment_token;
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = c.fusion_in.row(i);
    auto zv = z_vision.row(i);
    auto zt = z_text.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      dst[j] = zv[j] + token[j];
      dst[h + j] = zt[j] + token[h + j];
    }
  }
  c.fused = detail::adapted_linear(model, adapters.at(layers::kFusion), c.fusion_in, &c.fusion);
  detail::tanh_inplace(c.fused);
  c.logits = detail::adapted_linear(model, adapters.at(layers::kUnderstanding), c.fused, &c.understanding);
  c.gen_out = detail::adapted_linear(model, adapters.at(layers::kGeneration), c.fused, &c.generation);
  return c;
}

struct ForwardResult {
  Tensor logits;   // n x C
  Tensor gen_out;  // n x d_g
  EncoderCache encoders;
  HeadCache heads;
};

inline ForwardResult forward(const ToyModel& model, const AdapterSet& adapters, const Batch& batch) {
  validate_batch(batch, model.dims());
  model.require_matching(adapters);
  ForwardResult r;
  r.encoders = encode(model, adapters, batch);
  r.heads = fuse_and_decode(model, adapters, r.encoders.z_vision, r.encoders.z_text);
  r.logits = r.heads.logits;
  r.gen_out = r.heads.gen_out;
  return r;
}

/// Loss values plus the gradient of the total with respect to both head outputs.
struct OutputLoss {
  LossBreakdown breakdown;
  Tensor d_logits;
  Tensor d_gen;
};

inline OutputLoss output_loss(const Tensor& logits, const Tensor& gen_out, const Batch& batch,
                              const LossWeights& weights) {
  if (weights.understanding < 0.0 || weights.generation < 0.0 ||
      (weights.understanding == 0.0 && weights.generation == 0.0)) {
    fail(ErrorCode::kInvalidArgument, "loss weights must be >= 0 and not both zero");
  }
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  const std::size_t dg = gen_out.cols();
  OutputLoss out;
  out.d_logits = Tensor("d_logits", logits.dims());
  out.d_gen = Tensor("d_gen", gen_out.dims());
  double ce = 0.0;
  std::size_t correct = 0;
  std::vector<double> prob(classes);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (z[c] > z[best]) best = c;
    const double top = z[best];
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      prob[c] = std::exp(z[c] - top);
      sum += prob[c];
    }
    const auto y = static_cast<std::size_t>(batch.labels[i]);
    ce += std::log(sum) - (z[y] - top);
    if (best == y) ++correct;
    auto dz = out.d_logits.row(i);
    const double coef = weights.understanding / static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) dz[c] = coef * (prob[c] / sum - (c == y ? 1.0 : 0.0));
  }
  double se = 0.0;
  const double gcoef = 2.0 * weights.generation / static_cast<double>(n * dg);
  for (std::size_t i = 0; i < gen_out.size(); ++i) {
    const double diff = gen_out[i] - batch.gen_targets[i];
    se += diff * diff;
    out.d_gen[i] = gcoef * diff;
  }
  auto& b = out.breakdown;
  b.loss_u = ce / static_cast<double>(n);
  b.loss_g = se / static_cast<double>(n * dg);
  b.total = weights.understanding * b.loss_u + weights.generation * b.loss_g;
  b.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (!std::isfinite(b.total)) fail(ErrorCode::kNumeric, "loss is not finite");
  return out;
}

/// Backward through the edge half. Adds fusion/head/token gradients to `grads`
/// and returns the gradients with respect to the two encoder outputs.
inline std::pair<Tensor, Tensor> heads_backward(const ToyModel& model, const AdapterSet& adapters,
                                                const HeadCache& c, const Tensor& d_logits, const Tensor& d_gen,
                                                AdapterSet& grads) {
  const std::size_t n = d_logits.rows();
  const std::size_t h = model.dims().h;
  Tensor d_fused = detail::adapted_linear_backward(model, adapters.at(layers::kUnderstanding), c.understanding,
                                                   d_logits, grads.at(layers::kUnderstanding), true);
  Tensor d_fused_g = detail::adapted_linear_backward(model, adapters.at(layers::kGeneration), c.generation, d_gen,
                                                     grads.at(layers::kGeneration), true);
  for (std::size_t i = 0; i < d_fused.size(); ++i) d_fused[i] += d_fused_g[i];
  const Tensor d_pre = detail::tanh_backward(c.fused, d_fused);
  const Tensor d_in = detail::adapted_linear_backward(model, adapters.at(layers::kFusion), c.fusion, d_pre,
                                                      grads.at(layers::kFusion), true);
  Tensor dz_v("d_z_vision", {n, h});
  Tensor dz_t("d_z_text", {n, h});
  auto& dtok = grads.alignment_token;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = d_in.row(i);
    auto dv = dz_v.row(i);
    auto dt = dz_t.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      dv[j] = row[j];
      dt[j] = row[h + j];
      dtok[j] += row[j];
      dtok[h + j] += row[h + j];
    }
  }
  return {std::move(dz_v), std::move(dz_t)};
}

/// Backward through the device half given gradients at the encoder outputs.
inline void encoders_backward(const ToyModel& model, const AdapterSet& adapters, const EncoderCache& c,
                              const Tensor& dz_vision, const Tensor& dz_text, AdapterSet& grads) {
  const Tensor dv = detail::tanh_backward(c.z_vision, dz_vision);
  detail::adapted_linear_backward(model, adapters.at(layers::kVision), c.vision, dv, grads.at(layers::kVision), false);
  const Tensor dt = detail::tanh_backward(c.z_text, dz_text);
  detail::adapted_linear_backward(model, adapters.at(layers::kText), c.text, dt, grads.at(layers::kText), false);
}

struct LossAndGrads {
  LossBreakdown loss;
  AdapterSet grads;
};

/// Loss and reverse-mode gradients with respect to every adapter tensor and
/// the alignment token. Frozen weights receive no gradient.
inline LossAndGrads loss_and_grads(const ToyModel& model, const AdapterSet& adapters, const Batch& batch,
                                   const LossWeights& weights = {}) {
  ForwardResult fwd = forward(model, adapters, batch);
  OutputLoss ol = output_loss(fwd.logits, fwd.gen_out, batch, weights);
  LossAndGrads out;
  out.loss = ol.breakdown;
  out.grads = zeros_like(adapters);
  auto [dz_v, dz_t] = heads_backward(model, adapters, fwd.heads, ol.d_logits, ol.d_gen, out.grads);
  encoders_backward(model, adapters, fwd.encoders, dz_v, dz_t, out.grads);
  return out;
}

inline LossBreakdown evaluate(const ToyModel& model, const AdapterSet& adapters, const Batch& batch,
                              const LossWeights& weights = {}) {
  ForwardResult fwd = forward(model, adapters, batch);
  return output_loss(fwd.logits, fwd.gen_out, batch, weights).breakdown;
}

}  // namespace lorafed
