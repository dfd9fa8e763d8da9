#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorafed/error.hpp"
#include "lorafed/random.hpp"
#include "lorafed/tensor.hpp"

namespace lorafed {

enum class Modality { kVision, kText, kFusion };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kVision: return "vision";
    case Modality::kText: return "text";
    case Modality::kFusion: return "fusion";
  }
  return "unknown";
}

/// A frozen linear layer that receives an adapter.
struct LayerDescriptor {
  std::string name;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  Modality modality = Modality::kFusion;
};

inline constexpr std::string_view kAlignmentTokenName = "alignment_token";

/// Low-rank residual B*A over a frozen weight W0 (d_out x d_in); the adapted
/// map is W0 + (lora_alpha / rank) * B * A.
struct LoraAdapter {
  std::string layer_name;
  Modality modality = Modality::kFusion;
  Tensor A;  // rank x d_in
  Tensor B;  // d_out x rank
  double lora_alpha = 1.0;

  std::size_t rank() const { return A.rows(); }
  std::size_t d_in() const { return A.cols(); }
  std::size_t d_out() const { return B.rows(); }
  double scaling() const { return lora_alpha / static_cast<double>(rank()); }
  std::size_t parameter_count() const { return A.size() + B.size(); }

  std::string a_name() const { return layer_name + ".lora_A"; }
  std::string b_name() const { return layer_name + ".lora_B"; }
};

/// The full trainable (and transmitted) state: one adapter per frozen layer
/// plus the shared alignment token. A null alignment token means absent.
struct AdapterSet {
  std::map<std::string, LoraAdapter> adapters;
  Tensor alignment_token;

  const LoraAdapter& at(const std::string& layer) const {
    auto it = adapters.find(layer);
    if (it == adapters.end()) fail(ErrorCode::kInvalidArgument, "no adapter for layer '" + layer + "'");
    return it->second;
  }
  LoraAdapter& at(const std::string& layer) {
    auto it = adapters.find(layer);
    if (it == adapters.end()) fail(ErrorCode::kInvalidArgument, "no adapter for layer '" + layer + "'");
    return it->second;
  }

  bool has_alignment_token() const { return !alignment_token.empty(); }

  std::size_t parameter_count() const {
    std::size_t n = alignment_token.size();
    for (const auto& [_, a] : adapters) n += a.parameter_count();
    return n;
  }
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Pointers to every trainable tensor keyed by its payload name, in
/// lexicographic name order.
inline std::vector<std::pair<std::string, const Tensor*>> parameter_view(const AdapterSet& set) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [_, a] : set.adapters) {
    out.emplace_back(a.a_name(), &a.A);
    out.emplace_back(a.b_name(), &a.B);
  }
  if (set.has_alignment_token()) out.emplace_back(std::string(kAlignmentTokenName), &set.alignment_token);
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
  return out;
}

inline std::vector<std::pair<std::string, Tensor*>> parameter_view(AdapterSet& set) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [_, a] : set.adapters) {
    out.emplace_back(a.a_name(), &a.A);
    out.emplace_back(a.b_name(), &a.B);
  }
  if (set.has_alignment_token()) out.emplace_back(std::string(kAlignmentTokenName), &set.alignment_token);
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
  return out;
}

/// The transmitted payload: every A, B and the alignment token, ordered by
/// name. Frozen weights never appear here.
inline std::vector<NamedTensor> flatten_updates(const AdapterSet& set) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : parameter_view(set)) {
    Tensor copy = *t;
    copy.set_name(name);
    out.emplace_back(name, std::move(copy));
  }
  return out;
}

/// Same layer names, modality tags, ranks and tensor shapes.
inline bool congruent(const AdapterSet& a, const AdapterSet& b) {
  if (a.adapters.size() != b.adapters.size()) return false;
  for (auto ia = a.adapters.begin(), ib = b.adapters.begin(); ia != a.adapters.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const auto& x = ia->second;
    const auto& y = ib->second;
    if (x.modality != y.modality || !x.A.same_shape(y.A) || !x.B.same_shape(y.B)) return false;
  }
  return a.alignment_token.dims() == b.alignment_token.dims();
}

inline void require_congruent(const AdapterSet& a, const AdapterSet& b, std::string_view context) {
  if (!congruent(a, b)) {
    fail(ErrorCode::kCongruence, std::string(context) + ": adapter sets are not structurally congruent");
  }
}

/// Applies f(dst_tensor, src_tensor) over matching tensors of two congruent sets.
template <typename F>
void zip_parameters(AdapterSet& dst, const AdapterSet& src, F&& f) {
  require_congruent(dst, src, "zip_parameters");
  auto d = parameter_view(dst);
  auto s = parameter_view(src);
  for (std::size_t i = 0; i < d.size(); ++i) f(*d[i].second, *s[i].second);
}

inline AdapterSet zeros_like(const AdapterSet& set) {
  AdapterSet out = set;
  for (auto& [_, t] : parameter_view(out))
    std::fill(t->values().begin(), t->values().end(), 0.0);
  return out;
}

/// dst += alpha * src, elementwise over every trainable tensor.
inline void add_scaled(AdapterSet& dst, double alpha, const AdapterSet& src) {
  zip_parameters(dst, src, [alpha](Tensor& d, const Tensor& s) {
    auto dv = d.data();
    auto sv = s.data();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += alpha * sv[i];
  });
}

inline double squared_distance(const AdapterSet& a, const AdapterSet& b) {
  require_congruent(a, b, "squared_distance");
  auto pa = parameter_view(a);
  auto pb = parameter_view(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].second->size(); ++j) {
      const double d = (*pa[i].second)[j] - (*pb[i].second)[j];
      acc += d * d;
    }
  }
  return acc;
}

inline double max_abs_diff(const AdapterSet& a, const AdapterSet& b) {
  require_congruent(a, b, "max_abs_diff");
  auto pa = parameter_view(a);
  auto pb = parameter_view(b);
  double m = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) m = std::max(m, max_abs_diff(*pa[i].second, *pb[i].second));
  return m;
}

inline bool bitwise_equal(const AdapterSet& a, const AdapterSet& b) {
  if (!congruent(a, b)) return false;
  auto pa = parameter_view(a);
  auto pb = parameter_view(b);
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!pa[i].second->bitwise_equal(*pb[i].second)) return false;
  return true;
}

inline bool all_finite(const AdapterSet& set) {
  for (const auto& [_, t] : parameter_view(set))
    if (!t->all_finite()) return false;
  return true;
}

/// Fresh adapters for every registered layer: A ~ N(0, 1/r), B = 0, zero
/// alignment token of `alignment_dim` entries (0 disables the token).
///
/// The rank may exceed min(d_in, d_out) (the delta is then simply
/// over-parameterized) but not max(d_in, d_out).
inline AdapterSet init_adapter_set(const std::vector<LayerDescriptor>& registry, std::size_t rank,
                                   double lora_alpha, std::size_t alignment_dim, RandomSource& rs) {
  if (rank == 0) fail(ErrorCode::kInvalidArgument, "init_adapter_set: rank must be >= 1");
  if (!(lora_alpha > 0.0)) fail(ErrorCode::kInvalidArgument, "init_adapter_set: lora_alpha must be positive");
  std::vector<const LayerDescriptor*> ordered;
  for (const auto& d : registry) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(), [](auto* l, auto* r) { return l->name < r->name; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->name == ordered[i - 1]->name) {
      fail(ErrorCode::kInvalidArgument, "init_adapter_set: duplicate layer '" + ordered[i]->name + "'");
    }
  }

  AdapterSet set;
  const double sigma = 1.0 / std::sqrt(static_cast<double>(rank));
  for (const auto* d : ordered) {
    if (d->name == kAlignmentTokenName) {
      fail(ErrorCode::kInvalidArgument, "init_adapter_set: reserved layer name");
    }
    if (rank > std::max(d->d_in, d->d_out)) {
      fail(ErrorCode::kInvalidArgument, "init_adapter_set: rank " + std::to_string(rank) +
                                            " exceeds the dimensions of layer '" + d->name + "' (" +
                                            std::to_string(d->d_out) + "x" + std::to_string(d->d_in) + ")");
    }
    LoraAdapter a;
    a.layer_name = d->name;
    a.modality = d->modality;
    a.lora_alpha = lora_alpha;
    a.A = sample_gaussian(rs, {rank, d->d_in}, 0.0, sigma, a.a_name());
    a.B = Tensor::zeros(a.b_name(), {d->d_out, rank});
    set.adapters.emplace(d->name, std::move(a));
  }
  if (alignment_dim > 0) set.alignment_token = Tensor::zeros(std::string(kAlignmentTokenName), {alignment_dim});
  return set;
}

namespace detail {

inline void check_adapter_shapes(const LoraAdapter& adapter, const Tensor& w0, std::string_view op) {
  require_matrix(w0, op);
  if (w0.rows() != adapter.d_out() || w0.cols() != adapter.d_in() || adapter.B.cols() != adapter.rank()) {
    fail(ErrorCode::kShape, std::string(op) + ": adapter for '" + adapter.layer_name + "' (A " +
                                dims_to_string(adapter.A.dims()) + ", B " + dims_to_string(adapter.B.dims()) +
                                ") does not fit frozen weight " + describe(w0));
  }
}

}  // namespace detail

/// y = W0 x + scaling * B (A x)
inline Tensor apply_adapter(const LoraAdapter& adapter, const Tensor& w0, const Tensor& x) {
  detail::check_adapter_shapes(adapter, w0, "apply_adapter");
  if (x.ndim() != 1 || x.size() != adapter.d_in()) {
    fail(ErrorCode::kShape, "apply_adapter: input " + describe(x) + " does not match d_in " +
                                std::to_string(adapter.d_in()));
  }
  Tensor y = matvec(w0, x);
  const Tensor ax = matvec(adapter.A, x);
  const Tensor bax = matvec(adapter.B, ax);
  const double s = adapter.scaling();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * bax[i];
  y.set_name(adapter.layer_name + ".out");
  require_finite(y, "apply_adapter");
  return y;
}

/// Folds the adapter into the frozen weight: W0 + scaling * B A.
inline Tensor merge_adapter(const LoraAdapter& adapter, const Tensor& w0) {
  detail::check_adapter_shapes(adapter, w0, "merge_adapter");
  const Tensor ba = matmul(adapter.B, adapter.A);
  Tensor merged = axpy(adapter.scaling(), ba, w0);
  merged.set_name(w0.name() + "+lora");
  return merged;
}

}  // namespace lorafed
