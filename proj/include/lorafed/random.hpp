#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "lorafed/error.hpp"
#include "lorafed/tensor.hpp"

namespace lorafed {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

// log and exp built from IEEE basic operations only, so sampled sequences do
// not depend on the host libm. Accurate to a few ulp on the ranges we use.
inline double portable_log(double x) {
  if (!(x > 0.0)) fail(ErrorCode::kNumeric, "portable_log: argument must be positive");
  if (std::isinf(x)) return x;
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    --e;
  }
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  double term = s;
  double sum = 0.0;
  for (int k = 1; k < 40; k += 2) {
    const double add = term / k;
    sum += add;
    if (std::abs(add) < 1e-18) break;
    term *= s2;
  }
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  return e * kLn2Hi + (2.0 * sum + e * kLn2Lo);
}

inline double portable_exp(double x) {
  if (x > 709.0) return HUGE_VAL;
  if (x < -745.0) return 0.0;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kInvLn2 = 1.44269504088896338700e+00;
  const double k = std::nearbyint(x * kInvLn2);
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;  // |r| <= ln2/2
  double term = 1.0;
  double sum = 1.0;
  for (int i = 1; i < 30; ++i) {
    term *= r / i;
    sum += term;
    if (std::abs(term) < 1e-18) break;
  }
  return std::ldexp(sum, static_cast<int>(k));
}

}  // namespace detail

/// Roles mixed into derived stream ids so that every consumer of randomness
/// draws from its own stream.
enum class StreamRole : std::uint64_t {
  kModel = 1,
  kAdapterInit = 2,
  kTeacher = 3,
  kData = 4,
  kPartition = 5,
  kClient = 6,
  kModalityShift = 7,
  kSplitInterface = 8,
  kValidationSplit = 9,
  kTest = 99,
};

/// Derives a stream id from a role and a list of coordinates
/// (client id, round, ...). Pure function of its inputs.
inline std::uint64_t derive_stream(StreamRole role,
                                   std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = detail::splitmix64(static_cast<std::uint64_t>(role));
  for (std::uint64_t c : coords) h = detail::splitmix64(h ^ detail::splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

/// Seeded xoshiro256** generator addressed by (seed, stream_id). Identical
/// (seed, stream_id) pairs yield identical sequences on every platform.
/// Single owner: never share one instance between workers.
class RandomSource {
 public:
  RandomSource(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0xd1b54a32d192ed03ULL));
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      s = detail::splitmix64(x);
    }
  }

  RandomSource(std::uint64_t seed, StreamRole role,
               std::initializer_list<std::uint64_t> coords = {})
      : RandomSource(seed, derive_stream(role, coords)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) fail(ErrorCode::kInvalidArgument, "uniform_index: empty range");
    const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * detail::portable_log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// log of a Gamma(shape, 1) draw. Marsaglia-Tsang for shape >= 1; for
  /// shape < 1 the boost Gamma(shape+1) * U^(1/shape) is applied in log space
  /// so tiny draws never underflow to zero.
  double log_gamma_draw(double shape) {
    if (!(shape > 0.0)) fail(ErrorCode::kInvalidArgument, "gamma shape must be positive");
    if (shape < 1.0) {
      const double boosted = log_gamma_draw(shape + 1.0);
      return boosted + detail::portable_log(uniform()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2 ||
          detail::portable_log(u) < 0.5 * x2 + d * (1.0 - v + detail::portable_log(v))) {
        return detail::portable_log(d) + detail::portable_log(v);
      }
    }
  }

  double gamma(double shape) { return detail::portable_exp(log_gamma_draw(shape)); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Tensor of i.i.d. N(mean, sigma^2) entries; sigma == 0 gives a constant tensor.
inline Tensor sample_gaussian(RandomSource& rs, const Dims& dims, double mean, double sigma,
                              std::string name = "gaussian") {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    fail(ErrorCode::kInvalidArgument, "sample_gaussian: sigma must be finite and >= 0");
  }
  Tensor out(std::move(name), dims);
  if (sigma == 0.0) {
    for (double& v : out.data()) v = mean;
    return out;
  }
  for (double& v : out.data()) v = rs.normal(mean, sigma);
  return out;
}

/// Draw from the symmetric Dirichlet(alpha) over k components.
inline std::vector<double> sample_dirichlet(RandomSource& rs, double alpha, std::size_t k) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    fail(ErrorCode::kInvalidArgument, "sample_dirichlet: alpha must be positive and finite");
  }
  if (k == 0) fail(ErrorCode::kInvalidArgument, "sample_dirichlet: k must be >= 1");
  if (k == 1) return {1.0};
  std::vector<double> logs(k);
  for (auto& l : logs) l = rs.log_gamma_draw(alpha);
  const double top = *std::max_element(logs.begin(), logs.end());
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = detail::portable_exp(logs[i] - top);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

/// In-place Fisher-Yates shuffle driven by `rs`.
template <typename T>
void shuffle(RandomSource& rs, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rs.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> random_permutation(RandomSource& rs, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle(rs, perm);
  return perm;
}

}  // namespace lorafed
