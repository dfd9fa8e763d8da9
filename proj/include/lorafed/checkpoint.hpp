#pragma once

// Adapter checkpoint format (all integers 32-bit little-endian):
//
//   "FUMM" | version | tensor_count |
//   tensor_count x ( name_len | name (UTF-8) | ndim | dims[ndim] | data[numel] as IEEE-754 binary32 )
//
// Tensors appear in flatten_updates order.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "lorafed/adapter.hpp"
#include "lorafed/error.hpp"
#include "lorafed/tensor.hpp"

namespace lorafed {

inline constexpr std::array<char, 4> kCheckpointMagic = {'F', 'U', 'M', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCheckpointMaxDims = 8;
inline constexpr std::size_t kCheckpointFileHeaderBytes = 12;

/// Header bytes contributed by one tensor record (everything except data).
inline std::size_t checkpoint_record_header_bytes(const std::string& name, std::size_t ndim) {
  return 4 + name.size() + 4 + 4 * ndim;
}

/// Exact serialized size of `tensors`, file header included.
inline std::size_t checkpoint_size(const std::vector<NamedTensor>& tensors) {
  std::size_t total = kCheckpointFileHeaderBytes;
  for (const auto& [name, t] : tensors) total += checkpoint_record_header_bytes(name, t.ndim()) + 4 * t.size();
  return total;
}

/// Bytes needed to transmit an adapter set: the checkpoint encoding of its
/// flattened payload (32-bit data plus per-tensor headers).
inline std::size_t payload_bytes(const AdapterSet& set) { return checkpoint_size(flatten_updates(set)); }

/// 32-bit data bytes only, without any header.
inline std::size_t payload_data_bytes(const AdapterSet& set) { return 4 * set.parameter_count(); }

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(ErrorCode::kTruncated, std::string("checkpoint truncated while reading ") + what + " at byte " +
                                      std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out;
  out.reserve(checkpoint_size(tensors));
  out.append(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.dims()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) fail(ErrorCode::kNumeric, "checkpoint: '" + name + "' holds a value outside binary32 range");
      detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes);
  const std::string magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), 4) != 0) fail(ErrorCode::kBadMagic, "checkpoint: bad magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = in.u32("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32("name length");
    std::string name = in.take(name_len, "name");
    const std::uint32_t ndim = in.u32("ndim");
    if (ndim == 0 || ndim > kCheckpointMaxDims) {
      fail(ErrorCode::kDimOverflow, "checkpoint: tensor '" + name + "' has " + std::to_string(ndim) + " dimensions");
    }
    Dims dims(ndim);
    std::uint64_t elements = 1;
    for (auto& d : dims) {
      d = in.u32("dims");
      if (d == 0) fail(ErrorCode::kDimOverflow, "checkpoint: tensor '" + name + "' has a zero dimension");
      elements *= d;
      if (elements > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorCode::kDimOverflow, "checkpoint: tensor '" + name + "' element count overflows");
      }
    }
    std::vector<double> data(static_cast<std::size_t>(elements));
    if (in.remaining() < 4 * data.size()) {
      fail(ErrorCode::kTruncated, "checkpoint: data of tensor '" + name + "' is truncated");
    }
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(in.u32("data")));
    Tensor t(name, std::move(dims), std::move(data));
    out.emplace_back(std::move(name), std::move(t));
  }
  if (in.remaining() != 0) {
    fail(ErrorCode::kInvalidArgument, "checkpoint: " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void save_checkpoint(const AdapterSet& set, const std::string& path) {
  write_file(path, encode_checkpoint(flatten_updates(set)));
}

/// Raw tensor records of a checkpoint file.
inline std::vector<NamedTensor> read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

/// Rebuilds an adapter set from decoded records. Hyperparameters the format
/// does not carry (lora_alpha, modality tags) are taken from `like`, which
/// must have exactly the same tensor names and shapes.
inline AdapterSet adapter_set_from_records(const std::vector<NamedTensor>& records, const AdapterSet& like) {
  AdapterSet out = like;
  auto view = parameter_view(out);
  if (view.size() != records.size()) {
    fail(ErrorCode::kCongruence, "checkpoint holds " + std::to_string(records.size()) + " tensors, expected " +
                                     std::to_string(view.size()));
  }
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto& [name, t] = records[i];
    if (name != view[i].first || t.dims() != view[i].second->dims()) {
      fail(ErrorCode::kCongruence, "checkpoint tensor '" + name + "' " + dims_to_string(t.dims()) +
                                       " does not match expected '" + view[i].first + "' " +
                                       dims_to_string(view[i].second->dims()));
    }
    std::copy(t.data().begin(), t.data().end(), view[i].second->data().begin());
  }
  return out;
}

inline AdapterSet load_checkpoint(const std::string& path, const AdapterSet& like) {
  return adapter_set_from_records(read_checkpoint(path), like);
}

}  // namespace lorafed
