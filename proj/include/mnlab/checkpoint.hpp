#pragma once

/// Binary checkpoints:
///   "EATCKPT\0" | u32 version | u32 len, arch | u32 n_tensors
///   | n_tensors x (u32 ndim, ndim x u32 dims, f64 data) | u32 n_meta
///   | n_meta x (u32 len, key, u32 len, value)
/// All integers and reals little-endian.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "mnlab/error.hpp"
#include "mnlab/network.hpp"

namespace mnlab {

inline constexpr char kCheckpointMagic[8] = {'E', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Meta = std::map<std::string, std::string>;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Network net;
  Meta meta;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  [[nodiscard]] const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& b, std::string path) : b_(b), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    if (n > b_.size() - pos_) {
      throw Truncated("checkpoint '" + path_ + "' truncated at byte " + std::to_string(b_.size()));
    }
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, 4);
    return v;
  }
  double f64() {
    double v = 0;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > b_.size() - pos_) {
      throw Truncated("checkpoint '" + path_ + "' truncated inside a string");
    }
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool at_end() const { return pos_ == b_.size(); }

 private:
  const std::vector<char>& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses "mlp:20-64-64-2:relu" into layer widths and hidden activation.
inline std::pair<std::vector<std::size_t>, Activation> parse_arch(const std::string& arch) {
  const auto c1 = arch.find(':');
  const auto c2 = arch.rfind(':');
  if (arch.substr(0, c1) != "mlp" || c1 == std::string::npos || c2 == c1) {
    throw ArchMismatch("unrecognized architecture '" + arch + "'");
  }
  std::vector<std::size_t> dims;
  std::string body = arch.substr(c1 + 1, c2 - c1 - 1);
  std::size_t start = 0;
  while (start <= body.size()) {
    const auto dash = body.find('-', start);
    const std::string tok = body.substr(start, dash == std::string::npos ? std::string::npos : dash - start);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
      throw ArchMismatch("bad layer width in '" + arch + "'");
    }
    dims.push_back(std::stoul(tok));
    if (dims.back() == 0) throw ArchMismatch("zero layer width in '" + arch + "'");
    if (dash == std::string::npos) break;
    start = dash + 1;
  }
  if (dims.size() < 2) throw ArchMismatch("architecture '" + arch + "' needs >= 2 widths");
  Activation act = Activation::Identity;
  try {
    act = parse_activation(arch.substr(c2 + 1));
  } catch (const Error&) {
    throw ArchMismatch("bad activation in '" + arch + "'");
  }
  return {dims, act};
}

inline std::vector<char> serialize_checkpoint(const Network& net, const Meta& meta,
                                              std::uint32_t version = kCheckpointVersion) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(version);
  w.str(net.arch());
  const auto params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Tensor* t : params) {
    w.u32(static_cast<std::uint32_t>(t->ndim()));
    for (std::size_t s : t->shape()) w.u32(static_cast<std::uint32_t>(s));
    for (double v : t->data()) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  return w.buffer();
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes,
                                         const std::string& path = "<memory>") {
  detail::Reader r(bytes, path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw BadMagic("'" + path + "' is not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion) {
    throw UnsupportedVersion("'" + path + "' has checkpoint version " + std::to_string(ck.version) +
                             ", supported: " + std::to_string(kCheckpointVersion));
  }
  const std::string arch = r.str();
  const auto [dims, act] = parse_arch(arch);
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != 2 * (dims.size() - 1)) {
    throw ArchMismatch("'" + path + "': " + std::to_string(n_tensors) + " tensors for arch " + arch);
  }
  std::vector<Dense> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Tensor t[2];
    for (int k = 0; k < 2; ++k) {
      const std::uint32_t ndim = r.u32();
      if (ndim > 4) throw ArchMismatch("'" + path + "': tensor with " + std::to_string(ndim) + " dims");
      std::vector<std::size_t> shape(ndim);
      for (auto& s : shape) s = r.u32();
      const std::vector<std::size_t> want =
          k == 0 ? std::vector<std::size_t>{dims[l], dims[l + 1]} : std::vector<std::size_t>{dims[l + 1]};
      if (shape != want) {
        throw ArchMismatch("'" + path + "': tensor shape does not match arch " + arch);
      }
      std::size_t count = 1;
      for (auto s : shape) count *= s;
      std::vector<double> data(count);
      for (double& v : data) v = r.f64();
      for (double v : data) {
        if (!std::isfinite(v)) throw ArchMismatch("'" + path + "': non-finite parameter");
      }
      t[k] = Tensor(shape, std::move(data));
    }
    const bool last = l + 2 == dims.size();
    layers.push_back({std::move(t[0]), std::move(t[1]), last ? Activation::Identity : act});
  }
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.str();
  }
  if (!r.at_end()) throw ArchMismatch("'" + path + "': trailing bytes after checkpoint");
  ck.net = Network(std::move(layers));
  if (ck.net.arch() != arch) throw ArchMismatch("'" + path + "': arch string does not round-trip");
  return ck;
}

inline void save_checkpoint(const Network& net, const Meta& meta, const std::string& path) {
  const auto bytes = serialize_checkpoint(net, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes, path);
}

}  // namespace mnlab
