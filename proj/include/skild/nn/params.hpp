#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "skild/errors.hpp"
#include "skild/mat.hpp"
#include "skild/rng.hpp"

namespace skild::nn {

// One named trainable array: value, gradient buffer, and per-entry Adam/RAdam
// state. Values are doubles in memory; checkpoints narrow to f32.
struct ParamEntry {
  Mat value;
  Mat grad;
  Mat m;  // first moment
  Mat v;  // second moment
  int64_t step = 0;
  bool trainable = true;
};

struct ParamStore {
  std::map<std::string, ParamEntry> entries;

  ParamEntry& add(const std::string& name, Mat value, bool trainable = true) {
    ParamEntry e;
    e.grad = Mat(value.rows, value.cols);
    e.m = Mat(value.rows, value.cols);
    e.v = Mat(value.rows, value.cols);
    e.value = std::move(value);
    e.trainable = trainable;
    auto [it, inserted] = entries.emplace(name, std::move(e));
    if (!inserted) raise(ErrorKind::InvalidConfig, "duplicate param " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return entries.count(name) != 0; }

  ParamEntry& at(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) raise(ErrorKind::MissingCheckpoint, "missing param " + name);
    return it->second;
  }

  const ParamEntry& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) raise(ErrorKind::MissingCheckpoint, "missing param " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, e] : entries) e.grad.fill(0.0);
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& [name, e] : entries) n += e.value.size();
    return n;
  }

  // FNV over the value payload, for frozen-parameter assertions.
  uint64_t value_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : entries) {
      h ^= fnv1a64(name);
      h *= 0x100000001b3ULL;
      for (double d : e.value.a) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        h ^= bits;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }
};

inline Mat rand_uniform(int rows, int cols, double lo, double hi, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.a) x = rng.uniform(lo, hi);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint format (magic SKNN): u32 version, u32 n_records, then per record
// u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 payload. Optimizer
// moments and step counters ride along as "<name>#m", "#v", "#t" records.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) raise(ErrorKind::IoError, "truncated checkpoint");
  return v;
}

inline void write_record(std::ostream& os, const std::string& name, const Mat& m) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, 2);
  write_u32(os, static_cast<uint32_t>(m.rows));
  write_u32(os, static_cast<uint32_t>(m.cols));
  std::vector<float> buf(m.a.begin(), m.a.end());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

}  // namespace ckpt_detail

using RawCheckpoint = std::map<std::string, Mat>;

inline void save_checkpoint(const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                            const std::string& path, const RawCheckpoint& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot open " + path + " for writing");
  uint32_t n = static_cast<uint32_t>(extra.size());
  for (const auto& [prefix, ps] : stores)
    for (const auto& [name, e] : ps->entries) n += e.trainable ? 4 : 1;
  os.write("SKNN", 4);
  ckpt_detail::write_u32(os, 1);
  ckpt_detail::write_u32(os, n);
  for (const auto& [prefix, ps] : stores) {
    for (const auto& [name, e] : ps->entries) {
      const std::string full = prefix.empty() ? name : prefix + "." + name;
      ckpt_detail::write_record(os, full, e.value);
      if (e.trainable) {
        ckpt_detail::write_record(os, full + "#m", e.m);
        ckpt_detail::write_record(os, full + "#v", e.v);
        Mat t(1, 1);
        t(0, 0) = static_cast<double>(e.step);
        ckpt_detail::write_record(os, full + "#t", t);
      }
    }
  }
  for (const auto& [name, m] : extra) ckpt_detail::write_record(os, name, m);
  if (!os) raise(ErrorKind::IoError, "write failed: " + path);
}

inline RawCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::MissingCheckpoint, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SKNN", 4) != 0) raise(ErrorKind::IoError, "bad magic in " + path);
  if (ckpt_detail::read_u32(is) != 1) raise(ErrorKind::IoError, "unsupported checkpoint version");
  const uint32_t n = ckpt_detail::read_u32(is);
  RawCheckpoint out;
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = ckpt_detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = ckpt_detail::read_u32(is);
    if (rank != 2) raise(ErrorKind::IoError, "unsupported record rank");
    const uint32_t rows = ckpt_detail::read_u32(is);
    const uint32_t cols = ckpt_detail::read_u32(is);
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    std::vector<float> buf(m.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!is) raise(ErrorKind::IoError, "truncated checkpoint " + path);
    for (size_t k = 0; k < buf.size(); ++k) m.a[k] = static_cast<double>(buf[k]);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

// Copies values (and optimizer state when present) from a raw checkpoint into
// an already initialized store. Shapes must match the initialized layout.
inline void assign_from_checkpoint(ParamStore& ps, const RawCheckpoint& raw,
                                   const std::string& prefix) {
  for (auto& [name, e] : ps.entries) {
    const std::string full = prefix.empty() ? name : prefix + "." + name;
    auto it = raw.find(full);
    if (it == raw.end()) raise(ErrorKind::MissingCheckpoint, "checkpoint lacks " + full);
    if (!it->second.same_shape(e.value))
      raise(ErrorKind::ShapeMismatch, "checkpoint shape mismatch for " + full);
    e.value = it->second;
    if (auto im = raw.find(full + "#m"); im != raw.end()) e.m = im->second;
    if (auto iv = raw.find(full + "#v"); iv != raw.end()) e.v = iv->second;
    if (auto is_ = raw.find(full + "#t"); is_ != raw.end())
      e.step = static_cast<int64_t>(is_->second(0, 0));
  }
}

inline double meta_scalar(const RawCheckpoint& raw, const std::string& name) {
  auto it = raw.find(name);
  if (it == raw.end()) raise(ErrorKind::MissingCheckpoint, "checkpoint lacks " + name);
  return it->second(0, 0);
}

inline std::vector<int> meta_ints(const RawCheckpoint& raw, const std::string& name) {
  auto it = raw.find(name);
  if (it == raw.end()) raise(ErrorKind::MissingCheckpoint, "checkpoint lacks " + name);
  std::vector<int> out;
  out.reserve(it->second.size());
  for (double d : it->second.a) out.push_back(static_cast<int>(d));
  return out;
}

inline Mat meta_from_scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

inline Mat meta_from_ints(const std::vector<int>& v) {
  Mat m(1, static_cast<int>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) m.a[i] = static_cast<double>(v[i]);
  return m;
}

}  // namespace skild::nn
