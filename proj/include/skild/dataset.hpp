#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "skild/errors.hpp"
#include "skild/rng.hpp"

namespace skild {

static_assert(std::endian::native == std::endian::little, "file formats are little-endian");

// One rollout: T actions, T+1 states. States are environment observations,
// recorded at f32 precision so dataset files round-trip bit-exactly.
struct Trajectory {
  std::vector<std::vector<float>> states;   // length T+1
  std::vector<std::vector<float>> actions;  // length T
  bool success = false;

  int length() const { return static_cast<int>(actions.size()); }
};

enum class DatasetKind : uint32_t { TaskAgnostic = 0, Demonstration = 1 };

struct Dataset {
  std::vector<Trajectory> trajectories;
  DatasetKind kind = DatasetKind::TaskAgnostic;
  int state_dim = 0;
  int action_dim = 0;

  void validate() const {
    if (trajectories.empty()) raise(ErrorKind::EmptyInput, "dataset has no trajectories");
    for (const Trajectory& t : trajectories) {
      if (t.states.size() != t.actions.size() + 1)
        raise(ErrorKind::ShapeMismatch, "trajectory needs len(states) == len(actions)+1");
      for (const auto& s : t.states)
        if (static_cast<int>(s.size()) != state_dim)
          raise(ErrorKind::ShapeMismatch, "state dim mismatch");
      for (const auto& a : t.actions) {
        if (static_cast<int>(a.size()) != action_dim)
          raise(ErrorKind::ShapeMismatch, "action dim mismatch");
        for (float v : a)
          if (v < -1.0f || v > 1.0f) raise(ErrorKind::InvalidConfig, "action outside [-1,1]");
      }
    }
  }

  size_t total_states() const {
    size_t n = 0;
    for (const auto& t : trajectories) n += t.states.size();
    return n;
  }
};

// Fixed H-step slice: H states s_{0:H-1}, H-1 actions a_{0:H-2}.
struct SkillWindow {
  std::vector<std::vector<float>> states;
  std::vector<std::vector<float>> actions;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) raise(ErrorKind::IoError, "unexpected end of file");
  return v;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot open " + path + " for writing");
  os.write("SKLD", 4);
  detail::write_pod<uint32_t>(os, 1);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.kind));
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.state_dim));
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.action_dim));
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.trajectories.size()));
  for (const Trajectory& t : ds.trajectories) {
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.actions.size()));
    detail::write_pod<uint8_t>(os, t.success ? 1 : 0);
    for (const auto& s : t.states) os.write(reinterpret_cast<const char*>(s.data()), s.size() * 4);
    for (const auto& a : t.actions) os.write(reinterpret_cast<const char*>(a.data()), a.size() * 4);
  }
  if (!os) raise(ErrorKind::IoError, "write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::IoError, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SKLD", 4) != 0) raise(ErrorKind::IoError, "bad magic in " + path);
  const uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != 1) raise(ErrorKind::IoError, "unsupported dataset version");
  Dataset ds;
  ds.kind = static_cast<DatasetKind>(detail::read_pod<uint32_t>(is));
  ds.state_dim = static_cast<int>(detail::read_pod<uint32_t>(is));
  ds.action_dim = static_cast<int>(detail::read_pod<uint32_t>(is));
  const uint32_t n = detail::read_pod<uint32_t>(is);
  ds.trajectories.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    Trajectory& t = ds.trajectories[i];
    const uint32_t T = detail::read_pod<uint32_t>(is);
    t.success = detail::read_pod<uint8_t>(is) != 0;
    t.states.assign(T + 1, std::vector<float>(ds.state_dim));
    t.actions.assign(T, std::vector<float>(ds.action_dim));
    for (auto& s : t.states) {
      is.read(reinterpret_cast<char*>(s.data()), s.size() * 4);
      if (!is) raise(ErrorKind::IoError, "truncated dataset");
    }
    for (auto& a : t.actions) {
      is.read(reinterpret_cast<char*>(a.data()), a.size() * 4);
      if (!is) raise(ErrorKind::IoError, "truncated dataset");
    }
  }
  ds.validate();
  return ds;
}

// Enumerates valid H-window starts. A trajectory with T actions holds
// max(0, T + 2 - H) windows (H states, H-1 actions each).
inline int window_count(const Trajectory& t, int H) {
  const int n = t.length() + 2 - H;
  return n > 0 ? n : 0;
}

inline SkillWindow extract_window(const Trajectory& t, int offset, int H) {
  SkillWindow w;
  w.states.assign(t.states.begin() + offset, t.states.begin() + offset + H);
  w.actions.assign(t.actions.begin() + offset, t.actions.begin() + offset + H - 1);
  return w;
}

class WindowSampler {
 public:
  WindowSampler(const Dataset& ds, int H) : ds_(&ds), H_(H) {
    cumulative_.reserve(ds.trajectories.size());
    size_t total = 0;
    for (const Trajectory& t : ds.trajectories) {
      total += window_count(t, H);
      cumulative_.push_back(total);
    }
    if (total == 0) raise(ErrorKind::NoValidWindow, "no trajectory has length >= H");
  }

  size_t total_windows() const { return cumulative_.back(); }

  // Uniform over all (trajectory, offset) pairs.
  SkillWindow sample(Rng& rng) const {
    const size_t k = rng.uniform_int(cumulative_.back());
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), k);
    const size_t ti = static_cast<size_t>(it - cumulative_.begin());
    const size_t before = ti == 0 ? 0 : cumulative_[ti - 1];
    return extract_window(ds_->trajectories[ti], static_cast<int>(k - before), H_);
  }

 private:
  const Dataset* ds_;
  int H_;
  std::vector<size_t> cumulative_;
};

inline SkillWindow sample_window(const Dataset& ds, int H, Rng& rng) {
  return WindowSampler(ds, H).sample(rng);
}

}  // namespace skild
