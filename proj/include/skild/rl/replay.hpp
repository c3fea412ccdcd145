#pragma once

#include <vector>

#include "skild/errors.hpp"
#include "skild/rng.hpp"

namespace skild {

// One high-level decision: skill z executed from s for up to H env steps.
struct MacroTransition {
  std::vector<double> s;
  std::vector<double> z;  // executed latent, post-squash
  double r_env_sum = 0.0;
  double r_disc_sub_mean = 0.0;  // mean discriminator bonus over sub-steps (optional path)
  std::vector<double> s_next;
  bool done = false;
  int steps_executed = 0;
};

struct FlatTransition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

// Fixed-capacity ring buffer with uniform sampling over occupancy.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) raise(ErrorKind::InvalidConfig, "replay capacity must be > 0");
  }

  void push(T t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }

  const T& sample(Rng& rng) const {
    if (data_.empty()) raise(ErrorKind::EmptyInput, "sampling empty replay buffer");
    return data_[rng.uniform_int(data_.size())];
  }

  const T& at(size_t i) const { return data_[i]; }

 private:
  size_t capacity_;
  size_t head_ = 0;
  std::vector<T> data_;
};

}  // namespace skild
