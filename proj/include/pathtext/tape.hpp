#pragma once

#include <functional>
#include <vector>

namespace pathtext::ad {

// Append-only record of operations. Node order is topological by
// construction; backward() walks it once in reverse.
class Tape {
 public:
  int append(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void run_backward_from(int node) const {
    for (int i = node; i >= 0; --i) nodes_[i]();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// The active tape is thread-local: one tape is owned by exactly one thread.
Tape* active_tape();

// RAII activation. Ops record nodes only while a scope is alive; everything
// outside a scope runs in evaluation mode.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Temporarily disables recording (used for the detached first pass of
// back-translation and for greedy decoding inside a training step).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace pathtext::ad
