#pragma once

#include <exception>
#include <thread>
#include <vector>

#include "ledetr/tensor.hpp"

namespace ledetr {

/// Worker count used by every kernel. Defaults to 1.
void set_num_threads(int threads);
int num_threads();

/// Runs fn(begin, end) over disjoint contiguous sub-ranges of [0, count).
///
/// Work items are addressed by index only, so a kernel that computes each
/// item independently yields bit-identical output for any thread count.
template <typename Fn>
void parallel_for(Index count, Fn&& fn) {
  const Index workers = std::min<Index>(num_threads(), count);
  if (workers <= 1) {
    if (count > 0) fn(Index{0}, count);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  auto run = [&](Index t) {
    const Index begin = count * t / workers;
    const Index end = count * (t + 1) / workers;
    try {
      fn(begin, end);
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  };
  for (Index t = 1; t < workers; ++t) pool.emplace_back(run, t);
  run(0);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Scoped override of the worker count.
class ThreadScope {
 public:
  explicit ThreadScope(int threads) : previous_(num_threads()) { set_num_threads(threads); }
  ~ThreadScope() { set_num_threads(previous_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int previous_;
};

}  // namespace ledetr
