#include "ledetr/parallel.hpp"

#include <atomic>
#include <string>

namespace ledetr {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int threads) {
  if (threads < 1) throw ParameterError("thread count must be >= 1, got " + std::to_string(threads));
  g_threads.store(threads);
}

int num_threads() { return g_threads.load(); }

}  // namespace ledetr
