#include "empssl/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace empssl {

int worker_count() {
  static const int count = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("EMP_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1 && cap < n) n = cap;
    }
    return n;
  }();
  return count;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const int workers = worker_count();
  if (n == 0) return;
  if (workers == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) break;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t spawn = std::min<std::size_t>(static_cast<std::size_t>(workers) - 1, n - 1);
  pool.reserve(spawn);
  for (std::size_t t = 0; t < spawn; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace empssl
