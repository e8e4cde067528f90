#include "lftrack/threading.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace lftrack {

int worker_count() {
  if (const char* env = std::getenv("LF_ESI_THREADS")) {
    std::string s(env);
    try {
      size_t pos = 0;
      const int n = std::stoi(s, &pos);
      if (pos != s.size() || n < 1) throw std::invalid_argument(s);
      return n;
    } catch (const std::exception&) {
      throw ValidationError("LF_ESI_THREADS must be a positive integer, got '" + s + "'");
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const int workers = worker_count();
  if (workers <= 1 || n < 2) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int k = int(std::min<Index>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(size_t(k));
  for (int j = 0; j < k; ++j) {
    const Index lo = n * j / k;
    const Index hi = n * (j + 1) / k;
    pool.emplace_back([lo, hi, &fn] {
      for (Index i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace lftrack
