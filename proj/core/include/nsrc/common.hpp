#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace nsrc {

// All recoverable failures (shape mismatches, invalid configs, bad files)
// are reported as nsrc::Error. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Number of worker threads used by parallel kernels. 0 = hardware default.
// Results are independent of the thread count: work items are disjoint and
// no reduction ever crosses a thread boundary.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over a static partition of [0, n). fn must only write
// to locations owned by its index range.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace nsrc
