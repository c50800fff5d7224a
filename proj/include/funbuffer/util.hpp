#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace funbuffer {

inline std::vector<double> linspace(double lo, double hi, int count) {
  if (count < 2) throw std::invalid_argument("linspace: count must be >= 2");
  std::vector<double> out(count);
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) out[i] = lo + step * i;
  out.back() = hi;
  return out;
}

/// Log-spaced values between lo and hi (both positive, inclusive).
inline std::vector<double> logspace(double lo, double hi, int count) {
  if (lo <= 0.0 || hi <= 0.0) throw std::invalid_argument("logspace: endpoints must be positive");
  if (count == 1) return {hi};
  auto ex = linspace(std::log(lo), std::log(hi), count);
  for (double& v : ex) v = std::exp(v);
  return ex;
}

/// Composite trapezoid weights for a sorted (possibly non-uniform) grid.
inline Eigen::VectorXd trapezoid_weights(const std::vector<double>& grid) {
  const int g = static_cast<int>(grid.size());
  if (g < 2) throw std::invalid_argument("trapezoid_weights: need at least 2 points");
  Eigen::VectorXd w(g);
  w(0) = 0.5 * (grid[1] - grid[0]);
  for (int i = 1; i + 1 < g; ++i) w(i) = 0.5 * (grid[i + 1] - grid[i - 1]);
  w(g - 1) = 0.5 * (grid[g - 1] - grid[g - 2]);
  return w;
}

/// splitmix64 step; used to derive independent per-task seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs body(0..count-1) on up to `threads` workers. Results must be written to
/// per-index slots by the caller; scheduling order carries no information.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (count <= 0) return;
  int workers = std::max(1, threads);
  workers = std::min(workers, count);
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(run);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace funbuffer
