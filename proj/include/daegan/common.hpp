#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace daegan {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
inline void fmt_parts(std::ostringstream&) {}
template <typename A, typename... Rest>
void fmt_parts(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  fmt_parts(os, rest...);
}
}  // namespace detail

/// Builds an error message from stream-able parts and throws.
template <typename... A>
[[noreturn]] void raise(const A&... parts) {
  std::ostringstream os;
  detail::fmt_parts(os, parts...);
  throw std::runtime_error(os.str());
}

template <typename... A>
void check(bool cond, const A&... parts) {
  if (!cond) raise(parts...);
}

// ---------------------------------------------------------------------------
// Deterministic RNG (xoshiro256**, splitmix64 seeding). The 32-byte state is
// what checkpoints persist, so the stream is reproducible across platforms.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      w = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    check(n > 0, "Rng::uniform_int: n must be positive, got ", n);
    // rejection sampling to avoid modulo bias
    const uint64_t un = uint64_t(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return int64_t(x % un);
  }

  /// Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    check(hi >= lo, "Rng::uniform_int: empty range [", lo, ", ", hi, "]");
    return lo + uniform_int(hi - lo + 1);
  }

  /// Standard normal via Box-Muller; stateless between calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::array<uint64_t, 4> state() const { return {s_[0], s_[1], s_[2], s_[3]}; }
  void set_state(const std::array<uint64_t, 4>& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st[i];
  }

  std::vector<uint8_t> state_bytes() const {
    std::vector<uint8_t> b(32);
    auto st = state();
    std::memcpy(b.data(), st.data(), 32);
    return b;
  }
  void set_state_bytes(const std::vector<uint8_t>& b) {
    check(b.size() == 32, "Rng state blob must be 32 bytes, got ", b.size());
    std::array<uint64_t, 4> st;
    std::memcpy(st.data(), b.data(), 32);
    set_state(st);
  }

 private:
  uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// Kernel-internal parallelism. Work is partitioned so every output element is
// produced by exactly one chunk with a fixed inner loop order; results do not
// depend on how many threads run. DAEGAN_THREADS caps the count (0 = auto).
// ---------------------------------------------------------------------------

inline int& thread_cap_ref() {
  static int cap = []() {
    const char* env = std::getenv("DAEGAN_THREADS");
    if (!env || !*env) return 0;
    return std::atoi(env);
  }();
  return cap;
}

inline void set_max_threads(int n) { thread_cap_ref() = n; }

inline int max_threads() {
  int cap = thread_cap_ref();
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  return cap > 0 ? std::min(cap, hw) : hw;
}

/// Runs fn(begin, end) over [0, n) split into contiguous chunks.
template <typename F>
void parallel_for(int64_t n, F&& fn) {
  if (n <= 0) return;
  const int threads = int(std::min<int64_t>(max_threads(), n));
  if (threads <= 1 || n < 256) {
    fn(int64_t(0), n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const int64_t chunk = (n + threads - 1) / threads;
  for (int t = 1; t < threads; ++t) {
    const int64_t b = t * chunk;
    const int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e]() { fn(b, e); });
  }
  fn(int64_t(0), std::min<int64_t>(n, chunk));
  for (auto& th : pool) th.join();
}

// Optional NaN/Inf guard on op outputs, enabled in tests and debug runs.
inline bool& finite_checks_ref() {
  static bool on = []() {
    const char* env = std::getenv("DAEGAN_CHECK_FINITE");
    if (env && *env) return std::atoi(env) != 0;
#ifdef NDEBUG
    return false;
#else
    return true;
#endif
  }();
  return on;
}

inline void set_finite_checks(bool on) { finite_checks_ref() = on; }
inline bool finite_checks() { return finite_checks_ref(); }

}  // namespace daegan
