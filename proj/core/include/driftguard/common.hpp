#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace driftguard {

// Single exception type for all contract violations. Messages are meant to be
// shown to operators verbatim, so they carry the offending value/path/line.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// splitmix64 — used to derive independent sub-seeds from one master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  return splitmix64(master ^ (0x51ed2701a3c49f2bULL * (stream + 1)));
}

// Thin deterministic RNG wrapper. All randomized behavior in the librarystack
// flows through this so that a fixed seed reproduces runs byte-for-byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n), n >= 1.
  size_t below(size_t n) {
    return static_cast<size_t>(gen_() % static_cast<uint64_t>(n));
  }

  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    // Box-Muller, consuming two uniforms per pair; cached second value.
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // In-place Fisher-Yates; stable across platforms (unlike std::shuffle).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = below(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for weight fingerprints and freeze checks.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(uint64_t v);

// Small file helpers.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<std::string> read_lines(const std::string& path);

std::string trim(const std::string& s);
std::vector<std::string> split_ws(const std::string& s);

// Fixed-format float for CSV/SVG output; locale-independent, deterministic.
std::string format_double(double v, int precision = 6);

}  // namespace driftguard
