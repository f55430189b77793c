#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tplprog {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string base64Encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64Decode(std::string_view text);

std::string readFile(const std::string& path);
void writeFile(const std::string& path, std::string_view data);

/// Deterministic RNG. The distribution helpers are implemented here rather
/// than taken from <random> so that draws match across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  /// Uniform integer in [0, n).
  int uniformInt(int n);
  double uniform01();
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }
  /// Index drawn proportionally to nonnegative weights (all-zero -> -1).
  int categorical(std::span<const double> weights);
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(uniformInt(i + 1))]);
  }
  /// Child RNG for an independent stream (e.g. one per dataset item).
  Rng split(std::uint64_t stream);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tplprog
