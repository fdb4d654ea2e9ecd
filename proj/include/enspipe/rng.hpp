#ifndef ENSPIPE_RNG_HPP_
#define ENSPIPE_RNG_HPP_

#include <cstdint>
#include <random>
#include <string>

namespace enspipe {

// Seeded deterministic random source. The underlying generator is
// std::mt19937_64, whose output stream is fixed by the C++ standard, so
// identical seeds give bit-identical streams on every platform. The
// algorithm id is written into file headers so fixtures stay reproducible.
class SeededRng {
public:
  static constexpr const char* kAlgorithm = "mt19937_64";

  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::string algorithm() const { return kAlgorithm; }

  // Uniform in [0, 1).
  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  // Uniform integer in [0, n).
  std::uint64_t uniformInt(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  // Deterministic Fisher-Yates shuffle (std::shuffle is not portable
  // across standard libraries).
  template <typename Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniformInt(i));
      std::swap(c[i - 1], c[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace enspipe

#endif  // ENSPIPE_RNG_HPP_
