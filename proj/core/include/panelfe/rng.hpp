#pragma once

#include <cstdint>
#include <random>

#include "panelfe/linalg.hpp"
#include "panelfe/normal.hpp"

namespace panelfe {

// Identity string recorded in report metadata; bump on any change to the
// draw scheme below.
inline constexpr const char* kGeneratorId = "mt19937_64+inverse-cdf v1";

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for stream `stream` derived from `base`; replications and solver
// restarts each get their own stream so results are schedule-independent.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632be59bd9b4e019ull));
}

// Deterministic normal variates: mt19937_64 uniforms mapped through the
// inverse normal CDF. Fully specified, so identical bits across platforms.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() {
    return (static_cast<double>(rng_() >> 11) + 0.5) *
           (1.0 / 9007199254740992.0);
  }

  double normal() { return normal_quantile(uniform()); }

  // Row-major fill order (documented draw order for reproducibility).
  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        m(i, j) = normal();
      }
    }
    return m;
  }

  Vector normal_vector(Index size) {
    Vector v(size);
    for (Index i = 0; i < size; ++i) {
      v(i) = normal();
    }
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace panelfe
