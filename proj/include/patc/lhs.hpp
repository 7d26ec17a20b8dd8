#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "patc/distributions.hpp"

namespace patc {

/// Portable draws from a 64-bit Mersenne Twister: the standard distributions
/// are implementation defined, these are not.
class SeededStream
{
 public:
  explicit SeededStream(std::uint64_t seed)
      : engine_(seed)
  {
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n)
  {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
      const auto r = engine_();
      if (r < limit)
        return r % n;
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v)
  {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
  }

  double standard_normal() { return normal_quantile(uniform()); }

 private:
  std::mt19937_64 engine_;
};

/// Latin hypercube design in standard normal space: for every dimension each
/// of the `samples` equal-probability strata holds exactly one point, the
/// strata order is an independent permutation per dimension.
inline Eigen::MatrixXd lhs_design(std::size_t dimensions, std::size_t samples, std::uint64_t seed)
{
  Eigen::MatrixXd out(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(dimensions));
  if (samples == 0)
    return out;
  SeededStream rng(seed);
  std::vector<std::size_t> perm(samples);
  const double m = static_cast<double>(samples);
  for (std::size_t j = 0; j < dimensions; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    for (std::size_t k = 0; k < samples; ++k) {
      const double u = std::min((static_cast<double>(perm[k]) + rng.uniform()) / m,
                                std::nextafter(1.0, 0.0));
      out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = normal_quantile(u);
    }
  }
  return out;
}

} // namespace patc
