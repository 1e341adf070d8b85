#pragma once

#include "phmb/core.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace phmb {

/// Axis-aligned box of sample coordinates.
struct SampleBox {
  Vec lo;
  Vec hi;

  Eigen::Index dim() const { return lo.size(); }
};

/**
 * Reproducible point set standing in for a "for all x in U" quantifier.
 *
 * The first point is the box center; the rest follow a Halton sequence with a seeded
 * Cranley-Patterson shift.  Points rejected by the guard are skipped.
 */
struct SampleSet {
  std::vector<Vec> points;
  std::uint64_t seed = 0;
  int count = 0;
  SampleBox box;
};

namespace detail {

inline double radical_inverse(std::uint64_t index, unsigned base) {
  double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

inline unsigned nth_prime(int k) {
  static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,  43,  47,  53,
                                    59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
  if (k < 0 || k >= static_cast<int>(sizeof primes / sizeof primes[0])) {
    throw ShapeError("sample dimension too large for the Halton generator");
  }
  return primes[k];
}

/// Uniform double in [0, 1) from the raw 64-bit engine output (portable across libraries).
inline double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace detail

inline SampleSet make_samples(const SampleBox& box, int count, std::uint64_t seed,
                              const std::function<bool(const Vec&)>& accept = {}) {
  if (count <= 0) throw ShapeError("sample count must be positive");
  if (box.lo.size() != box.hi.size()) throw ShapeError("sample box bounds differ in length");
  const Eigen::Index d = box.dim();
  std::mt19937_64 rng(seed);
  Vec shift(d);
  for (Eigen::Index i = 0; i < d; ++i) shift(i) = detail::unit_from_bits(rng());

  SampleSet set;
  set.seed = seed;
  set.count = count;
  set.box = box;
  const Vec center = 0.5 * (box.lo + box.hi);
  if (!accept || accept(center)) set.points.push_back(center);

  const std::uint64_t max_tries = static_cast<std::uint64_t>(count) * 100 + 100;
  for (std::uint64_t idx = 1; static_cast<int>(set.points.size()) < count; ++idx) {
    if (idx > max_tries) throw ShapeError("sample box rejected by the domain guard too often");
    Vec x(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      double u = detail::radical_inverse(idx, detail::nth_prime(static_cast<int>(i))) + shift(i);
      if (u >= 1.0) u -= 1.0;
      x(i) = box.lo(i) + u * (box.hi(i) - box.lo(i));
    }
    if (!accept || accept(x)) set.points.push_back(std::move(x));
  }
  return set;
}

}  // namespace phmb
