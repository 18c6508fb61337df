#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace stormadapt {

// All network math runs in double precision so finite-difference checks
// can be held to tight tolerances.
using real = double;

// Thrown on caller mistakes (shape mismatch, bad config values, missing files).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an internal invariant breaks (NaN loss, corrupt checkpoint).
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

using Rng = std::mt19937_64;

// Derives an independent stream from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 over the pair; decorrelates consecutive streams.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Axis-aligned box in pixel coordinates, half-open not implied: [x_min,x_max].
struct Box {
  real x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  real width() const { return x_max - x_min; }
  real height() const { return y_max - y_min; }
  real area() const {
    real w = width(), h = height();
    return (w > 0 && h > 0) ? w * h : 0;
  }
  bool valid() const { return x_min < x_max && y_min < y_max; }
};

}  // namespace stormadapt
