#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedrec {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t actual);
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

// Flat parameter / update vector. The dimension is fixed at construction.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t dim() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  double& operator[](std::size_t j) { return values_[j]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double scale);

  // this += scale * other
  ParamVector& axpy(double scale, const ParamVector& other);

  bool all_finite() const;
  // Throws NonFiniteValue naming `where` if any entry is NaN or infinite.
  void require_finite(const std::string& where) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double scale, ParamVector v);

void require_same_dim(const ParamVector& a, const ParamVector& b);

double dot(const ParamVector& a, const ParamVector& b);
double l2_norm(const ParamVector& v);
double linf_norm(const ParamVector& v);

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// All randomness in the simulator flows from a 64-bit global seed through
// derive_seed() into counter-based RngStream instances. Both use the
// splitmix64 finalizer, so the sequences are fully specified here and do not
// depend on the standard library's distribution implementations.

std::uint64_t splitmix64(std::uint64_t x);

// Stream tags separating independent consumers of the global seed.
enum class StreamTag : std::uint32_t {
  kInit = 0,
  kBatch = 1,
  kPartition = 2,
  kSynthetic = 3,
  kAttack = 4,
  kDetection = 5,
  kFineTune = 6,
  kMalicious = 7,
  kTest = 8,
};

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint32_t stream_tag,
                          std::int64_t client_id, std::int64_t round);
inline std::uint64_t derive_seed(std::uint64_t global_seed, StreamTag tag,
                                 std::int64_t client_id, std::int64_t round) {
  return derive_seed(global_seed, static_cast<std::uint32_t>(tag), client_id,
                     round);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  // Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Central-difference gradient of f at w with step h.
ParamVector finite_diff_gradient(
    const std::function<double(const ParamVector&)>& f, const ParamVector& w,
    double h);

}  // namespace fedrec
