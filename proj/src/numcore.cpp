#include "fedrec/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fedrec {

DimensionMismatch::DimensionMismatch(std::size_t expected, std::size_t actual)
    : Error("dimension mismatch: expected " + std::to_string(expected) +
            ", got " + std::to_string(actual)) {}

void require_same_dim(const ParamVector& a, const ParamVector& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim());
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_same_dim(*this, other);
  for (std::size_t j = 0; j < values_.size(); ++j) values_[j] += other.values_[j];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_same_dim(*this, other);
  for (std::size_t j = 0; j < values_.size(); ++j) values_[j] -= other.values_[j];
  return *this;
}

ParamVector& ParamVector::operator*=(double scale) {
  for (double& x : values_) x *= scale;
  return *this;
}

ParamVector& ParamVector::axpy(double scale, const ParamVector& other) {
  require_same_dim(*this, other);
  for (std::size_t j = 0; j < values_.size(); ++j)
    values_[j] += scale * other.values_[j];
  return *this;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double x) { return std::isfinite(x); });
}

void ParamVector::require_finite(const std::string& where) const {
  if (!all_finite()) throw NonFiniteValue("non-finite value in " + where);
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double scale, ParamVector v) { return v *= scale; }

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b);
  double sum = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) sum += a[j] * b[j];
  return sum;
}

double l2_norm(const ParamVector& v) { return std::sqrt(dot(v, v)); }

double linf_norm(const ParamVector& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint32_t stream_tag,
                          std::int64_t client_id, std::int64_t round) {
  std::uint64_t h = splitmix64(global_seed);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(stream_tag) + 1));
  h = splitmix64(h ^ static_cast<std::uint64_t>(client_id));
  h = splitmix64(h ^ static_cast<std::uint64_t>(round));
  return h;
}

std::uint64_t RngStream::next_u64() {
  return splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * counter_++);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("uniform_index: empty range");
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  // Box-Muller, one draw per call; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost to shape + 1 and rescale.
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

ParamVector finite_diff_gradient(
    const std::function<double(const ParamVector&)>& f, const ParamVector& w,
    double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_gradient: h must be > 0");
  ParamVector grad(w.dim());
  ParamVector probe = w;
  for (std::size_t j = 0; j < w.dim(); ++j) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const double plus = f(probe);
    probe[j] = orig - h;
    const double minus = f(probe);
    probe[j] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NonFiniteValue("finite_diff_gradient: loss is not finite at coordinate " +
                           std::to_string(j));
    grad[j] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

}  // namespace fedrec
