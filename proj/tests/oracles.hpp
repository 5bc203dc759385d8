#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance suite. They favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "fedrec/numcore.hpp"

namespace oracle {

inline std::vector<double> column(const std::vector<fedrec::ParamVector>& updates,
                                  std::size_t j) {
  std::vector<double> col;
  for (const auto& u : updates) col.push_back(u[j]);
  std::sort(col.begin(), col.end());
  return col;
}

inline fedrec::ParamVector median(const std::vector<fedrec::ParamVector>& updates) {
  const std::size_t d = updates.front().dim();
  const std::size_t n = updates.size();
  fedrec::ParamVector out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = column(updates, j);
    out[j] = n % 2 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
  }
  return out;
}

inline fedrec::ParamVector trimmed_mean(const std::vector<fedrec::ParamVector>& updates,
                                        std::size_t k) {
  const std::size_t d = updates.front().dim();
  const std::size_t n = updates.size();
  fedrec::ParamVector out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = column(updates, j);
    double sum = 0.0;
    for (std::size_t i = k; i < n - k; ++i) sum += col[i];
    out[j] = sum / static_cast<double>(n - 2 * k);
  }
  return out;
}

inline fedrec::ParamVector weighted_mean(const std::vector<fedrec::ParamVector>& updates,
                                         const std::vector<std::size_t>& sizes) {
  double total = 0.0;
  for (auto s : sizes) total += static_cast<double>(s);
  fedrec::ParamVector out(updates.front().dim());
  for (std::size_t j = 0; j < out.dim(); ++j)
    for (std::size_t i = 0; i < updates.size(); ++i)
      out[j] += static_cast<double>(sizes[i]) / total * updates[i][j];
  return out;
}

// Dense BFGS matrix built by the textbook recursive update from B0 = sigma I,
// with sigma taken from the newest pair. Its action equals the compact
// L-BFGS representation.
inline Eigen::MatrixXd bfgs_matrix(const std::vector<fedrec::ParamVector>& dw,
                                   const std::vector<fedrec::ParamVector>& dg) {
  const auto d = static_cast<Eigen::Index>(dw.front().dim());
  auto vec = [&](const fedrec::ParamVector& p) {
    return Eigen::Map<const Eigen::VectorXd>(p.data(), d);
  };
  const Eigen::VectorXd s_last = vec(dw.back());
  const Eigen::VectorXd y_last = vec(dg.back());
  const double sigma = y_last.dot(s_last) / s_last.dot(s_last);
  Eigen::MatrixXd B = sigma * Eigen::MatrixXd::Identity(d, d);
  for (std::size_t k = 0; k < dw.size(); ++k) {
    const Eigen::VectorXd s = vec(dw[k]);
    const Eigen::VectorXd y = vec(dg[k]);
    const Eigen::VectorXd Bs = B * s;
    B = B - (Bs * Bs.transpose()) / s.dot(Bs) + (y * y.transpose()) / y.dot(s);
  }
  return B;
}

inline Eigen::MatrixXd random_spd(std::size_t d, fedrec::RngStream& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd A(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = rng.normal();
  return A * A.transpose() + static_cast<double>(d) * Eigen::MatrixXd::Identity(n, n);
}

inline fedrec::ParamVector random_vector(std::size_t d, fedrec::RngStream& rng,
                                         double scale = 1.0) {
  fedrec::ParamVector v(d);
  for (std::size_t j = 0; j < d; ++j) v[j] = scale * rng.normal();
  return v;
}

inline fedrec::ParamVector times(const Eigen::MatrixXd& M, const fedrec::ParamVector& v) {
  const auto d = static_cast<Eigen::Index>(v.dim());
  const Eigen::VectorXd r = M * Eigen::Map<const Eigen::VectorXd>(v.data(), d);
  return fedrec::ParamVector(std::vector<double>(r.data(), r.data() + r.size()));
}

// Central differences, one coordinate at a time.
inline fedrec::ParamVector central_difference(
    const std::function<double(const fedrec::ParamVector&)>& f, fedrec::ParamVector w,
    double h) {
  fedrec::ParamVector g(w.dim());
  for (std::size_t j = 0; j < w.dim(); ++j) {
    const double keep = w[j];
    w[j] = keep + h;
    const double up = f(w);
    w[j] = keep - h;
    const double down = f(w);
    w[j] = keep;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||got - want||_inf / (1 + ||got||_inf)
inline double relative_linf_error(const fedrec::ParamVector& got,
                                  const fedrec::ParamVector& want) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t j = 0; j < got.dim(); ++j) {
    diff = std::max(diff, std::abs(got[j] - want[j]));
    scale = std::max(scale, std::abs(got[j]));
  }
  return diff / (1.0 + scale);
}

}  // namespace oracle
