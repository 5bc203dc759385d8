#include "fedrec/lbfgs.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace fedrec {

ParamVector lbfgs_hvp(std::span<const ParamVector> dw,
                      std::span<const ParamVector> dg, const ParamVector& v) {
  const std::size_t s = dw.size();
  if (s == 0) throw InvalidArgument("lbfgs_hvp: empty buffers");
  if (dg.size() != s) throw InvalidArgument("lbfgs_hvp: buffer lengths differ");
  const std::size_t d = v.dim();
  for (std::size_t k = 0; k < s; ++k) {
    if (dw[k].dim() != d) throw DimensionMismatch(d, dw[k].dim());
    if (dg[k].dim() != d) throw DimensionMismatch(d, dg[k].dim());
  }

  const auto n = static_cast<Eigen::Index>(d);
  const auto m = static_cast<Eigen::Index>(s);
  Eigen::MatrixXd W(n, m), G(n, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    W.col(k) = Eigen::Map<const Eigen::VectorXd>(dw[k].data(), n);
    G.col(k) = Eigen::Map<const Eigen::VectorXd>(dg[k].data(), n);
  }
  const Eigen::Map<const Eigen::VectorXd> vv(v.data(), n);

  const double ww_last = W.col(m - 1).squaredNorm();
  if (!(ww_last > 0.0)) throw LbfgsSingular("lbfgs_hvp: newest model difference is zero");
  const double sigma = G.col(m - 1).dot(W.col(m - 1)) / ww_last;
  if (!std::isfinite(sigma)) throw LbfgsSingular("lbfgs_hvp: non-finite scaling");

  const Eigen::MatrixXd A = W.transpose() * G;
  const Eigen::MatrixXd L = A.triangularView<Eigen::StrictlyLower>();

  Eigen::MatrixXd block(2 * m, 2 * m);
  block.topLeftCorner(m, m) = -Eigen::MatrixXd(A.diagonal().asDiagonal());
  block.topRightCorner(m, m) = L.transpose();
  block.bottomLeftCorner(m, m) = L;
  block.bottomRightCorner(m, m) = sigma * (W.transpose() * W);

  Eigen::VectorXd rhs(2 * m);
  rhs.head(m) = G.transpose() * vv;
  rhs.tail(m) = sigma * (W.transpose() * vv);

  const Eigen::FullPivLU<Eigen::MatrixXd> lu(block);
  if (!lu.isInvertible()) throw LbfgsSingular("lbfgs_hvp: singular block system");
  const Eigen::VectorXd p = lu.solve(rhs);
  if (!p.allFinite()) throw LbfgsSingular("lbfgs_hvp: non-finite solution");

  ParamVector out(d);
  Eigen::Map<Eigen::VectorXd> result(out.data(), n);
  result = sigma * vv - G * p.head(m) - sigma * (W * p.tail(m));
  return out;
}

LbfgsBuffers::LbfgsBuffers(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("L-BFGS buffer size must be >= 1");
}

void LbfgsBuffers::push_global(ParamVector dw) {
  global_.push_back(std::move(dw));
  if (global_.size() > capacity_) global_.pop_front();
}

void LbfgsBuffers::push_client(int client, ParamVector dg) {
  auto& buf = clients_[client];
  buf.push_back(std::move(dg));
  if (buf.size() > capacity_) buf.pop_front();
}

const std::deque<ParamVector>& LbfgsBuffers::client(int id) const {
  static const std::deque<ParamVector> empty;
  const auto it = clients_.find(id);
  return it == clients_.end() ? empty : it->second;
}

ParamVector LbfgsBuffers::hvp(int client_id, const ParamVector& v) const {
  const auto& dg = client(client_id);
  const std::size_t s = std::min(global_.size(), dg.size());
  if (s == 0) throw LbfgsSingular("L-BFGS buffers are empty");
  const std::vector<ParamVector> w_tail(global_.end() - static_cast<std::ptrdiff_t>(s),
                                        global_.end());
  const std::vector<ParamVector> g_tail(dg.end() - static_cast<std::ptrdiff_t>(s), dg.end());
  return lbfgs_hvp(w_tail, g_tail, v);
}

}  // namespace fedrec
