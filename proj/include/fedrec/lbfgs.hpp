#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "fedrec/numcore.hpp"

namespace fedrec {

// Raised when the compact L-BFGS system cannot be solved; callers fall back to
// requesting an exact update.
class LbfgsSingular : public Error {
 public:
  using Error::Error;
};

// Approximate Hessian-vector product from the compact (Byrd-Nocedal-Schnabel)
// representation of the L-BFGS Hessian built from secant pairs
// (dw[k], dg[k]), ordered oldest to newest.
//
//   A     = dWᵀ dG,   D = diag(A),   L = strictly lower triangle of A
//   sigma = dg_lastᵀ dw_last / dw_lastᵀ dw_last
//   p     = [[-D, Lᵀ], [L, sigma dWᵀ dW]]⁻¹ [dGᵀ v; sigma dWᵀ v]
//   H v   = sigma v - [dG | sigma dW] p
ParamVector lbfgs_hvp(std::span<const ParamVector> dw,
                      std::span<const ParamVector> dg, const ParamVector& v);

// Sliding windows of global-model differences (shared) and per-client
// model-update differences, each holding at most `capacity` entries.
class LbfgsBuffers {
 public:
  explicit LbfgsBuffers(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  void push_global(ParamVector dw);
  void push_client(int client, ParamVector dg);

  const std::deque<ParamVector>& global() const { return global_; }
  const std::deque<ParamVector>& client(int id) const;

  // H̃ v for one client, pairing the newest min(|dW|, |dG_i|) entries.
  ParamVector hvp(int client, const ParamVector& v) const;

 private:
  std::size_t capacity_;
  std::deque<ParamVector> global_;
  std::map<int, std::deque<ParamVector>> clients_;
};

}  // namespace fedrec
