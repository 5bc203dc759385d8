#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "fedrec/flengine.hpp"
#include "fedrec/history.hpp"
#include "fedrec/lbfgs.hpp"
#include "fedrec/numcore.hpp"

namespace fedrec {

enum class HvpMode {
  kLbfgs,
  // Exact Hessian of the ridge batch loss; the integrated Hessian of a
  // quadratic is constant, so this is the zero-error reference.
  kExactQuadratic,
};

struct RecoveryParams {
  std::size_t warmup = 20;        // T_w
  std::size_t correction = 10;    // T_c
  std::size_t final_tuning = 5;   // T_f
  std::size_t buffer = 2;         // s
  double tolerance = 1e-6;        // alpha
  std::optional<double> threshold;  // explicit tau (may be +inf); overrides alpha
  HvpMode hvp_mode = HvpMode::kLbfgs;

  void validate(std::size_t total_rounds) const;
};

// Undetected malicious clients that keep attacking whenever they are asked
// for exact updates during recovery.
struct ResidualAttack {
  std::set<int> attackers;
  double backdoor_scale = 1.0;
};

struct RecoveryResult {
  ParamVector recovered_model;
  std::map<int, std::size_t> exact_rounds;  // T_r per remaining client
  std::size_t abnormality_count = 0;
  std::size_t singular_fallbacks = 0;
  double threshold = 0.0;                   // tau actually used
  std::vector<ParamVector> per_round_models;  // w_hat_0 .. w_hat_T
};

// Called for every estimated update that is used unmodified.
using EstimateObserver = std::function<void(std::uint64_t round, int client,
                                            const ParamVector& recovered_model,
                                            const ParamVector& estimate)>;

// g_hat = g_bar + hvp
ParamVector estimate_update(const ParamVector& original_update,
                            const ParamVector& hvp_result);

// H v for an explicit Hessian.
ParamVector exact_integrated_hvp_quadratic(const Eigen::MatrixXd& hessian,
                                           const ParamVector& v);

// tau_t is the smallest pooled |coordinate| of the remaining clients' stored
// updates such that at most alpha of the pool is strictly greater; tau is the
// maximum over rounds.
double compute_threshold(const History& history, const std::set<int>& remaining,
                         double alpha);
double round_threshold(std::vector<double> pool, double alpha);

std::set<int> remaining_clients(const Federation& federation,
                                const std::set<int>& detected);

RecoveryResult fedrecover(const History& history, const Federation& federation,
                          const std::set<int>& detected, const RecoveryParams& params,
                          const ResidualAttack& residual = {},
                          const EstimateObserver& observer = {});

struct TraceResult {
  ParamVector model;
  std::vector<ParamVector> per_round_models;  // w_0 .. w_T
  std::map<int, std::size_t> exact_rounds;
};

TraceResult train_from_scratch(const Federation& federation,
                                 const std::set<int>& remaining, const ParamVector& w0,
                                 std::size_t rounds, const ResidualAttack& residual = {});

// Replays the stored updates of the remaining clients from w_bar_0. No client
// computes anything, so every T_r is zero.
TraceResult historical_only(const History& history, const Federation& federation,
                            const std::set<int>& detected);

struct FineTuneParams {
  std::size_t epochs = 100;
  std::size_t examples = 1000;
  std::size_t batch_size = 32;
  double eta = 3e-4;
  std::optional<double> beta;  // Dirichlet concentration; nullopt = uniform
  std::uint64_t seed = 0;
};

// Class counts summing to n: Dirichlet(beta) proportions (or uniform), split
// by largest remainder.
std::vector<std::size_t> fine_tune_class_counts(int num_classes, std::size_t n,
                                                const std::optional<double>& beta,
                                                RngStream& rng);

ParamVector fine_tune(const ModelSpec& spec, const ParamVector& poisoned_model,
                      const Dataset& clean, const FineTuneParams& params);

// Distance bound between FedRecover and train-from-scratch models at round t.
double theoretical_bound(double eta, double mu, double M, std::uint64_t t, double d0);

// Exact rounds per client when abnormality fixing never fires.
std::size_t predicted_cost(std::size_t rounds, std::size_t warmup,
                           std::size_t correction, std::size_t final_tuning);

}  // namespace fedrec
