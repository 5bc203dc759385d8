#include "fedrec/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fedrec {

void RecoveryParams::validate(std::size_t total_rounds) const {
  if (buffer == 0) throw InvalidArgument("recovery: buffer size s must be >= 1");
  if (warmup <= buffer)
    throw InvalidArgument("recovery: warm-up rounds must exceed the buffer size");
  if (correction == 0) throw InvalidArgument("recovery: correction period must be >= 1");
  if (warmup + final_tuning > total_rounds)
    throw InvalidArgument("recovery: warm-up + final tuning exceeds total rounds");
  if (threshold) {
    if (std::isnan(*threshold) || *threshold < 0.0)
      throw InvalidArgument("recovery: threshold must be non-negative");
  } else if (!(tolerance > 0.0 && tolerance <= 1.0)) {
    throw InvalidArgument("recovery: tolerance rate must lie in (0, 1]");
  }
}

ParamVector estimate_update(const ParamVector& original_update,
                            const ParamVector& hvp_result) {
  return original_update + hvp_result;
}

ParamVector exact_integrated_hvp_quadratic(const Eigen::MatrixXd& hessian,
                                           const ParamVector& v) {
  const auto n = static_cast<Eigen::Index>(v.dim());
  if (hessian.rows() != n || hessian.cols() != n)
    throw DimensionMismatch(v.dim(), static_cast<std::size_t>(hessian.rows()));
  ParamVector out(v.dim());
  Eigen::Map<Eigen::VectorXd>(out.data(), n) =
      hessian * Eigen::Map<const Eigen::VectorXd>(v.data(), n);
  return out;
}

double round_threshold(std::vector<double> pool, double alpha) {
  if (pool.empty()) throw InvalidArgument("threshold: empty pool");
  std::sort(pool.begin(), pool.end(), std::greater<>());
  // sorted[i] has at most i values strictly above it.
  const auto allowed = static_cast<std::size_t>(
      std::floor(alpha * static_cast<double>(pool.size())));
  return pool[std::min(allowed, pool.size() - 1)];
}

double compute_threshold(const History& history, const std::set<int>& remaining,
                         double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw InvalidArgument("threshold: tolerance rate must lie in (0, 1]");
  if (history.records.empty()) throw InvalidArgument("threshold: empty history");
  double tau = -std::numeric_limits<double>::infinity();
  std::vector<double> pool;
  for (const auto& record : history.records) {
    pool.clear();
    for (int id : remaining) {
      const auto it = record.updates.find(id);
      if (it == record.updates.end()) continue;
      for (double x : it->second) pool.push_back(std::abs(x));
    }
    if (pool.empty()) continue;
    tau = std::max(tau, round_threshold(pool, alpha));
  }
  return tau;
}

std::set<int> remaining_clients(const Federation& federation,
                                const std::set<int>& detected) {
  std::set<int> out;
  for (int id : federation.client_ids())
    if (!detected.contains(id)) out.insert(id);
  if (out.empty()) throw InvalidArgument("recovery: every client was removed");
  return out;
}

namespace {

const ParamVector& stored_update(const RoundRecord& record, int client) {
  const auto it = record.updates.find(client);
  if (it == record.updates.end())
    throw HistoryError("round " + std::to_string(record.round) +
                       " has no stored update for client " + std::to_string(client));
  return it->second;
}

}  // namespace

RecoveryResult fedrecover(const History& history, const Federation& federation,
                          const std::set<int>& detected, const RecoveryParams& params,
                          const ResidualAttack& residual,
                          const EstimateObserver& observer) {
  const std::size_t T = history.records.size();
  params.validate(T);
  if (params.hvp_mode == HvpMode::kExactQuadratic &&
      federation.setup().spec.kind != ModelKind::kRidge)
    throw InvalidArgument("exact quadratic HVP requires the ridge model");

  const std::set<int> remaining = remaining_clients(federation, detected);
  const std::vector<int> ids(remaining.begin(), remaining.end());
  for (int a : residual.attackers)
    if (!remaining.contains(a))
      throw InvalidArgument("residual attacker " + std::to_string(a) + " was removed");

  RecoveryResult result;
  result.threshold = params.threshold ? *params.threshold
                                      : compute_threshold(history, remaining, params.tolerance);
  for (int id : ids) result.exact_rounds[id] = 0;

  const double eta = federation.setup().eta;
  LbfgsBuffers buffers(params.buffer);
  ParamVector w = history.records.front().global_model;
  result.per_round_models.reserve(T + 1);
  result.per_round_models.push_back(w);

  auto exact_for = [&](std::span<const int> who, std::uint64_t t) {
    return federation.collect_updates(w, t, who, residual.attackers, residual.backdoor_scale);
  };

  for (std::size_t t = 0; t < T; ++t) {
    const RoundRecord& record = history.records[t];
    const ParamVector dw = w - record.global_model;
    const bool on_track = linf_norm(dw) == 0.0;
    const bool full_exact = t < params.warmup || t + params.final_tuning >= T ||
                            (t - params.warmup + 1) % params.correction == 0;

    std::map<int, ParamVector> updates;
    if (full_exact) {
      updates = exact_for(ids, t);
      for (const auto& [id, g] : updates) {
        ++result.exact_rounds[id];
        buffers.push_client(id, g - stored_update(record, id));
      }
      buffers.push_global(dw);
    } else {
      for (int id : ids) {
        const ParamVector& g_bar = stored_update(record, id);
        std::optional<ParamVector> estimate;
        try {
          if (on_track) {
            estimate = g_bar;
          } else {
            const ParamVector hv =
                params.hvp_mode == HvpMode::kLbfgs
                    ? buffers.hvp(id, dw)
                    : exact_integrated_hvp_quadratic(federation.ridge_batch_hessian(id, t), dw);
            estimate = estimate_update(g_bar, hv);
          }
          if (!estimate->all_finite()) estimate.reset();
        } catch (const LbfgsSingular&) {
        }
        if (!estimate) {
          ++result.singular_fallbacks;
        } else if (linf_norm(*estimate) > result.threshold) {
          ++result.abnormality_count;
          estimate.reset();
        }
        if (estimate) {
          if (observer) observer(t, id, w, *estimate);
          updates.emplace(id, std::move(*estimate));
          continue;
        }
        const int single[] = {id};
        ParamVector g = std::move(exact_for(single, t).at(id));
        ++result.exact_rounds[id];
        buffers.push_client(id, g - g_bar);
        updates.emplace(id, std::move(g));
      }
    }
    w = apply_update(w, federation.aggregate(updates), eta);
    w.require_finite("recovered model after round " + std::to_string(t));
    result.per_round_models.push_back(w);
  }
  result.recovered_model = w;
  return result;
}

TraceResult train_from_scratch(const Federation& federation,
                                 const std::set<int>& remaining, const ParamVector& w0,
                                 std::size_t rounds, const ResidualAttack& residual) {
  if (remaining.empty()) throw InvalidArgument("train_from_scratch: no remaining clients");
  const std::vector<int> ids(remaining.begin(), remaining.end());
  TraceResult out;
  out.per_round_models.reserve(rounds + 1);
  ParamVector w = w0;
  out.per_round_models.push_back(w);
  for (int id : ids) out.exact_rounds[id] = rounds;
  for (std::size_t t = 0; t < rounds; ++t) {
    const auto updates = federation.collect_updates(w, t, ids, residual.attackers,
                                                    residual.backdoor_scale);
    w = apply_update(w, federation.aggregate(updates), federation.setup().eta);
    w.require_finite("scratch model after round " + std::to_string(t));
    out.per_round_models.push_back(w);
  }
  out.model = std::move(w);
  return out;
}

TraceResult historical_only(const History& history, const Federation& federation,
                            const std::set<int>& detected) {
  if (history.records.empty()) throw InvalidArgument("historical_only: empty history");
  const std::set<int> remaining = remaining_clients(federation, detected);
  TraceResult out;
  for (int id : remaining) out.exact_rounds[id] = 0;
  ParamVector w = history.records.front().global_model;
  out.per_round_models.reserve(history.records.size() + 1);
  out.per_round_models.push_back(w);
  for (const auto& record : history.records) {
    std::map<int, ParamVector> updates;
    for (int id : remaining) updates.emplace(id, stored_update(record, id));
    w = apply_update(w, federation.aggregate(updates), federation.setup().eta);
    out.per_round_models.push_back(w);
  }
  out.model = std::move(w);
  return out;
}

std::vector<std::size_t> fine_tune_class_counts(int num_classes, std::size_t n,
                                                const std::optional<double>& beta,
                                                RngStream& rng) {
  const auto classes = static_cast<std::size_t>(num_classes);
  std::vector<double> p(classes, 1.0 / static_cast<double>(classes));
  if (beta) {
    if (!(*beta > 0.0)) throw InvalidArgument("fine_tune: beta must be positive");
    double sum = 0.0;
    for (double& x : p) sum += (x = rng.gamma(*beta));
    for (double& x : p) x /= sum;
  }
  std::vector<std::size_t> counts(classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = p[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned)
    ++counts[remainders[k % classes].second];
  return counts;
}

ParamVector fine_tune(const ModelSpec& spec, const ParamVector& poisoned_model,
                      const Dataset& clean, const FineTuneParams& params) {
  if (poisoned_model.dim() != spec.param_dim())
    throw DimensionMismatch(spec.param_dim(), poisoned_model.dim());
  if (params.epochs == 0) return poisoned_model;
  if (params.batch_size == 0) throw InvalidArgument("fine_tune: batch size must be >= 1");

  RngStream rng(derive_seed(params.seed, StreamTag::kFineTune, 0, 0));
  const auto counts = fine_tune_class_counts(clean.num_classes, params.examples,
                                             params.beta, rng);
  std::vector<std::vector<std::size_t>> by_class(counts.size());
  for (std::size_t i = 0; i < clean.size(); ++i)
    by_class[static_cast<std::size_t>(clean.labels[i])].push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > by_class[c].size())
      throw InvalidArgument("fine_tune: class " + std::to_string(c) + " needs " +
                            std::to_string(counts[c]) + " examples but only " +
                            std::to_string(by_class[c].size()) + " exist");
    rng.shuffle(by_class[c]);
    chosen.insert(chosen.end(), by_class[c].begin(),
                  by_class[c].begin() + static_cast<std::ptrdiff_t>(counts[c]));
  }
  if (chosen.empty()) return poisoned_model;

  ParamVector w = poisoned_model;
  std::vector<std::size_t> batch;
  for (std::size_t e = 0; e < params.epochs; ++e) {
    rng.shuffle(chosen);
    for (std::size_t at = 0; at < chosen.size(); at += params.batch_size) {
      const std::size_t end = std::min(at + params.batch_size, chosen.size());
      batch.assign(chosen.begin() + static_cast<std::ptrdiff_t>(at),
                   chosen.begin() + static_cast<std::ptrdiff_t>(end));
      w.axpy(-params.eta, gradient(spec, w, BatchView{clean, batch}));
    }
  }
  return w;
}

double theoretical_bound(double eta, double mu, double M, std::uint64_t t, double d0) {
  const double em = eta * mu;
  if (!(em > 0.0) || em > 1.0)
    throw InvalidArgument("theoretical_bound: requires 0 < eta * mu <= 1");
  const double rate = std::sqrt(1.0 - em);
  const double decay = std::pow(rate, static_cast<double>(t));
  return decay * d0 + (1.0 - decay) / (1.0 - rate) * eta * M;
}

std::size_t predicted_cost(std::size_t rounds, std::size_t warmup,
                           std::size_t correction, std::size_t final_tuning) {
  if (correction == 0) throw InvalidArgument("predicted_cost: T_c must be >= 1");
  if (warmup + final_tuning > rounds)
    throw InvalidArgument("predicted_cost: T_w + T_f exceeds T");
  return warmup + final_tuning + (rounds - warmup - final_tuning) / correction;
}

}  // namespace fedrec
