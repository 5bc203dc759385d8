#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fedrec/aggregation.hpp"
#include "fedrec/attacks.hpp"
#include "fedrec/data.hpp"
#include "fedrec/history.hpp"
#include "fedrec/models.hpp"
#include "fedrec/numcore.hpp"

namespace fedrec {

// Mini-batch schedule of one client: the local data is reshuffled at the start
// of every epoch and consumed in consecutive batches, without replacement.
// The batch for a given local step depends only on (seed, client, step), so
// original training and every recovery method see identical batches.
class BatchSampler {
 public:
  BatchSampler(std::uint64_t seed, int client_id, std::size_t data_size,
               std::size_t batch_size);

  // Positions in [0, data_size) forming the batch of local step `step`.
  std::vector<std::size_t> positions(std::uint64_t step) const;

  std::size_t batch_size() const { return batch_size_; }
  std::size_t batches_per_epoch() const { return batches_per_epoch_; }

 private:
  std::uint64_t seed_;
  int client_id_;
  std::size_t data_size_;
  std::size_t batch_size_;
  std::size_t batches_per_epoch_;
};

// One client's contribution in `round`. l = 1 returns the mini-batch gradient
// at w; l > 1 runs l local SGD steps and returns (w - w_after) / eta.
ParamVector client_local_update(const ModelSpec& spec, const ParamVector& w,
                                const Dataset& data,
                                std::span<const std::size_t> rows,
                                const BatchSampler& sampler, std::uint64_t round,
                                std::size_t local_steps, double eta);

struct FlSetup {
  ModelSpec spec;
  AggregationRule rule;
  double eta = 3e-4;
  std::size_t batch_size = 32;
  std::size_t local_steps = 1;  // l
  std::uint64_t seed = 0;
};

// The simulated client population: data shards, who is malicious, and how
// they attack. Immutable after construction.
class Federation {
 public:
  Federation(std::shared_ptr<const Dataset> train, std::vector<ClientShard> shards,
             FlSetup setup, std::set<int> malicious = {},
             std::optional<AttackConfig> attack = std::nullopt);

  const FlSetup& setup() const { return setup_; }
  const Dataset& train_data() const { return *train_; }
  std::size_t n_clients() const { return clients_.size(); }
  std::vector<int> client_ids() const;
  const std::set<int>& malicious() const { return malicious_; }
  const std::optional<AttackConfig>& attack() const { return attack_; }
  std::size_t shard_size(int client) const;

  // Genuine update computed on the client's own clean shard.
  ParamVector benign_update(int client, const ParamVector& w, std::uint64_t round) const;

  // Update computed by a backdoor client on its poisoned data, before scaling.
  ParamVector poisoned_update(int client, const ParamVector& w, std::uint64_t round) const;

  // Hessian of the client's ridge batch loss in `round` (requires l = 1).
  Eigen::MatrixXd ridge_batch_hessian(int client, std::uint64_t round) const;

  // Updates as reported in `round` by `participants`. Members of `attackers`
  // substitute crafted updates when an attack is configured; backdoor
  // attackers scale by `backdoor_scale`. Results are keyed by client id.
  std::map<int, ParamVector> collect_updates(const ParamVector& w, std::uint64_t round,
                                             std::span<const int> participants,
                                             const std::set<int>& attackers,
                                             double backdoor_scale) const;

  // Aggregates with the configured rule; FedAvg weights are true shard sizes.
  ParamVector aggregate(const std::map<int, ParamVector>& updates) const;

 private:
  struct Client {
    int id = 0;
    std::vector<std::size_t> rows;
    BatchSampler sampler;
    std::shared_ptr<const Dataset> poisoned;  // backdoor attackers only
    std::optional<BatchSampler> poisoned_sampler;
  };
  const Client& client(int id) const;

  std::shared_ptr<const Dataset> train_;
  FlSetup setup_;
  std::set<int> malicious_;
  std::optional<AttackConfig> attack_;
  std::vector<Client> clients_;
};

struct TrainState {
  std::uint64_t round = 0;
  ParamVector global_model;
};

// Steps I-III for all clients; the record holds the updates as reported.
RoundRecord run_round(TrainState& state, const Federation& federation);

// Original (possibly poisoned) training for `rounds` rounds from `w0`.
// Every record is appended to `writer` when given.
struct TrainResult {
  History history;
  ParamVector final_model;
};
TrainResult train(const Federation& federation, const ParamVector& w0,
                  std::size_t rounds, HistoryWriter* writer = nullptr);

// w_T recomputed from the last stored round.
ParamVector final_model_from_history(const History& history,
                                     const Federation& federation);

}  // namespace fedrec
