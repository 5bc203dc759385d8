#include "fedrec/flengine.hpp"

#include <algorithm>
#include <numeric>

namespace fedrec {

BatchSampler::BatchSampler(std::uint64_t seed, int client_id, std::size_t data_size,
                           std::size_t batch_size)
    : seed_(seed), client_id_(client_id), data_size_(data_size), batch_size_(batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (data_size == 0) throw InvalidArgument("client has an empty shard");
  batches_per_epoch_ = (data_size + batch_size - 1) / batch_size;
}

std::vector<std::size_t> BatchSampler::positions(std::uint64_t step) const {
  std::vector<std::size_t> order(data_size_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (batches_per_epoch_ == 1) return order;  // full-shard batches

  const std::uint64_t epoch = step / batches_per_epoch_;
  const std::uint64_t slot = step % batches_per_epoch_;
  RngStream rng(derive_seed(seed_, StreamTag::kBatch, client_id_,
                            static_cast<std::int64_t>(epoch)));
  rng.shuffle(order);
  const std::size_t begin = slot * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, data_size_);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

ParamVector client_local_update(const ModelSpec& spec, const ParamVector& w,
                                const Dataset& data,
                                std::span<const std::size_t> rows,
                                const BatchSampler& sampler, std::uint64_t round,
                                std::size_t local_steps, double eta) {
  if (rows.empty()) throw InvalidArgument("client_local_update: empty shard");
  if (local_steps == 0) throw InvalidArgument("client_local_update: l must be >= 1");

  auto batch_rows = [&](std::uint64_t step) {
    const auto pos = sampler.positions(step);
    std::vector<std::size_t> out(pos.size());
    for (std::size_t k = 0; k < pos.size(); ++k) out[k] = rows[pos[k]];
    return out;
  };

  if (local_steps == 1) {
    const auto batch = batch_rows(round);
    return gradient(spec, w, BatchView{data, batch});
  }
  if (!(eta > 0.0)) throw InvalidArgument("client_local_update: eta must be positive");
  ParamVector local = w;
  for (std::size_t j = 0; j < local_steps; ++j) {
    const auto batch = batch_rows(round * local_steps + j);
    local.axpy(-eta, gradient(spec, local, BatchView{data, batch}));
  }
  ParamVector update = w - local;
  update *= 1.0 / eta;
  return update;
}

Federation::Federation(std::shared_ptr<const Dataset> train,
                       std::vector<ClientShard> shards, FlSetup setup,
                       std::set<int> malicious, std::optional<AttackConfig> attack)
    : train_(std::move(train)),
      setup_(std::move(setup)),
      malicious_(std::move(malicious)),
      attack_(std::move(attack)) {
  setup_.spec.validate();
  if (train_->dim != setup_.spec.input_dim)
    throw DimensionMismatch(setup_.spec.input_dim, train_->dim);
  if (!(setup_.eta > 0.0)) throw InvalidArgument("learning rate must be positive");
  std::sort(shards.begin(), shards.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 0; i < shards.size(); ++i)
    if (shards[i].client_id != static_cast<int>(i))
      throw InvalidArgument("client ids must be 0..n-1");
  for (int m : malicious_)
    if (m < 0 || m >= static_cast<int>(shards.size()))
      throw InvalidArgument("malicious client id out of range");

  const auto* backdoor = attack_ ? std::get_if<BackdoorAttack>(&*attack_) : nullptr;
  if (backdoor) validate_trigger(backdoor->trigger, train_->dim);

  clients_.reserve(shards.size());
  for (auto& shard : shards) {
    if (shard.indices.empty())
      throw InvalidArgument("client " + std::to_string(shard.client_id) +
                            " has an empty shard");
    BatchSampler sampler(setup_.seed, shard.client_id, shard.indices.size(),
                         setup_.batch_size);
    Client c{shard.client_id, std::move(shard.indices), sampler, nullptr, std::nullopt};
    if (backdoor && malicious_.contains(c.id)) {
      auto poisoned = std::make_shared<Dataset>(poison_shard_backdoor(
          *train_, c.rows, backdoor->trigger, backdoor->target_label));
      c.poisoned_sampler.emplace(
          derive_seed(setup_.seed, StreamTag::kAttack, c.id, -1), c.id,
          poisoned->size(), setup_.batch_size);
      c.poisoned = std::move(poisoned);
    }
    clients_.push_back(std::move(c));
  }
}

std::vector<int> Federation::client_ids() const {
  std::vector<int> ids(clients_.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

const Federation::Client& Federation::client(int id) const {
  if (id < 0 || id >= static_cast<int>(clients_.size()))
    throw InvalidArgument("unknown client id " + std::to_string(id));
  return clients_[static_cast<std::size_t>(id)];
}

std::size_t Federation::shard_size(int id) const { return client(id).rows.size(); }

ParamVector Federation::benign_update(int id, const ParamVector& w,
                                      std::uint64_t round) const {
  const Client& c = client(id);
  return client_local_update(setup_.spec, w, *train_, c.rows, c.sampler, round,
                             setup_.local_steps, setup_.eta);
}

ParamVector Federation::poisoned_update(int id, const ParamVector& w,
                                        std::uint64_t round) const {
  const Client& c = client(id);
  if (!c.poisoned) throw InvalidArgument("client " + std::to_string(id) + " holds no poisoned data");
  const auto rows = all_rows(*c.poisoned);
  return client_local_update(setup_.spec, w, *c.poisoned, rows, *c.poisoned_sampler,
                             round, setup_.local_steps, setup_.eta);
}

Eigen::MatrixXd Federation::ridge_batch_hessian(int id, std::uint64_t round) const {
  if (setup_.local_steps != 1)
    throw InvalidArgument("exact quadratic Hessian requires one local step per round");
  const Client& c = client(id);
  const auto pos = c.sampler.positions(round);
  std::vector<std::size_t> rows(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) rows[k] = c.rows[pos[k]];
  return ridge_hessian(setup_.spec, BatchView{*train_, rows});
}

std::map<int, ParamVector> Federation::collect_updates(
    const ParamVector& w, std::uint64_t round, std::span<const int> participants,
    const std::set<int>& attackers, double backdoor_scale) const {
  std::map<int, ParamVector> updates;
  std::vector<int> trim_attackers;
  const bool trim = attack_ && std::holds_alternative<TrimAttack>(*attack_);
  const bool backdoor = attack_ && std::holds_alternative<BackdoorAttack>(*attack_);

  for (int id : participants) {
    const bool attacking = attackers.contains(id);
    if (attacking && backdoor) {
      ParamVector u = poisoned_update(id, w, round);
      u *= backdoor_scale;
      updates.emplace(id, std::move(u));
      continue;
    }
    updates.emplace(id, benign_update(id, w, round));
    if (attacking && trim) trim_attackers.push_back(id);
  }

  if (!trim_attackers.empty()) {
    // Full knowledge: the crafted values are computed against every genuine
    // update of this round, the attackers' own included.
    std::vector<ParamVector> genuine;
    genuine.reserve(updates.size());
    for (const auto& [id, u] : updates) genuine.push_back(u);
    RngStream rng(derive_seed(setup_.seed, StreamTag::kAttack, 0,
                              static_cast<std::int64_t>(round)));
    auto crafted = trim_attack_updates(genuine, std::get<TrimAttack>(*attack_).b,
                                       trim_attackers.size(), rng);
    std::sort(trim_attackers.begin(), trim_attackers.end());
    for (std::size_t k = 0; k < trim_attackers.size(); ++k)
      updates[trim_attackers[k]] = std::move(crafted[k]);
  }
  return updates;
}

ParamVector Federation::aggregate(const std::map<int, ParamVector>& updates) const {
  std::vector<ParamVector> list;
  std::vector<std::size_t> sizes;
  list.reserve(updates.size());
  sizes.reserve(updates.size());
  for (const auto& [id, u] : updates) {
    list.push_back(u);
    sizes.push_back(shard_size(id));
  }
  return setup_.rule.aggregate(list, sizes);
}

RoundRecord run_round(TrainState& state, const Federation& federation) {
  const auto ids = federation.client_ids();
  double scale = 1.0;
  if (const auto& attack = federation.attack())
    if (const auto* bd = std::get_if<BackdoorAttack>(&*attack)) scale = bd->scale;

  RoundRecord record;
  record.round = static_cast<std::uint32_t>(state.round);
  record.global_model = state.global_model;
  record.updates = federation.collect_updates(state.global_model, state.round, ids,
                                              federation.malicious(), scale);
  const ParamVector agg = federation.aggregate(record.updates);
  state.global_model = apply_update(state.global_model, agg, federation.setup().eta);
  state.global_model.require_finite("global model after round " +
                                    std::to_string(state.round));
  ++state.round;
  return record;
}

TrainResult train(const Federation& federation, const ParamVector& w0,
                  std::size_t rounds, HistoryWriter* writer) {
  if (w0.dim() != federation.setup().spec.param_dim())
    throw DimensionMismatch(federation.setup().spec.param_dim(), w0.dim());
  TrainResult result;
  result.history.meta.dim = w0.dim();
  result.history.meta.n_clients = static_cast<std::uint32_t>(federation.n_clients());
  result.history.meta.rounds = static_cast<std::uint32_t>(rounds);
  result.history.records.reserve(rounds);

  TrainState state{0, w0};
  for (std::size_t t = 0; t < rounds; ++t) {
    RoundRecord record = run_round(state, federation);
    if (writer) writer->append(record);
    result.history.records.push_back(std::move(record));
  }
  result.final_model = std::move(state.global_model);
  return result;
}

ParamVector final_model_from_history(const History& history,
                                     const Federation& federation) {
  if (history.records.empty()) throw InvalidArgument("history is empty");
  const RoundRecord& last = history.records.back();
  return apply_update(last.global_model, federation.aggregate(last.updates),
                      federation.setup().eta);
}

}  // namespace fedrec
