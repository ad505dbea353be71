#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fpfl/accountant.hpp"
#include "fpfl/common.hpp"
#include "fpfl/config.hpp"
#include "fpfl/data.hpp"
#include "fpfl/distill.hpp"
#include "fpfl/dp.hpp"
#include "fpfl/losses.hpp"
#include "fpfl/nn.hpp"

namespace fpfl {

// Phase-1 parameters. This type never leaves the agent: there is no wire
// constructor or encoder for it.
struct TeacherParams {
  ParamVector values;
};

// Phase-2 parameters, the only trainable payload an agent may publish.
struct StudentParams {
  ParamVector values;
};

// The complete agent -> aggregator payload: identity, round, the Phase-2
// parameter blob in canonical flat order, and the shard size used for
// aggregation weighting. Nothing else is representable on the wire.
struct WireMessage {
  std::uint64_t agent_id = 0;
  std::uint64_t round = 0;
  std::vector<double> param_blob;
  std::uint64_t shard_size = 0;

  bool operator==(const WireMessage&) const = default;
};

// Only StudentParams can cross the agent boundary.
inline WireMessage make_wire_message(std::uint64_t agent_id,
                                     std::uint64_t round,
                                     const StudentParams& params,
                                     std::uint64_t shard_size) {
  return WireMessage{agent_id, round, params.values, shard_size};
}

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  off += 8;
  return v;
}

}  // namespace detail

// Binary wire format, little-endian 64-bit fields:
// [agent_id][round][shard_size][count][count x f64 params].
inline std::vector<std::uint8_t> encode(const WireMessage& m) {
  std::vector<std::uint8_t> out;
  out.reserve(32 + 8 * m.param_blob.size());
  detail::put_u64(out, m.agent_id);
  detail::put_u64(out, m.round);
  detail::put_u64(out, m.shard_size);
  detail::put_u64(out, m.param_blob.size());
  for (double d : m.param_blob)
    detail::put_u64(out, std::bit_cast<std::uint64_t>(d));
  return out;
}

inline WireMessage decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 32 || bytes.size() % 8 != 0)
    throw std::invalid_argument("decode: truncated wire message");
  std::size_t off = 0;
  WireMessage m;
  m.agent_id = detail::get_u64(bytes, off);
  m.round = detail::get_u64(bytes, off);
  m.shard_size = detail::get_u64(bytes, off);
  std::uint64_t count = detail::get_u64(bytes, off);
  if (bytes.size() != 32 + count * 8)
    throw std::invalid_argument("decode: length mismatch");
  m.param_blob.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    m.param_blob[i] = std::bit_cast<double>(detail::get_u64(bytes, off));
  return m;
}

// In-process mailbox with barrier semantics: collect() hands over a round
// only when every agent has reported exactly once.
class AggregationChannel {
 public:
  void send(WireMessage m) { inbox_.push_back(std::move(m)); }

  std::vector<WireMessage> collect(std::uint64_t round, std::size_t agents) {
    std::vector<WireMessage> got;
    std::vector<WireMessage> rest;
    for (auto& m : inbox_)
      (m.round == round ? got : rest).push_back(std::move(m));
    inbox_ = std::move(rest);
    std::map<std::uint64_t, bool> seen;
    for (const auto& m : got) {
      if (seen[m.agent_id])
        throw ProtocolError("channel: duplicate report from agent " +
                            std::to_string(m.agent_id));
      seen[m.agent_id] = true;
    }
    if (got.size() != agents)
      throw ProtocolError("channel: round " + std::to_string(round) +
                          " incomplete: " + std::to_string(got.size()) + "/" +
                          std::to_string(agents) + " agents reported");
    std::sort(got.begin(), got.end(),
              [](const WireMessage& a, const WireMessage& b) {
                return a.agent_id < b.agent_id;
              });
    return got;
  }

 private:
  std::vector<WireMessage> inbox_;
};

// Shard-size weighted parameter average; weights n_j / X sum to one.
inline ParamVector aggregate(const std::vector<WireMessage>& msgs) {
  if (msgs.empty()) throw ProtocolError("aggregate: no messages");
  double total = 0.0;
  for (const auto& m : msgs) {
    if (m.param_blob.size() != msgs.front().param_blob.size())
      throw ProtocolError("aggregate: parameter size mismatch");
    total += static_cast<double>(m.shard_size);
  }
  ParamVector out(msgs.front().param_blob.size(), 0.0);
  for (const auto& m : msgs) {
    double w = static_cast<double>(m.shard_size) / total;
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += w * m.param_blob[j];
  }
  return out;
}

// Test-set metrics. Fairness gaps on probabilities are the primary values;
// thresholded variants ride along. A gap is absent (not zero) when the test
// set lacks the groups needed to define it.
struct MetricsReport {
  double accuracy = 0.0;
  std::optional<double> demp;
  std::optional<double> eo;
  std::optional<double> demp_thresholded;
  std::optional<double> eo_thresholded;
  std::map<int, double> group_mean;
  std::vector<double> epsilon_per_agent;
  bool partial = false;
};

inline MetricsReport evaluate(const Mlp& model, const TabularDataset& test) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  std::vector<double> probs = forward_batch(model, test.features);
  MetricsReport r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    int pred = probs[i] >= 0.5 ? 1 : 0;  // ties predict 1
    correct += (pred == test.labels[i]);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());

  GroupStats st = compute_group_stats(probs, test.groups, test.labels);
  r.group_mean = st.group_mean;
  bool have_groups = st.group_mean.size() >= 2;
  bool have_eo_cell = false;
  for (const auto& [y, n] : st.label_count) {
    std::size_t groups_in_label = 0;
    for (const auto& [cell, cnt] : st.cell_count)
      groups_in_label += (cell.second == y);
    if (groups_in_label >= 2) have_eo_cell = true;
  }
  if (have_groups) r.demp = demp_gap(st);
  if (have_eo_cell) r.eo = eo_gap(st);

  std::vector<double> hard(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    hard[i] = probs[i] >= 0.5 ? 1.0 : 0.0;
  GroupStats ht = compute_group_stats(hard, test.groups, test.labels);
  if (have_groups) r.demp_thresholded = demp_gap(ht);
  if (have_eo_cell) r.eo_thresholded = eo_gap(ht);
  return r;
}

// Phase-1 result: the fair model, the multiplier state, and per-epoch
// training traces.
struct FairTrainState {
  Mlp model;
  LagrangeState lagrange;
  std::vector<double> lambda_trajectory;  // one entry per epoch
  std::vector<double> epoch_ce;
  std::vector<double> epoch_gap;
};

// One simulated participant.
struct Agent {
  std::uint64_t id = 0;
  TabularDataset shard;
  FairTrainState phase1;
  std::optional<TeacherSnapshot> teacher;
  std::optional<DpTrainState> phase2;
  PrivacyLedger ledger;
  RngStream phase1_sampler;
  RngStream phase2_sampler;

  Agent(std::uint64_t agent_id, TabularDataset data, std::uint64_t master)
      : id(agent_id),
        shard(std::move(data)),
        phase1_sampler(derive_seed(master, agent_id, 1,
                                   StreamPurpose::kBatchSampler)),
        phase2_sampler(derive_seed(master, agent_id, 2,
                                   StreamPurpose::kBatchSampler)) {}
};

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                              rng.next_double() * static_cast<double>(i))]);
  return idx;
}

}  // namespace detail

// Fair training on the agent's own shard. Runs entirely locally: nothing
// here touches the channel.
inline FairTrainState& run_phase1(Agent& agent, const Phase1Config& cfg,
                                  FairnessMetricKind kind, const Mlp& init) {
  if (agent.shard.size() == 0)
    throw std::invalid_argument("phase1: empty shard");
  FairTrainState& st = agent.phase1;
  st.model = init;
  st.lagrange = LagrangeState{cfg.lambda_init, cfg.lambda_max, cfg.dual_lr};
  st.lambda_trajectory.clear();
  st.epoch_ce.clear();
  st.epoch_gap.clear();

  AdamState adam(st.model.param_count());
  std::size_t n = agent.shard.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = detail::shuffled_indices(n, agent.phase1_sampler);
    double ce_sum = 0.0, gap_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      std::size_t len = std::min(cfg.batch, n - start);
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + len);
      FeatureMatrix bx = agent.shard.features.select(idx);
      std::vector<int> bg(len), by(len);
      for (std::size_t k = 0; k < len; ++k) {
        bg[k] = agent.shard.groups[idx[k]];
        by[k] = agent.shard.labels[idx[k]];
      }
      Phase1Loss loss;
      ParamVector grad = phase1_grad(st.model, bx, bg, by, kind,
                                     st.lagrange.lambda, &loss);
      if (!std::isfinite(loss.total))
        throw NumericError("phase1: non-finite loss, aborting");
      if (cfg.optimizer == OptimizerKind::kAdam)
        apply_adam_step(st.model, grad, cfg.lr, adam);
      else
        apply_sgd_step(st.model, grad, cfg.lr);
      st.lagrange = dual_ascent_step(st.lagrange, loss.gap);
      ce_sum += loss.ce;
      gap_sum += loss.gap;
      ++batches;
    }
    st.lambda_trajectory.push_back(st.lagrange.lambda);
    st.epoch_ce.push_back(ce_sum / static_cast<double>(batches));
    st.epoch_gap.push_back(gap_sum / static_cast<double>(batches));
  }
  return st;
}

// One Phase-2 participation: re-initialize from the broadcast parameters,
// run local_epochs of DP-SGD against the frozen teacher, and hand back the
// private parameters. Empty Poisson draws skip the update but still count
// against the budget.
inline StudentParams run_phase2_round(Agent& agent,
                                      const ParamVector& global_params,
                                      std::size_t local_epochs,
                                      const DpConfig& cfg) {
  if (!agent.teacher || !agent.phase2)
    throw std::invalid_argument("phase2: agent not initialized");
  DpTrainState& st = *agent.phase2;
  unflatten(st.model, global_params);

  std::size_t n = agent.shard.size();
  std::size_t steps_per_epoch =
      (n + cfg.batch_size - 1) / cfg.batch_size;  // ceil(1/q)
  const auto& teacher_probs = agent.teacher->cached_probs;
  for (std::size_t e = 0; e < local_epochs; ++e) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      auto idx = poisson_sample(n, cfg.sampling_prob, agent.phase2_sampler);
      if (idx.empty()) {
        st.step_count += 1;  // mechanism invoked, budget consumed
        continue;
      }
      FeatureMatrix bx = agent.shard.features.select(idx);
      std::vector<double> targets(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k)
        targets[k] = teacher_probs[idx[k]];
      dp_step(st, bx, targets, PointLoss::kDistillation, cfg);
    }
  }
  agent.ledger.steps = st.step_count;
  return StudentParams{flatten(st.model)};
}

struct RoundRecord {
  std::uint64_t round = 0;
  MetricsReport metrics;
};

struct AgentSummary {
  std::uint64_t id = 0;
  std::size_t shard_size = 0;
  double sampling_prob = 0.0;
  double sigma = 0.0;
  std::uint64_t steps = 0;
  double delta = 0.0;
  double epsilon = kInf;
  std::vector<double> lambda_trajectory;
};

struct RunResult {
  MetricsReport final_metrics;
  std::vector<RoundRecord> per_round;
  std::vector<AgentSummary> agents;
  double sigma_used = 0.0;
  std::uint64_t steps_per_agent = 0;
  bool partial = false;
  std::string abort_reason;
};

namespace detail {

struct Federation {
  std::vector<Agent> agents;
  TabularDataset test;
  Mlp global_init;
};

// Load, split, duplicate-and-shard, and seed every agent.
inline Federation build_federation(const RunConfig& cfg) {
  TabularDataset full;
  if (cfg.dataset.kind == DatasetConfig::Kind::kCsv) {
    DatasetSchema schema = DatasetSchema::load(cfg.dataset.schema);
    full = load_csv(cfg.dataset.path, schema);
  } else {
    SyntheticConfig sc = cfg.dataset.synthetic;
    sc.seed = cfg.seed;
    full = make_synthetic(sc);
  }
  SplitResult split = split_train_test(full, cfg.test_fraction, cfg.seed);
  std::size_t target = std::max(cfg.target_samples, split.train.size());
  ShardPlan plan =
      shard_with_duplication(split.train, cfg.agents, target, cfg.seed);

  Federation fed;
  fed.test = std::move(split.test);
  for (std::size_t a = 0; a < cfg.agents; ++a) {
    Agent agent(a, split.train.subset(plan.shards[a]), cfg.seed);
    if (cfg.phase2.delta >=
        1.0 / static_cast<double>(agent.shard.size()))
      throw std::invalid_argument(
          "config: delta must be below 1/|shard| (= 1/" +
          std::to_string(agent.shard.size()) + ")");
    fed.agents.push_back(std::move(agent));
  }

  std::vector<std::size_t> sizes{fed.test.features.cols};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  RngStream ginit(derive_seed(cfg.seed, 0, 0, StreamPurpose::kGlobalInit));
  fed.global_init = Mlp::init(sizes, ginit);
  return fed;
}

inline bool plateaued(const std::vector<RoundRecord>& rounds) {
  // Window of two rounds, tolerance 1e-3 on test accuracy.
  std::size_t k = rounds.size();
  if (k < 3) return false;
  double a2 = rounds[k - 1].metrics.accuracy;
  double a1 = rounds[k - 2].metrics.accuracy;
  double a0 = rounds[k - 3].metrics.accuracy;
  return std::abs(a2 - a1) < 1e-3 && std::abs(a1 - a0) < 1e-3;
}

}  // namespace detail

// The full two-phase protocol: local fair training, then repeated rounds of
// {private local distillation -> weighted aggregation -> re-broadcast},
// finishing with a held-out evaluation of the aggregated model.
inline RunResult run_fpfl(const RunConfig& cfg) {
  cfg.validate();
  detail::Federation fed = detail::build_federation(cfg);
  RunResult result;

  for (auto& agent : fed.agents) {
    RngStream minit(
        derive_seed(cfg.seed, agent.id, 1, StreamPurpose::kModelInit));
    Mlp phi = Mlp::init(fed.global_init.layer_sizes, minit);
    run_phase1(agent, cfg.phase1, cfg.fairness, phi);
    agent.teacher =
        TeacherSnapshot::make(agent.phase1.model, agent.shard.features);
  }

  // All shards are equal-sized, so every agent shares q and the planned T.
  std::size_t shard_n = fed.agents.front().shard.size();
  double q = std::min(
      1.0, static_cast<double>(cfg.phase2.batch) / static_cast<double>(shard_n));
  std::size_t steps_per_epoch =
      (shard_n + cfg.phase2.batch - 1) / cfg.phase2.batch;
  std::uint64_t planned_steps = static_cast<std::uint64_t>(
      cfg.phase2.rounds * cfg.phase2.local_epochs * steps_per_epoch);

  double sigma;
  if (cfg.phase2.sigma) {
    sigma = *cfg.phase2.sigma;
  } else {
    sigma = calibrate_sigma(q, planned_steps, cfg.phase2.delta,
                            *cfg.phase2.eps_target);
  }
  result.sigma_used = sigma;
  result.steps_per_agent = planned_steps;

  DpConfig dp;
  dp.clip_norm = cfg.phase2.clip_norm;
  dp.noise_multiplier = sigma;
  dp.batch_size = cfg.phase2.batch;
  dp.sampling_prob = q;
  dp.lr = cfg.phase2.lr;

  for (auto& agent : fed.agents) {
    agent.phase2.emplace(
        fed.global_init,
        derive_seed(cfg.seed, agent.id, 2, StreamPurpose::kNoise));
    agent.ledger =
        PrivacyLedger{q, sigma, 0, cfg.phase2.delta};
  }

  AggregationChannel channel;
  ParamVector global = flatten(fed.global_init);
  try {
    for (std::uint64_t round = 0; round < cfg.phase2.rounds; ++round) {
      for (auto& agent : fed.agents) {
        StudentParams theta =
            run_phase2_round(agent, global, cfg.phase2.local_epochs, dp);
        channel.send(make_wire_message(agent.id, round, theta,
                                       agent.shard.size()));
      }
      global = aggregate(channel.collect(round, fed.agents.size()));
      Mlp eval_model = fed.global_init;
      unflatten(eval_model, global);
      result.per_round.push_back({round, evaluate(eval_model, fed.test)});
      if (cfg.early_stop && detail::plateaued(result.per_round)) break;
    }
  } catch (const NumericError& e) {
    result.partial = true;
    result.abort_reason = e.what();
  }

  Mlp final_model = fed.global_init;
  unflatten(final_model, global);
  result.final_metrics = evaluate(final_model, fed.test);
  result.final_metrics.partial = result.partial;
  for (auto& agent : fed.agents) {
    AgentSummary s;
    s.id = agent.id;
    s.shard_size = agent.shard.size();
    s.sampling_prob = agent.ledger.sampling_prob;
    s.sigma = sigma;
    s.steps = agent.ledger.steps;
    s.delta = agent.ledger.delta;
    s.epsilon = sigma > 0 ? epsilon(agent.ledger) : kInf;
    s.lambda_trajectory = agent.phase1.lambda_trajectory;
    result.final_metrics.epsilon_per_agent.push_back(s.epsilon);
    result.agents.push_back(std::move(s));
  }
  return result;
}

// Non-private baselines: federated training of a single model with either
// the plain accuracy loss (b1) or the fair objective (b2), same round
// cadence as Phase 2, no clipping, no noise. Budget reported as unbounded.
inline RunResult run_baseline(const RunConfig& cfg, RunMode which) {
  if (which == RunMode::kFpfl)
    throw std::invalid_argument("run_baseline: expected b1 or b2");
  cfg.validate();
  detail::Federation fed = detail::build_federation(cfg);
  RunResult result;
  result.sigma_used = 0.0;

  Phase1Config local = cfg.phase1;
  if (which == RunMode::kBaselineAccuracy) {
    local.lambda_init = 0.0;
    local.dual_lr = 0.0;  // plain cross-entropy training
  }
  local.epochs = cfg.phase2.local_epochs;

  std::vector<LagrangeState> lagrange(
      fed.agents.size(),
      LagrangeState{local.lambda_init, local.lambda_max, local.dual_lr});

  AggregationChannel channel;
  ParamVector global = flatten(fed.global_init);
  std::vector<std::vector<double>> lambda_traj(fed.agents.size());
  try {
    for (std::uint64_t round = 0; round < cfg.phase2.rounds; ++round) {
      for (std::size_t a = 0; a < fed.agents.size(); ++a) {
        Agent& agent = fed.agents[a];
        Mlp model = fed.global_init;
        unflatten(model, global);
        Phase1Config cfg_round = local;
        cfg_round.lambda_init = lagrange[a].lambda;  // multiplier stays local
        run_phase1(agent, cfg_round, cfg.fairness, model);
        lagrange[a] = agent.phase1.lagrange;
        for (double l : agent.phase1.lambda_trajectory)
          lambda_traj[a].push_back(l);
        channel.send(make_wire_message(
            agent.id, round, StudentParams{flatten(agent.phase1.model)},
            agent.shard.size()));
      }
      global = aggregate(channel.collect(round, fed.agents.size()));
      Mlp eval_model = fed.global_init;
      unflatten(eval_model, global);
      result.per_round.push_back({round, evaluate(eval_model, fed.test)});
      if (cfg.early_stop && detail::plateaued(result.per_round)) break;
    }
  } catch (const NumericError& e) {
    result.partial = true;
    result.abort_reason = e.what();
  }

  Mlp final_model = fed.global_init;
  unflatten(final_model, global);
  result.final_metrics = evaluate(final_model, fed.test);
  result.final_metrics.partial = result.partial;
  for (std::size_t a = 0; a < fed.agents.size(); ++a) {
    AgentSummary s;
    s.id = fed.agents[a].id;
    s.shard_size = fed.agents[a].shard.size();
    s.sampling_prob = 1.0;
    s.sigma = 0.0;
    s.steps = 0;
    s.delta = cfg.phase2.delta;
    s.epsilon = kInf;  // unbounded sensitivity without clipping
    s.lambda_trajectory = lambda_traj[a];
    result.final_metrics.epsilon_per_agent.push_back(s.epsilon);
    result.agents.push_back(std::move(s));
  }
  return result;
}

}  // namespace fpfl
