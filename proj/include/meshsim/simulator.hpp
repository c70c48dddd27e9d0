#pragma once

#include <cstdint>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshsim/dp_average.hpp"
#include "meshsim/metrics.hpp"
#include "meshsim/model.hpp"
#include "meshsim/optim.hpp"
#include "meshsim/param_vector.hpp"
#include "meshsim/pipeline.hpp"

namespace meshsim {

struct ModelConfig {
  enum class Kind { quadratic, mlp };
  Kind kind = Kind::quadratic;
  QuadraticModel::Config quadratic;
  MlpModel::Config mlp;
};

inline Model build_model(const ModelConfig& cfg, std::size_t replicas, std::uint64_t seed) {
  if (cfg.kind == ModelConfig::Kind::quadratic)
    return Model(QuadraticModel(cfg.quadratic, replicas, seed));
  return Model(MlpModel(cfg.mlp, replicas, seed));
}

// Full configuration of one mesh run.
//
// Time model: integer global ticks. With homogeneous speeds every replica
// performs one local step per tick. With heterogeneous integer speeds s_i, a
// scheduling round spans max(s_i) ticks in which replica i performs exactly
// s_i local steps (evenly paced); averaging is initiated at aligned ticks
// every interval*max(s_i) ticks, so replica i performs s_i*interval local
// steps per averaging round. The async delay tau counts global ticks for
// every replica.
struct MeshConfig {
  std::size_t num_stages = 1;
  std::size_t num_replicas = 4;
  std::int64_t total_steps = 1000;  // global ticks (= steps of the fastest replica)
  std::uint64_t seed = 42;
  std::int64_t eval_every = 50;
  std::int64_t total_local_budget = 0;  // > 0: stop after exactly this many local steps
  std::vector<std::int64_t> speeds;     // empty = all ones
  double init_spread = 0.0;             // per-replica sigma on the shared init point

  ModelConfig model;
  OptimizerConfig optimizer;
  LrSchedule lr;
  EmaSchedule ema;
  AveragingConfig averaging;
  StageDelayConfig delays;

  std::vector<std::int64_t> resolved_speeds() const {
    if (speeds.empty()) return std::vector<std::int64_t>(num_replicas, 1);
    return speeds;
  }

  void validate() const {
    if (num_stages < 1 || num_replicas < 1)
      throw std::invalid_argument("mesh: need at least one stage and one replica");
    if (total_steps < 1) throw std::invalid_argument("mesh: total_steps must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("mesh: eval_every must be >= 1");
    const auto sp = resolved_speeds();
    if (sp.size() != num_replicas)
      throw std::invalid_argument("mesh: speeds length != num_replicas");
    for (auto s : sp)
      if (s < 1) throw std::invalid_argument("mesh: speeds must be >= 1");
    if (delays.num_stages != num_stages)
      throw std::invalid_argument("mesh: delay config stage count mismatch");
  }
};

// Paces s_i local steps per round of max(s) ticks, evenly interleaved.
struct SimClock {
  std::vector<std::int64_t> speeds;
  std::int64_t max_speed = 1;
  std::int64_t speed_sum = 0;

  explicit SimClock(std::vector<std::int64_t> s) : speeds(std::move(s)) {
    for (auto v : speeds) {
      max_speed = std::max(max_speed, v);
      speed_sum += v;
    }
  }

  bool fires(std::size_t replica, std::int64_t tick) const {
    const std::int64_t s = speeds[replica];
    if (s == max_speed) return true;
    const std::int64_t pos = tick % max_speed;
    return (pos + 1) * s / max_speed > pos * s / max_speed;
  }

  std::int64_t round_ticks(std::int64_t interval) const { return interval * max_speed; }
};

struct WorkerReplica {
  ParamVector params;
  std::vector<OptimizerState> opt;  // one per stage
  EmaState ema;
  WeightHistory history;
  std::int64_t local_step = 0;
};

struct SimResult {
  std::vector<MetricsRecord> records;
  std::vector<WorkerReplica> replicas;
  std::vector<std::int64_t> local_steps;
  std::vector<std::int64_t> initiation_ticks;
  bool diverged = false;
};

namespace detail {

inline MetricsRecord make_record(const Model& model, const std::vector<WorkerReplica>& reps,
                                 std::int64_t tick, std::int64_t inflight, bool diverged,
                                 ParamVector& prev_dmean, bool& have_prev_dmean) {
  MetricsRecord rec;
  rec.step = tick;
  rec.diverged = diverged;
  rec.inflight = inflight;
  const std::size_t m = reps.size();
  std::vector<ParamVector> params, ds;
  params.reserve(m);
  ds.reserve(m);
  for (const auto& r : reps) {
    params.push_back(r.params);
    ds.push_back(r.ema.d);
  }
  rec.replica_losses.resize(m);
  for (std::size_t i = 0; i < m; ++i)
    rec.replica_losses[i] = train_eval_loss(model, reps[i].params, i);
  const ParamVector mean = vec_mean(params);
  rec.consensus_loss = validation_loss(model, mean);
  rec.consensus_error = consensus_error(params);
  rec.consensus_error_mean =
      rec.consensus_error / (static_cast<double>(m) * static_cast<double>(mean.size()));
  const auto [vm, vx] = ema_variance(ds);
  rec.ema_var_mean = vm;
  rec.ema_var_max = vx;
  const ParamVector dmean = vec_mean(ds);
  rec.ema_dmean_norm = vec_norm(dmean);
  if (have_prev_dmean) rec.ema_ddrift_norm = vec_norm(vec_sub(dmean, prev_dmean));
  prev_dmean = dmean;
  have_prev_dmean = true;
  return rec;
}

}  // namespace detail

// Runs the mesh for the configured budget. Per tick: local (stage-delayed)
// steps for every replica whose schedule fires, then averaging initiation if
// the tick is an initiation tick, then completion of every due event, then
// metrics. A non-finite parameter or loss stops the run early with the
// diverged flag set on the final record. Single replica runs skip averaging
// entirely (there is no peer to exchange with).
inline SimResult run(const MeshConfig& config) {
  MeshConfig cfg = config;
  cfg.averaging.validate_and_normalize();
  cfg.validate();

  const Model model = build_model(cfg.model, cfg.num_replicas, cfg.seed);
  const StagePartition part = make_partition(model, cfg.num_stages);
  const SimClock clock(cfg.resolved_speeds());
  const std::size_t m = cfg.num_replicas;
  const std::int64_t round = clock.round_ticks(cfg.averaging.interval);
  const std::int64_t tau = cfg.averaging.effective_delay();
  const std::int64_t history_depth = cfg.delays.max_delay() + 1;

  const std::int64_t budget =
      cfg.total_local_budget > 0
          ? cfg.total_local_budget
          : (clock.max_speed == 1
                 ? cfg.total_steps * static_cast<std::int64_t>(m)
                 : std::max<std::int64_t>(1, cfg.total_steps / round) * cfg.averaging.interval *
                       clock.speed_sum);

  SimResult result;
  result.replicas.resize(m);
  {
    const ParamVector w0 = init_params(model, part.offsets);
    for (std::size_t i = 0; i < m; ++i) {
      auto& rep = result.replicas[i];
      rep.params = w0;
      if (cfg.init_spread > 0.0) {
        Rng r = Rng::derive(cfg.seed, StreamPurpose::init, i + 1);
        for (double& v : rep.params.values) v += cfg.init_spread * r.next_gaussian();
      }
      rep.opt.reserve(cfg.num_stages);
      for (std::size_t j = 0; j < cfg.num_stages; ++j)
        rep.opt.emplace_back(cfg.optimizer, part.offsets[j + 1] - part.offsets[j]);
      rep.ema.d = ParamVector::zeros(param_count(model), part.offsets);
      rep.history = WeightHistory(static_cast<std::size_t>(history_depth));
    }
  }

  std::deque<PendingAverage> events;
  std::vector<ParamVector> replica_params(m);  // scratch for averaging ops
  ParamVector prev_dmean = ParamVector::zeros(param_count(model), part.offsets);
  bool have_prev_dmean = false;
  bool diverged = false;
  std::int64_t steps_done = 0;

  const auto gather = [&]() {
    for (std::size_t i = 0; i < m; ++i) replica_params[i] = result.replicas[i].params;
  };
  const auto scatter = [&]() {
    for (std::size_t i = 0; i < m; ++i) result.replicas[i].params = std::move(replica_params[i]);
    replica_params.assign(m, ParamVector());
  };

  bool done = false;
  for (std::int64_t tick = 0; !done; ++tick) {
    // 1. Local stage-delayed updates.
    for (std::size_t i = 0; i < m && !diverged; ++i) {
      if (steps_done >= budget || !clock.fires(i, tick)) continue;
      auto& rep = result.replicas[i];
      const double lr = cfg.lr.at(rep.local_step);
      try {
        delayed_step(model, part, rep.params, rep.opt, rep.history, cfg.delays, i,
                     rep.local_step, lr, cfg.optimizer.clip_norm);
      } catch (const std::runtime_error&) {
        diverged = true;  // non-finite gradient: record and stop
        break;
      }
      ++rep.local_step;
      ++steps_done;
    }
    if (steps_done >= budget) done = true;

    // 2. Averaging initiation on aligned ticks, then due completions.
    if (m > 1 && !diverged) {
      if (tick % round == 0) {
        result.initiation_ticks.push_back(tick);
        gather();
        for (std::size_t j = 0; j < cfg.num_stages; ++j)
          events.push_back(
              initiate_averaging(replica_params, j, tick, cfg.averaging, cfg.seed));
        scatter();
      }
      if (!events.empty() && events.front().completes_at <= tick) {
        std::vector<EmaState> ema(m);
        for (std::size_t i = 0; i < m; ++i) ema[i] = std::move(result.replicas[i].ema);
        gather();
        const double lambda = cfg.ema.at(tick);
        while (!events.empty() && events.front().completes_at <= tick) {
          complete_event(replica_params, ema, events.front(), lambda, cfg.averaging);
          events.pop_front();
        }
        scatter();
        for (std::size_t i = 0; i < m; ++i) result.replicas[i].ema = std::move(ema[i]);
      }
    }

    // 3. Divergence check.
    if (!diverged)
      for (const auto& rep : result.replicas)
        if (!rep.params.all_finite()) {
          diverged = true;
          break;
        }

    // 4. Metrics.
    if (diverged || done || tick % cfg.eval_every == 0)
      result.records.push_back(detail::make_record(model, result.replicas, tick,
                                                   static_cast<std::int64_t>(events.size()),
                                                   diverged, prev_dmean, have_prev_dmean));
    if (diverged) break;
  }

  result.diverged = diverged;
  result.local_steps.resize(m);
  for (std::size_t i = 0; i < m; ++i) result.local_steps[i] = result.replicas[i].local_step;
  return result;
}

// Held-out loss of the elementwise-mean parameter vector.
inline double evaluate_consensus_model(const Model& model,
                                       const std::vector<WorkerReplica>& replicas) {
  if (replicas.empty()) throw std::invalid_argument("evaluate_consensus_model: no replicas");
  std::vector<ParamVector> params;
  params.reserve(replicas.size());
  for (const auto& r : replicas) params.push_back(r.params);
  return validation_loss(model, vec_mean(params));
}

}  // namespace meshsim
