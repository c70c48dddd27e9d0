#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshsim/param_vector.hpp"
#include "meshsim/quant.hpp"
#include "meshsim/rng.hpp"
#include "meshsim/subset.hpp"

namespace meshsim {

// Weight-synchronization strategies across data-parallel replicas.
//   fullsync_dpavg    synchronous mean of all parameters every interval
//   sparta            synchronous mean of a random subset
//   async_sparta      subset mean applied with a tau-step delay, no correction
//   ema_corrected     delayed subset mean plus EMA staleness correction
//   diloco            synchronous full average every interval (outer lr 1)
//   eager_diloco      full average, tau = interval, own-drift/m correction
//   ablation_raw_diff delayed subset mean plus raw own drift (no EMA)
enum class Strategy {
  fullsync_dpavg,
  sparta,
  async_sparta,
  ema_corrected,
  diloco,
  eager_diloco,
  ablation_raw_diff,
};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::fullsync_dpavg: return "fullsync_dpavg";
    case Strategy::sparta: return "sparta";
    case Strategy::async_sparta: return "async_sparta";
    case Strategy::ema_corrected: return "ema_corrected";
    case Strategy::diloco: return "diloco";
    case Strategy::eager_diloco: return "eager_diloco";
    case Strategy::ablation_raw_diff: return "ablation_raw_diff";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "fullsync_dpavg" || s == "dpavg") return Strategy::fullsync_dpavg;
  if (s == "sparta") return Strategy::sparta;
  if (s == "async_sparta") return Strategy::async_sparta;
  if (s == "ema_corrected" || s == "ours") return Strategy::ema_corrected;
  if (s == "diloco") return Strategy::diloco;
  if (s == "eager_diloco") return Strategy::eager_diloco;
  if (s == "ablation_raw_diff") return Strategy::ablation_raw_diff;
  throw std::invalid_argument("unknown strategy: " + s);
}

inline bool strategy_is_async(Strategy s) {
  return s == Strategy::async_sparta || s == Strategy::ema_corrected ||
         s == Strategy::eager_diloco || s == Strategy::ablation_raw_diff;
}

struct AveragingConfig {
  Strategy strategy = Strategy::ema_corrected;
  double subset_fraction = 0.05;   // p
  std::int64_t async_delay = 10;   // tau, in global ticks
  std::int64_t interval = 1;       // K, ticks between initiations
  QuantScheme quant = QuantScheme::none;
  SubsetMode subset_mode = SubsetMode::fixed_count;
  bool eager_scaling = false;  // scale the EMA staleness sample by 1/m

  std::int64_t effective_delay() const {
    return strategy_is_async(strategy) ? async_delay : 0;
  }

  // Enforces per-strategy constraints; diloco defaults its interval to the
  // outer-update cadence when left at 1.
  void validate_and_normalize() {
    if (!(subset_fraction > 0.0) || subset_fraction > 1.0)
      throw std::invalid_argument("averaging: subset_fraction must be in (0, 1]");
    if (async_delay < 0) throw std::invalid_argument("averaging: async_delay must be >= 0");
    if (interval < 1) throw std::invalid_argument("averaging: interval must be >= 1");
    switch (strategy) {
      case Strategy::fullsync_dpavg:
        subset_fraction = 1.0;
        break;
      case Strategy::diloco:
        subset_fraction = 1.0;
        if (interval == 1) interval = 10;
        break;
      case Strategy::eager_diloco:
        if (subset_fraction != 1.0)
          throw std::invalid_argument("eager_diloco requires full communication (p = 1)");
        async_delay = interval;
        break;
      default:
        break;
    }
  }
};

// Per-replica EMA state d_i, written only at indices of completing events.
struct EmaState {
  ParamVector d;
  std::int64_t missing_snapshot_events = 0;
};

// One in-flight averaging exchange for one stage. `payload` holds the wire
// values (quantized per config); `local_snapshot` holds each replica's own
// full-precision masked values at initiation, used for the staleness sample.
struct PendingAverage {
  std::size_t stage = 0;
  std::int64_t initiated_at = 0;
  std::int64_t completes_at = 0;
  SubsetMask mask;
  std::vector<std::vector<double>> payload;
  std::vector<std::vector<double>> local_snapshot;
};

// Mask for stage `stage` at step `step`, identical on every replica by
// construction of the stream key.
inline SubsetMask shared_mask(std::uint64_t seed, std::size_t stage, std::int64_t step,
                              std::size_t block_len, const AveragingConfig& cfg) {
  return sample_subset(
      Rng::derive(seed, StreamPurpose::mask, stage, static_cast<std::uint64_t>(step)),
      block_len, cfg.subset_fraction, cfg.subset_mode, step);
}

// Synchronous sparse averaging: masked indices of every replica are replaced
// by their cross-replica mean; everything else is untouched.
inline void sparse_average_sync(std::vector<ParamVector>& replicas, const SubsetMask& mask,
                                std::size_t stage) {
  const std::size_t m = replicas.size();
  if (m < 1) throw std::logic_error("sparse_average_sync: no replicas");
  const std::size_t base = replicas[0].stage_offsets.at(stage);
  for (std::uint32_t idx : mask.indices) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += replicas[i].values[base + idx];
    const double mean = sum / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) replicas[i].values[base + idx] = mean;
  }
}

// Samples the shared mask and snapshots every replica's masked values:
// quantized copies for the wire, full-precision copies for the local
// staleness sample. Local updates continue while the event is in flight.
inline PendingAverage initiate_averaging(const std::vector<ParamVector>& replicas,
                                         std::size_t stage, std::int64_t step,
                                         const AveragingConfig& cfg, std::uint64_t seed) {
  PendingAverage ev;
  ev.stage = stage;
  ev.initiated_at = step;
  ev.completes_at = step + cfg.effective_delay();
  ev.mask = shared_mask(seed, stage, step, replicas.at(0).stage_len(stage), cfg);
  const std::size_t m = replicas.size();
  const std::size_t base = replicas[0].stage_offsets.at(stage);
  ev.payload.resize(m);
  ev.local_snapshot.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    ev.payload[i].reserve(ev.mask.size());
    ev.local_snapshot[i].reserve(ev.mask.size());
    for (std::uint32_t idx : ev.mask.indices) {
      const double v = replicas[i].values[base + idx];
      ev.local_snapshot[i].push_back(v);
      ev.payload[i].push_back(quantize(v, cfg.quant));
    }
  }
  return ev;
}

// Cross-replica mean of the wire payloads: the (stale) average w_bar^{t-tau}.
inline std::vector<double> stale_mean(const PendingAverage& ev) {
  const std::size_t m = ev.payload.size();
  std::vector<double> mean(ev.mask.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += ev.payload[i][k];
  for (double& v : mean) v /= static_cast<double>(m);
  return mean;
}

// AsyncSPARTA completion: masked indices overwritten with the stale mean,
// discarding local progress made while the exchange was in flight.
inline void complete_async_sparta(std::vector<ParamVector>& replicas,
                                  const PendingAverage& ev) {
  const auto mean = stale_mean(ev);
  const std::size_t base = replicas[0].stage_offsets.at(ev.stage);
  for (auto& r : replicas)
    for (std::size_t k = 0; k < ev.mask.size(); ++k)
      r.values[base + ev.mask.indices[k]] = mean[k];
}

// EMA-corrected completion. Per replica, on masked indices only:
//   d_i[S] <- (1 - lambda) d_i[S] + lambda (w_hat_i^t[S] - w_hat_i^{t-tau}[S])
//   w_i[S] <- stale_mean[S] + d_i[S]
// The staleness sample is optionally scaled by 1/m (eager generalization).
// Events without local snapshots fall back to the raw stale mean and bump a
// diagnostic counter.
inline void complete_ema_corrected(std::vector<ParamVector>& replicas,
                                   std::vector<EmaState>& ema, const PendingAverage& ev,
                                   double lambda_t, bool eager_scaling = false) {
  const std::size_t m = replicas.size();
  if (ev.local_snapshot.size() != m) {
    const auto mean = stale_mean(ev);
    const std::size_t base = replicas[0].stage_offsets.at(ev.stage);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < ev.mask.size(); ++k)
        replicas[i].values[base + ev.mask.indices[k]] = mean[k];
      ++ema[i].missing_snapshot_events;
    }
    return;
  }
  if (!(lambda_t > 0.0) || lambda_t > 1.0)
    throw std::invalid_argument("complete_ema_corrected: lambda must be in (0, 1]");
  const auto mean = stale_mean(ev);
  const std::size_t base = replicas[0].stage_offsets.at(ev.stage);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < ev.mask.size(); ++k) {
      const std::size_t at = base + ev.mask.indices[k];
      double diff = replicas[i].values[at] - ev.local_snapshot[i][k];
      if (eager_scaling) diff *= inv_m;
      double& d = ema[i].d.values[at];
      d = (1.0 - lambda_t) * d + lambda_t * diff;
      replicas[i].values[at] = mean[k] + d;
    }
  }
}

// Ablation: raw own drift instead of its EMA; no persistent state.
inline void complete_ablation_raw_diff(std::vector<ParamVector>& replicas,
                                       const PendingAverage& ev) {
  const auto mean = stale_mean(ev);
  const std::size_t base = replicas[0].stage_offsets.at(ev.stage);
  for (std::size_t i = 0; i < replicas.size(); ++i)
    for (std::size_t k = 0; k < ev.mask.size(); ++k) {
      const std::size_t at = base + ev.mask.indices[k];
      replicas[i].values[at] =
          mean[k] + (replicas[i].values[at] - ev.local_snapshot[i][k]);
    }
}

// Eager DiLoCo completion: full communication, correction is the replica's
// own drift scaled by 1/m.
inline void complete_eager_diloco(std::vector<ParamVector>& replicas,
                                  const PendingAverage& ev) {
  const auto mean = stale_mean(ev);
  const std::size_t base = replicas[0].stage_offsets.at(ev.stage);
  const double inv_m = 1.0 / static_cast<double>(replicas.size());
  for (std::size_t i = 0; i < replicas.size(); ++i)
    for (std::size_t k = 0; k < ev.mask.size(); ++k) {
      const std::size_t at = base + ev.mask.indices[k];
      replicas[i].values[at] =
          mean[k] + (replicas[i].values[at] - ev.local_snapshot[i][k]) * inv_m;
    }
}

// DiLoCo outer step with outer learning rate 1: a plain blocking full
// average. Modeled as a zero-delay full-mask event.
inline void diloco_outer_step(std::vector<ParamVector>& replicas, const PendingAverage& ev) {
  complete_async_sparta(replicas, ev);
}

// Applies a due event under the configured strategy.
inline void complete_event(std::vector<ParamVector>& replicas, std::vector<EmaState>& ema,
                           const PendingAverage& ev, double lambda_t,
                           const AveragingConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::fullsync_dpavg:
    case Strategy::sparta:
    case Strategy::async_sparta:
      complete_async_sparta(replicas, ev);
      return;
    case Strategy::diloco:
      diloco_outer_step(replicas, ev);
      return;
    case Strategy::ema_corrected:
      complete_ema_corrected(replicas, ema, ev, lambda_t, cfg.eager_scaling);
      return;
    case Strategy::ablation_raw_diff:
      complete_ablation_raw_diff(replicas, ev);
      return;
    case Strategy::eager_diloco:
      complete_eager_diloco(replicas, ev);
      return;
  }
  throw std::logic_error("complete_event: bad strategy");
}

}  // namespace meshsim
