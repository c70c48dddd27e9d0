#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshsim/model.hpp"
#include "meshsim/optim.hpp"
#include "meshsim/param_vector.hpp"

namespace meshsim {

// Per-stage constant gradient staleness delta_j. async_linear assigns
// delta_j = P - 1 - j (0-based): earlier stages see more staleness.
struct StageDelayConfig {
  enum class Mode { sync, async_linear, custom };
  Mode mode = Mode::sync;
  std::size_t num_stages = 1;
  std::vector<std::int64_t> delays;  // custom mode

  std::vector<std::int64_t> resolve() const {
    switch (mode) {
      case Mode::sync:
        return std::vector<std::int64_t>(num_stages, 0);
      case Mode::async_linear: {
        std::vector<std::int64_t> d(num_stages);
        for (std::size_t j = 0; j < num_stages; ++j)
          d[j] = static_cast<std::int64_t>(num_stages - 1 - j);
        return d;
      }
      case Mode::custom:
        if (delays.size() != num_stages)
          throw std::invalid_argument("StageDelayConfig: delays length != num_stages");
        for (auto d : delays)
          if (d < 0) throw std::invalid_argument("StageDelayConfig: negative delay");
        return delays;
    }
    throw std::logic_error("StageDelayConfig: bad mode");
  }

  std::int64_t max_delay() const {
    std::int64_t m = 0;
    for (auto d : resolve()) m = std::max(m, d);
    return m;
  }
};

// Weight stash: the last depth() full-parameter snapshots with the local
// step each belongs to. Offset 0 is the snapshot pushed most recently.
class WeightHistory {
 public:
  WeightHistory() = default;
  explicit WeightHistory(std::size_t depth) : depth_(depth) {}

  void push(const ParamVector& params, std::int64_t step) {
    buf_.push_front({params, step});
    while (buf_.size() > depth_) buf_.pop_back();
  }

  const ParamVector& weights_at(std::int64_t offset) const { return entry(offset).first; }
  std::int64_t step_at(std::int64_t offset) const { return entry(offset).second; }
  std::size_t size() const { return buf_.size(); }
  std::size_t depth() const { return depth_; }

 private:
  const std::pair<ParamVector, std::int64_t>& entry(std::int64_t offset) const {
    if (offset < 0 || static_cast<std::size_t>(offset) >= buf_.size())
      throw std::runtime_error("WeightHistory: underrun at offset " + std::to_string(offset));
    return buf_[static_cast<std::size_t>(offset)];
  }

  std::deque<std::pair<ParamVector, std::int64_t>> buf_;
  std::size_t depth_ = 1;
};

// One stage-delayed optimizer step:
//   w_j <- w_j - lr * opt_j( grad_j( w^{t - delta_j}, B^{t - delta_j} ) )
// Stage j's gradient is the j-block of the full gradient evaluated at the
// stashed snapshot from delta_j steps ago, with that step's minibatch.
// During warm-up (t < delta_j) the stage skips its update entirely. The
// assembled gradient over active stages is clipped as one vector before the
// per-stage optimizer states apply it.
inline void delayed_step(const Model& model, const StagePartition& part, ParamVector& params,
                         std::vector<OptimizerState>& opt, WeightHistory& hist,
                         const StageDelayConfig& delay_cfg, std::uint64_t replica,
                         std::int64_t step, double lr, double clip_norm) {
  const auto delays = delay_cfg.resolve();
  const std::size_t stages = part.num_stages();
  if (delays.size() != stages || opt.size() != stages)
    throw std::invalid_argument("delayed_step: stage count mismatch");
  if (params.stage_offsets != part.offsets)
    throw std::invalid_argument("delayed_step: partition does not match parameter blocks");

  hist.push(params, step);

  // Stages sharing a delay share one gradient evaluation.
  std::map<std::int64_t, ParamVector> grads;
  ParamVector g = ParamVector::zeros(params.size(), params.stage_offsets);
  std::vector<bool> active(stages, false);
  for (std::size_t j = 0; j < stages; ++j) {
    const std::int64_t d = delays[j];
    if (step < d) continue;  // warm-up: no snapshot older than step 0 exists
    active[j] = true;
    auto it = grads.find(d);
    if (it == grads.end()) {
      const ParamVector& snap = hist.weights_at(d);
      const Minibatch batch{replica, hist.step_at(d)};
      it = grads.emplace(d, gradient(model, snap, batch)).first;
    }
    const auto src = it->second.stage(j);
    auto dst = g.stage(j);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k];
  }

  if (clip_norm > 0.0) {
    double s = 0.0;
    for (std::size_t j = 0; j < stages; ++j)
      if (active[j])
        for (double v : g.stage(j)) s += v * v;
    const double norm = std::sqrt(s);
    if (norm > clip_norm) {
      const double scale = clip_norm / norm;
      for (std::size_t j = 0; j < stages; ++j)
        if (active[j])
          for (double& v : g.stage(j)) v *= scale;
    }
  }

  for (std::size_t j = 0; j < stages; ++j)
    if (active[j]) opt[j].apply(params.stage(j), g.stage(j), lr);
}

}  // namespace meshsim
