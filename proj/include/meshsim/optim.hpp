#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshsim/param_vector.hpp"

namespace meshsim {

enum class OptKind { sgd, adamw, nadamw };

inline std::string to_string(OptKind k) {
  switch (k) {
    case OptKind::sgd: return "sgd";
    case OptKind::adamw: return "adamw";
    case OptKind::nadamw: return "nadamw";
  }
  return "?";
}

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adamw") return OptKind::adamw;
  if (s == "nadamw") return OptKind::nadamw;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

struct OptimizerConfig {
  OptKind kind = OptKind::nadamw;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Per-(replica, stage) optimizer state over one contiguous parameter block.
// SGD: w <- w - lr g.
// AdamW: bias-corrected moments, decoupled weight decay.
// NAdamW: AdamW with the Nesterov-style lookahead numerator
//   m_hat = beta1 m_t / (1 - beta1^{t+1}) + (1 - beta1) g / (1 - beta1^t).
struct OptimizerState {
  OptimizerConfig cfg;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;

  OptimizerState() = default;
  OptimizerState(const OptimizerConfig& c, std::size_t block_len)
      : cfg(c), first_moment(block_len, 0.0), second_moment(block_len, 0.0) {}

  void apply(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != grad.size() || params.size() != first_moment.size())
      throw std::logic_error("OptimizerState: shape mismatch");
    if (!(lr > 0.0)) throw std::invalid_argument("OptimizerState: lr must be positive");
    for (double g : grad)
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient at optimizer step " +
                                 std::to_string(step_count + 1));
    ++step_count;
    const auto t = static_cast<double>(step_count);
    switch (cfg.kind) {
      case OptKind::sgd:
        for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
        return;
      case OptKind::adamw: {
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double g = grad[k];
          first_moment[k] = cfg.beta1 * first_moment[k] + (1.0 - cfg.beta1) * g;
          second_moment[k] = cfg.beta2 * second_moment[k] + (1.0 - cfg.beta2) * g * g;
          const double mh = first_moment[k] / bc1;
          const double vh = second_moment[k] / bc2;
          params[k] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * params[k]);
        }
        return;
      }
      case OptKind::nadamw: {
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc1_next = 1.0 - std::pow(cfg.beta1, t + 1.0);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double g = grad[k];
          first_moment[k] = cfg.beta1 * first_moment[k] + (1.0 - cfg.beta1) * g;
          second_moment[k] = cfg.beta2 * second_moment[k] + (1.0 - cfg.beta2) * g * g;
          const double mh = cfg.beta1 * first_moment[k] / bc1_next + (1.0 - cfg.beta1) * g / bc1;
          const double vh = second_moment[k] / bc2;
          params[k] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * params[k]);
        }
        return;
      }
    }
    throw std::logic_error("OptimizerState: bad kind");
  }
};

inline void to_json(nlohmann::json& j, const OptimizerState& s) {
  j = nlohmann::json{{"kind", to_string(s.cfg.kind)},
                     {"beta1", s.cfg.beta1},
                     {"beta2", s.cfg.beta2},
                     {"eps", s.cfg.eps},
                     {"weight_decay", s.cfg.weight_decay},
                     {"clip_norm", s.cfg.clip_norm},
                     {"first_moment", s.first_moment},
                     {"second_moment", s.second_moment},
                     {"step_count", s.step_count}};
}

inline void from_json(const nlohmann::json& j, OptimizerState& s) {
  s.cfg.kind = opt_kind_from_string(j.at("kind").get<std::string>());
  j.at("beta1").get_to(s.cfg.beta1);
  j.at("beta2").get_to(s.cfg.beta2);
  j.at("eps").get_to(s.cfg.eps);
  j.at("weight_decay").get_to(s.cfg.weight_decay);
  j.at("clip_norm").get_to(s.cfg.clip_norm);
  j.at("first_moment").get_to(s.first_moment);
  j.at("second_moment").get_to(s.second_moment);
  j.at("step_count").get_to(s.step_count);
}

// Rescales the whole gradient so its l2 norm does not exceed max_norm.
// Returns the pre-clip norm. max_norm <= 0 disables.
inline double clip_gradient_norm(std::span<double> grad, double max_norm) {
  double s = 0.0;
  for (double g : grad) s += g * g;
  const double norm = std::sqrt(s);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Schedules.
// ---------------------------------------------------------------------------

// Linear warmup from warmup_start to peak over warmup_steps, then cosine
// decay from peak to floor at total_steps. Steps past total clamp to floor.
struct LrSchedule {
  enum class Kind { warmup_cosine, constant };
  Kind kind = Kind::warmup_cosine;
  double value = 3e-4;  // constant mode
  std::int64_t warmup_steps = 3000;
  double peak = 3e-4;
  double floor = 3e-5;
  double warmup_start = 1e-7;
  std::int64_t total_steps = 30000;

  double at(std::int64_t t) const {
    if (kind == Kind::constant) return value;
    if (t < 0) throw std::invalid_argument("LrSchedule: negative step");
    if (t >= total_steps) return floor;
    if (t <= warmup_steps) {
      const double frac = warmup_steps == 0
                              ? 1.0
                              : static_cast<double>(t) / static_cast<double>(warmup_steps);
      return warmup_start + (peak - warmup_start) * frac;
    }
    const double frac = static_cast<double>(t - warmup_steps) /
                        static_cast<double>(total_steps - warmup_steps);
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

// EMA coefficient schedule. cosine_hold: constant `initial` for hold_steps,
// then cosine decay to `final_value` at total_steps. poly: 1/t^exponent
// (capped below 1 so the coefficient stays a valid convex weight). constant:
// fixed value in (0, 1].
struct EmaSchedule {
  enum class Kind { cosine_hold, poly, constant };
  Kind kind = Kind::cosine_hold;
  double initial = 0.5;
  double final_value = 0.01;
  std::int64_t hold_steps = 1000;
  std::int64_t total_steps = 30000;
  double poly_exponent = 0.6;
  double constant_value = 0.5;

  double at(std::int64_t t) const {
    switch (kind) {
      case Kind::constant:
        return constant_value;
      case Kind::poly:
        return std::min(0.95, std::pow(static_cast<double>(std::max<std::int64_t>(t, 1)),
                                       -poly_exponent));
      case Kind::cosine_hold: {
        if (t <= hold_steps) return initial;
        if (t >= total_steps) return final_value;
        const double frac = static_cast<double>(t - hold_steps) /
                            static_cast<double>(total_steps - hold_steps);
        return final_value +
               0.5 * (initial - final_value) * (1.0 + std::cos(std::numbers::pi * frac));
      }
    }
    throw std::logic_error("EmaSchedule: bad kind");
  }
};

}  // namespace meshsim
