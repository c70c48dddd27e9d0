#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "meshsim/param_vector.hpp"
#include "meshsim/rng.hpp"

namespace meshsim {

// A minibatch is an identifier, not data: models resolve (replica, step) to
// concrete samples / noise draws through counter-based streams, which makes
// stale batches replayable at any later time.
struct Minibatch {
  std::uint64_t replica = 0;
  std::int64_t step = 0;
};

// Maps parameter indices to pipeline stages via contiguous boundaries.
struct StagePartition {
  std::vector<std::size_t> offsets;  // size P+1

  std::size_t num_stages() const { return offsets.size() - 1; }

  static StagePartition even_blocks(std::size_t dim, std::size_t stages) {
    if (stages < 1 || stages > dim) throw std::invalid_argument("StagePartition: bad stage count");
    StagePartition p;
    p.offsets.resize(stages + 1);
    for (std::size_t j = 0; j <= stages; ++j) p.offsets[j] = dim * j / stages;
    return p;
  }

  // Contiguous groups of whole units (layers), near-equal unit counts with
  // earlier stages taking the remainder.
  static StagePartition group_units(const std::vector<std::size_t>& unit_sizes,
                                    std::size_t stages) {
    if (stages < 1 || stages > unit_sizes.size())
      throw std::invalid_argument("StagePartition: more stages than units");
    StagePartition p;
    p.offsets.push_back(0);
    const std::size_t n = unit_sizes.size();
    std::size_t unit = 0, acc = 0;
    for (std::size_t j = 0; j < stages; ++j) {
      std::size_t take = n / stages + (j < n % stages ? 1 : 0);
      for (std::size_t k = 0; k < take; ++k) acc += unit_sizes[unit++];
      p.offsets.push_back(acc);
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Quadratic objective: f_i(w) = 1/2 (w - a_i)' A (w - a_i), diagonal A.
// Eigenvalues are spread linearly over [curv_min, curv_max], so the
// smoothness constant is curv_max by construction. Per-replica centers a_i
// are drawn i.i.d. around a common center with spread `center_spread`.
// Gradients carry additive Gaussian noise of std `noise_std`.
// ---------------------------------------------------------------------------
class QuadraticModel {
 public:
  struct Config {
    std::size_t dim = 32;
    double curv_min = 0.5;
    double curv_max = 2.0;
    double noise_std = 0.1;
    double center_spread = 0.0;
  };

  QuadraticModel(const Config& cfg, std::size_t replicas, std::uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    if (cfg.dim < 1 || cfg.curv_min <= 0.0 || cfg.curv_max < cfg.curv_min)
      throw std::invalid_argument("QuadraticModel: bad curvature config");
    curv_.resize(cfg.dim);
    for (std::size_t k = 0; k < cfg.dim; ++k)
      curv_[k] = cfg.dim == 1 ? cfg.curv_max
                              : cfg.curv_min + (cfg.curv_max - cfg.curv_min) *
                                                   static_cast<double>(k) /
                                                   static_cast<double>(cfg.dim - 1);
    Rng common = Rng::derive(seed, StreamPurpose::centers);
    std::vector<double> center(cfg.dim);
    for (double& c : center) c = common.next_gaussian();
    centers_.resize(replicas, center);
    for (std::size_t i = 0; i < replicas; ++i) {
      Rng r = Rng::derive(seed, StreamPurpose::centers, i + 1);
      for (double& c : centers_[i]) c += cfg.center_spread * r.next_gaussian();
    }
  }

  std::size_t param_count() const { return cfg_.dim; }
  std::size_t num_replicas() const { return centers_.size(); }
  double lipschitz() const { return cfg_.curv_max; }
  const std::vector<double>& curvature() const { return curv_; }
  const std::vector<double>& center(std::size_t i) const { return centers_.at(i); }

  double loss(const ParamVector& w, const Minibatch& b) const {
    check_dim(w);
    return objective(w, b.replica);
  }

  ParamVector gradient(const ParamVector& w, const Minibatch& b) const {
    check_dim(w);
    ParamVector g = ParamVector::zeros(w.size(), w.stage_offsets);
    const auto& a = centers_.at(b.replica);
    for (std::size_t k = 0; k < w.size(); ++k) g.values[k] = curv_[k] * (w.values[k] - a[k]);
    if (cfg_.noise_std > 0.0) {
      Rng noise = Rng::derive(seed_, StreamPurpose::grad_noise, b.replica,
                              static_cast<std::uint64_t>(b.step));
      for (double& v : g.values) v += cfg_.noise_std * noise.next_gaussian();
    }
    return g;
  }

  ParamVector init_params(const std::vector<std::size_t>& offsets) const {
    Rng r = Rng::derive(seed_, StreamPurpose::init);
    ParamVector w = ParamVector::zeros(cfg_.dim, offsets);
    for (double& v : w.values) v = r.next_gaussian();
    return w;
  }

  // Held-out objective of a single parameter vector: mean of per-replica
  // losses, noiseless.
  double validation_loss(const ParamVector& w) const {
    check_dim(w);
    double s = 0.0;
    for (std::size_t i = 0; i < centers_.size(); ++i) s += objective(w, i);
    return s / static_cast<double>(centers_.size());
  }

  double train_eval_loss(const ParamVector& w, std::size_t replica) const {
    check_dim(w);
    return objective(w, replica);
  }

 private:
  double objective(const ParamVector& w, std::size_t replica) const {
    const auto& a = centers_.at(replica);
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = w.values[k] - a[k];
      s += curv_[k] * d * d;
    }
    return 0.5 * s;
  }

  void check_dim(const ParamVector& w) const {
    if (w.size() != cfg_.dim) throw std::invalid_argument("QuadraticModel: dimension mismatch");
  }

  Config cfg_;
  std::uint64_t seed_;
  std::vector<double> curv_;
  std::vector<std::vector<double>> centers_;
};

// ---------------------------------------------------------------------------
// Small fully-connected network on a synthetic regression task. Targets come
// from a fixed random teacher network plus observation noise; the training
// set is split into disjoint i.i.d. shards, one per replica, with a shared
// held-out validation set. Loss is 1/2 mean squared error over the batch.
// ---------------------------------------------------------------------------
enum class Activation { tanh_act, relu };

class MlpModel {
 public:
  struct Config {
    std::vector<std::size_t> layer_dims = {8, 16, 16, 1};  // input, hidden..., output
    Activation activation = Activation::tanh_act;
    std::size_t train_size = 1024;
    std::size_t val_size = 256;
    std::size_t batch_size = 8;
    double target_noise_std = 0.01;
  };

  MlpModel(const Config& cfg, std::size_t replicas, std::uint64_t seed)
      : cfg_(cfg), replicas_(replicas), seed_(seed) {
    if (cfg.layer_dims.size() < 2) throw std::invalid_argument("MlpModel: need >= 2 layer dims");
    if (replicas < 1 || cfg.train_size < replicas)
      throw std::invalid_argument("MlpModel: shard size underflow");
    layer_param_counts_.reserve(num_layers());
    for (std::size_t l = 0; l < num_layers(); ++l)
      layer_param_counts_.push_back((fan_in(l) + 1) * fan_out(l));
    generate_data();
  }

  std::size_t num_layers() const { return cfg_.layer_dims.size() - 1; }
  std::size_t fan_in(std::size_t l) const { return cfg_.layer_dims[l]; }
  std::size_t fan_out(std::size_t l) const { return cfg_.layer_dims[l + 1]; }
  std::size_t input_dim() const { return cfg_.layer_dims.front(); }
  std::size_t output_dim() const { return cfg_.layer_dims.back(); }
  const std::vector<std::size_t>& layer_param_counts() const { return layer_param_counts_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto c : layer_param_counts_) n += c;
    return n;
  }

  StagePartition layer_partition(std::size_t stages) const {
    return StagePartition::group_units(layer_param_counts_, stages);
  }

  // Shards are contiguous row ranges of one generated pool: disjoint, and
  // their union is the full training set.
  std::pair<std::size_t, std::size_t> shard_range(std::size_t replica) const {
    const std::size_t n = cfg_.train_size;
    return {n * replica / replicas_, n * (replica + 1) / replicas_};
  }

  std::vector<std::size_t> batch_indices(const Minibatch& b) const {
    auto [lo, hi] = shard_range(b.replica);
    Rng r = Rng::derive(seed_, StreamPurpose::batch, b.replica,
                        static_cast<std::uint64_t>(b.step));
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (auto& i : idx) i = lo + static_cast<std::size_t>(r.next_below(hi - lo));
    return idx;
  }

  double loss(const ParamVector& w, const Minibatch& b) const {
    return loss_on(w, batch_indices(b));
  }

  ParamVector gradient(const ParamVector& w, const Minibatch& b) const {
    check_dim(w);
    const auto idx = batch_indices(b);
    ParamVector g = ParamVector::zeros(w.size(), w.stage_offsets);
    std::vector<std::vector<double>> h(num_layers() + 1), pre(num_layers());
    for (std::size_t s : idx) {
      forward(w.values, sample_x(s), h, pre);
      backward(w.values, h, pre, sample_y(s), 1.0 / static_cast<double>(idx.size()), g.values);
    }
    return g;
  }

  ParamVector init_params(const std::vector<std::size_t>& offsets) const {
    Rng r = Rng::derive(seed_, StreamPurpose::init);
    ParamVector w = ParamVector::zeros(param_count(), offsets);
    std::size_t at = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in(l)));
      for (std::size_t k = 0; k < fan_in(l) * fan_out(l); ++k)
        w.values[at++] = scale * r.next_gaussian();
      at += fan_out(l);  // biases start at zero
    }
    return w;
  }

  double validation_loss(const ParamVector& w) const {
    check_dim(w);
    std::vector<std::size_t> idx(cfg_.val_size);
    for (std::size_t i = 0; i < cfg_.val_size; ++i) idx[i] = cfg_.train_size + i;
    return loss_on(w, idx);
  }

  // Deterministic per-replica training loss on a fixed prefix of the shard.
  double train_eval_loss(const ParamVector& w, std::size_t replica) const {
    check_dim(w);
    auto [lo, hi] = shard_range(replica);
    const std::size_t n = std::min<std::size_t>(64, hi - lo);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = lo + i;
    return loss_on(w, idx);
  }

  std::span<const double> sample_x(std::size_t row) const {
    return {xs_.data() + row * input_dim(), input_dim()};
  }
  std::span<const double> sample_y(std::size_t row) const {
    return {ys_.data() + row * output_dim(), output_dim()};
  }
  std::size_t total_rows() const { return cfg_.train_size + cfg_.val_size; }
  const Config& config() const { return cfg_; }

  double loss_on(const ParamVector& w, const std::vector<std::size_t>& idx) const {
    check_dim(w);
    std::vector<std::vector<double>> h(num_layers() + 1), pre(num_layers());
    double s = 0.0;
    for (std::size_t r : idx) {
      forward(w.values, sample_x(r), h, pre);
      const auto y = sample_y(r);
      for (std::size_t k = 0; k < output_dim(); ++k) {
        const double d = h.back()[k] - y[k];
        s += 0.5 * d * d;
      }
    }
    return s / static_cast<double>(idx.size());
  }

 private:
  double act(double x) const {
    return cfg_.activation == Activation::tanh_act ? std::tanh(x) : (x > 0.0 ? x : 0.0);
  }
  double act_deriv(double pre, double post) const {
    return cfg_.activation == Activation::tanh_act ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
  }

  // Layout per layer: W (fan_out x fan_in, row-major), then bias (fan_out).
  std::size_t layer_offset(std::size_t l) const {
    std::size_t at = 0;
    for (std::size_t k = 0; k < l; ++k) at += layer_param_counts_[k];
    return at;
  }

  void forward(const std::vector<double>& w, std::span<const double> x,
               std::vector<std::vector<double>>& h, std::vector<std::vector<double>>& pre) const {
    h[0].assign(x.begin(), x.end());
    std::size_t at = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = fan_in(l), out = fan_out(l);
      pre[l].assign(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        double z = w[at + in * out + o];  // bias
        const double* row = &w[at + o * in];
        for (std::size_t k = 0; k < in; ++k) z += row[k] * h[l][k];
        pre[l][o] = z;
      }
      h[l + 1].resize(out);
      const bool last = l + 1 == num_layers();
      for (std::size_t o = 0; o < out; ++o) h[l + 1][o] = last ? pre[l][o] : act(pre[l][o]);
      at += layer_param_counts_[l];
    }
  }

  void backward(const std::vector<double>& w, const std::vector<std::vector<double>>& h,
                const std::vector<std::vector<double>>& pre, std::span<const double> y,
                double weight, std::vector<double>& g) const {
    std::vector<double> delta(output_dim());
    for (std::size_t k = 0; k < output_dim(); ++k) delta[k] = (h.back()[k] - y[k]) * weight;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t in = fan_in(l), out = fan_out(l);
      const std::size_t at = layer_offset(l);
      for (std::size_t o = 0; o < out; ++o) {
        double* grow = &g[at + o * in];
        for (std::size_t k = 0; k < in; ++k) grow[k] += delta[o] * h[l][k];
        g[at + in * out + o] += delta[o];
      }
      if (l == 0) break;
      std::vector<double> prev(in, 0.0);
      for (std::size_t k = 0; k < in; ++k) {
        double z = 0.0;
        for (std::size_t o = 0; o < out; ++o) z += w[at + o * in + k] * delta[o];
        prev[k] = z * act_deriv(pre[l - 1][k], h[l][k]);
      }
      delta.swap(prev);
    }
  }

  void generate_data() {
    // Teacher: same architecture and activation, fixed random weights.
    Rng tr = Rng::derive(seed_, StreamPurpose::data, 0);
    std::vector<double> teacher(param_count());
    std::size_t at = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double scale = 1.5 / std::sqrt(static_cast<double>(fan_in(l)));
      for (std::size_t k = 0; k < fan_in(l) * fan_out(l); ++k)
        teacher[at++] = scale * tr.next_gaussian();
      for (std::size_t k = 0; k < fan_out(l); ++k) teacher[at++] = 0.1 * tr.next_gaussian();
    }
    const std::size_t rows = total_rows();
    xs_.resize(rows * input_dim());
    ys_.resize(rows * output_dim());
    Rng dr = Rng::derive(seed_, StreamPurpose::data, 1);
    std::vector<std::vector<double>> h(num_layers() + 1), pre(num_layers());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < input_dim(); ++k)
        xs_[r * input_dim() + k] = dr.next_gaussian();
      forward(teacher, sample_x(r), h, pre);
      for (std::size_t k = 0; k < output_dim(); ++k)
        ys_[r * output_dim() + k] = h.back()[k] + cfg_.target_noise_std * dr.next_gaussian();
    }
  }

  void check_dim(const ParamVector& w) const {
    if (w.size() != param_count()) throw std::invalid_argument("MlpModel: dimension mismatch");
  }

  Config cfg_;
  std::size_t replicas_;
  std::uint64_t seed_;
  std::vector<std::size_t> layer_param_counts_;
  std::vector<double> xs_, ys_;
};

// ---------------------------------------------------------------------------
// Runtime-selected model.
// ---------------------------------------------------------------------------
using Model = std::variant<QuadraticModel, MlpModel>;

inline double loss(const Model& m, const ParamVector& w, const Minibatch& b) {
  return std::visit([&](const auto& mm) { return mm.loss(w, b); }, m);
}

inline ParamVector gradient(const Model& m, const ParamVector& w, const Minibatch& b) {
  return std::visit([&](const auto& mm) { return mm.gradient(w, b); }, m);
}

inline std::size_t param_count(const Model& m) {
  return std::visit([](const auto& mm) { return mm.param_count(); }, m);
}

inline ParamVector init_params(const Model& m, const std::vector<std::size_t>& offsets) {
  return std::visit([&](const auto& mm) { return mm.init_params(offsets); }, m);
}

inline double validation_loss(const Model& m, const ParamVector& w) {
  return std::visit([&](const auto& mm) { return mm.validation_loss(w); }, m);
}

inline double train_eval_loss(const Model& m, const ParamVector& w, std::size_t replica) {
  return std::visit([&](const auto& mm) { return mm.train_eval_loss(w, replica); }, m);
}

inline StagePartition make_partition(const Model& m, std::size_t stages) {
  if (const auto* mlp = std::get_if<MlpModel>(&m)) return mlp->layer_partition(stages);
  return StagePartition::even_blocks(param_count(m), stages);
}

// Block slice of the full gradient for one stage; gradients for all stages
// concatenate to gradient() exactly.
inline std::vector<double> stage_gradient(const Model& m, const ParamVector& w,
                                          const Minibatch& b, const StagePartition& part,
                                          std::size_t stage) {
  if (stage >= part.num_stages()) throw std::invalid_argument("stage_gradient: bad stage");
  ParamVector g = gradient(m, w, b);
  const auto lo = part.offsets[stage], hi = part.offsets[stage + 1];
  return {g.values.begin() + static_cast<std::ptrdiff_t>(lo),
          g.values.begin() + static_cast<std::ptrdiff_t>(hi)};
}

}  // namespace meshsim
