#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace meshsim {

// Flat parameter vector partitioned into contiguous stage blocks.
// stage_offsets has one entry per boundary: {0, ..., size()}.
struct ParamVector {
  std::vector<double> values;
  std::vector<std::size_t> stage_offsets;

  ParamVector() : stage_offsets{0, 0} {}

  explicit ParamVector(std::vector<double> v, std::vector<std::size_t> offsets = {})
      : values(std::move(v)), stage_offsets(std::move(offsets)) {
    if (stage_offsets.empty()) stage_offsets = {0, values.size()};
    check_offsets();
  }

  static ParamVector zeros(std::size_t n, std::vector<std::size_t> offsets = {}) {
    return ParamVector(std::vector<double>(n, 0.0), std::move(offsets));
  }

  std::size_t size() const { return values.size(); }
  std::size_t num_stages() const { return stage_offsets.size() - 1; }

  std::size_t stage_len(std::size_t j) const {
    check_stage(j);
    return stage_offsets[j + 1] - stage_offsets[j];
  }

  std::span<double> stage(std::size_t j) {
    check_stage(j);
    return {values.data() + stage_offsets[j], stage_offsets[j + 1] - stage_offsets[j]};
  }

  std::span<const double> stage(std::size_t j) const {
    check_stage(j);
    return {values.data() + stage_offsets[j], stage_offsets[j + 1] - stage_offsets[j]};
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_offsets() const {
    if (stage_offsets.size() < 2 || stage_offsets.front() != 0 ||
        stage_offsets.back() != values.size())
      throw std::logic_error("ParamVector: bad stage offsets");
    for (std::size_t i = 1; i < stage_offsets.size(); ++i)
      if (stage_offsets[i] <= stage_offsets[i - 1])
        throw std::logic_error("ParamVector: stage offsets not strictly increasing");
  }

 private:
  void check_stage(std::size_t j) const {
    if (j + 1 >= stage_offsets.size()) throw std::logic_error("ParamVector: stage out of range");
  }
};

inline void check_same_size(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw std::logic_error("ParamVector: length mismatch");
}

// y += a * x
inline void vec_axpy(double a, const ParamVector& x, ParamVector& y) {
  check_same_size(x, y);
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] += a * x.values[i];
}

inline ParamVector vec_sub(const ParamVector& a, const ParamVector& b) {
  check_same_size(a, b);
  ParamVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

// Elementwise mean of m vectors, accumulated as sum / m.
inline ParamVector vec_mean(std::span<const ParamVector> xs) {
  if (xs.empty()) throw std::logic_error("vec_mean: empty input");
  ParamVector out = xs[0];
  for (std::size_t k = 1; k < xs.size(); ++k) {
    check_same_size(out, xs[k]);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += xs[k].values[i];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (double& v : out.values) v *= inv;
  return out;
}

inline double vec_norm2(const ParamVector& a) {
  double s = 0.0;
  for (double v : a.values) s += v * v;
  return s;
}

inline double vec_norm(const ParamVector& a) { return std::sqrt(vec_norm2(a)); }

}  // namespace meshsim
