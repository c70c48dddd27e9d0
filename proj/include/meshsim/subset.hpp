#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "meshsim/rng.hpp"

namespace meshsim {

// Index subset of one stage block. Replicas never exchange masks: each one
// regenerates the same mask from the shared (seed, stage, step) stream.
struct SubsetMask {
  std::vector<std::uint32_t> indices;  // sorted, unique, within the block
  std::int64_t sampled_at_step = 0;

  std::size_t size() const { return indices.size(); }
};

enum class SubsetMode { fixed_count, bernoulli };

// fixed_count: exactly round(fraction * block_len) indices, at least 1,
// sampled without replacement (Floyd). bernoulli: each index independently
// with probability `fraction`.
inline SubsetMask sample_subset(Rng rng, std::size_t block_len, double fraction,
                                SubsetMode mode, std::int64_t step = 0) {
  if (block_len < 1) throw std::invalid_argument("sample_subset: empty block");
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("sample_subset: fraction must be in (0, 1]");

  SubsetMask mask;
  mask.sampled_at_step = step;
  if (mode == SubsetMode::fixed_count) {
    const auto k = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(fraction * static_cast<double>(block_len))));
    std::vector<bool> in(block_len, false);
    mask.indices.reserve(k);
    for (std::size_t j = block_len - k; j < block_len; ++j) {
      const auto t = static_cast<std::size_t>(rng.next_below(j + 1));
      const std::size_t pick = in[t] ? j : t;
      in[pick] = true;
      mask.indices.push_back(static_cast<std::uint32_t>(pick));
    }
    std::sort(mask.indices.begin(), mask.indices.end());
  } else {
    for (std::size_t i = 0; i < block_len; ++i)
      if (rng.next_double() < fraction) mask.indices.push_back(static_cast<std::uint32_t>(i));
  }
  return mask;
}

}  // namespace meshsim
