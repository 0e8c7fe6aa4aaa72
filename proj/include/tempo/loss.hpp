#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tempo/advantage.hpp"

namespace tempo {

// Decoupled clipping bounds: the ratio is clamped to [1 - eps_low, 1 + eps_high].
struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;

  void validate() const;  // throws std::invalid_argument on a bad bound
};

struct SurrogateReport {
  double objective = 0.0;         // global token average of the clipped terms (to maximize)
  double clipped_fraction = 0.0;  // tokens where the clipped branch is strictly smaller
  std::int64_t token_count = 0;
  // Per-token coefficient on d(new_logprob) in the batch-summed objective:
  // ratio * advantage where the unclipped branch is active, 0 where the clip
  // cuts the gradient.
  std::optional<std::vector<std::vector<double>>> per_token_coeff;
};

// Clipped token-level surrogate. The objective is one global average over all
// tokens of all rollouts, not a per-rollout mean of means. Summation order is
// fixed: rollout-major, token-minor. Throws std::invalid_argument on shape
// mismatch and std::runtime_error("ratio overflow") on a non-finite ratio.
SurrogateReport clipped_surrogate(const AdvantageMatrix& advantages,
                                  const std::vector<std::vector<double>>& old_logprobs,
                                  const std::vector<std::vector<double>>& new_logprobs,
                                  const ClipConfig& config, bool with_coefficients = true);

}  // namespace tempo
