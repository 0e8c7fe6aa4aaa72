#pragma once

#include <span>
#include <vector>

#include "tempo/tree.hpp"
#include "tempo/types.hpp"

namespace tempo {

// Group-level reward statistics. std_dev is the population form (divide by
// G); zero marks a degenerate all-equal group.
struct GroupStats {
  double mean = 0.0;
  double std_dev = 0.0;
  int group_size = 0;
};

GroupStats group_stats(const Group& group);

// Per-rollout, per-token advantages aligned 1:1 with each rollout's tokens.
struct AdvantageMatrix {
  std::vector<std::vector<double>> per_rollout;
  Method method_tag = Method::Grpo;
};

struct GaeConfig {
  double lambda = 1.0;  // gamma is fixed at 1
};

// (r_i - mean) / std broadcast to every token of rollout i. Degenerate groups
// (std == 0) yield an all-zero matrix with no division performed.
AdvantageMatrix grpo_advantages(const Group& group, const GroupStats& stats);

// Value change V(s_{t+1}) - V(s_t) along each rollout's path, gated to branch
// nodes: transitions out of a single-continuation prefix are exactly zero.
std::vector<std::vector<double>> td_corrections(const Group& group, const PrefixTree& tree);

// Group-relative signal plus tree TD correction, jointly scaled by 1/std.
// Degenerate groups yield an all-zero matrix.
AdvantageMatrix tempo_advantages(const Group& group, const PrefixTree& tree,
                                 const GroupStats& stats);

// Marks the tokens whose entropy lies in the top `rho` fraction of all tokens
// pooled across the group; ties at the cutoff are all included. Requires
// entropies on every rollout ("entropies required for HEPO").
std::vector<std::vector<bool>> hepo_mask(const Group& group, double rho);

// grpo_advantages with masked-out tokens zeroed.
AdvantageMatrix hepo_advantages(const Group& group, const GroupStats& stats, double rho);

// Lambda-weighted sum of one-step TD errors, gamma = 1:
//   A_t = sum_l lambda^l (r_{t+l} + V_{t+l+1} - V_{t+l})
// `values` carries one extra terminal entry beyond the per-token rewards; the
// terminal convention (0 for terminal states) is the caller's.
std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values, const GaeConfig& config);

struct MethodOptions {
  double hepo_rho = 0.2;
  double gae_lambda = 1.0;
};

// Dispatch used by the simulator and the CLI. The GAE route feeds tree prefix
// values (terminal value 0) and a terminal-only reward vector into
// gae_advantages; it is a utility wiring, not a normalized group method.
AdvantageMatrix method_advantages(Method method, const Group& group, const PrefixTree& tree,
                                  const GroupStats& stats, const MethodOptions& options = {});

}  // namespace tempo
