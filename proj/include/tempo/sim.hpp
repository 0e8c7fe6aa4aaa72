#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tempo/advantage.hpp"
#include "tempo/loss.hpp"
#include "tempo/types.hpp"

namespace tempo::sim {

// ============================================================================
// Environment
// ============================================================================

// Synthetic episodic token task: an episode is `depth` token choices from a
// vocabulary of size `vocab`, and the terminal reward depends only on the
// tokens picked at the decision positions. Filler positions never matter.
class BranchEnv {
 public:
  struct Decision {
    int position = 0;
    // Success probability per token at this position; tokens absent from the
    // map have quality 0. A single quality-1 entry makes the decision a
    // deterministic pick-the-right-token test.
    std::map<TokenId, double> quality;
  };

  BranchEnv(int depth, int vocab, std::vector<Decision> decisions);

  // `count` single-correct-token decisions spread evenly over the sequence
  // (positions floor(j * depth / count)).
  static BranchEnv evenly_spaced(int depth, int vocab, int count, TokenId correct_token = 0);

  int depth() const { return depth_; }
  int vocab() const { return vocab_; }
  const std::vector<Decision>& decisions() const { return decisions_; }
  bool stochastic() const { return stochastic_; }

  // Terminal reward for one complete episode. Draws randomness only when some
  // decision quality lies strictly between 0 and 1.
  double reward(std::span<const TokenId> tokens, std::mt19937_64& rng) const;

 private:
  int depth_;
  int vocab_;
  std::vector<Decision> decisions_;
  bool stochastic_ = false;
};

// ============================================================================
// Policy
// ============================================================================

enum class ContextMode { Position, Prefix };

// Tabular softmax policy. Position mode keeps one logit row per position;
// prefix mode keys rows by a hash of (position, preceding tokens) so earlier
// choices can shape later distributions.
class TabularPolicy {
 public:
  TabularPolicy(int depth, int vocab, ContextMode mode = ContextMode::Position,
                std::vector<double> initial_row = {});

  int depth() const { return depth_; }
  int vocab() const { return vocab_; }
  ContextMode mode() const { return mode_; }

  struct Sample {
    TokenId token = 0;
    double logprob = 0.0;
    double entropy = 0.0;
  };

  // Draws one token at `position` given the tokens sampled so far. The
  // logprob and entropy come from the same softmax used for the draw.
  Sample sample(int position, std::span<const TokenId> prefix, std::mt19937_64& rng);

  // Log-probability of `token` under the current row; bitwise identical to
  // the value sample() would have recorded for the same draw.
  double logprob(int position, std::span<const TokenId> prefix, TokenId token);

  std::vector<double> probs(int position, std::span<const TokenId> prefix);

  // Mutable logit row backing the distribution at (position, prefix). Prefix
  // mode creates missing rows from the initial row.
  std::vector<double>& logits(int position, std::span<const TokenId> prefix);

  // Position-mode storage; empty in prefix mode.
  const std::vector<std::vector<double>>& position_rows() const { return by_position_; }
  // Prefix-mode storage, keyed by context hash; empty in position mode.
  const std::unordered_map<std::uint64_t, std::vector<double>>& prefix_rows() const {
    return by_prefix_;
  }

  bool all_finite() const;

 private:
  int depth_;
  int vocab_;
  ContextMode mode_;
  std::vector<double> initial_row_;
  std::vector<std::vector<double>> by_position_;
  std::unordered_map<std::uint64_t, std::vector<double>> by_prefix_;
};

// ============================================================================
// Trainer
// ============================================================================

struct TrainConfig {
  Method method = Method::Tempo;
  int group_size = 6;
  int groups_per_update = 8;
  double learning_rate = 20.0;
  ClipConfig clip{};
  int updates = 300;
  std::uint64_t seed = 0;
  double hepo_rho = 0.2;
  double gae_lambda = 1.0;
  int inner_epochs = 1;
  double success_threshold = 0.9;
  ContextMode context_mode = ContextMode::Position;
  // Added to token 0's logit in every fresh row; large values make the
  // initial policy an effective point mass on token 0.
  double initial_peak_logit = 0.0;

  void validate() const;  // throws std::invalid_argument naming the field
};

struct ExperimentReport {
  std::vector<double> success_rate;       // per update, measured on that update's samples
  std::vector<double> mean_branch_count;  // per update, mean over the update's groups
  // First update index whose success rate reaches the threshold (the number
  // of gradient updates already applied at that point); -1 when never.
  std::int64_t updates_to_threshold = -1;
  double final_success = 0.0;  // mean success over the last tenth of the run
  std::uint64_t seed = 0;
  TrainConfig config;
  std::string axis_label;  // set by sweep()
  std::int64_t axis_value = 0;
};

// G independent rollouts of length env.depth() with per-token logprobs and
// entropies recorded from the sampling policy; rewards from the env's rule.
Group sample_group(const BranchEnv& env, TabularPolicy& policy, int group_size,
                   std::mt19937_64& rng, const std::string& prompt_id = "g");

// Runs config.updates iterations of sample / estimate advantages / ascend the
// clipped surrogate on the tabular logits. Fully reproducible from the seed.
// When `final_policy` is non-null it receives the trained policy.
ExperimentReport train(const BranchEnv& env, const TrainConfig& config,
                       TabularPolicy* final_policy = nullptr);

enum class SweepAxis { GroupSize, BranchCount };

// One train run per (value, seed), reports tagged with the axis value. The
// branch-count axis rebuilds the env with that many evenly spaced decisions;
// an empty seed list means just the base config's seed.
std::vector<ExperimentReport> sweep(const BranchEnv& env, const TrainConfig& base,
                                    SweepAxis axis, std::span<const int> values,
                                    std::span<const std::uint64_t> seeds);

}  // namespace tempo::sim
