#include "tempo/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

#include "tempo/tree.hpp"

namespace tempo::sim {

// ============================================================================
// BranchEnv
// ============================================================================

BranchEnv::BranchEnv(int depth, int vocab, std::vector<Decision> decisions)
    : depth_(depth), vocab_(vocab), decisions_(std::move(decisions)) {
  if (depth_ < 1) {
    throw std::invalid_argument("depth must be >= 1");
  }
  if (vocab_ < 2) {
    throw std::invalid_argument("vocab must be >= 2");
  }
  std::vector<bool> seen(static_cast<std::size_t>(depth_), false);
  for (const Decision& decision : decisions_) {
    if (decision.position < 0 || decision.position >= depth_) {
      throw std::invalid_argument("decision position out of range");
    }
    if (seen[static_cast<std::size_t>(decision.position)]) {
      throw std::invalid_argument("duplicate decision position");
    }
    seen[static_cast<std::size_t>(decision.position)] = true;
    for (const auto& [token, quality] : decision.quality) {
      if (token < 0 || token >= vocab_) {
        throw std::invalid_argument("decision token out of range");
      }
      if (!(quality >= 0.0) || quality > 1.0) {
        throw std::invalid_argument("decision quality must be in [0, 1]");
      }
      if (quality > 0.0 && quality < 1.0) {
        stochastic_ = true;
      }
    }
  }
  std::sort(decisions_.begin(), decisions_.end(),
            [](const Decision& a, const Decision& b) { return a.position < b.position; });
}

BranchEnv BranchEnv::evenly_spaced(int depth, int vocab, int count, TokenId correct_token) {
  if (count < 0 || count > depth) {
    throw std::invalid_argument("decision count must be in [0, depth]");
  }
  std::vector<Decision> decisions;
  decisions.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    Decision decision;
    decision.position = static_cast<int>((static_cast<std::int64_t>(j) * depth) / count);
    decision.quality[correct_token] = 1.0;
    decisions.push_back(std::move(decision));
  }
  return BranchEnv(depth, vocab, std::move(decisions));
}

double BranchEnv::reward(std::span<const TokenId> tokens, std::mt19937_64& rng) const {
  if (tokens.size() != static_cast<std::size_t>(depth_)) {
    throw std::invalid_argument("episode length must equal depth");
  }
  double success_prob = 1.0;
  for (const Decision& decision : decisions_) {
    const TokenId chosen = tokens[static_cast<std::size_t>(decision.position)];
    auto it = decision.quality.find(chosen);
    success_prob *= (it == decision.quality.end()) ? 0.0 : it->second;
    if (success_prob == 0.0) {
      return 0.0;
    }
  }
  if (success_prob == 1.0) {
    return 1.0;
  }
  const double draw = (rng() >> 11) * 0x1.0p-53;
  return draw < success_prob ? 1.0 : 0.0;
}

// ============================================================================
// TabularPolicy
// ============================================================================

namespace {

struct SoftmaxRow {
  std::vector<double> probs;
  std::vector<double> logprobs;
  double entropy = 0.0;
};

SoftmaxRow softmax_row(std::span<const double> logits) {
  SoftmaxRow out;
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  out.probs.resize(logits.size());
  out.logprobs.resize(logits.size());
  double norm = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out.probs[v] = std::exp(logits[v] - max_logit);
    norm += out.probs[v];
  }
  const double log_norm = std::log(norm);
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out.probs[v] /= norm;
    out.logprobs[v] = logits[v] - max_logit - log_norm;
    out.entropy -= out.probs[v] * out.logprobs[v];
  }
  return out;
}

std::uint64_t fnv1a64(std::uint64_t hash, std::uint64_t value) {
  for (int byte = 0; byte < 8; ++byte) {
    hash ^= (value >> (8 * byte)) & 0xffu;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t context_key(int position, std::span<const TokenId> prefix) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  hash = fnv1a64(hash, static_cast<std::uint64_t>(position));
  for (TokenId token : prefix) {
    hash = fnv1a64(hash, static_cast<std::uint64_t>(token));
  }
  return hash;
}

}  // namespace

TabularPolicy::TabularPolicy(int depth, int vocab, ContextMode mode,
                             std::vector<double> initial_row)
    : depth_(depth), vocab_(vocab), mode_(mode), initial_row_(std::move(initial_row)) {
  if (depth_ < 1 || vocab_ < 2) {
    throw std::invalid_argument("policy needs depth >= 1 and vocab >= 2");
  }
  if (initial_row_.empty()) {
    initial_row_.assign(static_cast<std::size_t>(vocab_), 0.0);
  }
  if (initial_row_.size() != static_cast<std::size_t>(vocab_)) {
    throw std::invalid_argument("initial row size must equal vocab");
  }
  if (mode_ == ContextMode::Position) {
    by_position_.assign(static_cast<std::size_t>(depth_), initial_row_);
  }
}

std::vector<double>& TabularPolicy::logits(int position, std::span<const TokenId> prefix) {
  if (position < 0 || position >= depth_) {
    throw std::invalid_argument("position out of range");
  }
  if (mode_ == ContextMode::Position) {
    return by_position_[static_cast<std::size_t>(position)];
  }
  auto [it, inserted] = by_prefix_.try_emplace(context_key(position, prefix), initial_row_);
  return it->second;
}

TabularPolicy::Sample TabularPolicy::sample(int position, std::span<const TokenId> prefix,
                                            std::mt19937_64& rng) {
  const auto& row = logits(position, prefix);
  const SoftmaxRow dist = softmax_row(row);
  const double draw = (rng() >> 11) * 0x1.0p-53;
  std::size_t token = dist.probs.size() - 1;
  double cumulative = 0.0;
  for (std::size_t v = 0; v < dist.probs.size(); ++v) {
    cumulative += dist.probs[v];
    if (draw < cumulative) {
      token = v;
      break;
    }
  }
  return Sample{static_cast<TokenId>(token), dist.logprobs[token], dist.entropy};
}

double TabularPolicy::logprob(int position, std::span<const TokenId> prefix, TokenId token) {
  const auto& row = logits(position, prefix);
  if (token < 0 || token >= vocab_) {
    throw std::invalid_argument("token out of range");
  }
  return softmax_row(row).logprobs[static_cast<std::size_t>(token)];
}

std::vector<double> TabularPolicy::probs(int position, std::span<const TokenId> prefix) {
  return softmax_row(logits(position, prefix)).probs;
}

bool TabularPolicy::all_finite() const {
  const auto row_finite = [](const std::vector<double>& row) {
    return std::all_of(row.begin(), row.end(), [](double x) { return std::isfinite(x); });
  };
  return std::all_of(by_position_.begin(), by_position_.end(), row_finite) &&
         std::all_of(by_prefix_.begin(), by_prefix_.end(),
                     [&](const auto& entry) { return row_finite(entry.second); });
}

// ============================================================================
// Trainer
// ============================================================================

void TrainConfig::validate() const {
  if (group_size < 1) {
    throw std::invalid_argument("group_size must be >= 1");
  }
  if (is_normalized_method(method) && group_size < 2) {
    throw std::invalid_argument("group_size must be >= 2 for normalized methods");
  }
  if (groups_per_update < 1) {
    throw std::invalid_argument("groups_per_update must be >= 1");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  }
  if (updates < 1) {
    throw std::invalid_argument("updates must be >= 1");
  }
  if (method == Method::Hepo && (!(hepo_rho > 0.0) || hepo_rho > 1.0)) {
    throw std::invalid_argument("hepo_rho must be in (0, 1]");
  }
  if (gae_lambda < 0.0 || gae_lambda > 1.0) {
    throw std::invalid_argument("gae_lambda must be in [0, 1]");
  }
  if (inner_epochs < 1) {
    throw std::invalid_argument("inner_epochs must be >= 1");
  }
  if (!(success_threshold > 0.0) || success_threshold > 1.0) {
    throw std::invalid_argument("success_threshold must be in (0, 1]");
  }
  clip.validate();
}

Group sample_group(const BranchEnv& env, TabularPolicy& policy, int group_size,
                   std::mt19937_64& rng, const std::string& prompt_id) {
  if (group_size < 1) {
    throw std::invalid_argument("group_size must be >= 1");
  }
  Group group;
  group.prompt_id = prompt_id;
  group.rollouts.reserve(static_cast<std::size_t>(group_size));
  const auto depth = static_cast<std::size_t>(env.depth());
  for (int i = 0; i < group_size; ++i) {
    Rollout rollout;
    rollout.prompt_id = prompt_id;
    rollout.tokens.reserve(depth);
    rollout.old_logprobs.emplace();
    rollout.old_logprobs->reserve(depth);
    rollout.entropies.emplace();
    rollout.entropies->reserve(depth);
    for (int t = 0; t < env.depth(); ++t) {
      const auto sample = policy.sample(t, rollout.tokens, rng);
      rollout.tokens.push_back(sample.token);
      rollout.old_logprobs->push_back(sample.logprob);
      rollout.entropies->push_back(sample.entropy);
    }
    rollout.reward = env.reward(rollout.tokens, rng);
    group.rollouts.push_back(std::move(rollout));
  }
  return group;
}

ExperimentReport train(const BranchEnv& env, const TrainConfig& config,
                       TabularPolicy* final_policy) {
  config.validate();
  std::vector<double> initial_row(static_cast<std::size_t>(env.vocab()), 0.0);
  initial_row[0] = config.initial_peak_logit;
  TabularPolicy policy(env.depth(), env.vocab(), config.context_mode, std::move(initial_row));
  std::mt19937_64 rng(config.seed);

  ExperimentReport report;
  report.seed = config.seed;
  report.config = config;
  report.success_rate.reserve(static_cast<std::size_t>(config.updates));
  report.mean_branch_count.reserve(static_cast<std::size_t>(config.updates));

  const MethodOptions method_options{config.hepo_rho, config.gae_lambda};

  for (int update = 0; update < config.updates; ++update) {
    // Sample this update's batch under the current policy.
    std::vector<Group> groups;
    groups.reserve(static_cast<std::size_t>(config.groups_per_update));
    for (int g = 0; g < config.groups_per_update; ++g) {
      const std::string prompt_id =
          "u" + std::to_string(update) + "g" + std::to_string(g);
      groups.push_back(sample_group(env, policy, config.group_size, rng, prompt_id));
    }

    // Advantages and metrics, group by group.
    AdvantageMatrix batch_adv;
    batch_adv.method_tag = config.method;
    std::vector<const Rollout*> batch_rollouts;
    double reward_sum = 0.0;
    std::int64_t rollout_count = 0;
    double branch_sum = 0.0;
    for (const Group& group : groups) {
      const PrefixTree tree(group);
      branch_sum += static_cast<double>(tree.branch_nodes().size());
      const GroupStats stats = group_stats(group);
      AdvantageMatrix adv = method_advantages(config.method, group, tree, stats, method_options);
      for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        batch_adv.per_rollout.push_back(std::move(adv.per_rollout[i]));
        batch_rollouts.push_back(&group.rollouts[i]);
        reward_sum += group.rollouts[i].reward;
        ++rollout_count;
      }
    }
    report.success_rate.push_back(reward_sum / static_cast<double>(rollout_count));
    report.mean_branch_count.push_back(branch_sum /
                                       static_cast<double>(config.groups_per_update));

    std::vector<std::vector<double>> old_logprobs;
    old_logprobs.reserve(batch_rollouts.size());
    for (const Rollout* rollout : batch_rollouts) {
      old_logprobs.push_back(*rollout->old_logprobs);
    }

    for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
      std::vector<std::vector<double>> new_logprobs;
      new_logprobs.reserve(batch_rollouts.size());
      for (const Rollout* rollout : batch_rollouts) {
        std::vector<double> row;
        row.reserve(rollout->tokens.size());
        for (std::size_t t = 0; t < rollout->tokens.size(); ++t) {
          const std::span<const TokenId> prefix(rollout->tokens.data(), t);
          row.push_back(policy.logprob(static_cast<int>(t), prefix, rollout->tokens[t]));
        }
        new_logprobs.push_back(std::move(row));
      }
      const SurrogateReport surrogate =
          clipped_surrogate(batch_adv, old_logprobs, new_logprobs, config.clip, true);
      const auto& coeff = *surrogate.per_token_coeff;
      const double scale = 1.0 / static_cast<double>(surrogate.token_count);

      // Batch gradient of the token-averaged objective; rows are disjoint, so
      // accumulation order across rows cannot affect the result.
      std::unordered_map<std::vector<double>*, std::vector<double>> gradients;
      for (std::size_t i = 0; i < batch_rollouts.size(); ++i) {
        const Rollout& rollout = *batch_rollouts[i];
        for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
          const double c = coeff[i][t];
          if (c == 0.0) {
            continue;
          }
          const std::span<const TokenId> prefix(rollout.tokens.data(), t);
          auto& row = policy.logits(static_cast<int>(t), prefix);
          auto [it, inserted] =
              gradients.try_emplace(&row, std::vector<double>(row.size(), 0.0));
          auto& grad = it->second;
          const std::vector<double> probs = policy.probs(static_cast<int>(t), prefix);
          const double weight = c * scale;
          for (std::size_t v = 0; v < grad.size(); ++v) {
            grad[v] -= weight * probs[v];
          }
          grad[static_cast<std::size_t>(rollout.tokens[t])] += weight;
        }
      }
      for (auto& [row, grad] : gradients) {
        for (std::size_t v = 0; v < grad.size(); ++v) {
          (*row)[v] += config.learning_rate * grad[v];
        }
      }
    }
  }

  for (std::size_t u = 0; u < report.success_rate.size(); ++u) {
    if (report.success_rate[u] >= config.success_threshold) {
      report.updates_to_threshold = static_cast<std::int64_t>(u);
      break;
    }
  }
  const std::size_t window =
      std::max<std::size_t>(1, report.success_rate.size() / 10);
  double tail_sum = 0.0;
  for (std::size_t u = report.success_rate.size() - window; u < report.success_rate.size(); ++u) {
    tail_sum += report.success_rate[u];
  }
  report.final_success = tail_sum / static_cast<double>(window);

  if (final_policy != nullptr) {
    *final_policy = std::move(policy);
  }
  return report;
}

std::vector<ExperimentReport> sweep(const BranchEnv& env, const TrainConfig& base,
                                    SweepAxis axis, std::span<const int> values,
                                    std::span<const std::uint64_t> seeds) {
  if (values.empty()) {
    throw std::invalid_argument("sweep values must be nonempty");
  }
  const std::vector<std::uint64_t> seed_list =
      seeds.empty() ? std::vector<std::uint64_t>{base.seed}
                    : std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  std::vector<ExperimentReport> reports;
  reports.reserve(values.size() * seed_list.size());
  for (int value : values) {
    for (std::uint64_t seed : seed_list) {
      TrainConfig config = base;
      config.seed = seed;
      ExperimentReport report;
      if (axis == SweepAxis::GroupSize) {
        config.group_size = value;
        report = train(env, config);
        report.axis_label = "group_size";
      } else {
        const BranchEnv swept = BranchEnv::evenly_spaced(env.depth(), env.vocab(), value);
        report = train(swept, config);
        report.axis_label = "branch_count";
      }
      report.axis_value = value;
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

}  // namespace tempo::sim
