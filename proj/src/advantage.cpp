#include "tempo/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tempo {

GroupStats group_stats(const Group& group) {
  if (group.rollouts.empty()) {
    throw std::invalid_argument("empty group");
  }
  const auto count = static_cast<double>(group.rollouts.size());
  double sum = 0.0;
  for (const Rollout& rollout : group.rollouts) {
    sum += rollout.reward;
  }
  const double mean = sum / count;
  double sq_sum = 0.0;
  for (const Rollout& rollout : group.rollouts) {
    const double centered = rollout.reward - mean;
    sq_sum += centered * centered;
  }
  return GroupStats{mean, std::sqrt(sq_sum / count), static_cast<int>(group.rollouts.size())};
}

namespace {

std::vector<std::vector<double>> zero_matrix(const Group& group) {
  std::vector<std::vector<double>> rows;
  rows.reserve(group.rollouts.size());
  for (const Rollout& rollout : group.rollouts) {
    rows.emplace_back(rollout.tokens.size(), 0.0);
  }
  return rows;
}

}  // namespace

AdvantageMatrix grpo_advantages(const Group& group, const GroupStats& stats) {
  AdvantageMatrix matrix;
  matrix.method_tag = Method::Grpo;
  if (stats.std_dev == 0.0) {
    matrix.per_rollout = zero_matrix(group);
    return matrix;
  }
  matrix.per_rollout.reserve(group.rollouts.size());
  for (const Rollout& rollout : group.rollouts) {
    const double normalized = (rollout.reward - stats.mean) / stats.std_dev;
    matrix.per_rollout.emplace_back(rollout.tokens.size(), normalized);
  }
  return matrix;
}

std::vector<std::vector<double>> td_corrections(const Group& group, const PrefixTree& tree) {
  std::vector<std::vector<double>> deltas;
  deltas.reserve(group.rollouts.size());
  for (const Rollout& rollout : group.rollouts) {
    std::vector<double> row;
    row.reserve(rollout.tokens.size());
    const PrefixNode* node = &tree.root();
    for (TokenId token : rollout.tokens) {
      auto it = node->children.find(token);
      if (it == node->children.end()) {
        throw std::invalid_argument("tree does not match group");
      }
      const PrefixNode* next = it->second.get();
      row.push_back(node->is_branch() ? next->value() - node->value() : 0.0);
      node = next;
    }
    deltas.push_back(std::move(row));
  }
  return deltas;
}

AdvantageMatrix tempo_advantages(const Group& group, const PrefixTree& tree,
                                 const GroupStats& stats) {
  AdvantageMatrix matrix;
  matrix.method_tag = Method::Tempo;
  if (stats.std_dev == 0.0) {
    matrix.per_rollout = zero_matrix(group);
    return matrix;
  }
  matrix.per_rollout = td_corrections(group, tree);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const double centered = group.rollouts[i].reward - stats.mean;
    for (double& cell : matrix.per_rollout[i]) {
      cell = (centered + cell) / stats.std_dev;
    }
  }
  return matrix;
}

std::vector<std::vector<bool>> hepo_mask(const Group& group, double rho) {
  if (!(rho > 0.0) || rho > 1.0) {
    throw std::invalid_argument("rho must be in (0, 1]");
  }
  std::vector<double> pooled;
  for (const Rollout& rollout : group.rollouts) {
    if (!rollout.entropies.has_value()) {
      throw std::invalid_argument("entropies required for HEPO");
    }
    pooled.insert(pooled.end(), rollout.entropies->begin(), rollout.entropies->end());
  }
  std::vector<std::vector<bool>> mask;
  mask.reserve(group.rollouts.size());
  // Rank cutoff floor(rho * N); the epsilon keeps exact fractions such as
  // 0.2 * 10 from landing one rank short.
  const auto pool_size = static_cast<double>(pooled.size());
  const auto keep = static_cast<std::size_t>(std::floor(rho * pool_size + 1e-9));
  if (keep == 0) {
    for (const Rollout& rollout : group.rollouts) {
      mask.emplace_back(rollout.tokens.size(), false);
    }
    return mask;
  }
  std::vector<double> sorted = pooled;
  std::nth_element(sorted.begin(), sorted.begin() + (keep - 1), sorted.end(),
                   std::greater<double>());
  const double threshold = sorted[keep - 1];
  for (const Rollout& rollout : group.rollouts) {
    std::vector<bool> row;
    row.reserve(rollout.tokens.size());
    for (double entropy : *rollout.entropies) {
      row.push_back(entropy >= threshold);
    }
    mask.push_back(std::move(row));
  }
  return mask;
}

AdvantageMatrix hepo_advantages(const Group& group, const GroupStats& stats, double rho) {
  const auto mask = hepo_mask(group, rho);
  AdvantageMatrix matrix = grpo_advantages(group, stats);
  matrix.method_tag = Method::Hepo;
  for (std::size_t i = 0; i < matrix.per_rollout.size(); ++i) {
    for (std::size_t t = 0; t < matrix.per_rollout[i].size(); ++t) {
      if (!mask[i][t]) {
        matrix.per_rollout[i][t] = 0.0;
      }
    }
  }
  return matrix;
}

std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values, const GaeConfig& config) {
  if (config.lambda < 0.0 || config.lambda > 1.0) {
    throw std::invalid_argument("lambda must be in [0, 1]");
  }
  if (values.size() != rewards.size() + 1) {
    throw std::invalid_argument("values length must be rewards length + 1");
  }
  std::vector<double> advantages(rewards.size(), 0.0);
  double tail = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + values[t + 1] - values[t];
    tail = delta + config.lambda * tail;
    advantages[t] = tail;
  }
  return advantages;
}

AdvantageMatrix method_advantages(Method method, const Group& group, const PrefixTree& tree,
                                  const GroupStats& stats, const MethodOptions& options) {
  switch (method) {
    case Method::Grpo:
      return grpo_advantages(group, stats);
    case Method::Tempo:
      return tempo_advantages(group, tree, stats);
    case Method::Hepo:
      return hepo_advantages(group, stats, options.hepo_rho);
    case Method::Gae:
      break;
  }
  AdvantageMatrix matrix;
  matrix.method_tag = Method::Gae;
  matrix.per_rollout.reserve(group.rollouts.size());
  const GaeConfig gae{options.gae_lambda};
  for (const Rollout& rollout : group.rollouts) {
    const std::size_t length = rollout.tokens.size();
    std::vector<double> rewards(length, 0.0);
    rewards[length - 1] = rollout.reward;
    std::vector<double> values;
    values.reserve(length + 1);
    const PrefixNode* node = &tree.root();
    for (TokenId token : rollout.tokens) {
      values.push_back(node->value());
      auto it = node->children.find(token);
      if (it == node->children.end()) {
        throw std::invalid_argument("tree does not match group");
      }
      node = it->second.get();
    }
    values.push_back(0.0);  // terminal state
    matrix.per_rollout.push_back(gae_advantages(rewards, values, gae));
  }
  return matrix;
}

}  // namespace tempo
