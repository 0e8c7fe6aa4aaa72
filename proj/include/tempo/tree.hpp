#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "tempo/types.hpp"

namespace tempo {

// Node of the prefix tree spanned by one group's token sequences. Prefix
// values are derived on demand from the stored sums, O(1) per node.
struct PrefixNode {
  std::map<TokenId, std::unique_ptr<PrefixNode>> children;
  std::int64_t descendant_count = 0;  // rollouts whose sequence passes through this prefix
  double reward_sum = 0.0;            // sum of those rollouts' rewards
  std::int64_t terminal_count = 0;    // rollouts ending exactly here
  double terminal_reward_sum = 0.0;

  double value() const { return reward_sum / static_cast<double>(descendant_count); }

  // Termination counts as one continuation alongside the child tokens.
  int branching_degree() const {
    return static_cast<int>(children.size()) + (terminal_count > 0 ? 1 : 0);
  }
  bool is_branch() const { return branching_degree() >= 2; }
};

struct BranchNode {
  std::vector<TokenId> prefix;
  int branching_degree = 0;
};

// Immutable trie over a group's token sequences. Duplicated sequences count
// with multiplicity, so the root value is exactly the group mean reward.
class PrefixTree {
 public:
  explicit PrefixTree(const Group& group);

  PrefixTree(PrefixTree&&) noexcept = default;
  PrefixTree& operator=(PrefixTree&&) noexcept = default;

  const PrefixNode& root() const { return *root_; }
  std::size_t node_count() const { return node_count_; }

  // Node addressed by `prefix`, or nullptr when the path is absent.
  const PrefixNode* find(std::span<const TokenId> prefix) const;

  // Mean reward of the rollouts extending `prefix`. Throws std::out_of_range
  // ("unknown prefix") when the path is absent.
  double prefix_value(std::span<const TokenId> prefix) const;

  // All branch nodes with their prefixes, depth-first, children in ascending
  // token order. The returned size is the group's branch count.
  std::vector<BranchNode> branch_nodes() const;

  // Depth-first traversal of every node (root first); the visitor receives
  // the node's prefix and the node itself.
  void for_each_node(
      const std::function<void(std::span<const TokenId>, const PrefixNode&)>& visit) const;

 private:
  std::unique_ptr<PrefixNode> root_;
  std::size_t node_count_ = 0;
};

// Builds the prefix tree for one group. Throws std::invalid_argument on an
// empty group ("empty group") or a zero-length rollout ("empty rollout").
PrefixTree build_tree(const Group& group);

// Counts, over every branch node of every group, each distinct child token
// once. Keyed ascending by token; serialization sorts by count elsewhere.
std::map<TokenId, std::int64_t> branch_token_stats(std::span<const Group> groups);

// Same accumulation for one already-built tree.
void accumulate_branch_tokens(const PrefixTree& tree, std::map<TokenId, std::int64_t>& counts);

}  // namespace tempo
