#include "tempo/tree.hpp"

#include <stdexcept>
#include <utility>

namespace tempo {

PrefixTree::PrefixTree(const Group& group) {
  if (group.rollouts.empty()) {
    throw std::invalid_argument("empty group");
  }
  root_ = std::make_unique<PrefixNode>();
  node_count_ = 1;
  for (const Rollout& rollout : group.rollouts) {
    if (rollout.tokens.empty()) {
      throw std::invalid_argument("empty rollout");
    }
    PrefixNode* node = root_.get();
    node->descendant_count += 1;
    node->reward_sum += rollout.reward;
    for (TokenId token : rollout.tokens) {
      auto [it, inserted] = node->children.try_emplace(token);
      if (inserted) {
        it->second = std::make_unique<PrefixNode>();
        ++node_count_;
      }
      node = it->second.get();
      node->descendant_count += 1;
      node->reward_sum += rollout.reward;
    }
    node->terminal_count += 1;
    node->terminal_reward_sum += rollout.reward;
  }
}

const PrefixNode* PrefixTree::find(std::span<const TokenId> prefix) const {
  const PrefixNode* node = root_.get();
  for (TokenId token : prefix) {
    auto it = node->children.find(token);
    if (it == node->children.end()) {
      return nullptr;
    }
    node = it->second.get();
  }
  return node;
}

double PrefixTree::prefix_value(std::span<const TokenId> prefix) const {
  const PrefixNode* node = find(prefix);
  if (node == nullptr) {
    throw std::out_of_range("unknown prefix");
  }
  return node->value();
}

namespace {

void visit_depth_first(
    const PrefixNode& node, std::vector<TokenId>& prefix,
    const std::function<void(std::span<const TokenId>, const PrefixNode&)>& visit) {
  visit(prefix, node);
  for (const auto& [token, child] : node.children) {
    prefix.push_back(token);
    visit_depth_first(*child, prefix, visit);
    prefix.pop_back();
  }
}

}  // namespace

void PrefixTree::for_each_node(
    const std::function<void(std::span<const TokenId>, const PrefixNode&)>& visit) const {
  std::vector<TokenId> prefix;
  visit_depth_first(*root_, prefix, visit);
}

std::vector<BranchNode> PrefixTree::branch_nodes() const {
  std::vector<BranchNode> result;
  for_each_node([&result](std::span<const TokenId> prefix, const PrefixNode& node) {
    if (node.is_branch()) {
      result.push_back(BranchNode{{prefix.begin(), prefix.end()}, node.branching_degree()});
    }
  });
  return result;
}

PrefixTree build_tree(const Group& group) { return PrefixTree(group); }

void accumulate_branch_tokens(const PrefixTree& tree, std::map<TokenId, std::int64_t>& counts) {
  tree.for_each_node([&counts](std::span<const TokenId>, const PrefixNode& node) {
    if (!node.is_branch()) {
      return;
    }
    for (const auto& [token, child] : node.children) {
      counts[token] += 1;
    }
  });
}

std::map<TokenId, std::int64_t> branch_token_stats(std::span<const Group> groups) {
  std::map<TokenId, std::int64_t> counts;
  for (const Group& group : groups) {
    PrefixTree tree(group);
    accumulate_branch_tokens(tree, counts);
  }
  return counts;
}

}  // namespace tempo
