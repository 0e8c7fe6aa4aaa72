#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tempo {

// Vocabulary index of one generated token. Nonnegative; the engine assumes no
// particular vocabulary size.
using TokenId = std::int64_t;

// One sampled token sequence with its terminal verifiable reward.
// old_logprobs / entropies are optional per-token traces from the sampling
// policy; when present they align 1:1 with tokens.
struct Rollout {
  std::string prompt_id;
  std::vector<TokenId> tokens;
  double reward = 0.0;
  std::optional<std::vector<double>> old_logprobs;  // natural log, each <= 0
  std::optional<std::vector<double>> entropies;     // nats, each >= 0

  std::size_t length() const { return tokens.size(); }
};

// All rollouts sampled for one prompt: the unit over which normalization and
// tree construction happen.
struct Group {
  std::string prompt_id;
  std::vector<Rollout> rollouts;

  std::size_t size() const { return rollouts.size(); }
};

// Advantage estimators provided by the engine.
enum class Method { Tempo, Grpo, Hepo, Gae };

std::string_view to_string(Method method);
std::optional<Method> parse_method(std::string_view name);

// Methods whose advantage is the group-normalized reward (possibly corrected
// or masked); they need a group of at least two rollouts to carry signal.
inline bool is_normalized_method(Method method) { return method != Method::Gae; }

}  // namespace tempo
