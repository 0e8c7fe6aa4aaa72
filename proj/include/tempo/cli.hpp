#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tempo/advantage.hpp"
#include "tempo/loss.hpp"
#include "tempo/sim.hpp"
#include "tempo/types.hpp"

namespace tempo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitConfigError = 2;

struct AdvOptions {
  Method method = Method::Tempo;
  double hepo_rho = 0.2;
  double gae_lambda = 1.0;
  ClipConfig clip{};
  bool buffered = false;
  int parallel = 1;  // groups processed concurrently; output stays in input order
};

// Reads rollout records, writes one advantage record per rollout in input
// order. Warnings go to `err`; data only on `out`.
int run_adv(std::istream& in, std::ostream& out, std::ostream& err, const AdvOptions& options);

struct TreeOptions {
  bool buffered = false;
};

// Emits per group a depth-first node listing (depth, token, descendant_count,
// reward_sum, value, is_branch).
int run_tree(std::istream& in, std::ostream& out, std::ostream& err, const TreeOptions& options);

struct BranchStatsOptions {
  bool buffered = false;
  std::optional<std::int64_t> top_n;
};

// Aggregates branch-token frequencies across all groups; writes token,count
// rows descending by count, ties ascending by token id.
int run_branch_stats(std::istream& in, std::ostream& out, std::ostream& err,
                     const BranchStatsOptions& options);

struct SimOptions {
  std::vector<Method> methods = {Method::Tempo};
  sim::TrainConfig base{};
  int depth = 12;
  int vocab = 8;
  int decisions = 3;
  TokenId correct_token = 0;
  int num_seeds = 1;  // consecutive seeds starting at base.seed
  std::optional<sim::SweepAxis> sweep_axis;
  std::vector<int> sweep_values;
};

// Runs train or sweep for every method and seed; per-update curves go to
// `csv`, the run summary (final success, updates to threshold, and the
// updates-to-threshold ratio when two methods share the seed set) to
// `summary`.
int run_sim(const SimOptions& options, std::ostream& csv, std::ostream& summary,
            std::ostream& err);

// Full command-line entry point (subcommands adv / tree / branch-stats / sim).
int main(int argc, const char* const* argv);

}  // namespace tempo::cli
