// Acceptance gate: runs every shipping criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oracles.hpp"
#include "tempo/advantage.hpp"
#include "tempo/io.hpp"
#include "tempo/loss.hpp"
#include "tempo/sim.hpp"
#include "tempo/tree.hpp"
#include "tempo/types.hpp"

using tempo::AdvantageMatrix;
using tempo::ClipConfig;
using tempo::Group;
using tempo::GroupStats;
using tempo::Method;
using tempo::PrefixTree;
using tempo::Rollout;
using tempo::TokenId;

namespace {

class CriterionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail(const std::string& message, const char* file, int line) {
  throw CriterionFailure(message + " [" + file + ":" + std::to_string(line) + "]");
}

#define ACC_REQUIRE(cond)                     \
  do {                                        \
    if (!(cond)) {                            \
      fail("requirement failed: " #cond, __FILE__, __LINE__); \
    }                                         \
  } while (0)

#define ACC_REQUIRE_MSG(cond, msg)                                   \
  do {                                                               \
    if (!(cond)) {                                                   \
      std::ostringstream acc_stream_;                                \
      acc_stream_ << "requirement failed: " #cond " | " << msg;      \
      fail(acc_stream_.str(), __FILE__, __LINE__);                   \
    }                                                                \
  } while (0)

int failures = 0;

void run_criterion(int number, const std::string& description,
                   const std::function<void()>& body) {
  const auto start = std::chrono::steady_clock::now();
  std::string error;
  try {
    body();
  } catch (const std::exception& e) {
    error = e.what();
  }
  const auto end = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(end - start).count();
  char timing[32];
  std::snprintf(timing, sizeof(timing), "%.1fs", seconds);
  if (error.empty()) {
    std::cout << "PASS criterion " << number << ": " << description << " (" << timing
              << ")\n";
  } else {
    ++failures;
    std::cout << "FAIL criterion " << number << ": " << description << " | " << error
              << " (" << timing << ")\n";
  }
  std::cout.flush();
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double censored_utt(const tempo::sim::ExperimentReport& report) {
  return report.updates_to_threshold >= 0
             ? static_cast<double>(report.updates_to_threshold)
             : static_cast<double>(report.config.updates + 1);
}

std::vector<std::uint64_t> seed_range(std::uint64_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    seeds[k] = k;
  }
  return seeds;
}

// Median censored updates-to-threshold per axis value for one method's sweep.
std::map<std::int64_t, double> median_utt_by_value(
    const std::vector<tempo::sim::ExperimentReport>& reports) {
  std::map<std::int64_t, std::vector<double>> buckets;
  for (const auto& report : reports) {
    buckets[report.axis_value].push_back(censored_utt(report));
  }
  std::map<std::int64_t, double> out;
  for (auto& [value, utts] : buckets) {
    out[value] = median(std::move(utts));
  }
  return out;
}

std::map<std::int64_t, double> median_final_by_value(
    const std::vector<tempo::sim::ExperimentReport>& reports) {
  std::map<std::int64_t, std::vector<double>> buckets;
  for (const auto& report : reports) {
    buckets[report.axis_value].push_back(report.final_success);
  }
  std::map<std::int64_t, double> out;
  for (auto& [value, finals] : buckets) {
    out[value] = median(std::move(finals));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Criterion bodies
// ----------------------------------------------------------------------------

void criterion_tree_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  oracles::GroupShape shape;  // up to 8 rollouts, length 32, vocabulary 5
  for (int iteration = 0; iteration < 1000; ++iteration) {
    const Group group = oracles::random_group(rng, shape);
    const PrefixTree tree(group);
    const auto expected = oracles::all_prefixes(group);
    ACC_REQUIRE(tree.node_count() == expected.size());
    std::size_t visited = 0;
    tree.for_each_node([&](std::span<const TokenId> prefix, const tempo::PrefixNode& node) {
      const std::vector<TokenId> key(prefix.begin(), prefix.end());
      const auto it = expected.find(key);
      ACC_REQUIRE(it != expected.end());
      ACC_REQUIRE(node.descendant_count == it->second.count);
      ACC_REQUIRE(node.value() == it->second.reward_sum / it->second.count);
      ++visited;
    });
    ACC_REQUIRE(visited == expected.size());
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ACC_REQUIRE_MSG(seconds < 10.0, "took " << seconds << "s");
}

void criterion_reduction_identity() {
  std::mt19937_64 rng(103);
  oracles::GroupShape shape;
  int branched_groups = 0;
  for (int iteration = 0; iteration < 1000; ++iteration) {
    const Group group = oracles::random_group(rng, shape);
    const PrefixTree tree(group);
    const GroupStats stats = tempo::group_stats(group);
    const auto deltas = tempo::td_corrections(group, tree);
    const AdvantageMatrix with_tree = tempo::tempo_advantages(group, tree, stats);
    const AdvantageMatrix uniform = tempo::grpo_advantages(group, stats);

    bool group_branches = false;
    bool any_difference = false;
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      for (std::size_t t = 0; t < deltas[i].size(); ++t) {
        if (deltas[i][t] == 0.0) {
          ACC_REQUIRE(with_tree.per_rollout[i][t] == uniform.per_rollout[i][t]);
        } else {
          group_branches = true;
          if (with_tree.per_rollout[i][t] != uniform.per_rollout[i][t]) {
            any_difference = true;
          }
        }
      }
    }
    // A nonzero correction exists exactly when some branch splits rollouts of
    // different value, and there it must change the advantage.
    if (group_branches && stats.std_dev > 0.0) {
      ACC_REQUIRE(any_difference);
      ++branched_groups;
    }
  }
  ACC_REQUIRE_MSG(branched_groups > 200, "only " << branched_groups
                                                 << " groups exercised a branch");
}

void criterion_telescoping() {
  std::mt19937_64 rng(107);
  oracles::GroupShape shape;
  int asserted = 0;
  for (int iteration = 0; iteration < 1000; ++iteration) {
    const Group group = oracles::random_group(rng, shape);
    const PrefixTree tree(group);
    const auto deltas = tempo::td_corrections(group, tree);
    const double mean = oracles::group_mean(group);
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      if (!oracles::has_unique_sequence(group, i)) {
        continue;
      }
      double sum = 0.0;
      for (double delta : deltas[i]) {
        sum += delta;
      }
      const double expected = group.rollouts[i].reward - mean;
      ACC_REQUIRE_MSG(oracles::within(sum, expected, 1e-9),
                      "sum " << sum << " vs " << expected);
      ++asserted;
    }
  }
  ACC_REQUIRE_MSG(asserted > 1000, "only " << asserted << " unique rollouts seen");
}

void criterion_gae_limits() {
  std::mt19937_64 rng(109);
  for (int iteration = 0; iteration < 1000; ++iteration) {
    const int t_len = oracles::rand_int(rng, 1, 16);
    std::vector<double> rewards(t_len);
    std::vector<double> values(t_len + 1);
    for (double& r : rewards) {
      r = 2.0 * oracles::rand_unit(rng) - 1.0;
    }
    for (double& v : values) {
      v = 2.0 * oracles::rand_unit(rng) - 1.0;
    }

    const auto zero = tempo::gae_advantages(rewards, values, {0.0});
    for (int t = 0; t < t_len; ++t) {
      const double delta = rewards[t] + values[t + 1] - values[t];
      ACC_REQUIRE(oracles::within(zero[t], delta, 1e-12));
    }

    const auto one = tempo::gae_advantages(rewards, values, {1.0});
    for (int t = 0; t < t_len; ++t) {
      double mc_return = values[t_len];
      for (int k = t_len - 1; k >= t; --k) {
        mc_return += rewards[k];
      }
      ACC_REQUIRE(oracles::within(one[t], mc_return - values[t], 1e-12));
    }

    const double lambda = oracles::rand_unit(rng);
    const auto mixed = tempo::gae_advantages(rewards, values, {lambda});
    const auto reference = oracles::gae_double_loop(rewards, values, lambda);
    for (int t = 0; t < t_len; ++t) {
      ACC_REQUIRE(oracles::within(mixed[t], reference[t], 1e-12));
    }
  }
}

void criterion_clipping() {
  std::mt19937_64 rng(113);
  for (int iteration = 0; iteration < 1000; ++iteration) {
    const int rollouts = oracles::rand_int(rng, 1, 4);
    AdvantageMatrix adv;
    std::vector<std::vector<double>> old_lp;
    std::vector<std::vector<double>> new_lp;
    for (int i = 0; i < rollouts; ++i) {
      const int t_len = oracles::rand_int(rng, 1, 8);
      std::vector<double> a(t_len);
      std::vector<double> o(t_len);
      std::vector<double> n(t_len);
      for (int t = 0; t < t_len; ++t) {
        a[t] = 4.0 * oracles::rand_unit(rng) - 2.0;
        o[t] = -3.0 * oracles::rand_unit(rng) - 1e-3;
        n[t] = o[t] + 1.2 * oracles::rand_unit(rng) - 0.6;
      }
      adv.per_rollout.push_back(std::move(a));
      old_lp.push_back(std::move(o));
      new_lp.push_back(std::move(n));
    }
    const double eps = 0.05 + 0.45 * oracles::rand_unit(rng);
    const auto report =
        tempo::clipped_surrogate(adv, old_lp, new_lp, ClipConfig{eps, eps}, false);
    const auto reference = oracles::ppo_symmetric(adv.per_rollout, old_lp, new_lp, eps);
    ACC_REQUIRE(oracles::within(report.objective, reference.objective, 1e-12));
    ACC_REQUIRE(report.clipped_fraction == reference.clipped_fraction);
  }

  // Hand-worked asymmetric cases: one token, bounds 0.8 and 1.28.
  const auto single = [](double advantage, double ratio) {
    AdvantageMatrix adv;
    adv.per_rollout = {{advantage}};
    const std::vector<std::vector<double>> old_lp{{0.0}};
    const std::vector<std::vector<double>> new_lp{{std::log(ratio)}};
    return tempo::clipped_surrogate(adv, old_lp, new_lp, ClipConfig{0.2, 0.28}, false);
  };
  const auto upper = single(1.0, 1.5);
  ACC_REQUIRE_MSG(oracles::within(upper.objective, 1.28, 1e-12),
                  "objective " << upper.objective);
  ACC_REQUIRE(upper.clipped_fraction == 1.0);
  const auto lower = single(-1.0, 0.5);
  ACC_REQUIRE_MSG(oracles::within(lower.objective, -0.8, 1e-12),
                  "objective " << lower.objective);
  ACC_REQUIRE(lower.clipped_fraction == 1.0);
}

void criterion_degenerate_groups() {
  for (double reward : {1.0, 0.0}) {
    Group group;
    group.prompt_id = "degenerate";
    std::mt19937_64 rng(127);
    oracles::GroupShape shape;
    shape.with_entropies = true;
    group = oracles::random_group(rng, shape, "degenerate");
    while (group.size() < 6) {
      group.rollouts.push_back(group.rollouts.front());
    }
    for (Rollout& rollout : group.rollouts) {
      rollout.reward = reward;
    }

    const PrefixTree tree(group);
    const GroupStats stats = tempo::group_stats(group);
    ACC_REQUIRE(stats.std_dev == 0.0);
    for (Method method : {Method::Grpo, Method::Tempo, Method::Hepo}) {
      const AdvantageMatrix adv = tempo::method_advantages(method, group, tree, stats);
      for (const auto& row : adv.per_rollout) {
        for (double value : row) {
          ACC_REQUIRE(std::isfinite(value));
          ACC_REQUIRE(value == 0.0);
        }
      }
    }
  }
}

void criterion_convergence() {
  const auto start = std::chrono::steady_clock::now();
  const tempo::sim::BranchEnv env = tempo::sim::BranchEnv::evenly_spaced(12, 8, 3);
  tempo::sim::TrainConfig config;  // updates 300, group size 6, threshold 0.9

  std::vector<double> tempo_utt;
  std::vector<double> grpo_utt;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    config.seed = seed;
    config.method = Method::Tempo;
    tempo_utt.push_back(censored_utt(tempo::sim::train(env, config)));
    config.method = Method::Grpo;
    grpo_utt.push_back(censored_utt(tempo::sim::train(env, config)));
  }
  const double med_tempo = median(tempo_utt);
  const double med_grpo = median(grpo_utt);
  ACC_REQUIRE_MSG(med_tempo < med_grpo,
                  "median updates to threshold " << med_tempo << " vs " << med_grpo);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ACC_REQUIRE_MSG(seconds < 300.0, "took " << seconds << "s");
}

void criterion_group_size_direction() {
  const tempo::sim::BranchEnv env = tempo::sim::BranchEnv::evenly_spaced(12, 8, 3);
  tempo::sim::TrainConfig base;
  base.updates = 100;
  const std::vector<int> sizes{3, 5, 7, 9};
  const auto seeds = seed_range(10);

  base.method = Method::Tempo;
  const auto tempo_runs =
      tempo::sim::sweep(env, base, tempo::sim::SweepAxis::GroupSize, sizes, seeds);
  base.method = Method::Grpo;
  const auto grpo_runs =
      tempo::sim::sweep(env, base, tempo::sim::SweepAxis::GroupSize, sizes, seeds);

  const auto tempo_final = median_final_by_value(tempo_runs);
  const auto grpo_final = median_final_by_value(grpo_runs);

  for (const auto& finals : {tempo_final, grpo_final}) {
    for (std::size_t k = 1; k < sizes.size(); ++k) {
      const double prev = finals.at(sizes[k - 1]);
      const double next = finals.at(sizes[k]);
      ACC_REQUIRE_MSG(next >= prev, "group size " << sizes[k] << " median " << next
                                                  << " below " << prev);
    }
  }
  for (int size : sizes) {
    ACC_REQUIRE_MSG(tempo_final.at(size) >= grpo_final.at(size),
                    "at group size " << size << ": " << tempo_final.at(size) << " vs "
                                     << grpo_final.at(size));
  }
}

void criterion_branch_count_direction() {
  const tempo::sim::BranchEnv env = tempo::sim::BranchEnv::evenly_spaced(12, 8, 3);
  tempo::sim::TrainConfig base;
  base.updates = 800;
  const std::vector<int> counts{1, 2, 4};
  const auto seeds = seed_range(10);

  base.method = Method::Tempo;
  const auto tempo_runs =
      tempo::sim::sweep(env, base, tempo::sim::SweepAxis::BranchCount, counts, seeds);
  base.method = Method::Grpo;
  const auto grpo_runs =
      tempo::sim::sweep(env, base, tempo::sim::SweepAxis::BranchCount, counts, seeds);

  const auto tempo_utt = median_utt_by_value(tempo_runs);
  const auto grpo_utt = median_utt_by_value(grpo_runs);

  double previous_gap = -1e300;
  for (int count : counts) {
    const double gap = grpo_utt.at(count) - tempo_utt.at(count);
    ACC_REQUIRE_MSG(gap >= previous_gap, "gap at " << count << " decisions is " << gap
                                                   << ", below " << previous_gap);
    previous_gap = gap;
  }

  // Zero decision positions with a point-mass start: branch-free sampling, and
  // the two estimators must walk bitwise-identical trajectories.
  const tempo::sim::BranchEnv flat = tempo::sim::BranchEnv::evenly_spaced(12, 8, 0);
  tempo::sim::TrainConfig flat_config;
  flat_config.updates = 50;
  flat_config.initial_peak_logit = 50.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    flat_config.seed = seed;
    tempo::sim::TabularPolicy tempo_policy(1, 2);
    tempo::sim::TabularPolicy grpo_policy(1, 2);
    flat_config.method = Method::Tempo;
    const auto tempo_report = tempo::sim::train(flat, flat_config, &tempo_policy);
    flat_config.method = Method::Grpo;
    const auto grpo_report = tempo::sim::train(flat, flat_config, &grpo_policy);

    ACC_REQUIRE(tempo_report.success_rate == grpo_report.success_rate);
    ACC_REQUIRE(tempo_report.mean_branch_count == grpo_report.mean_branch_count);
    ACC_REQUIRE(tempo_report.updates_to_threshold == grpo_report.updates_to_threshold);
    for (double branches : tempo_report.mean_branch_count) {
      ACC_REQUIRE(branches == 0.0);
    }
    ACC_REQUIRE(tempo_policy.position_rows() == grpo_policy.position_rows());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream file(path);
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return buffer.str();
}

void criterion_cli_round_trip() {
  const std::string binary = TEMPO_CLI_BINARY;
  const std::string fixture = "/tmp/tempo_acceptance_fixture.jsonl";
  const std::string out_a = "/tmp/tempo_acceptance_out_a.jsonl";
  const std::string out_b = "/tmp/tempo_acceptance_out_b.jsonl";

  // 1000 rollouts across randomly shaped groups, groups contiguous.
  std::mt19937_64 rng(131);
  oracles::GroupShape shape;
  std::vector<std::pair<std::string, std::size_t>> expected_order;
  {
    std::ofstream file(fixture);
    int written = 0;
    int group_index = 0;
    while (written < 1000) {
      Group group = oracles::random_group(rng, shape, "p" + std::to_string(group_index++));
      if (written + static_cast<int>(group.size()) > 1000) {
        group.rollouts.resize(static_cast<std::size_t>(1000 - written));
      }
      for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        file << tempo::io::format_rollout_record(group.rollouts[i]) << "\n";
        expected_order.emplace_back(group.prompt_id, i);
        ++written;
      }
    }
  }

  const auto run = [&](const std::string& out_path) {
    const std::string command = "\"" + binary + "\" adv \"" + fixture + "\" --out \"" +
                                out_path + "\" 2> \"" + out_path + ".err\"";
    return std::system(command.c_str());
  };
  ACC_REQUIRE(run(out_a) == 0);
  ACC_REQUIRE(run(out_b) == 0);

  const std::string text_a = slurp(out_a);
  ACC_REQUIRE(!text_a.empty());
  ACC_REQUIRE(text_a == slurp(out_b));
  ACC_REQUIRE(slurp(out_a + ".err") == slurp(out_b + ".err"));

  std::istringstream lines(text_a);
  std::string line;
  std::size_t index = 0;
  while (std::getline(lines, line)) {
    ACC_REQUIRE(index < expected_order.size());
    const auto record = nlohmann::json::parse(line);
    ACC_REQUIRE(record.at("prompt_id").get<std::string>() == expected_order[index].first);
    ACC_REQUIRE(record.at("rollout_index").get<std::size_t>() ==
                expected_order[index].second);
    ++index;
  }
  ACC_REQUIRE_MSG(index == 1000, "got " << index << " records");

  // The shared-prefix fixture must list the half-value fork node.
  const std::string fork_fixture = "/tmp/tempo_acceptance_fork.jsonl";
  {
    std::ofstream file(fork_fixture);
    file << R"({"prompt_id": "fig", "tokens": [5, 7, 1], "reward": 1.0})" << "\n"
         << R"({"prompt_id": "fig", "tokens": [5, 7, 2], "reward": 0.0})" << "\n"
         << R"({"prompt_id": "fig", "tokens": [5, 3, 9], "reward": 1.0})" << "\n"
         << R"({"prompt_id": "fig", "tokens": [5, 3, 9, 4], "reward": 0.0})" << "\n"
         << R"({"prompt_id": "fig", "tokens": [8, 1], "reward": 1.0})" << "\n"
         << R"({"prompt_id": "fig", "tokens": [8, 2], "reward": 0.0})" << "\n";
  }
  const std::string tree_out = "/tmp/tempo_acceptance_tree.jsonl";
  const std::string tree_command =
      "\"" + binary + "\" tree \"" + fork_fixture + "\" --out \"" + tree_out + "\"";
  ACC_REQUIRE(std::system(tree_command.c_str()) == 0);
  const std::string tree_text = slurp(tree_out);
  ACC_REQUIRE(tree_text.find(R"("descendant_count":2,"reward_sum":1.0,"value":0.5)") !=
              std::string::npos);

  for (const std::string& path :
       {fixture, out_a, out_b, out_a + ".err", out_b + ".err", fork_fixture, tree_out}) {
    std::remove(path.c_str());
  }
}

}  // namespace

int main() {
  run_criterion(1, "prefix values match a brute-force scan on 1000 random groups",
                criterion_tree_oracle);
  run_criterion(2, "tree credit equals uniform credit off-branch, differs on branches",
                criterion_reduction_identity);
  run_criterion(3, "value corrections telescope to the centered reward",
                criterion_telescoping);
  run_criterion(4, "advantage recursion matches its lambda limits and the quadratic form",
                criterion_gae_limits);
  run_criterion(5, "clipped surrogate matches a symmetric reference and hand cases",
                criterion_clipping);
  run_criterion(6, "degenerate groups yield all-zero advantages without faults",
                criterion_degenerate_groups);
  run_criterion(7, "tree credit reaches the success threshold in fewer updates",
                criterion_convergence);
  run_criterion(8, "success is nondecreasing in group size and tree credit stays ahead",
                criterion_group_size_direction);
  run_criterion(9, "the convergence gap grows with decision count, vanishes branch-free",
                criterion_branch_count_direction);
  run_criterion(10, "the command line tool is deterministic and lists the fork node",
                criterion_cli_round_trip);

  if (failures == 0) {
    std::cout << "all 10 criteria passed\n";
    return 0;
  }
  std::cout << failures << " of 10 criteria failed\n";
  return 1;
}
