#include "tempo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tempo/io.hpp"
#include "tempo/tree.hpp"

namespace tempo::cli {

namespace {

// One group's share of cmd_adv output: record lines in rollout order plus any
// warnings raised while computing them.
struct GroupOutput {
  std::vector<std::string> lines;
  std::vector<std::string> warnings;
};

GroupOutput process_adv_group(const Group& group, const AdvOptions& options) {
  GroupOutput out;
  const PrefixTree tree(group);
  const std::vector<std::vector<double>> deltas = td_corrections(group, tree);

  AdvantageMatrix adv;
  if (is_normalized_method(options.method) && group.size() < 2) {
    out.warnings.push_back("prompt_id \"" + group.prompt_id + "\": group of size " +
                           std::to_string(group.size()) + " with method " +
                           std::string(to_string(options.method)) +
                           "; emitting zero advantages");
    adv.method_tag = options.method;
    for (const Rollout& rollout : group.rollouts) {
      adv.per_rollout.emplace_back(rollout.length(), 0.0);
    }
  } else {
    adv = method_advantages(options.method, group, tree, group_stats(group),
                            MethodOptions{options.hepo_rho, options.gae_lambda});
  }

  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    std::vector<std::int64_t> branch_positions;
    for (std::size_t t = 0; t < deltas[i].size(); ++t) {
      if (deltas[i][t] != 0.0) {
        branch_positions.push_back(static_cast<std::int64_t>(t));
      }
    }
    nlohmann::ordered_json record;
    record["prompt_id"] = group.prompt_id;
    record["rollout_index"] = i;
    record["method"] = std::string(to_string(options.method));
    record["advantages"] = adv.per_rollout[i];
    record["branch_positions"] = branch_positions;
    out.lines.push_back(record.dump());
  }
  return out;
}

void write_group_output(const GroupOutput& result, std::ostream& out, std::ostream& err) {
  for (const std::string& warning : result.warnings) {
    err << "warning: " << warning << "\n";
  }
  for (const std::string& line : result.lines) {
    out << line << "\n";
  }
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

int run_adv(std::istream& in, std::ostream& out, std::ostream& err, const AdvOptions& options) {
  try {
    options.clip.validate();
    if (options.method == Method::Hepo &&
        (!(options.hepo_rho > 0.0) || options.hepo_rho > 1.0)) {
      throw std::invalid_argument("rho must be in (0, 1]");
    }
    if (options.method == Method::Gae &&
        (options.gae_lambda < 0.0 || options.gae_lambda > 1.0)) {
      throw std::invalid_argument("lambda must be in [0, 1]");
    }
    if (options.parallel < 1) {
      throw std::invalid_argument("parallel must be >= 1");
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    if (options.buffered) {
      const io::BufferedCorpus corpus = io::read_buffered(in);
      std::vector<GroupOutput> results(corpus.groups.size());
      if (options.parallel > 1) {
        std::vector<std::future<GroupOutput>> futures;
        futures.reserve(corpus.groups.size());
        for (const Group& group : corpus.groups) {
          futures.push_back(std::async(std::launch::async, [&group, &options] {
            return process_adv_group(group, options);
          }));
        }
        for (std::size_t g = 0; g < futures.size(); ++g) {
          results[g] = futures[g].get();
        }
      } else {
        for (std::size_t g = 0; g < corpus.groups.size(); ++g) {
          results[g] = process_adv_group(corpus.groups[g], options);
        }
      }
      for (const GroupOutput& result : results) {
        for (const std::string& warning : result.warnings) {
          err << "warning: " << warning << "\n";
        }
      }
      // Output follows the original record order even when a group's records
      // arrived scattered through the input.
      for (const io::RecordPosition& pos : corpus.order) {
        out << results[pos.group_index].lines[pos.rollout_index] << "\n";
      }
    } else if (options.parallel > 1) {
      std::deque<std::future<GroupOutput>> pending;
      const auto drain_one = [&] {
        const GroupOutput result = pending.front().get();
        pending.pop_front();
        write_group_output(result, out, err);
      };
      io::for_each_group(in, false, [&](const Group& group) {
        pending.push_back(std::async(std::launch::async, [group, &options] {
          return process_adv_group(group, options);
        }));
        if (static_cast<int>(pending.size()) >= options.parallel) {
          drain_one();
        }
      });
      while (!pending.empty()) {
        drain_one();
      }
    } else {
      io::for_each_group(in, false, [&](const Group& group) {
        write_group_output(process_adv_group(group, options), out, err);
      });
    }
  } catch (const io::InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitOk;
}

int run_tree(std::istream& in, std::ostream& out, std::ostream& err,
             const TreeOptions& options) {
  try {
    io::for_each_group(in, options.buffered, [&](const Group& group) {
      const PrefixTree tree(group);
      tree.for_each_node([&](std::span<const TokenId> prefix, const PrefixNode& node) {
        nlohmann::ordered_json record;
        record["prompt_id"] = group.prompt_id;
        record["depth"] = prefix.size();
        if (prefix.empty()) {
          record["token"] = nullptr;
        } else {
          record["token"] = prefix.back();
        }
        record["descendant_count"] = node.descendant_count;
        record["reward_sum"] = node.reward_sum;
        record["value"] = node.value();
        record["is_branch"] = node.is_branch();
        out << record.dump() << "\n";
      });
    });
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitOk;
}

int run_branch_stats(std::istream& in, std::ostream& out, std::ostream& err,
                     const BranchStatsOptions& options) {
  if (options.top_n && *options.top_n < 0) {
    err << "error: top-n must be >= 0\n";
    return kExitConfigError;
  }
  try {
    std::map<TokenId, std::int64_t> counts;
    io::for_each_group(in, options.buffered, [&](const Group& group) {
      const PrefixTree tree(group);
      accumulate_branch_tokens(tree, counts);
    });
    std::vector<std::pair<TokenId, std::int64_t>> rows(counts.begin(), counts.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (options.top_n && rows.size() > static_cast<std::size_t>(*options.top_n)) {
      rows.resize(static_cast<std::size_t>(*options.top_n));
    }
    for (const auto& [token, count] : rows) {
      out << token << "," << count << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitOk;
}

int run_sim(const SimOptions& options, std::ostream& csv, std::ostream& summary,
            std::ostream& err) {
  std::vector<sim::ExperimentReport> reports;
  try {
    if (options.methods.empty()) {
      throw std::invalid_argument("method list must be nonempty");
    }
    if (options.num_seeds < 1) {
      throw std::invalid_argument("seeds must be >= 1");
    }
    const sim::BranchEnv env = sim::BranchEnv::evenly_spaced(
        options.depth, options.vocab, options.decisions, options.correct_token);
    if (options.sweep_axis && options.sweep_values.empty()) {
      throw std::invalid_argument("sweep values must be nonempty");
    }

    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(options.num_seeds));
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      seeds[k] = options.base.seed + k;
    }

    for (Method method : options.methods) {
      sim::TrainConfig config = options.base;
      config.method = method;
      if (options.sweep_axis) {
        std::vector<sim::ExperimentReport> swept =
            sim::sweep(env, config, *options.sweep_axis, options.sweep_values, seeds);
        for (sim::ExperimentReport& report : swept) {
          reports.push_back(std::move(report));
        }
      } else {
        config.validate();
        for (std::uint64_t seed : seeds) {
          config.seed = seed;
          reports.push_back(sim::train(env, config));
        }
      }
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }

  csv << "method,axis,value,seed,update,success_rate,mean_branch_count\n";
  for (const sim::ExperimentReport& report : reports) {
    const std::string method_name(to_string(report.config.method));
    const std::string value_field =
        report.axis_label.empty() ? "" : std::to_string(report.axis_value);
    for (std::size_t u = 0; u < report.success_rate.size(); ++u) {
      csv << method_name << "," << report.axis_label << "," << value_field << ","
          << report.seed << "," << u << "," << io::format_double(report.success_rate[u])
          << "," << io::format_double(report.mean_branch_count[u]) << "\n";
    }
  }

  // Summary: medians over seeds per (method, axis value), in run order. A run
  // that never reaches the threshold counts as updates + 1.
  struct ArmKey {
    Method method;
    std::int64_t axis_value;
    bool operator==(const ArmKey& other) const {
      return method == other.method && axis_value == other.axis_value;
    }
  };
  std::vector<ArmKey> arm_order;
  std::vector<std::vector<const sim::ExperimentReport*>> arms;
  for (const sim::ExperimentReport& report : reports) {
    const ArmKey key{report.config.method, report.axis_value};
    std::size_t slot = arm_order.size();
    for (std::size_t a = 0; a < arm_order.size(); ++a) {
      if (arm_order[a] == key) {
        slot = a;
        break;
      }
    }
    if (slot == arm_order.size()) {
      arm_order.push_back(key);
      arms.emplace_back();
    }
    arms[slot].push_back(&report);
  }

  const auto censored_utt = [](const sim::ExperimentReport& report) {
    return report.updates_to_threshold >= 0
               ? static_cast<double>(report.updates_to_threshold)
               : static_cast<double>(report.config.updates + 1);
  };

  std::map<std::pair<std::string, std::int64_t>, double> median_utt_by_arm;
  const std::string axis_label = reports.empty() ? "" : reports.front().axis_label;
  for (std::size_t a = 0; a < arm_order.size(); ++a) {
    std::vector<double> finals;
    std::vector<double> utts;
    for (const sim::ExperimentReport* report : arms[a]) {
      finals.push_back(report->final_success);
      utts.push_back(censored_utt(*report));
    }
    const double med_utt = median(utts);
    const std::string method_name(to_string(arm_order[a].method));
    median_utt_by_arm[{method_name, arm_order[a].axis_value}] = med_utt;
    summary << "method=" << method_name;
    if (!axis_label.empty()) {
      summary << " " << axis_label << "=" << arm_order[a].axis_value;
    }
    summary << " seeds=" << arms[a].size()
            << " median_final_success=" << io::format_double(median(std::move(finals)))
            << " median_updates_to_threshold=" << io::format_double(med_utt) << "\n";
  }

  if (options.methods.size() >= 2) {
    const std::string base_name(to_string(options.methods.front()));
    std::vector<std::int64_t> axis_values;
    for (const ArmKey& key : arm_order) {
      if (std::find(axis_values.begin(), axis_values.end(), key.axis_value) ==
          axis_values.end()) {
        axis_values.push_back(key.axis_value);
      }
    }
    for (std::size_t m = 1; m < options.methods.size(); ++m) {
      const std::string other_name(to_string(options.methods[m]));
      for (std::int64_t value : axis_values) {
        const auto base_it = median_utt_by_arm.find({base_name, value});
        const auto other_it = median_utt_by_arm.find({other_name, value});
        if (base_it == median_utt_by_arm.end() || other_it == median_utt_by_arm.end()) {
          continue;
        }
        summary << "ratio " << other_name << "/" << base_name;
        if (!axis_label.empty()) {
          summary << " " << axis_label << "=" << value;
        }
        summary << " median_updates_to_threshold="
                << io::format_double(other_it->second / base_it->second) << "\n";
      }
    }
  }
  return kExitOk;
}

namespace {

// Opens the optional input/output paths and hands the streams to `body`.
// Empty path or "-" means the standard stream.
int with_streams(const std::string& in_path, const std::string& out_path,
                 const std::function<int(std::istream&, std::ostream&)>& body) {
  std::ifstream in_file;
  std::ofstream out_file;
  std::istream* in = &std::cin;
  std::ostream* out = &std::cout;
  if (!in_path.empty() && in_path != "-") {
    in_file.open(in_path);
    if (!in_file) {
      std::cerr << "error: cannot open " << in_path << "\n";
      return kExitInputError;
    }
    in = &in_file;
  }
  if (!out_path.empty() && out_path != "-") {
    out_file.open(out_path);
    if (!out_file) {
      std::cerr << "error: cannot open " << out_path << " for writing\n";
      return kExitInputError;
    }
    out = &out_file;
  }
  return body(*in, *out);
}

}  // namespace

int main(int argc, const char* const* argv) {
  CLI::App app{"prefix-tree credit assignment toolkit"};
  app.require_subcommand(1);
  const std::vector<std::string> method_names{"tempo", "grpo", "hepo", "gae"};

  // adv
  auto* adv_cmd = app.add_subcommand(
      "adv", "read rollout records, write per-token advantage records");
  std::string adv_in;
  std::string adv_out;
  std::string adv_method = "tempo";
  AdvOptions adv_options;
  adv_cmd->add_option("input", adv_in, "input file (default: standard input)");
  adv_cmd->add_option("--out", adv_out, "output file (default: standard output)");
  adv_cmd->add_option("--method", adv_method, "advantage estimator")
      ->check(CLI::IsMember(method_names));
  adv_cmd->add_option("--eps-low", adv_options.clip.eps_low, "lower clip range");
  adv_cmd->add_option("--eps-high", adv_options.clip.eps_high, "upper clip range");
  adv_cmd->add_option("--rho", adv_options.hepo_rho, "entropy mask fraction");
  adv_cmd->add_option("--lambda", adv_options.gae_lambda, "advantage decay");
  adv_cmd->add_flag("--buffered", adv_options.buffered,
                    "accept scattered prompt_id runs by buffering the whole input");
  adv_cmd->add_option("--parallel", adv_options.parallel,
                      "groups processed concurrently; output order is unchanged");

  // tree
  auto* tree_cmd =
      app.add_subcommand("tree", "emit each group's prefix tree as a node listing");
  std::string tree_in;
  std::string tree_out;
  TreeOptions tree_options;
  tree_cmd->add_option("input", tree_in, "input file (default: standard input)");
  tree_cmd->add_option("--out", tree_out, "output file (default: standard output)");
  tree_cmd->add_flag("--buffered", tree_options.buffered,
                     "accept scattered prompt_id runs by buffering the whole input");

  // branch-stats
  auto* stats_cmd = app.add_subcommand(
      "branch-stats", "aggregate branch-token frequencies across all groups");
  std::string stats_in;
  std::string stats_out;
  BranchStatsOptions stats_options;
  std::int64_t top_n = -1;
  stats_cmd->add_option("input", stats_in, "input file (default: standard input)");
  stats_cmd->add_option("--out", stats_out, "output file (default: standard output)");
  stats_cmd->add_option("--top-n", top_n, "keep only the most frequent tokens")
      ->check(CLI::NonNegativeNumber);
  stats_cmd->add_flag("--buffered", stats_options.buffered,
                      "accept scattered prompt_id runs by buffering the whole input");

  // sim
  auto* sim_cmd = app.add_subcommand(
      "sim", "train tabular policies on the synthetic branching task");
  sim_cmd->set_config("--config", "", "read options from a config file");
  SimOptions sim_options;
  std::vector<std::string> sim_methods{"tempo"};
  std::vector<std::string> sweep_args;
  std::string context = "position";
  std::string sim_out;
  sim_cmd->add_option("--method", sim_methods, "one or more estimators to run")
      ->delimiter(',')
      ->check(CLI::IsMember(method_names));
  sim_cmd->add_option("--depth", sim_options.depth, "episode length");
  sim_cmd->add_option("--vocab", sim_options.vocab, "vocabulary size");
  sim_cmd->add_option("--decisions", sim_options.decisions,
                      "number of evenly spaced decision positions");
  sim_cmd->add_option("--correct-token", sim_options.correct_token,
                      "token rewarded at each decision position");
  sim_cmd->add_option("--group-size", sim_options.base.group_size, "rollouts per group");
  sim_cmd->add_option("--groups-per-update", sim_options.base.groups_per_update,
                      "groups sampled for each update");
  sim_cmd->add_option("--lr", sim_options.base.learning_rate, "gradient ascent step size");
  sim_cmd->add_option("--updates", sim_options.base.updates, "gradient updates per run");
  sim_cmd->add_option("--seed", sim_options.base.seed, "base seed");
  sim_cmd->add_option("--seeds", sim_options.num_seeds,
                      "number of consecutive seeds starting at --seed");
  sim_cmd->add_option("--eps-low", sim_options.base.clip.eps_low, "lower clip range");
  sim_cmd->add_option("--eps-high", sim_options.base.clip.eps_high, "upper clip range");
  sim_cmd->add_option("--rho", sim_options.base.hepo_rho, "entropy mask fraction");
  sim_cmd->add_option("--lambda", sim_options.base.gae_lambda, "advantage decay");
  sim_cmd->add_option("--inner-epochs", sim_options.base.inner_epochs,
                      "optimization passes over each sampled batch");
  sim_cmd->add_option("--threshold", sim_options.base.success_threshold,
                      "success rate defining updates_to_threshold");
  sim_cmd->add_option("--peak-logit", sim_options.base.initial_peak_logit,
                      "initial logit bonus on token 0");
  sim_cmd->add_option("--context", context, "policy conditioning: position or prefix")
      ->check(CLI::IsMember({"position", "prefix"}));
  sim_cmd->add_option("--sweep", sweep_args,
                      "axis (group_size or branch_count) and comma-separated values")
      ->expected(2);
  sim_cmd->add_option("--out", sim_out,
                      "CSV output file; curves go to standard output when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  if (*adv_cmd) {
    adv_options.method = *parse_method(adv_method);
    return with_streams(adv_in, adv_out, [&](std::istream& in, std::ostream& out) {
      return run_adv(in, out, std::cerr, adv_options);
    });
  }
  if (*tree_cmd) {
    return with_streams(tree_in, tree_out, [&](std::istream& in, std::ostream& out) {
      return run_tree(in, out, std::cerr, tree_options);
    });
  }
  if (*stats_cmd) {
    if (stats_cmd->count("--top-n") > 0) {
      stats_options.top_n = top_n;
    }
    return with_streams(stats_in, stats_out, [&](std::istream& in, std::ostream& out) {
      return run_branch_stats(in, out, std::cerr, stats_options);
    });
  }

  sim_options.methods.clear();
  for (const std::string& name : sim_methods) {
    sim_options.methods.push_back(*parse_method(name));
  }
  sim_options.base.context_mode =
      context == "prefix" ? sim::ContextMode::Prefix : sim::ContextMode::Position;
  if (!sweep_args.empty()) {
    if (sweep_args[0] == "group_size") {
      sim_options.sweep_axis = sim::SweepAxis::GroupSize;
    } else if (sweep_args[0] == "branch_count" || sweep_args[0] == "decisions") {
      sim_options.sweep_axis = sim::SweepAxis::BranchCount;
    } else {
      std::cerr << "error: unknown sweep axis \"" << sweep_args[0]
                << "\" (expected group_size or branch_count)\n";
      return kExitConfigError;
    }
    std::stringstream list(sweep_args[1]);
    std::string item;
    while (std::getline(list, item, ',')) {
      try {
        std::size_t used = 0;
        const int value = std::stoi(item, &used);
        if (used != item.size()) {
          throw std::invalid_argument(item);
        }
        sim_options.sweep_values.push_back(value);
      } catch (const std::exception&) {
        std::cerr << "error: sweep values must be integers, got \"" << item << "\"\n";
        return kExitConfigError;
      }
    }
  }

  if (sim_out.empty()) {
    return run_sim(sim_options, std::cout, std::cerr, std::cerr);
  }
  std::ofstream csv_file(sim_out);
  if (!csv_file) {
    std::cerr << "error: cannot open " << sim_out << " for writing\n";
    return kExitInputError;
  }
  return run_sim(sim_options, csv_file, std::cout, std::cerr);
}

}  // namespace tempo::cli
