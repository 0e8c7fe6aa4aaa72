#include "tempo/io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <unordered_map>
#include <utility>

#include "json.hpp"

namespace tempo::io {

namespace {

using nlohmann::json;

std::vector<double> parse_double_array(const json& value, const char* field, int line_number,
                                       std::size_t expected_size) {
  if (!value.is_array()) {
    throw InputError(line_number, std::string(field) + " must be an array");
  }
  if (value.size() != expected_size) {
    throw InputError(line_number,
                     std::string(field) + " length must match tokens length");
  }
  std::vector<double> out;
  out.reserve(value.size());
  for (const json& entry : value) {
    if (!entry.is_number()) {
      throw InputError(line_number, std::string(field) + " entries must be numbers");
    }
    out.push_back(entry.get<double>());
  }
  return out;
}

}  // namespace

Rollout parse_rollout_record(const std::string& line, int line_number) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& err) {
    throw InputError(line_number, std::string("invalid JSON: ") + err.what());
  }
  if (!record.is_object()) {
    throw InputError(line_number, "record must be a JSON object");
  }

  Rollout rollout;

  auto prompt_it = record.find("prompt_id");
  if (prompt_it == record.end() || !prompt_it->is_string()) {
    throw InputError(line_number, "prompt_id must be a string");
  }
  rollout.prompt_id = prompt_it->get<std::string>();

  auto tokens_it = record.find("tokens");
  if (tokens_it == record.end() || !tokens_it->is_array()) {
    throw InputError(line_number, "tokens must be an array");
  }
  if (tokens_it->empty()) {
    throw InputError(line_number, "empty rollout");
  }
  rollout.tokens.reserve(tokens_it->size());
  for (const json& entry : *tokens_it) {
    if (!entry.is_number_integer()) {
      throw InputError(line_number, "tokens entries must be integers");
    }
    rollout.tokens.push_back(entry.get<TokenId>());
  }

  auto reward_it = record.find("reward");
  if (reward_it == record.end() || !reward_it->is_number()) {
    throw InputError(line_number, "reward must be a number");
  }
  rollout.reward = reward_it->get<double>();
  if (!std::isfinite(rollout.reward)) {
    throw InputError(line_number, "reward must be finite");
  }

  if (auto it = record.find("old_logprobs"); it != record.end() && !it->is_null()) {
    rollout.old_logprobs =
        parse_double_array(*it, "old_logprobs", line_number, rollout.tokens.size());
    for (double lp : *rollout.old_logprobs) {
      if (!(lp <= 0.0)) {
        throw InputError(line_number, "old_logprobs entries must be <= 0");
      }
    }
  }
  if (auto it = record.find("entropies"); it != record.end() && !it->is_null()) {
    rollout.entropies =
        parse_double_array(*it, "entropies", line_number, rollout.tokens.size());
    for (double h : *rollout.entropies) {
      if (!(h >= 0.0)) {
        throw InputError(line_number, "entropies entries must be >= 0");
      }
    }
  }
  return rollout;
}

std::string format_rollout_record(const Rollout& rollout) {
  nlohmann::ordered_json record;
  record["prompt_id"] = rollout.prompt_id;
  record["tokens"] = rollout.tokens;
  record["reward"] = rollout.reward;
  if (rollout.old_logprobs) {
    record["old_logprobs"] = *rollout.old_logprobs;
  }
  if (rollout.entropies) {
    record["entropies"] = *rollout.entropies;
  }
  return record.dump();
}

namespace {

// Shared line loop: skips blank lines, parses records, tracks line numbers.
template <typename OnRecord>
void for_each_record(std::istream& in, OnRecord&& on_record) {
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    on_record(parse_rollout_record(line, line_number), line_number);
  }
}

}  // namespace

BufferedCorpus read_buffered(std::istream& in) {
  BufferedCorpus corpus;
  std::unordered_map<std::string, std::size_t> group_index;
  for_each_record(in, [&](Rollout&& rollout, int) {
    auto [it, inserted] = group_index.try_emplace(rollout.prompt_id, corpus.groups.size());
    if (inserted) {
      Group group;
      group.prompt_id = rollout.prompt_id;
      corpus.groups.push_back(std::move(group));
    }
    Group& group = corpus.groups[it->second];
    corpus.order.push_back(RecordPosition{it->second, group.rollouts.size()});
    group.rollouts.push_back(std::move(rollout));
  });
  return corpus;
}

void for_each_group(std::istream& in, bool buffered,
                    const std::function<void(const Group&)>& visit) {
  if (buffered) {
    BufferedCorpus corpus = read_buffered(in);
    for (const Group& group : corpus.groups) {
      visit(group);
    }
    return;
  }

  // Streaming mode: one group in memory at a time. A prompt_id reappearing
  // after its run ended means the input needs buffered mode.
  Group current;
  std::unordered_map<std::string, int> closed_at_line;
  for_each_record(in, [&](Rollout&& rollout, int line_number) {
    if (!current.rollouts.empty() && rollout.prompt_id != current.prompt_id) {
      closed_at_line.emplace(current.prompt_id, line_number);
      visit(current);
      current = Group{};
    }
    if (current.rollouts.empty()) {
      if (closed_at_line.count(rollout.prompt_id) != 0) {
        throw InputError(line_number, "prompt_id \"" + rollout.prompt_id +
                                          "\" records are not contiguous; rerun with "
                                          "buffered mode");
      }
      current.prompt_id = rollout.prompt_id;
    }
    current.rollouts.push_back(std::move(rollout));
  });
  if (!current.rollouts.empty()) {
    visit(current);
  }
}

std::string format_double(double value) {
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

}  // namespace tempo::io
