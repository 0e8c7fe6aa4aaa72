#pragma once

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "tempo/types.hpp"

namespace tempo::io {

// Input failure carrying the 1-based line number of the offending record.
class InputError : public std::runtime_error {
 public:
  InputError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

// Parses one line-delimited rollout record:
//   {"prompt_id": "...", "tokens": [...], "reward": r,
//    "old_logprobs": [...], "entropies": [...]}
// old_logprobs and entropies are optional. Throws InputError on malformed
// input.
Rollout parse_rollout_record(const std::string& line, int line_number);

// Serializes a rollout back to the wire format (no trailing newline).
std::string format_rollout_record(const Rollout& rollout);

// Reads records from `in` and hands each completed group to `visit`, in
// first-appearance order. Streaming mode (buffered = false) requires each
// prompt_id to form one contiguous run and holds only the current group in
// memory; buffered mode accepts scattered records by reading the whole stream
// first. Throws InputError.
void for_each_group(std::istream& in, bool buffered,
                    const std::function<void(const Group&)>& visit);

struct RecordPosition {
  std::size_t group_index = 0;
  std::size_t rollout_index = 0;
};

// Whole-stream read that also reports, for each input record in original
// order, which (group, rollout) it became; used when output must follow input
// order while groups arrive scattered.
struct BufferedCorpus {
  std::vector<Group> groups;          // first-appearance order
  std::vector<RecordPosition> order;  // one entry per input record, input order
};

BufferedCorpus read_buffered(std::istream& in);

// Shortest round-trip decimal form of a double, fixed across platforms.
std::string format_double(double value);

}  // namespace tempo::io
