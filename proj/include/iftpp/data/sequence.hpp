#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace iftpp {

/// One observed event stream starting at time 0.
struct EventSequence {
  std::string id;
  std::vector<double> arrival_times;          // strictly increasing, positive
  std::optional<std::vector<int>> marks;      // one class index per event
  std::optional<std::vector<double>> metadata;  // per event, or one value per sequence

  std::size_t size() const { return arrival_times.size(); }
  /// tau_i = t_i - t_{i-1} with t_0 = 0.
  std::vector<double> gaps() const;
  /// Throws InputError naming the sequence when an invariant is violated.
  void validate() const;
};

/// Builds a sequence from inter-event times.
EventSequence from_gaps(std::string id, const std::vector<double>& gaps);

// JSONL: one object per line,
//   {"id": str, "arrival_times": [..], "marks": [..]?, "metadata": [..]?}
// Readers throw InputError with the 1-based line number on malformed input.
std::vector<EventSequence> read_jsonl(std::istream& in);
std::vector<EventSequence> read_jsonl_file(const std::string& path);
void write_jsonl(std::ostream& out, const std::vector<EventSequence>& seqs);
void write_jsonl_file(const std::string& path, const std::vector<EventSequence>& seqs);

}  // namespace iftpp
