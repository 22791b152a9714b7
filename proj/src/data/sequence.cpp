#include "iftpp/data/sequence.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "iftpp/errors.hpp"

namespace iftpp {

using nlohmann::json;

std::vector<double> EventSequence::gaps() const {
  std::vector<double> out(arrival_times.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = arrival_times[i] - prev;
    prev = arrival_times[i];
  }
  return out;
}

void EventSequence::validate() const {
  const std::string where = "sequence '" + id + "': ";
  double prev = 0.0;
  for (std::size_t i = 0; i < arrival_times.size(); ++i) {
    const double t = arrival_times[i];
    if (!std::isfinite(t) || !(t > prev))
      throw InputError(where + "arrival_times must be finite, positive and strictly increasing (index " +
                       std::to_string(i) + ")");
    prev = t;
  }
  if (marks) {
    if (marks->size() != arrival_times.size())
      throw InputError(where + "marks length differs from arrival_times length");
    for (int m : *marks)
      if (m < 0) throw InputError(where + "marks must be nonnegative class indices");
  }
  if (metadata) {
    if (metadata->size() != 1 && metadata->size() != arrival_times.size())
      throw InputError(where + "metadata must hold one value per event or one per sequence");
    for (double v : *metadata)
      if (!std::isfinite(v)) throw InputError(where + "metadata must be finite");
  }
}

EventSequence from_gaps(std::string id, const std::vector<double>& gaps) {
  EventSequence s;
  s.id = std::move(id);
  s.arrival_times.reserve(gaps.size());
  double t = 0.0;
  for (double g : gaps) {
    t += g;
    s.arrival_times.push_back(t);
  }
  return s;
}

namespace {

EventSequence parse_line(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw InputError("expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "id" && key != "arrival_times" && key != "marks" && key != "metadata")
      throw InputError("unknown field '" + key + "'");
  EventSequence s;
  if (!j.contains("arrival_times")) throw InputError("missing field 'arrival_times'");
  if (j.contains("id")) {
    const json& id = j.at("id");
    s.id = id.is_string() ? id.get<std::string>() : id.dump();
  }
  s.arrival_times = j.at("arrival_times").get<std::vector<double>>();
  if (j.contains("marks") && !j.at("marks").is_null()) s.marks = j.at("marks").get<std::vector<int>>();
  if (j.contains("metadata") && !j.at("metadata").is_null())
    s.metadata = j.at("metadata").get<std::vector<double>>();
  s.validate();
  return s;
}

}  // namespace

std::vector<EventSequence> read_jsonl(std::istream& in) {
  std::vector<EventSequence> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_line(line));
      if (out.back().id.empty()) out.back().id = std::to_string(out.size() - 1);
    } catch (const json::exception& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EventSequence> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset '" + path + "'");
  return read_jsonl(in);
}

void write_jsonl(std::ostream& out, const std::vector<EventSequence>& seqs) {
  for (const EventSequence& s : seqs) {
    json j;
    j["id"] = s.id;
    j["arrival_times"] = s.arrival_times;
    if (s.marks) j["marks"] = *s.marks;
    if (s.metadata) j["metadata"] = *s.metadata;
    out << j.dump() << '\n';
  }
}

void write_jsonl_file(const std::string& path, const std::vector<EventSequence>& seqs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_jsonl(out, seqs);
}

}  // namespace iftpp
