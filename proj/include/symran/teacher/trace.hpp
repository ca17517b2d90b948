#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/env/kpm.hpp"

namespace symran {

/// One teacher decision step.
struct TraceRecord {
  std::int64_t t = 0;
  KpmState s;
  Vector z;
  Action a;
  double r = 0.0;
  double v_thp = 0.0;
  double v_dly = 0.0;
  Vector c_true;  // hidden concepts of s when the env exposes them

  bool operator==(const TraceRecord&) const = default;
};

/// Rolling, time-ordered buffer with a fixed capacity.
class TraceBuffer {
 public:
  explicit TraceBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
    require(capacity > 0, "TraceBuffer: capacity must be positive");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const TraceRecord& operator[](std::size_t i) const { return records_[i]; }
  const TraceRecord& back() const { return records_.back(); }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  void append(TraceRecord rec) {
    if (!records_.empty() && rec.t <= records_.back().t)
      throw InvalidArgument("TraceBuffer: records must have strictly increasing t");
    if (!all_finite(rec.z)) throw NumericError("TraceBuffer: non-finite z");
    records_.push_back(std::move(rec));
    while (records_.size() > capacity_) records_.pop_front();
  }

  std::vector<TraceRecord> snapshot() const { return {records_.begin(), records_.end()}; }

  bool operator==(const TraceBuffer& o) const { return records_ == o.records_; }

 private:
  std::size_t capacity_;
  std::deque<TraceRecord> records_;
};

inline nlohmann::json record_to_json(const TraceRecord& r) {
  nlohmann::json s = nlohmann::json::array();
  for (std::size_t g = 0; g < r.s.values.rows(); ++g) {
    auto row = r.s.values.row(g);
    s.push_back(std::vector<double>(row.begin(), row.end()));
  }
  std::vector<std::string> roster;
  for (EntityTag e : r.s.roster) roster.emplace_back(to_string(e));
  nlohmann::json j;
  j["t"] = r.t;
  j["s"] = std::move(s);
  j["roster"] = roster;
  j["z"] = r.z;
  if (r.s.task == Task::handover) {
    j["a"] = handover_code(r.a);
    j["since_switch"] = r.s.since_switch;
  } else {
    j["a"] = r.a;
  }
  j["r"] = r.r;
  j["v_thp"] = r.v_thp;
  j["v_dly"] = r.v_dly;
  if (!r.c_true.empty()) j["c_true"] = r.c_true;
  return j;
}

inline TraceRecord record_from_json(const nlohmann::json& j) {
  for (const char* key : {"t", "s", "z", "a", "r", "v_thp", "v_dly"})
    if (!j.contains(key)) throw InvalidArgument(std::string("missing field \"") + key + "\"");
  TraceRecord r;
  r.t = j.at("t").get<std::int64_t>();
  const auto rows = j.at("s").get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw InvalidArgument("field \"s\" has no entity rows");
  const std::size_t m = rows[0].size();
  r.s.task = kpm::task_from_metric_count(m);
  r.s.t = r.t;
  r.s.values = Matrix(rows.size(), m);
  for (std::size_t g = 0; g < rows.size(); ++g) {
    if (rows[g].size() != m) throw InvalidArgument("field \"s\" is ragged");
    std::copy(rows[g].begin(), rows[g].end(), r.s.values.row(g).begin());
  }
  if (j.contains("roster")) {
    for (const auto& tag : j.at("roster")) r.s.roster.push_back(entity_tag_from_string(tag.get<std::string>()));
  } else if (r.s.task == Task::handover) {
    r.s.roster = {EntityTag::serv, EntityTag::tgt};
  } else {
    throw InvalidArgument("slicing record needs a \"roster\" field");
  }
  if (r.s.roster.size() != rows.size()) throw InvalidArgument("roster length differs from entity rows");
  if (j.contains("since_switch")) r.s.since_switch = j.at("since_switch").get<std::int64_t>();
  r.z = j.at("z").get<std::vector<double>>();
  if (r.s.task == Task::handover) r.a = {static_cast<double>(j.at("a").get<int>())};
  else r.a = j.at("a").get<std::vector<double>>();
  r.r = j.at("r").get<double>();
  r.v_thp = j.at("v_thp").get<double>();
  r.v_dly = j.at("v_dly").get<double>();
  if (j.contains("c_true")) r.c_true = j.at("c_true").get<std::vector<double>>();
  if (r.z.size() != logit_dim(r.s.task)) throw InvalidArgument("field \"z\" has the wrong dimension");
  return r;
}

inline void write_traces(std::ostream& os, const TraceBuffer& buf) {
  for (const TraceRecord& r : buf) os << record_to_json(r).dump() << '\n';
}

inline void write_traces(const std::string& path, const TraceBuffer& buf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot write " + path);
  write_traces(os, buf);
}

inline TraceBuffer read_traces(std::istream& is, const std::string& name = "traces",
                               std::size_t capacity = 1000000) {
  TraceBuffer buf(capacity);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      buf.append(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ArtifactError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return buf;
}

inline TraceBuffer read_traces(const std::string& path, std::size_t capacity = 1000000) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing artifact: " + path);
  return read_traces(is, path, capacity);
}

}  // namespace symran
