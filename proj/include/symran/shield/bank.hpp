#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"
#include "symran/env/kpm.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

struct BankEntry {
  Vector c;
  Action a;
  std::int64_t verified_at = 0;  // t of the admitted decision
  int window = 0;                // T' used for verification

  bool operator==(const BankEntry&) const = default;
};

struct BankConfig {
  int horizon = 10;           // T'
  int tolerance = 0;          // violating steps allowed inside the window
  std::size_t capacity = 5000;

  void validate() const {
    if (horizon < 1) throw ConfigError("bank: horizon T' must be >= 1");
    if (tolerance < 0) throw ConfigError("bank: tolerance must be >= 0");
    if (capacity < 1) throw ConfigError("bank: capacity must be >= 1");
  }
};

/// Known-safe (c, a) pairs with FIFO eviction.
class SafeBank {
 public:
  explicit SafeBank(std::size_t capacity = 5000) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("bank: capacity must be >= 1");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const BankEntry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void add(BankEntry e) {
    if (!all_finite(e.c) || !all_finite(e.a)) throw NumericError("bank: non-finite entry");
    if (!entries_.empty() && e.c.size() != entries_.front().c.size())
      throw DimensionError("bank: concept dimension differs from existing entries");
    entries_.push_back(std::move(e));
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  bool operator==(const SafeBank& o) const { return capacity_ == o.capacity_ && entries_ == o.entries_; }

 private:
  std::size_t capacity_;
  std::deque<BankEntry> entries_;
};

inline bool step_violates(const TraceRecord& r) { return r.v_thp > 0.0 || r.v_dly > 0.0; }

/// y = 1 when the window [i, i + T') starting at record i holds more than
/// `tolerance` violating steps. Records without a full window get -1.
inline std::vector<int> window_labels(std::span<const TraceRecord> records, int horizon, int tolerance) {
  const std::size_t n = records.size();
  const std::size_t T = static_cast<std::size_t>(horizon);
  std::vector<int> labels(n, -1);
  if (n < T) return labels;
  std::vector<int> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (step_violates(records[i]) ? 1 : 0);
  for (std::size_t i = 0; i + T <= n; ++i) labels[i] = prefix[i + T] - prefix[i] > tolerance ? 1 : 0;
  return labels;
}

using ConceptFn = std::function<Vector(const TraceRecord&)>;

/// Admits every decision whose verification window stayed within tolerance,
/// in trace order.
inline SafeBank admit_from_trace(std::span<const TraceRecord> records, const ConceptFn& concepts,
                                 const BankConfig& cfg) {
  cfg.validate();
  SafeBank bank(cfg.capacity);
  const std::vector<int> labels = window_labels(records, cfg.horizon, cfg.tolerance);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (labels[i] != 0) continue;
    bank.add({concepts(records[i]), records[i].a, records[i].t, cfg.horizon});
  }
  return bank;
}

/// Exact nearest neighbour by linear scan; ties go to the lowest index.
inline std::size_t nearest_index(const SafeBank& bank, std::span<const double> c) {
  if (bank.empty()) throw InvalidArgument("retrieve_safe: empty bank");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double d = squared_distance(bank[i].c, c);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline const Action& retrieve_safe(const SafeBank& bank, std::span<const double> c) {
  return bank[nearest_index(bank, c)].a;
}

inline nlohmann::json bank_entry_to_json(const BankEntry& e) {
  return {{"c", e.c}, {"a", e.a}, {"verified_at", e.verified_at}, {"window", e.window}};
}

inline void write_bank(std::ostream& os, const SafeBank& bank) {
  for (const BankEntry& e : bank) os << bank_entry_to_json(e).dump() << '\n';
}

inline void write_bank(const std::string& path, const SafeBank& bank) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot write " + path);
  write_bank(os, bank);
}

inline SafeBank read_bank(std::istream& is, const std::string& name = "bank", std::size_t capacity = 5000) {
  SafeBank bank(capacity);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      bank.add({j.at("c").get<Vector>(), j.at("a").get<Action>(), j.at("verified_at").get<std::int64_t>(),
                j.at("window").get<int>()});
    } catch (const std::exception& e) {
      throw ArtifactError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return bank;
}

inline SafeBank read_bank(const std::string& path, std::size_t capacity = 5000) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing artifact: " + path);
  return read_bank(is, path, capacity);
}

}  // namespace symran
