#pragma once

#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "symran/eval/rollout.hpp"

namespace symran {

inline std::string fmt(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    os << '|';
    for (const auto& c : cells) os << ' ' << c << " |";
    os << '\n';
  };
  line(header);
  os << '|';
  for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

/// Per-step series of a comparison, one row per (policy, seed, step).
inline void write_series_csv(std::ostream& os, const ComparisonReport& r, const std::string& cell = "full") {
  os << "cell,policy,seed,step,reward,v_thp,v_dly,action\n";
  auto dump = [&](const char* who, const std::vector<EpisodeSummary>& eps) {
    for (const auto& e : eps)
      for (std::size_t i = 0; i < e.steps(); ++i)
        os << cell << ',' << who << ',' << e.seed << ',' << i << ',' << fmt(e.rewards[i], 6) << ','
           << fmt(e.v_thp[i], 6) << ',' << fmt(e.v_dly[i], 6) << ',' << e.actions[i] << '\n';
  };
  dump("teacher", r.teacher);
  dump("student", r.student);
}

inline std::vector<std::string> comparison_row(const std::string& cell, const ComparisonReport& r) {
  std::size_t triggers = 0;
  for (const auto& e : r.student) triggers += e.shield_triggers;
  return {cell,
          fmt(r.teacher_mean),
          fmt(r.student_mean),
          fmt(r.recovery, 3),
          fmt(r.student_v_thp),
          fmt(r.student_v_dly),
          fmt(r.agreement, 3),
          std::to_string(triggers),
          r.student_omega ? std::to_string(*r.student_omega) : "-"};
}

inline const std::vector<std::string>& comparison_header() {
  static const std::vector<std::string> h{"cell",  "teacher reward", "student reward", "recovery", "V_thp",
                                          "V_dly", "agreement",      "shield triggers", "Omega"};
  return h;
}

/// Quantiles of the pooled reward CDFs, for the markdown summary.
inline std::string cdf_markdown(const ComparisonReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    rows.push_back({fmt(p, 2), fmt(r.teacher_reward_cdf.quantile(p)), fmt(r.student_reward_cdf.quantile(p)),
                    fmt(r.student_v_thp_cdf.quantile(p)), fmt(r.student_v_dly_cdf.quantile(p))});
  }
  return markdown_table({"p", "teacher reward", "student reward", "student V_thp", "student V_dly"}, rows);
}

}  // namespace symran
