#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

enum class Task { slicing, handover };

inline std::string_view to_string(Task t) { return t == Task::slicing ? "slicing" : "handover"; }

inline Task task_from_string(std::string_view s) {
  if (s == "slicing") return Task::slicing;
  if (s == "handover") return Task::handover;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

/// Entity tags: slice membership for slicing, cell role for handover.
enum class EntityTag { embb, urllc, mmtc, serv, tgt };

inline std::string_view to_string(EntityTag e) {
  switch (e) {
    case EntityTag::embb: return "eMBB";
    case EntityTag::urllc: return "URLLC";
    case EntityTag::mmtc: return "mMTC";
    case EntityTag::serv: return "serv";
    case EntityTag::tgt: return "tgt";
  }
  return "eMBB";
}

inline EntityTag entity_tag_from_string(std::string_view s) {
  if (s == "eMBB") return EntityTag::embb;
  if (s == "URLLC") return EntityTag::urllc;
  if (s == "mMTC") return EntityTag::mmtc;
  if (s == "serv") return EntityTag::serv;
  if (s == "tgt") return EntityTag::tgt;
  throw InvalidArgument("unknown entity tag '" + std::string(s) + "'");
}

inline int slice_index(EntityTag e) {
  switch (e) {
    case EntityTag::embb: return 0;
    case EntityTag::urllc: return 1;
    case EntityTag::mmtc: return 2;
    default: throw InvalidArgument("entity tag is not a slice");
  }
}

inline EntityTag slice_tag(int s) {
  static constexpr std::array<EntityTag, 3> tags{EntityTag::embb, EntityTag::urllc, EntityTag::mmtc};
  return tags.at(static_cast<std::size_t>(s));
}

/// Metric layout. Global ids s0..s30; slicing uses s0..s11 and
/// handover s12..s30, stored as local columns starting at 0.
namespace kpm {

struct MetricInfo {
  const char* name;
  double lo;
  double hi;
  bool noisy;
};

inline constexpr int slicing_first = 0;
inline constexpr int slicing_count = 12;
inline constexpr int handover_first = 12;
inline constexpr int handover_count = 19;

// Slicing columns.
inline constexpr int cqi = 0, snr = 1, prb_dl = 2, prb_ul = 3, thp_dl = 4, thp_ul = 5, dly_dl = 6,
                     dly_ul = 7, vol_dl = 8, slice_prb_embb = 9, slice_prb_urllc = 10,
                     slice_prb_mmtc = 11;

// Handover columns (local index = global id - 12).
inline constexpr int ho_cell = 0, ho_srv_rsrp = 1, ho_srv_rsrq = 2, ho_srv_sinr = 3, ho_nbr_rsrp = 4,
                     ho_nbr_rsrq = 5, ho_nbr_sinr = 6, ho_thp_dl = 7, ho_thp_ul = 8, ho_dly_dl = 9,
                     ho_dly_ul = 10, ho_cqi = 11, ho_snr = 12, ho_harq_dl = 13, ho_harq_ul = 14,
                     ho_srv_prb_dl = 15, ho_srv_prb_ul = 16, ho_nbr_prb_dl = 17, ho_nbr_prb_ul = 18;

inline constexpr std::array<MetricInfo, 12> slicing_metrics{{
    {"cqi", 1.0, 15.0, true},
    {"snr_db", -10.0, 30.0, true},
    {"ue_prb_dl", 0.0, 100.0, true},
    {"ue_prb_ul", 0.0, 100.0, true},
    {"thp_dl_mbps", 0.0, 20.0, true},
    {"thp_ul_mbps", 0.0, 5.0, true},
    {"delay_dl_ms", 0.0, 200.0, true},
    {"delay_ul_ms", 0.0, 200.0, true},
    {"volume_dl_mbit", 0.0, 2.0, true},
    {"slice_prb_embb", 0.0, 1.0, true},
    {"slice_prb_urllc", 0.0, 1.0, true},
    {"slice_prb_mmtc", 0.0, 1.0, true},
}};

inline constexpr std::array<MetricInfo, 19> handover_metrics{{
    {"cell_index", 0.0, 1.0, false},
    {"srv_rsrp_dbm", -140.0, -40.0, true},
    {"srv_rsrq_db", -20.0, -3.0, true},
    {"srv_sinr_db", -10.0, 30.0, true},
    {"nbr_rsrp_dbm", -140.0, -40.0, true},
    {"nbr_rsrq_db", -20.0, -3.0, true},
    {"nbr_sinr_db", -10.0, 30.0, true},
    {"thp_dl_mbps", 0.0, 100.0, true},
    {"thp_ul_mbps", 0.0, 30.0, true},
    {"delay_dl_ms", 0.0, 200.0, true},
    {"delay_ul_ms", 0.0, 200.0, true},
    {"cqi", 1.0, 15.0, true},
    {"snr_db", -10.0, 30.0, true},
    {"harq_nack_dl", 0.0, 1.0, true},
    {"harq_nack_ul", 0.0, 1.0, true},
    {"srv_prb_dl", 0.0, 1.0, true},
    {"srv_prb_ul", 0.0, 1.0, true},
    {"nbr_prb_dl", 0.0, 1.0, true},
    {"nbr_prb_ul", 0.0, 1.0, true},
}};

inline int first_id(Task t) { return t == Task::slicing ? slicing_first : handover_first; }
inline int metric_count(Task t) { return t == Task::slicing ? slicing_count : handover_count; }

inline const MetricInfo& info(Task t, int local) {
  if (t == Task::slicing) return slicing_metrics.at(static_cast<std::size_t>(local));
  return handover_metrics.at(static_cast<std::size_t>(local));
}

/// Maps a global metric id to the task's local column, or -1 when out of the task.
inline int local_column(Task t, int global_id) {
  const int c = global_id - first_id(t);
  return (c >= 0 && c < metric_count(t)) ? c : -1;
}

inline Task task_from_metric_count(std::size_t m) {
  if (m == static_cast<std::size_t>(slicing_count)) return Task::slicing;
  if (m == static_cast<std::size_t>(handover_count)) return Task::handover;
  throw InvalidArgument("state has " + std::to_string(m) + " metric columns; expected 12 or 19");
}

}  // namespace kpm

inline constexpr std::int64_t never_switched = std::numeric_limits<std::int32_t>::max();

/// G x M state matrix plus roster. since_switch is handover metadata used by
/// the dwell rule (steps since the last executed switch).
struct KpmState {
  Task task = Task::slicing;
  std::int64_t t = 0;
  Matrix values;
  std::vector<EntityTag> roster;
  std::int64_t since_switch = never_switched;

  std::size_t entities() const noexcept { return values.rows(); }
  bool operator==(const KpmState&) const = default;

  void validate_schema() const {
    require_dim(values.cols() == static_cast<std::size_t>(kpm::metric_count(task)),
                "KpmState: column count does not match task schema");
    require_dim(roster.size() == values.rows(), "KpmState: roster size does not match rows");
  }
};

/// Actions are flat vectors: three PRB ratios for slicing, {0 or 1} for handover.
using Action = std::vector<double>;

inline int handover_code(const Action& a) {
  if (a.size() != 1 || (a[0] != 0.0 && a[0] != 1.0))
    throw InvalidArgument("handover action must be 0 (stay) or 1 (switch)");
  return static_cast<int>(a[0]);
}

inline std::size_t action_dim(Task t) { return t == Task::slicing ? 3 : 1; }
inline std::size_t logit_dim(Task t) { return t == Task::slicing ? 3 : 2; }
inline std::size_t true_concept_count(Task t) { return t == Task::slicing ? 4 : 5; }

}  // namespace symran
