#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/env/kpm.hpp"

namespace symran {

/// Which rows of a state a concept aggregates over.
///   "all"            every row
///   "first"          row 0 only (cell-level metrics replicated on every row)
///   "slice:<tag>"    rows of one slice (eMBB, URLLC, mMTC)
///   "cell:<tag>"     the serving or target row (serv, tgt)
class EntitySelector {
 public:
  enum class Kind { all, first, tag };

  EntitySelector() = default;

  static EntitySelector parse(std::string_view text) {
    EntitySelector e;
    if (text == "all") return e;
    if (text == "first") {
      e.kind_ = Kind::first;
      return e;
    }
    const auto colon = text.find(':');
    if (colon == std::string_view::npos)
      throw ConfigError("bad entity selector '" + std::string(text) + "'");
    const std::string_view scope = text.substr(0, colon), name = text.substr(colon + 1);
    EntityTag tag;
    try {
      tag = entity_tag_from_string(name);
    } catch (const InvalidArgument&) {
      throw ConfigError("bad entity selector '" + std::string(text) + "'");
    }
    const bool is_slice = tag == EntityTag::embb || tag == EntityTag::urllc || tag == EntityTag::mmtc;
    if ((scope == "slice" && !is_slice) || (scope == "cell" && is_slice) ||
        (scope != "slice" && scope != "cell"))
      throw ConfigError("bad entity selector '" + std::string(text) + "'");
    e.kind_ = Kind::tag;
    e.tag_ = tag;
    return e;
  }

  Kind kind() const noexcept { return kind_; }
  EntityTag tag() const noexcept { return tag_; }

  std::string to_string() const {
    switch (kind_) {
      case Kind::all: return "all";
      case Kind::first: return "first";
      case Kind::tag: break;
    }
    const bool is_slice = tag_ == EntityTag::embb || tag_ == EntityTag::urllc || tag_ == EntityTag::mmtc;
    return std::string(is_slice ? "slice:" : "cell:") + std::string(symran::to_string(tag_));
  }

  bool matches(std::size_t row, EntityTag tag) const noexcept {
    switch (kind_) {
      case Kind::all: return true;
      case Kind::first: return row == 0;
      case Kind::tag: return tag == tag_;
    }
    return false;
  }

  /// Rows of s in scope, in row order.
  std::vector<std::size_t> rows(const KpmState& s) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < s.roster.size(); ++g)
      if (matches(g, s.roster[g])) out.push_back(g);
    return out;
  }

  bool operator==(const EntitySelector&) const = default;

 private:
  Kind kind_ = Kind::all;
  EntityTag tag_ = EntityTag::embb;
};

/// One template entry: name, entity scope, and local metric columns.
struct ConceptSpec {
  std::string name;
  EntitySelector selector;
  std::vector<int> metrics;

  bool operator==(const ConceptSpec&) const = default;
};

/// Expert-committed concept template. Immutable once constructed.
class ConceptTemplate {
 public:
  ConceptTemplate(Task task, std::vector<ConceptSpec> concepts)
      : task_(task), concepts_(std::move(concepts)) {
    if (concepts_.empty()) throw ConfigError("concept template: needs at least one concept");
    const int m = kpm::metric_count(task_);
    for (auto& c : concepts_) {
      if (c.metrics.empty()) throw ConfigError("concept '" + c.name + "': empty KPM scope");
      for (int col : c.metrics)
        if (col < 0 || col >= m)
          throw ConfigError("concept '" + c.name + "': KPM column " + std::to_string(col) +
                            " outside the " + std::string(to_string(task_)) + " schema");
      std::vector<int> sorted = c.metrics;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ConfigError("concept '" + c.name + "': duplicate KPM in scope");
    }
  }

  Task task() const noexcept { return task_; }
  std::size_t size() const noexcept { return concepts_.size(); }
  const ConceptSpec& operator[](std::size_t k) const { return concepts_.at(k); }
  const std::vector<ConceptSpec>& concepts() const noexcept { return concepts_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : concepts_) out.push_back(c.name);
    return out;
  }

  /// Sum of scope sizes, i.e. the number of (concept, metric) pairs.
  std::size_t support_size() const {
    std::size_t n = 0;
    for (const auto& c : concepts_) n += c.metrics.size();
    return n;
  }

  bool operator==(const ConceptTemplate&) const = default;

  /// Config form: [{name, entity_selector, kpm_indices}] with global metric ids.
  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : concepts_) {
      std::vector<int> ids;
      for (int col : c.metrics) ids.push_back(col + kpm::first_id(task_));
      arr.push_back({{"name", c.name}, {"entity_selector", c.selector.to_string()}, {"kpm_indices", ids}});
    }
    return arr;
  }

  static ConceptTemplate from_json(Task task, const nlohmann::json& arr) {
    if (!arr.is_array()) throw ConfigError("concept template must be a list");
    std::vector<ConceptSpec> specs;
    for (const auto& e : arr) {
      if (!e.is_object()) throw ConfigError("concept template entry must be an object");
      for (const char* key : {"name", "entity_selector", "kpm_indices"})
        if (!e.contains(key)) throw ConfigError(std::string("concept template entry missing '") + key + "'");
      for (auto it = e.begin(); it != e.end(); ++it)
        if (it.key() != "name" && it.key() != "entity_selector" && it.key() != "kpm_indices")
          throw ConfigError("unknown key '" + it.key() + "' in concept template entry");
      ConceptSpec c;
      c.name = e.at("name").get<std::string>();
      c.selector = EntitySelector::parse(e.at("entity_selector").get<std::string>());
      for (const auto& id : e.at("kpm_indices")) {
        const int col = kpm::local_column(task, id.get<int>());
        if (col < 0)
          throw ConfigError("concept '" + c.name + "': KPM s" + std::to_string(id.get<int>()) +
                            " is not a " + std::string(to_string(task)) + " metric");
        c.metrics.push_back(col);
      }
      specs.push_back(std::move(c));
    }
    return ConceptTemplate(task, std::move(specs));
  }

 private:
  Task task_;
  std::vector<ConceptSpec> concepts_;
};

/// Built-in concept templates.
inline ConceptTemplate slicing_template() {
  using namespace kpm;
  return ConceptTemplate(Task::slicing,
                         {{"eMBB demand", EntitySelector::parse("slice:eMBB"), {thp_dl, vol_dl}},
                          {"URLLC stress", EntitySelector::parse("slice:URLLC"), {cqi, dly_dl}},
                          {"slice load", EntitySelector::parse("first"),
                           {slice_prb_embb, slice_prb_urllc, slice_prb_mmtc}},
                          {"channel quality", EntitySelector::parse("all"), {cqi}}});
}

inline ConceptTemplate handover_template() {
  using namespace kpm;
  return ConceptTemplate(
      Task::handover,
      {{"srv signal quality", EntitySelector::parse("cell:serv"), {ho_srv_rsrp, ho_srv_rsrq, ho_srv_sinr, ho_cqi}},
       {"tgt signal quality", EntitySelector::parse("cell:tgt"), {ho_nbr_rsrp, ho_nbr_rsrq, ho_nbr_sinr}},
       {"srv cell load", EntitySelector::parse("cell:serv"), {ho_srv_prb_dl, ho_srv_prb_ul}},
       {"tgt cell load", EntitySelector::parse("cell:tgt"), {ho_nbr_prb_dl, ho_nbr_prb_ul}},
       {"QoS degradation", EntitySelector::parse("cell:serv"), {ho_thp_dl, ho_dly_dl, ho_dly_ul, ho_harq_dl}}});
}

inline ConceptTemplate default_template(Task t) {
  return t == Task::slicing ? slicing_template() : handover_template();
}

}  // namespace symran
