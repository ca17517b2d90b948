#pragma once

#include <cctype>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/dsr/expression.hpp"
#include "symran/logic/table.hpp"

namespace symran {

inline constexpr const char* omega_convention = "omega-v1";

/// Atom counts of a serialized policy. Keywords IF / ELIF / THEN and
/// punctuation are not atoms; AND and ELSE count as connectives.
struct OmegaReport {
  int variables = 0;
  int constants = 0;
  int operators = 0;
  int comparators = 0;
  int connectives = 0;
  int action_labels = 0;
  std::string convention = omega_convention;

  int total() const noexcept { return variables + constants + operators + comparators + connectives + action_labels; }

  OmegaReport& operator+=(const OmegaReport& o) {
    variables += o.variables;
    constants += o.constants;
    operators += o.operators;
    comparators += o.comparators;
    connectives += o.connectives;
    action_labels += o.action_labels;
    return *this;
  }

  nlohmann::json to_json() const {
    return {{"convention", convention}, {"total", total()},         {"variables", variables},
            {"constants", constants},   {"operators", operators},   {"comparators", comparators},
            {"connectives", connectives}, {"action_labels", action_labels}};
  }

  bool operator==(const OmegaReport&) const = default;
};

namespace detail {

inline bool is_number(const std::string& t) {
  if (t.empty()) return false;
  char* end = nullptr;
  std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size() && (std::isdigit(static_cast<unsigned char>(t.back())) || t.back() == '.');
}

inline bool is_variable(const std::string& t, const std::vector<std::string>& symbols) {
  for (const auto& s : symbols)
    if (s == t) return true;
  if (t.size() < 2 || t[0] != 'c') return false;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
  return true;
}

inline std::vector<std::string> omega_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == '(' || ch == ')' || ch == ',') flush();
    else cur += ch;
  }
  flush();
  return out;
}

}  // namespace detail

/// Counts the atoms of a serialized policy. `symbols` lists extra concept
/// names beyond the default c<digits> form.
inline OmegaReport omega_text(std::string_view text, const std::vector<std::string>& symbols = {}) {
  static const std::vector<std::string> ops{"+", "-", "*", "/", "log", "exp", "log1p"};
  static const std::vector<std::string> cmps{"<", "<=", ">", ">=", "==", "!="};
  static const std::vector<std::string> connectives{"AND", "OR", "NOT", "ELSE"};
  static const std::vector<std::string> keywords{"IF", "ELIF", "THEN"};
  auto in = [](const std::vector<std::string>& set, const std::string& t) {
    for (const auto& s : set)
      if (s == t) return true;
    return false;
  };
  OmegaReport r;
  for (const std::string& t : detail::omega_tokens(text)) {
    if (in(keywords, t)) continue;
    if (in(connectives, t)) ++r.connectives;
    else if (in(cmps, t)) ++r.comparators;
    else if (in(ops, t)) ++r.operators;
    else if (detail::is_number(t)) ++r.constants;
    else if (detail::is_variable(t, symbols)) ++r.variables;
    else if (std::isalpha(static_cast<unsigned char>(t[0])) || t[0] == '_') ++r.action_labels;
    else throw InvalidArgument("omega: unknown token '" + t + "'");
  }
  return r;
}

inline OmegaReport omega(const ExpressionTree& e) { return omega_text(e.to_prefix()); }

inline OmegaReport omega(const DecisionTable& t) { return omega_text(t.to_text(), t.symbols); }

/// Sum over the per-dimension expressions of a continuous policy.
inline OmegaReport omega(const std::vector<ExpressionTree>& es) {
  OmegaReport r;
  for (const auto& e : es) r += omega(e);
  return r;
}

}  // namespace symran
