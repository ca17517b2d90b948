#pragma once

#include <algorithm>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/dsr/expression.hpp"

namespace symran {

enum class CmpOp { lt, le, gt, ge };

inline std::string_view to_string(CmpOp op) {
  switch (op) {
    case CmpOp::lt: return "<";
    case CmpOp::le: return "<=";
    case CmpOp::gt: return ">";
    case CmpOp::ge: return ">=";
  }
  return "<";
}

inline CmpOp cmp_from_string(std::string_view s) {
  if (s == "<") return CmpOp::lt;
  if (s == "<=") return CmpOp::le;
  if (s == ">") return CmpOp::gt;
  if (s == ">=") return CmpOp::ge;
  throw InvalidArgument("unknown comparison operator '" + std::string(s) + "'");
}

struct Term {
  int index = 0;  // concept index
  double coef = 1.0;
  bool operator==(const Term&) const = default;
};

/// Crisp test: sum(coef * c[concept]) op rhs.
struct Test {
  std::vector<Term> lhs;
  CmpOp op = CmpOp::lt;
  double rhs = 0.0;

  bool eval(std::span<const double> c) const {
    double s = 0.0;
    for (const Term& t : lhs) s += t.coef * c[static_cast<std::size_t>(t.index)];
    switch (op) {
      case CmpOp::lt: return s < rhs;
      case CmpOp::le: return s <= rhs;
      case CmpOp::gt: return s > rhs;
      case CmpOp::ge: return s >= rhs;
    }
    return false;
  }
  bool operator==(const Test&) const = default;
};

struct Provenance {
  int rule = -1;
  double attention = 0.0;
  bool operator==(const Provenance&) const = default;
};

struct Branch {
  std::vector<Test> tests;
  int action = 0;
  Provenance provenance;
  bool operator==(const Branch&) const = default;
};

/// Ordered IF/ELIF/ELSE table; the first branch whose tests all hold fires.
struct DecisionTable {
  std::vector<std::string> symbols;  // display name per concept index
  std::vector<std::string> actions;  // label per action index
  std::vector<Branch> branches;
  int default_action = 0;

  bool operator==(const DecisionTable&) const = default;

  std::size_t num_concepts() const noexcept { return symbols.size(); }

  void validate() const {
    require(!actions.empty(), "DecisionTable: no action labels");
    require(default_action >= 0 && default_action < static_cast<int>(actions.size()),
            "DecisionTable: default action out of range");
    for (const Branch& b : branches) {
      require(b.action >= 0 && b.action < static_cast<int>(actions.size()), "DecisionTable: branch action out of range");
      require(!b.tests.empty(), "DecisionTable: branch without tests");
      for (const Test& t : b.tests) {
        require(!t.lhs.empty(), "DecisionTable: test without terms");
        for (const Term& term : t.lhs)
          require(term.index >= 0 && term.index < static_cast<int>(symbols.size()),
                  "DecisionTable: concept index out of range");
      }
    }
  }

  int eval(std::span<const double> c) const {
    require_dim(c.size() >= symbols.size(), "eval_table: concept vector too short");
    for (const Branch& b : branches) {
      bool ok = true;
      for (const Test& t : b.tests)
        if (!t.eval(c)) {
          ok = false;
          break;
        }
      if (ok) return b.action;
    }
    return default_action;
  }

  /// Rule text. decimals < 0 prints shortest round-trip numbers (parseable
  /// without loss); otherwise fixed-point with that many decimals.
  std::string to_text(int decimals = -1) const {
    std::ostringstream os;
    for (std::size_t i = 0; i < branches.size(); ++i) {
      os << (i == 0 ? "IF " : "ELIF ");
      const Branch& b = branches[i];
      for (std::size_t j = 0; j < b.tests.size(); ++j) {
        if (j) os << " AND ";
        os << test_text(b.tests[j], decimals);
      }
      os << " THEN " << actions.at(static_cast<std::size_t>(b.action)) << "\n";
    }
    os << "ELSE " << actions.at(static_cast<std::size_t>(default_action)) << "\n";
    return os.str();
  }

  /// Inverse of to_text given the concept symbols and action labels.
  static DecisionTable parse_text(std::string_view text, std::vector<std::string> symbols,
                                  std::vector<std::string> actions) {
    DecisionTable t;
    t.symbols = std::move(symbols);
    t.actions = std::move(actions);
    std::istringstream lines{std::string(text)};
    std::string line;
    bool saw_else = false;
    while (std::getline(lines, line)) {
      std::istringstream ts(line);
      std::vector<std::string> tok;
      for (std::string w; ts >> w;) tok.push_back(w);
      if (tok.empty()) continue;
      if (saw_else) throw InvalidArgument("decision table: text after ELSE");
      if (tok[0] == "ELSE") {
        if (tok.size() != 2) throw InvalidArgument("decision table: malformed ELSE line");
        t.default_action = t.action_index(tok[1]);
        saw_else = true;
        continue;
      }
      if (tok[0] != "IF" && tok[0] != "ELIF") throw InvalidArgument("decision table: line must start with IF/ELIF/ELSE");
      if (tok.size() < 5 || tok[tok.size() - 2] != "THEN") throw InvalidArgument("decision table: missing THEN");
      Branch b;
      b.action = t.action_index(tok.back());
      std::vector<std::string> cur;
      auto flush = [&] {
        b.tests.push_back(t.parse_test(cur));
        cur.clear();
      };
      for (std::size_t i = 1; i + 2 < tok.size(); ++i) {
        if (tok[i] == "AND") flush();
        else cur.push_back(tok[i]);
      }
      flush();
      t.branches.push_back(std::move(b));
    }
    if (!saw_else) throw InvalidArgument("decision table: missing ELSE line");
    t.validate();
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json br = nlohmann::json::array();
    for (const Branch& b : branches) {
      nlohmann::json tests = nlohmann::json::array();
      for (const Test& t : b.tests) {
        nlohmann::json lhs = nlohmann::json::array();
        for (const Term& term : t.lhs) lhs.push_back({{"concept", term.index}, {"coef", term.coef}});
        tests.push_back({{"lhs", lhs}, {"op", std::string(to_string(t.op))}, {"rhs", t.rhs}});
      }
      br.push_back({{"tests", tests},
                    {"action", b.action},
                    {"provenance", {{"rule", b.provenance.rule}, {"attention", b.provenance.attention}}}});
    }
    return {{"version", 1},
            {"symbols", symbols},
            {"actions", actions},
            {"branches", br},
            {"default_action", default_action}};
  }

  static DecisionTable from_json(const nlohmann::json& j) {
    try {
      DecisionTable t;
      if (j.at("version").get<int>() != 1) throw ArtifactError("decision table JSON: unsupported version");
      t.symbols = j.at("symbols").get<std::vector<std::string>>();
      t.actions = j.at("actions").get<std::vector<std::string>>();
      t.default_action = j.at("default_action").get<int>();
      for (const auto& jb : j.at("branches")) {
        Branch b;
        b.action = jb.at("action").get<int>();
        b.provenance.rule = jb.at("provenance").at("rule").get<int>();
        b.provenance.attention = jb.at("provenance").at("attention").get<double>();
        for (const auto& jt : jb.at("tests")) {
          Test test;
          test.op = cmp_from_string(jt.at("op").get<std::string>());
          test.rhs = jt.at("rhs").get<double>();
          for (const auto& jl : jt.at("lhs"))
            test.lhs.push_back({jl.at("concept").get<int>(), jl.at("coef").get<double>()});
          b.tests.push_back(std::move(test));
        }
        t.branches.push_back(std::move(b));
      }
      t.validate();
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("decision table JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw ArtifactError(std::string("decision table JSON: ") + e.what());
    }
  }

 private:
  static std::string number_text(double v, int decimals) {
    if (decimals < 0) return format_number(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
  }

  std::string test_text(const Test& t, int decimals) const {
    std::string s;
    for (std::size_t i = 0; i < t.lhs.size(); ++i) {
      const Term& term = t.lhs[i];
      const std::string& sym = symbols.at(static_cast<std::size_t>(term.index));
      double c = term.coef;
      if (i > 0) {
        s += c < 0 ? " - " : " + ";
        c = std::abs(c);
      } else if (c == -1.0) {
        s += "- ";
        c = 1.0;
      }
      if (c != 1.0) s += number_text(c, decimals) + " * ";
      s += sym;
    }
    return s + " " + std::string(to_string(t.op)) + " " + number_text(t.rhs, decimals);
  }

  int action_index(const std::string& label) const {
    for (std::size_t i = 0; i < actions.size(); ++i)
      if (actions[i] == label) return static_cast<int>(i);
    throw InvalidArgument("decision table: unknown action '" + label + "'");
  }

  int concept_index(const std::string& sym) const {
    for (std::size_t i = 0; i < symbols.size(); ++i)
      if (symbols[i] == sym) return static_cast<int>(i);
    throw InvalidArgument("decision table: unknown concept '" + sym + "'");
  }

  static double parse_number(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw InvalidArgument("decision table: bad number '" + s + "'");
    return v;
  }

  Test parse_test(const std::vector<std::string>& tok) const {
    // [-] [k *] sym {(+|-) [k *] sym} op rhs
    if (tok.size() < 3) throw InvalidArgument("decision table: malformed test");
    Test t;
    t.op = cmp_from_string(tok[tok.size() - 2]);
    t.rhs = parse_number(tok.back());
    const std::size_t n = tok.size() - 2;
    std::size_t i = 0;
    double sign = 1.0;
    if (tok[0] == "-") {
      sign = -1.0;
      i = 1;
    }
    while (i < n) {
      double coef = 1.0;
      if (i + 2 < n + 1 && i + 1 < n && tok[i + 1] == "*") {
        coef = parse_number(tok[i]);
        i += 2;
      }
      if (i >= n) throw InvalidArgument("decision table: dangling coefficient");
      t.lhs.push_back({concept_index(tok[i]), sign * coef});
      ++i;
      if (i < n) {
        if (tok[i] == "+") sign = 1.0;
        else if (tok[i] == "-") sign = -1.0;
        else throw InvalidArgument("decision table: expected + or - between terms");
        ++i;
        if (i >= n) throw InvalidArgument("decision table: dangling operator");
      }
    }
    return t;
  }
};

/// Drops tests whose outcome is constant for every input in the box
/// [lo, hi]^K, removes branches that can never fire, and folds a branch that
/// always fires into the default. Decisions inside the box are unchanged.
inline DecisionTable simplify_on_box(const DecisionTable& t, double lo, double hi) {
  enum class Outcome { always, never, depends };
  auto outcome = [&](const Test& q) {
    double mn = 0.0, mx = 0.0;
    for (const Term& term : q.lhs) {
      mn += std::min(term.coef * lo, term.coef * hi);
      mx += std::max(term.coef * lo, term.coef * hi);
    }
    bool all = false, none = false;
    switch (q.op) {
      case CmpOp::lt: all = mx < q.rhs; none = mn >= q.rhs; break;
      case CmpOp::le: all = mx <= q.rhs; none = mn > q.rhs; break;
      case CmpOp::gt: all = mn > q.rhs; none = mx <= q.rhs; break;
      case CmpOp::ge: all = mn >= q.rhs; none = mx < q.rhs; break;
    }
    return all ? Outcome::always : none ? Outcome::never : Outcome::depends;
  };
  DecisionTable out = t;
  out.branches.clear();
  for (const Branch& b : t.branches) {
    Branch nb = b;
    nb.tests.clear();
    bool dead = false;
    for (const Test& q : b.tests) {
      const Outcome o = outcome(q);
      if (o == Outcome::never) dead = true;
      if (o == Outcome::depends) nb.tests.push_back(q);
    }
    if (dead) continue;
    if (nb.tests.empty()) {
      out.default_action = nb.action;
      break;
    }
    out.branches.push_back(std::move(nb));
  }
  // Trailing branches that emit the default action are redundant.
  while (!out.branches.empty() && out.branches.back().action == out.default_action) out.branches.pop_back();
  return out;
}

}  // namespace symran
