#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/concept/conceptizer.hpp"
#include "symran/core/adam.hpp"
#include "symran/core/net_json.hpp"
#include "symran/core/softmax.hpp"
#include "symran/dsr/expression.hpp"
#include "symran/eval/omega.hpp"
#include "symran/eval/rollout.hpp"
#include "symran/logic/rules.hpp"
#include "symran/logic/table.hpp"
#include "symran/teacher/neural.hpp"

namespace symran {

/// Min-max normalised flattened KPMs: the student input when the conceptizer
/// is ablated away.
struct RawFeatures {
  Task task = Task::slicing;
  Vector lo, hi;

  static RawFeatures fit(Task task, std::span<const TraceRecord> records) {
    require(!records.empty(), "RawFeatures::fit: empty trace");
    RawFeatures f{task, Vector(flat_width(task), std::numeric_limits<double>::infinity()),
                  Vector(flat_width(task), -std::numeric_limits<double>::infinity())};
    for (const auto& r : records) {
      const Vector x = flatten_state(r.s);
      for (std::size_t i = 0; i < x.size(); ++i) {
        f.lo[i] = std::min(f.lo[i], x[i]);
        f.hi[i] = std::max(f.hi[i], x[i]);
      }
    }
    return f;
  }

  Vector operator()(const KpmState& s) const {
    Vector x = flatten_state(s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double span = hi[i] - lo[i];
      x[i] = span > 0.0 ? (x[i] - lo[i]) / span : 0.0;
    }
    return x;
  }

  nlohmann::json to_json() const { return {{"lo", lo}, {"hi", hi}}; }
  static RawFeatures from_json(Task task, const nlohmann::json& j) {
    return {task, j.at("lo").get<Vector>(), j.at("hi").get<Vector>()};
  }
};

/// c4..c8 for the handover template, c0.. otherwise; raw inputs are x0...
inline std::vector<std::string> student_symbols(Task task, std::size_t k, bool concepts) {
  if (concepts && k == true_concept_count(task)) return concept_symbols(task);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back((concepts ? "c" : "x") + std::to_string(i));
  return out;
}

/// Least-squares net from features to teacher logits, for the linear
/// (hidden = 0) and dense baselines.
inline FeedForwardNet fit_regression_net(std::span<const Vector> x, std::span<const Vector> z, std::size_t hidden,
                                         std::size_t steps, std::uint64_t seed) {
  require(!x.empty() && x.size() == z.size(), "fit_regression_net: need matching non-empty inputs");
  Rng rng = make_rng(seed, 0x4E);
  const std::size_t in = x[0].size(), out = z[0].size();
  FeedForwardNet net = hidden == 0
                           ? FeedForwardNet::glorot({in, out}, {Activation::identity}, rng)
                           : FeedForwardNet::glorot({in, hidden, hidden, out},
                                                    {Activation::tanh, Activation::tanh, Activation::identity}, rng);
  AdamState opt(net.parameter_count(), AdamConfig{1e-2});
  const std::size_t bs = std::min<std::size_t>(128, x.size());
  std::vector<Vector> bx(bs);
  std::vector<std::size_t> idx(bs);
  for (std::size_t step = 0; step < steps; ++step) {
    opt.set_lr(1e-2 * (1.0 - 0.9 * static_cast<double>(step) / static_cast<double>(steps)));
    for (std::size_t b = 0; b < bs; ++b) {
      idx[b] = uniform_index(rng, x.size());
      bx[b] = x[idx[b]];
    }
    train_step(net, opt, bx, [&](std::size_t b, std::span<const double> y, std::span<double> adj) {
      double l = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = y[o] - z[idx[b]][o];
        l += d * d;
        adj[o] = 2.0 * d;
      }
      return l;
    });
  }
  return net;
}

enum class StudentKind { expressions, table, net };

inline std::string_view to_string(StudentKind k) {
  switch (k) {
    case StudentKind::expressions: return "expressions";
    case StudentKind::table: return "table";
    case StudentKind::net: return "net";
  }
  return "expressions";
}

inline StudentKind student_kind_from_string(std::string_view s) {
  if (s == "expressions") return StudentKind::expressions;
  if (s == "table") return StudentKind::table;
  if (s == "net") return StudentKind::net;
  throw ArtifactError("unknown student kind '" + std::string(s) + "'");
}

/// Deployed student: feature map (conceptizer or raw KPMs) followed by a
/// program (one expression per logit, a decision table, or a small net for
/// the dense/linear ablations).
class Student {
 public:
  Task task = Task::slicing;
  StudentKind kind = StudentKind::expressions;
  std::shared_ptr<const Conceptizer> conceptizer;  // null = raw features
  RawFeatures raw;
  std::vector<ExpressionTree> expressions;
  DecisionTable table;
  FeedForwardNet net;
  double head_temperature = 1.0;

  Vector features(const KpmState& s) const { return conceptizer ? conceptizer->conceptize(s) : raw(s); }

  Action act_on(std::span<const double> c) const {
    switch (kind) {
      case StudentKind::table: return {static_cast<double>(table.eval(c))};
      case StudentKind::expressions: {
        Vector z(expressions.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = expressions[i].eval(c);
        return head(z);
      }
      case StudentKind::net: return head(net.forward(c));
    }
    return {};
  }

  PolicyDecision decide(const KpmState& s) const {
    Vector c = features(s);
    Action a = act_on(c);
    return {std::move(a), std::move(c)};
  }

  Policy policy() const {
    auto self = std::make_shared<const Student>(*this);
    return [self](const KpmState& s, std::span<const double>) { return self->decide(s); };
  }

  std::vector<std::string> symbols() const {
    return student_symbols(task, conceptizer ? conceptizer->size() : raw.lo.size(), conceptizer != nullptr);
  }

  /// Human-readable program (infix formulas or rule text).
  std::string pretty() const {
    std::string out;
    if (kind == StudentKind::table) return table.to_text(2);
    if (kind == StudentKind::net)
      return "dense net on " + std::string(conceptizer ? "concepts" : "raw KPMs") + ", " +
             std::to_string(net.parameter_count()) + " parameters\n";
    const auto labels = action_labels(task);
    for (std::size_t i = 0; i < expressions.size(); ++i)
      out += "z_" + (i < labels.size() ? labels[i] : std::to_string(i)) + " = " + expressions[i].to_infix() + "\n";
    return out;
  }

  std::optional<int> omega_total() const {
    if (kind == StudentKind::table) return omega(table).total();
    if (kind == StudentKind::expressions) return omega(expressions).total();
    return std::nullopt;
  }

  /// The conceptizer is stored in its own artifact and not embedded here.
  nlohmann::json to_json() const {
    nlohmann::json j{{"version", 1},
                     {"task", std::string(to_string(task))},
                     {"kind", std::string(to_string(kind))},
                     {"features", conceptizer ? "concepts" : "raw"},
                     {"head_temperature", head_temperature}};
    if (!conceptizer) j["raw"] = raw.to_json();
    if (kind == StudentKind::expressions) {
      std::vector<std::string> prefix, infix;
      for (const auto& e : expressions) {
        prefix.push_back(e.to_prefix());
        infix.push_back(e.to_infix());
      }
      j["expressions"] = prefix;
      j["infix"] = infix;
    } else if (kind == StudentKind::table) {
      j["table"] = table.to_json();
      j["text"] = table.to_text(2);
    } else {
      j["net"] = net_to_json(net);
    }
    if (auto o = omega_total()) j["omega"] = *o;
    return j;
  }

  static Student from_json(const nlohmann::json& j, std::shared_ptr<const Conceptizer> conceptizer) {
    try {
      if (j.at("version").get<int>() != 1) throw ArtifactError("student JSON: unsupported version");
      Student s;
      s.task = task_from_string(j.at("task").get<std::string>());
      s.kind = student_kind_from_string(j.at("kind").get<std::string>());
      s.head_temperature = j.at("head_temperature").get<double>();
      if (j.at("features").get<std::string>() == "concepts") {
        if (!conceptizer) throw ArtifactError("student JSON: concept features need a conceptizer artifact");
        s.conceptizer = std::move(conceptizer);
      } else {
        s.raw = RawFeatures::from_json(s.task, j.at("raw"));
      }
      if (s.kind == StudentKind::expressions)
        for (const auto& p : j.at("expressions")) s.expressions.push_back(ExpressionTree::parse(p.get<std::string>()));
      else if (s.kind == StudentKind::table)
        s.table = DecisionTable::from_json(j.at("table"));
      else
        s.net = net_from_json(j.at("net"));
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("student JSON: ") + e.what());
    }
  }

 private:
  Action head(std::span<const double> z) const {
    if (task == Task::slicing) return softmax(z, head_temperature);
    return {static_cast<double>(argmax(z))};
  }
};

}  // namespace symran
