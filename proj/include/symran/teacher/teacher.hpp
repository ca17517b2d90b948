#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/rng.hpp"
#include "symran/core/softmax.hpp"
#include "symran/dsr/expression.hpp"
#include "symran/env/env.hpp"
#include "symran/logic/table.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

struct TeacherOutput {
  Vector z;
  Action a;
};

/// Component-wise head g: tempered softmax onto the simplex for slicing,
/// argmax (ties to the lowest index) for handover.
inline Action apply_head(Task task, std::span<const double> z, double temperature = 1.0) {
  require_dim(z.size() == logit_dim(task), "head: z has the wrong dimension");
  if (task == Task::slicing) return softmax(z, temperature);
  return {static_cast<double>(argmax(z))};
}

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual Task task() const = 0;
  virtual bool needs_true_concepts() const { return false; }
  virtual TeacherOutput act(const KpmState& s, std::span<const double> c_true) = 0;
};

struct ScriptedTeacherConfig {
  double sigma_z = 0.02;
  double head_temperature = 1.0;
  double switch_logit = 2.0;
  std::uint64_t noise_seed = 0;
};

inline const char* scripted_embb = "(+ (+ (log1p c0) (* 1.32 c3)) (- (* 0.62 (* c0 c3)) (+ (* 1.86 c2) (* 0.45 c1))))";
inline const char* scripted_urllc = "(- (+ (* 1.74 c1) (+ (* 1.26 (* c1 c1)) (* 0.62 (* c1 c2)))) (* 0.74 c3))";
inline const char* scripted_mmtc = "(+ (- (/ 1 (+ 1.42 (+ c0 c1))) (* 0.36 (log1p c2))) (* 0.23 c3))";

inline DecisionTable scripted_handover_table() {
  // Concept indices 0..4 stand for c4..c8.
  return DecisionTable::parse_text(
      "IF c5 - c4 > 0.12 AND c7 < 0.47 THEN switch\n"
      "ELIF c4 < 0.32 AND c5 > 0.58 THEN switch\n"
      "ELIF c8 > 0.50 AND c5 > 0.63 AND c7 < 0.42 THEN switch\n"
      "ELSE stay\n",
      {"c4", "c5", "c6", "c7", "c8"}, {"stay", "switch"});
}

/// Symbolic oracle over the hidden true concepts.
class ScriptedTeacher : public Teacher {
 public:
  static ScriptedTeacher slicing(ScriptedTeacherConfig cfg = {}) {
    return slicing_with({ExpressionTree::parse(scripted_embb), ExpressionTree::parse(scripted_urllc),
                         ExpressionTree::parse(scripted_mmtc)},
                        cfg);
  }

  static ScriptedTeacher slicing_with(std::vector<ExpressionTree> formulas, ScriptedTeacherConfig cfg = {}) {
    require(formulas.size() == 3, "scripted slicing teacher needs 3 formulas");
    for (const auto& f : formulas)
      require(f.variable_span() <= 4, "scripted slicing formula references a concept beyond c3");
    ScriptedTeacher t(Task::slicing, cfg);
    t.formulas_ = std::move(formulas);
    return t;
  }

  static ScriptedTeacher handover(ScriptedTeacherConfig cfg = {}) { return handover_with(scripted_handover_table(), cfg); }

  static ScriptedTeacher handover_with(DecisionTable table, ScriptedTeacherConfig cfg = {}) {
    require(table.actions.size() == 2 && table.num_concepts() <= 5, "scripted handover table must be binary over <= 5 concepts");
    ScriptedTeacher t(Task::handover, cfg);
    t.table_ = std::move(table);
    return t;
  }

  Task task() const override { return task_; }
  bool needs_true_concepts() const override { return true; }
  const ScriptedTeacherConfig& config() const noexcept { return cfg_; }
  const std::vector<ExpressionTree>& formulas() const noexcept { return formulas_; }
  const DecisionTable& table() const noexcept { return table_; }

  TeacherOutput act(std::span<const double> c) {
    require_dim(c.size() == true_concept_count(task_),
                "scripted_act: concept vector has length " + std::to_string(c.size()) + ", expected " +
                    std::to_string(true_concept_count(task_)));
    TeacherOutput out;
    if (task_ == Task::slicing) {
      for (const auto& f : formulas_) out.z.push_back(f.eval(c));
    } else {
      const bool fire = table_.eval(c) == 1;
      out.z = {0.0, fire ? cfg_.switch_logit : -cfg_.switch_logit};
    }
    if (cfg_.sigma_z > 0.0)
      for (double& v : out.z) v += cfg_.sigma_z * normal(noise_);
    out.a = apply_head(task_, out.z, cfg_.head_temperature);
    return out;
  }

  TeacherOutput act(const KpmState& s, std::span<const double> c_true) override {
    require(s.task == task_, "scripted_act: task mismatch");
    return act(c_true);
  }

 private:
  ScriptedTeacher(Task task, ScriptedTeacherConfig cfg)
      : task_(task), cfg_(cfg), noise_(make_rng(cfg.noise_seed, 77)) {}

  Task task_;
  ScriptedTeacherConfig cfg_;
  Rng noise_;
  std::vector<ExpressionTree> formulas_;
  DecisionTable table_;
};

/// Runs the teacher in the environment, appending one record per step.
inline void collect_traces(Environment& env, Teacher& teacher, std::size_t steps, TraceBuffer& buffer) {
  if (env.task() != teacher.task()) throw InvalidArgument("collect_traces: environment and teacher tasks differ");
  if (teacher.needs_true_concepts() && !env.config().expose_true_concepts)
    throw InvalidArgument("collect_traces: scripted teacher needs exposed true concepts");
  for (std::size_t i = 0; i < steps; ++i) {
    TraceRecord rec;
    rec.s = env.state();
    rec.t = rec.s.t;
    rec.c_true = env.true_concepts();
    TeacherOutput out = teacher.act(rec.s, rec.c_true);
    StepOutcome o = env.step(out.a);
    rec.z = std::move(out.z);
    rec.a = std::move(out.a);
    rec.r = o.reward;
    rec.v_thp = o.v_thp;
    rec.v_dly = o.v_dly;
    buffer.append(std::move(rec));
  }
}

}  // namespace symran
