#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "symran/core/adam.hpp"
#include "symran/core/net.hpp"
#include "symran/core/net_json.hpp"
#include "symran/teacher/teacher.hpp"

namespace symran {

inline constexpr std::size_t max_slicing_rows = 14;

/// Flattened state: rows padded to the maximum roster, each row followed by a
/// one-hot slice tag (all zeros marks a padded row).
inline Vector flatten_state(const KpmState& s) {
  s.validate_schema();
  const std::size_t m = s.values.cols();
  if (s.task == Task::handover) {
    require_dim(s.entities() == 2, "flatten_state: handover state needs 2 rows");
    return Vector(s.values.data().begin(), s.values.data().end());
  }
  require_dim(s.entities() <= max_slicing_rows, "flatten_state: roster exceeds the padded width");
  Vector x((m + 3) * max_slicing_rows, 0.0);
  for (std::size_t g = 0; g < s.entities(); ++g) {
    double* row = x.data() + g * (m + 3);
    auto src = s.values.row(g);
    std::copy(src.begin(), src.end(), row);
    row[m + static_cast<std::size_t>(slice_index(s.roster[g]))] = 1.0;
  }
  return x;
}

inline std::size_t flat_width(Task t) {
  return t == Task::handover ? 2 * kpm::handover_count : max_slicing_rows * (kpm::slicing_count + 3);
}

/// Behavior-cloned network from the flattened state to z.
class NeuralTeacher : public Teacher {
 public:
  NeuralTeacher() = default;
  NeuralTeacher(Task task, FeedForwardNet net, Vector mean, Vector scale, double head_temperature)
      : task_(task), net_(std::move(net)), mean_(std::move(mean)), scale_(std::move(scale)),
        tau_(head_temperature) {
    require_dim(net_.input_dim() == flat_width(task) && mean_.size() == flat_width(task) &&
                    scale_.size() == flat_width(task),
                "NeuralTeacher: input width mismatch");
    require_dim(net_.output_dim() == logit_dim(task), "NeuralTeacher: output must match d_z");
  }

  Task task() const override { return task_; }
  const FeedForwardNet& net() const noexcept { return net_; }
  double head_temperature() const noexcept { return tau_; }

  Vector features(const KpmState& s) const {
    Vector x = flatten_state(s);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean_[i]) / scale_[i];
    return x;
  }

  Vector logits(const KpmState& s) const {
    if (s.task != task_) throw InvalidArgument("neural_act: state task does not match teacher");
    return net_.forward(features(s));
  }

  TeacherOutput act(const KpmState& s) const {
    TeacherOutput out;
    out.z = logits(s);
    out.a = apply_head(task_, out.z, tau_);
    return out;
  }

  TeacherOutput act(const KpmState& s, std::span<const double>) override { return act(s); }

  nlohmann::json to_json() const {
    return {{"version", 1},
            {"task", std::string(to_string(task_))},
            {"head_temperature", tau_},
            {"mean", mean_},
            {"scale", scale_},
            {"net", net_to_json(net_)}};
  }

  static NeuralTeacher from_json(const nlohmann::json& j) {
    try {
      return NeuralTeacher(task_from_string(j.at("task").get<std::string>()), net_from_json(j.at("net")),
                           j.at("mean").get<Vector>(), j.at("scale").get<Vector>(),
                           j.at("head_temperature").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("teacher JSON: ") + e.what());
    }
  }

 private:
  Task task_ = Task::slicing;
  FeedForwardNet net_;
  Vector mean_, scale_;
  double tau_ = 1.0;
};

struct BcConfig {
  std::size_t steps = 10000;
  std::size_t batch = 64;
  std::size_t hidden = 64;
  double lr = 1e-3;
  double final_lr = 1e-4;  // cosine decay target
  double holdout_frac = 0.1;
  std::size_t min_records = 5000;
  double head_temperature = 1.0;
  std::uint64_t seed = 0;
};

struct BcResult {
  NeuralTeacher teacher;
  double initial_heldout_mse = 0.0;
  double train_mse = 0.0;
  double heldout_mse = 0.0;
  double train_mae = 0.0;
  double heldout_mae = 0.0;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

/// Fits the teacher network to recorded z. The last holdout_frac of the
/// records (in time order) is held out; the normalizer sees training rows only.
inline BcResult train_bc_teacher(std::span<const TraceRecord> records, const BcConfig& cfg) {
  if (records.size() < cfg.min_records)
    throw InvalidArgument("train_bc_teacher: need at least " + std::to_string(cfg.min_records) + " records, got " +
                          std::to_string(records.size()));
  const Task task = records[0].s.task;
  const std::size_t width = flat_width(task);
  const std::size_t dz = logit_dim(task);
  const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_frac * records.size()));
  const std::size_t n_train = records.size() - n_hold;

  std::vector<Vector> raw(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].s.task != task) throw InvalidArgument("train_bc_teacher: mixed tasks");
    raw[i] = flatten_state(records[i].s);
  }
  Vector mean(width, 0.0), scale(width, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < width; ++k) mean[k] += raw[i][k];
  for (double& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < width; ++k) scale[k] += (raw[i][k] - mean[k]) * (raw[i][k] - mean[k]);
  for (double& s : scale) s = std::max(std::sqrt(s / static_cast<double>(n_train)), 1e-6);

  std::vector<Vector> x(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    x[i] = raw[i];
    for (std::size_t k = 0; k < width; ++k) x[i][k] = (x[i][k] - mean[k]) / scale[k];
  }

  Rng rng = make_rng(cfg.seed, 101);
  FeedForwardNet net = FeedForwardNet::glorot({width, cfg.hidden, cfg.hidden, dz},
                                              {Activation::tanh, Activation::tanh, Activation::identity}, rng);
  auto mse_over = [&](std::size_t lo, std::size_t hi, double* mae) {
    double se = 0.0, ae = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const Vector y = net.forward(x[i]);
      for (std::size_t o = 0; o < dz; ++o) {
        const double d = y[o] - records[i].z[o];
        se += d * d;
        ae += std::abs(d);
      }
    }
    const double n = static_cast<double>((hi - lo) * dz);
    if (mae) *mae = ae / n;
    return se / n;
  };

  BcResult res;
  res.initial_heldout_mse = mse_over(n_train, records.size(), nullptr);
  AdamState opt(net.parameter_count(), AdamConfig{cfg.lr});
  std::vector<Vector> batch_x(cfg.batch);
  std::vector<std::size_t> batch_idx(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double frac = static_cast<double>(step) / static_cast<double>(cfg.steps);
    opt.set_lr(cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + std::cos(3.141592653589793 * frac)));
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      batch_idx[b] = uniform_index(rng, n_train);
      batch_x[b] = x[batch_idx[b]];
    }
    train_step(net, opt, batch_x, [&](std::size_t b, std::span<const double> y, std::span<double> adj) {
      double l = 0.0;
      const Vector& z = records[batch_idx[b]].z;
      for (std::size_t o = 0; o < dz; ++o) {
        const double d = y[o] - z[o];
        l += d * d / static_cast<double>(dz);
        adj[o] = 2.0 * d / static_cast<double>(dz);
      }
      return l;
    });
  }
  res.train_mse = mse_over(0, n_train, &res.train_mae);
  res.heldout_mse = mse_over(n_train, records.size(), &res.heldout_mae);
  res.train_size = n_train;
  res.heldout_size = n_hold;
  res.teacher = NeuralTeacher(task, std::move(net), std::move(mean), std::move(scale), cfg.head_temperature);
  return res;
}

inline BcResult train_bc_teacher(const TraceBuffer& buf, const BcConfig& cfg) {
  const auto recs = buf.snapshot();
  return train_bc_teacher(std::span<const TraceRecord>(recs), cfg);
}

}  // namespace symran
