#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/concept/template.hpp"
#include "symran/core/adam.hpp"
#include "symran/core/errors.hpp"
#include "symran/core/net.hpp"
#include "symran/core/net_json.hpp"
#include "symran/core/rng.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

/// Per-metric min-max scaling fitted on a training buffer, clipped to [0,1].
/// base holds the per-metric mean of the scaled values (the IG baseline).
struct Normalizer {
  Vector lo, hi, base;

  double apply(int m, double x) const {
    const auto i = static_cast<std::size_t>(m);
    return std::clamp((x - lo[i]) / (hi[i] - lo[i]), 0.0, 1.0);
  }

  /// d apply / dx, zero where the clip is active.
  double slope(int m, double x) const {
    const auto i = static_cast<std::size_t>(m);
    if (x < lo[i] || x > hi[i]) return 0.0;
    return 1.0 / (hi[i] - lo[i]);
  }

  double raw_base(int m) const {
    const auto i = static_cast<std::size_t>(m);
    return lo[i] + base[i] * (hi[i] - lo[i]);
  }

  /// Identity-like scaling from the nominal metric ranges.
  static Normalizer nominal(Task task) {
    Normalizer n;
    for (int m = 0; m < kpm::metric_count(task); ++m) {
      n.lo.push_back(kpm::info(task, m).lo);
      n.hi.push_back(kpm::info(task, m).hi);
      n.base.push_back(0.5);
    }
    return n;
  }

  static Normalizer fit(Task task, std::span<const TraceRecord> records) {
    require(!records.empty(), "Normalizer::fit: empty buffer");
    const auto m = static_cast<std::size_t>(kpm::metric_count(task));
    Normalizer n;
    n.lo.assign(m, std::numeric_limits<double>::infinity());
    n.hi.assign(m, -std::numeric_limits<double>::infinity());
    for (const auto& r : records) {
      require_dim(r.s.task == task, "Normalizer::fit: record task mismatch");
      for (std::size_t g = 0; g < r.s.entities(); ++g) {
        auto row = r.s.values.row(g);
        for (std::size_t j = 0; j < m; ++j) {
          n.lo[j] = std::min(n.lo[j], row[j]);
          n.hi[j] = std::max(n.hi[j], row[j]);
        }
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (!std::isfinite(n.lo[j])) n.lo[j] = 0.0, n.hi[j] = 1.0;
      if (n.hi[j] - n.lo[j] < 1e-12) n.hi[j] = n.lo[j] + 1.0;
    }
    n.base.assign(m, 0.0);
    double rows = 0.0;
    for (const auto& r : records) {
      for (std::size_t g = 0; g < r.s.entities(); ++g) {
        auto row = r.s.values.row(g);
        for (std::size_t j = 0; j < m; ++j) n.base[j] += n.apply(static_cast<int>(j), row[j]);
        rows += 1.0;
      }
    }
    for (double& b : n.base) b = rows > 0 ? b / rows : 0.5;
    return n;
  }

  bool operator==(const Normalizer&) const = default;
};

struct ConceptizerConfig {
  std::size_t d_h = 8;
  std::size_t hidden = 16;
  std::size_t batch = 256;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_h == 0 || hidden == 0) throw ConfigError("conceptizer: d_h and hidden must be positive");
    if (batch == 0) throw ConfigError("conceptizer: batch must be positive");
    if (!(lr > 0.0)) throw ConfigError("conceptizer: lr must be positive");
  }
};

/// z~ = A c + b, used only while fitting the conceptizer.
struct AuxiliaryHead {
  Matrix A;  // d_z x K
  Vector b;

  Vector apply(std::span<const double> c) const {
    require_dim(c.size() == A.cols(), "AuxiliaryHead: concept dimension mismatch");
    Vector out(b);
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t k = 0; k < A.cols(); ++k) out[i] += A(i, k) * c[k];
    return out;
  }
};

/// Per-concept masked encoders h_k (|M_k| -> d_h) summed over the scoped
/// entities, followed by a sigmoid head rho_k (d_h -> 1).
class Conceptizer {
 public:
  Conceptizer(ConceptTemplate tmpl, Normalizer norm, std::vector<FeedForwardNet> encoders,
              std::vector<FeedForwardNet> heads)
      : tmpl_(std::move(tmpl)), norm_(std::move(norm)), enc_(std::move(encoders)), rho_(std::move(heads)) {
    const std::size_t K = tmpl_.size();
    require_dim(enc_.size() == K && rho_.size() == K, "Conceptizer: need one encoder and head per concept");
    require_dim(norm_.lo.size() == static_cast<std::size_t>(kpm::metric_count(tmpl_.task())) &&
                    norm_.hi.size() == norm_.lo.size() && norm_.base.size() == norm_.lo.size(),
                "Conceptizer: normalizer width does not match task schema");
    for (std::size_t k = 0; k < K; ++k) {
      require_dim(enc_[k].input_dim() == tmpl_[k].metrics.size(),
                  "Conceptizer: encoder input width must equal |M_k|");
      require_dim(rho_[k].input_dim() == enc_[k].output_dim() && rho_[k].output_dim() == 1,
                  "Conceptizer: head must map d_h to one value");
      require_dim(rho_[k].layers().back().activation == Activation::sigmoid,
                  "Conceptizer: head must end in a sigmoid");
    }
  }

  static Conceptizer init(ConceptTemplate tmpl, Normalizer norm, const ConceptizerConfig& cfg) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, 0xC0);
    std::vector<FeedForwardNet> enc, rho;
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
      enc.push_back(FeedForwardNet::glorot({tmpl[k].metrics.size(), cfg.hidden, cfg.d_h},
                                           {Activation::tanh, Activation::identity}, rng));
      // rho starts at zero (c = 0.5): entity sums can be large, and a random
      // head would start deep in the sigmoid's flat tails.
      FeedForwardNet head = FeedForwardNet::glorot({cfg.d_h, 1}, {Activation::sigmoid}, rng);
      head.set_parameters(Vector(head.parameter_count(), 0.0));
      rho.push_back(std::move(head));
    }
    return Conceptizer(std::move(tmpl), std::move(norm), std::move(enc), std::move(rho));
  }

  const ConceptTemplate& concept_template() const noexcept { return tmpl_; }
  Task task() const noexcept { return tmpl_.task(); }
  std::size_t size() const noexcept { return tmpl_.size(); }
  const Normalizer& normalizer() const noexcept { return norm_; }
  const FeedForwardNet& encoder(std::size_t k) const { return enc_.at(k); }
  const FeedForwardNet& head(std::size_t k) const { return rho_.at(k); }
  FeedForwardNet& encoder(std::size_t k) { return enc_.at(k); }
  FeedForwardNet& head(std::size_t k) { return rho_.at(k); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < size(); ++k) n += enc_[k].parameter_count() + rho_[k].parameter_count();
    return n;
  }

  /// Layout: for each concept, encoder parameters then head parameters.
  Vector parameters() const {
    Vector p;
    p.reserve(parameter_count());
    for (std::size_t k = 0; k < size(); ++k) {
      const Vector e = enc_[k].parameters(), r = rho_[k].parameters();
      p.insert(p.end(), e.begin(), e.end());
      p.insert(p.end(), r.begin(), r.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    require_dim(p.size() == parameter_count(), "Conceptizer::set_parameters: size mismatch");
    std::size_t off = 0;
    for (std::size_t k = 0; k < size(); ++k) {
      const std::size_t ne = enc_[k].parameter_count(), nr = rho_[k].parameter_count();
      enc_[k].set_parameters(p.subspan(off, ne));
      rho_[k].set_parameters(p.subspan(off + ne, nr));
      off += ne + nr;
    }
  }

  /// Scaled scoped inputs of concept k, one vector per in-scope row.
  std::vector<Vector> scoped_inputs(std::size_t k, const KpmState& s) const {
    const ConceptSpec& spec = tmpl_[k];
    std::vector<Vector> out;
    for (std::size_t g : spec.selector.rows(s)) {
      auto row = s.values.row(g);
      Vector x(spec.metrics.size());
      for (std::size_t j = 0; j < spec.metrics.size(); ++j)
        x[j] = norm_.apply(spec.metrics[j], row[static_cast<std::size_t>(spec.metrics[j])]);
      out.push_back(std::move(x));
    }
    return out;
  }

  /// c_k from pre-scaled scoped rows; empty scope gives 0.
  double concept_from_inputs(std::size_t k, std::span<const Vector> rows) const {
    if (rows.empty()) return 0.0;
    Vector H(enc_[k].output_dim(), 0.0);
    for (const Vector& x : rows) {
      const Vector h = enc_[k].forward(x);
      for (std::size_t j = 0; j < H.size(); ++j) H[j] += h[j];
    }
    return rho_[k].forward(H)[0];
  }

  /// Concept vector in [0,1]^K. stale[k] is set when concept k had no entity in scope.
  /// Same arithmetic as concept_from_inputs(scoped_inputs(...)), without
  /// per-entity allocations (this is the deployed inference path).
  Vector conceptize(const KpmState& s, std::vector<bool>* stale = nullptr) const {
    check_schema(s);
    Vector c(size(), 0.0);
    if (stale) stale->assign(size(), false);
    thread_local Vector x, a, b, H;
    for (std::size_t k = 0; k < size(); ++k) {
      const ConceptSpec& spec = tmpl_[k];
      H.assign(enc_[k].output_dim(), 0.0);
      bool any = false;
      for (std::size_t g = 0; g < s.roster.size(); ++g) {
        if (!spec.selector.matches(g, s.roster[g])) continue;
        any = true;
        auto row = s.values.row(g);
        x.resize(spec.metrics.size());
        for (std::size_t j = 0; j < spec.metrics.size(); ++j)
          x[j] = norm_.apply(spec.metrics[j], row[static_cast<std::size_t>(spec.metrics[j])]);
        const auto h = enc_[k].forward_scratch(x, a, b);
        for (std::size_t j = 0; j < H.size(); ++j) H[j] += h[j];
      }
      if (!any) {
        if (stale) (*stale)[k] = true;
        continue;
      }
      c[k] = rho_[k].forward_scratch(H, a, b)[0];
    }
    return c;
  }

  /// c_k at raw values x (same shape as s.values) and dc_k/dx into grad.
  /// Entries outside (G_k, M_k) are never written.
  double concept_and_state_grad(std::size_t k, const KpmState& s, const Matrix& x, Matrix& grad) const {
    const ConceptSpec& spec = tmpl_[k];
    const auto rows = spec.selector.rows(s);
    if (rows.empty()) return 0.0;
    const FeedForwardNet& h = enc_[k];
    std::vector<ForwardCache> caches(rows.size());
    Vector H(h.output_dim(), 0.0), in(spec.metrics.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto row = x.row(rows[i]);
      for (std::size_t j = 0; j < spec.metrics.size(); ++j)
        in[j] = norm_.apply(spec.metrics[j], row[static_cast<std::size_t>(spec.metrics[j])]);
      const Vector& out = h.forward(in, caches[i]);
      for (std::size_t j = 0; j < H.size(); ++j) H[j] += out[j];
    }
    ForwardCache rc;
    const double c = rho_[k].forward(H, rc)[0];
    const double one = 1.0;
    const Vector dH = rho_[k].backward(rc, std::span<const double>(&one, 1), {});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Vector dx = h.backward(caches[i], dH, {});
      auto xrow = x.row(rows[i]);
      auto grow = grad.row(rows[i]);
      for (std::size_t j = 0; j < spec.metrics.size(); ++j) {
        const auto m = static_cast<std::size_t>(spec.metrics[j]);
        grow[m] += dx[j] * norm_.slope(spec.metrics[j], xrow[m]);
      }
    }
    return c;
  }

  /// Schema-conformant baseline: s with every entry set to its metric's baseline.
  KpmState baseline_state(const KpmState& s) const {
    check_schema(s);
    KpmState b = s;
    for (std::size_t g = 0; g < b.entities(); ++g) {
      auto row = b.values.row(g);
      for (std::size_t m = 0; m < row.size(); ++m) row[m] = norm_.raw_base(static_cast<int>(m));
    }
    return b;
  }

  void check_schema(const KpmState& s) const {
    if (s.task != task()) throw DimensionError("conceptize: state task does not match template task");
    s.validate_schema();
  }

  nlohmann::json to_json() const {
    nlohmann::json enc = nlohmann::json::array(), heads = nlohmann::json::array();
    for (std::size_t k = 0; k < size(); ++k) {
      enc.push_back(net_to_json(enc_[k]));
      heads.push_back(net_to_json(rho_[k]));
    }
    return {{"version", 1},
            {"task", std::string(to_string(task()))},
            {"template", tmpl_.to_json()},
            {"normalizer", {{"lo", norm_.lo}, {"hi", norm_.hi}, {"base", norm_.base}}},
            {"encoders", enc},
            {"heads", heads}};
  }

  static Conceptizer from_json(const nlohmann::json& j) {
    try {
      if (j.at("version").get<int>() != 1) throw ArtifactError("conceptizer: unsupported version");
      const Task task = task_from_string(j.at("task").get<std::string>());
      ConceptTemplate tmpl = ConceptTemplate::from_json(task, j.at("template"));
      Normalizer n;
      n.lo = j.at("normalizer").at("lo").get<Vector>();
      n.hi = j.at("normalizer").at("hi").get<Vector>();
      n.base = j.at("normalizer").at("base").get<Vector>();
      std::vector<FeedForwardNet> enc, heads;
      for (const auto& e : j.at("encoders")) enc.push_back(net_from_json(e));
      for (const auto& e : j.at("heads")) heads.push_back(net_from_json(e));
      return Conceptizer(std::move(tmpl), std::move(n), std::move(enc), std::move(heads));
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("conceptizer: malformed artifact: ") + e.what());
    } catch (const ConfigError& e) {
      throw ArtifactError(std::string("conceptizer: ") + e.what());
    } catch (const DimensionError& e) {
      throw ArtifactError(std::string("conceptizer: ") + e.what());
    }
  }

  bool operator==(const Conceptizer&) const = default;

 private:
  ConceptTemplate tmpl_;
  Normalizer norm_;
  std::vector<FeedForwardNet> enc_;
  std::vector<FeedForwardNet> rho_;
};

/// A record reduced to what the fidelity loss needs: scaled scoped rows per concept and z.
struct FidelitySample {
  std::vector<std::vector<Vector>> rows;
  Vector z;
};

inline FidelitySample prepare_fidelity_sample(const Conceptizer& model, const TraceRecord& r) {
  model.check_schema(r.s);
  FidelitySample out;
  for (std::size_t k = 0; k < model.size(); ++k) out.rows.push_back(model.scoped_inputs(k, r.s));
  out.z = r.z;
  return out;
}

/// Mean over samples and outputs of (A c + b - z)^2. Gradient layout:
/// conceptizer parameters, then A row-major, then b.
inline double fidelity_loss(const Conceptizer& model, const AuxiliaryHead& head,
                            std::span<const FidelitySample> batch, Vector* grad) {
  require(!batch.empty(), "fidelity_loss: empty batch");
  const std::size_t K = model.size(), dz = head.b.size();
  require_dim(head.A.rows() == dz && head.A.cols() == K, "fidelity_loss: auxiliary head shape mismatch");
  const std::size_t np = model.parameter_count();
  if (grad) grad->assign(np + dz * K + dz, 0.0);

  std::vector<std::size_t> enc_off(K), rho_off(K);
  for (std::size_t k = 0, off = 0; k < K; ++k) {
    enc_off[k] = off;
    off += model.encoder(k).parameter_count();
    rho_off[k] = off;
    off += model.head(k).parameter_count();
  }

  const double scale = 1.0 / static_cast<double>(batch.size() * dz);
  double total = 0.0;
  std::vector<std::vector<ForwardCache>> enc_cache(K);
  std::vector<ForwardCache> rho_cache(K);
  Vector c(K), resid(dz), adj_c(K);
  for (const FidelitySample& smp : batch) {
    require_dim(smp.z.size() == dz && smp.rows.size() == K, "fidelity_loss: sample shape mismatch");
    for (std::size_t k = 0; k < K; ++k) {
      const auto& rows = smp.rows[k];
      if (rows.empty()) {
        c[k] = 0.0;
        continue;
      }
      const FeedForwardNet& h = model.encoder(k);
      if (enc_cache[k].size() < rows.size()) enc_cache[k].resize(rows.size());
      Vector H(h.output_dim(), 0.0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Vector& out = h.forward(rows[i], enc_cache[k][i]);
        for (std::size_t j = 0; j < H.size(); ++j) H[j] += out[j];
      }
      c[k] = model.head(k).forward(H, rho_cache[k])[0];
    }
    for (std::size_t i = 0; i < dz; ++i) {
      double v = head.b[i] - smp.z[i];
      for (std::size_t k = 0; k < K; ++k) v += head.A(i, k) * c[k];
      resid[i] = v;
      total += v * v;
    }
    if (!grad) continue;
    double* gA = grad->data() + np;
    double* gb = gA + dz * K;
    std::fill(adj_c.begin(), adj_c.end(), 0.0);
    for (std::size_t i = 0; i < dz; ++i) {
      const double d = 2.0 * scale * resid[i];
      gb[i] += d;
      for (std::size_t k = 0; k < K; ++k) {
        gA[i * K + k] += d * c[k];
        adj_c[k] += d * head.A(i, k);
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      const auto& rows = smp.rows[k];
      if (rows.empty()) continue;
      const FeedForwardNet& h = model.encoder(k);
      const FeedForwardNet& rho = model.head(k);
      const Vector dH = rho.backward(rho_cache[k], std::span<const double>(&adj_c[k], 1),
                                     std::span<double>(grad->data() + rho_off[k], rho.parameter_count()));
      for (std::size_t i = 0; i < rows.size(); ++i)
        h.backward(enc_cache[k][i], dH, std::span<double>(grad->data() + enc_off[k], h.parameter_count()));
    }
  }
  total *= scale;
  return total;
}

struct ConceptizerFit {
  Conceptizer model;
  AuxiliaryHead head;
  Vector loss_history;  // one entry per optimizer step
  std::size_t epochs = 0;
  double final_loss = 0.0;  // full-buffer L_fid after training
};

/// Fits (xi, A, b) by minimizing the fidelity loss; the returned model is frozen.
inline ConceptizerFit train_conceptizer(const ConceptTemplate& tmpl, std::span<const TraceRecord> records,
                                        const ConceptizerConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw InvalidArgument("train_conceptizer: empty buffer");
  const std::size_t dz = records.front().z.size();
  for (const auto& r : records)
    if (r.z.size() != dz) throw DimensionError("train_conceptizer: inconsistent d_z across records");
  require(dz > 0, "train_conceptizer: empty z");

  Conceptizer model = Conceptizer::init(tmpl, Normalizer::fit(tmpl.task(), records), cfg);
  std::vector<FidelitySample> data;
  data.reserve(records.size());
  for (const auto& r : records) data.push_back(prepare_fidelity_sample(model, r));

  const std::size_t K = tmpl.size();
  AuxiliaryHead head{Matrix(dz, K), Vector(dz, 0.0)};
  Rng rng = make_rng(cfg.seed, 0xC1);
  const double lim = std::sqrt(6.0 / static_cast<double>(dz + K));
  for (double& a : head.A.data()) a = uniform(rng, -lim, lim);
  // Centre the head on the initial concepts so the first steps fit shape, not offset.
  for (const auto& smp : data)
    for (std::size_t i = 0; i < dz; ++i) head.b[i] += smp.z[i] / static_cast<double>(data.size());
  for (std::size_t i = 0; i < dz; ++i)
    for (std::size_t k = 0; k < K; ++k) head.b[i] -= 0.5 * head.A(i, k);

  const std::size_t np = model.parameter_count();
  Vector params = model.parameters();
  params.insert(params.end(), head.A.data().begin(), head.A.data().end());
  params.insert(params.end(), head.b.begin(), head.b.end());
  AdamState opt(params.size(), AdamConfig{cfg.lr});

  auto unpack = [&](const Vector& p) {
    model.set_parameters(std::span<const double>(p.data(), np));
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(np), p.begin() + static_cast<std::ptrdiff_t>(np + dz * K),
              head.A.data().begin());
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(np + dz * K), p.end(), head.b.begin());
  };

  ConceptizerFit fit{model, head, {}, 0, 0.0};
  Vector grad;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = data.size(); i > 1; --i) std::swap(data[i - 1], data[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < data.size(); start += cfg.batch) {
      const std::size_t end = std::min(data.size(), start + cfg.batch);
      const std::span<const FidelitySample> batch(data.data() + start, end - start);
      const double loss = fidelity_loss(model, head, batch, &grad);
      if (!std::isfinite(loss)) throw NumericError("train_conceptizer: non-finite fidelity loss");
      opt.step(params, grad);
      unpack(params);
      fit.loss_history.push_back(loss);
      epoch_loss += loss;
      ++steps;
    }
    ++fit.epochs;
    epoch_loss /= static_cast<double>(steps);
    if (epoch_loss < best * (1.0 - 1e-4)) {
      best = epoch_loss;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  fit.model = model;
  fit.head = head;
  fit.final_loss = fidelity_loss(model, head, data, nullptr);
  return fit;
}

inline ConceptizerFit train_conceptizer(const ConceptTemplate& tmpl, const TraceBuffer& buffer,
                                        const ConceptizerConfig& cfg) {
  const auto records = buffer.snapshot();
  return train_conceptizer(tmpl, std::span<const TraceRecord>(records), cfg);
}

}  // namespace symran
