#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/rng.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

enum class Activation { identity, sigmoid, tanh, relu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double x) noexcept {
  switch (a) {
    case Activation::identity: return x;
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

/// Derivative expressed through the activation output y.
inline double activate_grad_from_output(Activation a, double y) noexcept {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  bool operator==(const Layer&) const = default;
};

/// Per-layer outputs of a forward pass; values[0] is the input.
struct ForwardCache {
  std::vector<Vector> values;
};

class FeedForwardNet {
 public:
  FeedForwardNet() = default;

  explicit FeedForwardNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      require_dim(L.bias.size() == L.out(), "FeedForwardNet: bias size mismatch");
      if (l > 0)
        require_dim(layers_[l - 1].out() == L.in(), "FeedForwardNet: layer dimensions do not chain");
    }
  }

  /// Glorot-uniform weights, zero biases. dims has one more entry than acts.
  static FeedForwardNet glorot(std::span<const std::size_t> dims, std::span<const Activation> acts,
                               Rng& rng) {
    require(dims.size() >= 2 && acts.size() + 1 == dims.size(),
            "FeedForwardNet::glorot: need dims.size() == acts.size() + 1 >= 2");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const std::size_t in = dims[l], out = dims[l + 1];
      const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
      Layer L{Matrix(out, in), Vector(out, 0.0), acts[l]};
      for (double& w : L.weight.data()) w = uniform(rng, -lim, lim);
      layers.push_back(std::move(L));
    }
    return FeedForwardNet(std::move(layers));
  }

  static FeedForwardNet glorot(std::initializer_list<std::size_t> dims,
                               std::initializer_list<Activation> acts, Rng& rng) {
    std::vector<std::size_t> d(dims);
    std::vector<Activation> a(acts);
    return glorot(std::span<const std::size_t>(d), std::span<const Activation>(a), rng);
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  bool empty() const noexcept { return layers_.empty(); }
  std::size_t input_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().in(); }
  std::size_t output_dim() const noexcept { return layers_.empty() ? 0 : layers_.back().out(); }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const Layer& L : layers_) n += L.weight.size() + L.bias.size();
    return n;
  }

  Vector forward(std::span<const double> x) const {
    ForwardCache cache;
    forward(x, cache);
    return std::move(cache.values.back());
  }

  /// Forward pass keeping every layer output; reuses cache storage.
  const Vector& forward(std::span<const double> x, ForwardCache& cache) const {
    require_dim(!layers_.empty(), "FeedForwardNet: empty network");
    require_dim(x.size() == input_dim(), "net_forward: input has dimension " +
                                             std::to_string(x.size()) + ", expected " +
                                             std::to_string(input_dim()));
    cache.values.resize(layers_.size() + 1);
    cache.values[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      const Vector& in = cache.values[l];
      Vector& out = cache.values[l + 1];
      out.resize(L.out());
      const std::size_t n_in = L.in();
      const double* w = L.weight.data().data();
      for (std::size_t o = 0; o < L.out(); ++o) {
        double s = L.bias[o];
        const double* wr = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) s += wr[i] * in[i];
        out[o] = activate(L.activation, s);
      }
    }
    return cache.values.back();
  }

  /// Inference-only forward that ping-pongs between two caller-owned scratch
  /// buffers; the returned view is valid until either buffer is reused.
  std::span<const double> forward_scratch(std::span<const double> x, Vector& a, Vector& b) const {
    require_dim(!layers_.empty() && x.size() == input_dim(), "net_forward: input dimension mismatch");
    const double* in = x.data();
    Vector* out = &a;
    for (const Layer& L : layers_) {
      out->resize(L.out());
      const std::size_t n_in = L.in();
      const double* w = L.weight.data().data();
      for (std::size_t o = 0; o < L.out(); ++o) {
        double s = L.bias[o];
        const double* wr = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) s += wr[i] * in[i];
        (*out)[o] = activate(L.activation, s);
      }
      in = out->data();
      out = out == &a ? &b : &a;
    }
    return {in, output_dim()};
  }

  /// Backpropagates dL/dy. Parameter gradients are added into grad (layout of
  /// parameters()); returns dL/dx.
  Vector backward(const ForwardCache& cache, std::span<const double> adjoint,
                  std::span<double> grad) const {
    require_dim(cache.values.size() == layers_.size() + 1, "backward: stale forward cache");
    require_dim(adjoint.size() == output_dim(), "backward: adjoint dimension mismatch");
    const bool want_grad = !grad.empty();
    if (want_grad) require_dim(grad.size() == parameter_count(), "backward: gradient size mismatch");

    std::vector<std::size_t> offset(layers_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      offset[l] = off;
      off += layers_[l].weight.size() + layers_[l].bias.size();
    }

    Vector delta(adjoint.begin(), adjoint.end());
    Vector prev;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& L = layers_[l];
      const Vector& out = cache.values[l + 1];
      const Vector& in = cache.values[l];
      for (std::size_t o = 0; o < L.out(); ++o)
        delta[o] *= activate_grad_from_output(L.activation, out[o]);
      const std::size_t n_in = L.in();
      if (want_grad) {
        double* gw = grad.data() + offset[l];
        double* gb = gw + L.weight.size();
        for (std::size_t o = 0; o < L.out(); ++o) {
          const double d = delta[o];
          if (d == 0.0) continue;
          double* row = gw + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) row[i] += d * in[i];
          gb[o] += d;
        }
      }
      prev.assign(n_in, 0.0);
      const double* w = L.weight.data().data();
      for (std::size_t o = 0; o < L.out(); ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* wr = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) prev[i] += d * wr[i];
      }
      delta.swap(prev);
    }
    return delta;
  }

  Vector parameters() const {
    Vector p;
    p.reserve(parameter_count());
    for (const Layer& L : layers_) {
      p.insert(p.end(), L.weight.data().begin(), L.weight.data().end());
      p.insert(p.end(), L.bias.begin(), L.bias.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    require_dim(p.size() == parameter_count(), "set_parameters: size mismatch");
    std::size_t k = 0;
    for (Layer& L : layers_) {
      for (double& w : L.weight.data()) w = p[k++];
      for (double& b : L.bias) b = p[k++];
    }
  }

  bool operator==(const FeedForwardNet&) const = default;

 private:
  std::vector<Layer> layers_;
};

}  // namespace symran
