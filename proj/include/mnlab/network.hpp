#pragma once

/// Small fully connected classifier with exact reverse-mode gradients with
/// respect to both parameters and inputs.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mnlab/error.hpp"
#include "mnlab/tensor.hpp"

namespace mnlab {

enum class Activation { ReLU, Softplus, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  if (s == "identity") return Activation::Identity;
  throw InvalidConfig("unknown activation '" + s + "'");
}

/// y = act(x W + b); weights are [in, out], bias is [out].
struct Dense {
  Tensor weights;
  Tensor bias;
  Activation activation = Activation::Identity;

  [[nodiscard]] std::size_t in_dim() const { return weights.rows(); }
  [[nodiscard]] std::size_t out_dim() const { return weights.cols(); }
};

inline constexpr std::size_t kMaxLayers = 6;

class Network {
 public:
  Network() = default;

  explicit Network(std::vector<Dense> layers) : layers_(std::move(layers)) { validate(); }

  /// Glorot-uniform weights and zero biases, hidden layers use `hidden`,
  /// the output layer is Identity.
  static Network mlp(std::span<const std::size_t> dims, Activation hidden, std::uint64_t seed) {
    if (dims.size() < 2) throw ShapeMismatch("an MLP needs at least input and output dims");
    std::mt19937_64 rng(seed);
    std::vector<Dense> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto fan_in = dims[l];
      const auto fan_out = dims[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> init(-limit, limit);
      Dense layer{Tensor::matrix(fan_in, fan_out), Tensor({fan_out}),
                  l + 2 == dims.size() ? Activation::Identity : hidden};
      for (double& w : layer.weights.data()) w = init(rng);
      layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
  }

  static Network mlp(std::initializer_list<std::size_t> dims, Activation hidden,
                     std::uint64_t seed) {
    return mlp(std::span<const std::size_t>(dims.begin(), dims.size()), hidden, seed);
  }

  [[nodiscard]] const std::vector<Dense>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Dense>& layers() { return layers_; }
  [[nodiscard]] std::size_t input_dim() const { return layers_.front().in_dim(); }
  [[nodiscard]] int num_classes() const { return static_cast<int>(layers_.back().out_dim()); }

  /// Parameter tensors in checkpoint order: W0, b0, W1, b1, ...
  [[nodiscard]] std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    return out;
  }
  [[nodiscard]] std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    return out;
  }

  /// Textual architecture, e.g. "mlp:20-64-64-2:relu".
  [[nodiscard]] std::string arch() const {
    std::ostringstream os;
    os << "mlp:" << input_dim();
    for (const auto& l : layers_) os << '-' << l.out_dim();
    os << ':' << to_string(layers_.size() > 1 ? layers_.front().activation : Activation::Identity);
    return os.str();
  }

  bool operator==(const Network& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& a = layers_[i];
      const auto& b = other.layers_[i];
      if (a.activation != b.activation || !(a.weights == b.weights) || !(a.bias == b.bias)) {
        return false;
      }
    }
    return true;
  }

 private:
  void validate() const {
    if (layers_.empty() || layers_.size() > kMaxLayers) {
      throw ShapeMismatch("network must have 1.." + std::to_string(kMaxLayers) + " layers");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.weights.ndim() != 2 || l.bias.ndim() != 1 || l.bias.size() != l.out_dim()) {
        throw ShapeMismatch("layer " + std::to_string(i) + " has inconsistent shapes");
      }
      if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
        throw ShapeMismatch("layer " + std::to_string(i) + " does not chain");
      }
    }
    if (layers_.back().activation != Activation::Identity) {
      throw ShapeMismatch("final layer must produce logits (Identity activation)");
    }
    if (layers_.back().out_dim() < 2) throw ShapeMismatch("need at least two classes");
  }

  std::vector<Dense> layers_;
};

namespace detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Softplus: return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::Identity: return z;
  }
  return z;
}

inline double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-z));
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// out[n, o] = in[n, i] W[i, o] + b[o]. Each output element is accumulated in
// a fixed order, independent of the number of rows.
inline void affine(const Tensor& in, const Dense& layer, Tensor& out) {
  const std::size_t n = in.rows();
  const std::size_t di = layer.in_dim();
  const std::size_t dout = layer.out_dim();
  out = Tensor::matrix(n, dout);
  const double* w = layer.weights.data().data();
  const double* b = layer.bias.data().data();
  const double* x = in.data().data();
  double* y = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y + r * dout;
    for (std::size_t o = 0; o < dout; ++o) yr[o] = b[o];
    const double* xr = x + r * di;
    for (std::size_t i = 0; i < di; ++i) {
      const double xi = xr[i];
      const double* wi = w + i * dout;
      for (std::size_t o = 0; o < dout; ++o) yr[o] += xi * wi[o];
    }
  }
}

}  // namespace detail

/// Pre-activations and activations of every layer, kept for backward.
struct ForwardTrace {
  std::vector<Tensor> pre;   // z_l
  std::vector<Tensor> post;  // a_l (post.back() = logits)
};

inline void check_inputs(const Network& net, const Tensor& inputs) {
  if (inputs.ndim() != 2 || inputs.cols() != net.input_dim()) {
    throw ShapeMismatch("inputs " + inputs.shape_string() + " do not match network input dim " +
                        std::to_string(net.input_dim()));
  }
}

inline ForwardTrace forward_trace(const Network& net, const Tensor& inputs) {
  check_inputs(net, inputs);
  ForwardTrace t;
  const Tensor* cur = &inputs;
  for (const auto& layer : net.layers()) {
    Tensor z;
    detail::affine(*cur, layer, z);
    Tensor a = z;
    if (layer.activation != Activation::Identity) {
      for (double& v : a.data()) v = detail::activate(layer.activation, v);
    }
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(a));
    cur = &t.post.back();
  }
  assert(t.post.back().all_finite());
  return t;
}

/// Logits [n, K].
inline Tensor forward(const Network& net, const Tensor& inputs) {
  check_inputs(net, inputs);
  Tensor cur = inputs;
  Tensor next;
  for (const auto& layer : net.layers()) {
    detail::affine(cur, layer, next);
    if (layer.activation != Activation::Identity) {
      for (double& v : next.data()) v = detail::activate(layer.activation, v);
    }
    std::swap(cur, next);
  }
  assert(cur.all_finite());
  return cur;
}

inline std::vector<int> predict(const Network& net, const Tensor& inputs) {
  const Tensor logits = forward(net, inputs);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  ///< d(mean loss)/d(logits)
};

namespace detail {

inline void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2 || logits.rows() != labels.size()) {
    throw ShapeMismatch("logits " + logits.shape_string() + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  const int k = static_cast<int>(logits.cols());
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw ShapeMismatch("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// -log softmax(row)[y], and optionally softmax(row) into probs.
inline double row_cross_entropy(std::span<const double> row, int y, double* probs) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  const double log_z = m + std::log(s);
  if (probs != nullptr) {
    for (std::size_t j = 0; j < row.size(); ++j) probs[j] = std::exp(row[j] - log_z);
  }
  return std::max(log_z - row[static_cast<std::size_t>(y)], 0.0);
}

}  // namespace detail

/// Per-example cross-entropy.
inline std::vector<double> cross_entropy_per_example(const Tensor& logits,
                                                     std::span<const int> labels) {
  detail::check_labels(logits, labels);
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out[r] = detail::row_cross_entropy(logits.row(r), labels[r], nullptr);
  }
  return out;
}

/// Mean cross-entropy and its gradient (softmax - onehot) / n.
inline LossAndGrad cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels);
  const std::size_t n = labels.size();
  const std::size_t k = logits.cols();
  LossAndGrad out{0.0, Tensor::matrix(n, k)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    double* g = out.grad.row(r).data();
    out.loss += detail::row_cross_entropy(logits.row(r), labels[r], g);
    g[labels[r]] -= 1.0;
    for (std::size_t j = 0; j < k; ++j) g[j] *= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

struct Gradients {
  double loss = 0.0;
  std::vector<Tensor> params;  ///< same order as Network::parameters()
  Tensor inputs;               ///< d(mean loss)/d(inputs)
};

namespace detail {

// Back-propagates d(loss)/d(logits) through the trace. Parameter gradients
// are skipped when `params` is null.
inline Tensor backprop(const Network& net, const Tensor& inputs, const ForwardTrace& trace,
                       Tensor grad_out, std::vector<Tensor>* params) {
  const auto& layers = net.layers();
  if (params) {
    params->assign(layers.size() * 2, Tensor());
  }
  Tensor delta = std::move(grad_out);
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Dense& layer = layers[li];
    const std::size_t n = delta.rows();
    const std::size_t di = layer.in_dim();
    const std::size_t dout = layer.out_dim();
    if (layer.activation != Activation::Identity) {
      const double* z = trace.pre[li].data().data();
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] *= activate_grad(layer.activation, z[i]);
      }
    }
    const Tensor& a_in = li == 0 ? inputs : trace.post[li - 1];
    if (params) {
      Tensor gw = Tensor::matrix(di, dout);
      Tensor gb({dout});
      for (std::size_t r = 0; r < n; ++r) {
        const double* dr = delta.row(r).data();
        const double* ar = a_in.row(r).data();
        for (std::size_t o = 0; o < dout; ++o) gb[o] += dr[o];
        for (std::size_t i = 0; i < di; ++i) {
          const double ai = ar[i];
          double* gwi = gw.data().data() + i * dout;
          for (std::size_t o = 0; o < dout; ++o) gwi[o] += ai * dr[o];
        }
      }
      (*params)[2 * li] = std::move(gw);
      (*params)[2 * li + 1] = std::move(gb);
    }
    Tensor prev = Tensor::matrix(n, di);
    const double* w = layer.weights.data().data();
    for (std::size_t r = 0; r < n; ++r) {
      const double* dr = delta.row(r).data();
      double* pr = prev.row(r).data();
      for (std::size_t i = 0; i < di; ++i) {
        const double* wi = w + i * dout;
        double s = 0.0;
        for (std::size_t o = 0; o < dout; ++o) s += wi[o] * dr[o];
        pr[i] = s;
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

}  // namespace detail

/// Mean cross-entropy with gradients wrt all parameters and the inputs.
inline Gradients backward(const Network& net, const Tensor& inputs, std::span<const int> labels) {
  const ForwardTrace trace = forward_trace(net, inputs);
  auto [loss, grad_logits] = cross_entropy_loss(trace.post.back(), labels);
  Gradients g;
  g.loss = loss;
  g.inputs = detail::backprop(net, inputs, trace, std::move(grad_logits), &g.params);
  return g;
}

inline Gradients backward(const Network& net, const Batch& batch) {
  return backward(net, batch.inputs, batch.labels);
}

/// Per-example losses, logits and the gradient of each example's own loss
/// wrt its own input. Used by the attacks, which never need parameter
/// gradients.
struct InputGradients {
  std::vector<double> losses;
  Tensor logits;
  Tensor grad;
};

inline InputGradients input_gradients(const Network& net, const Tensor& inputs,
                                      std::span<const int> labels) {
  const ForwardTrace trace = forward_trace(net, inputs);
  const Tensor& logits = trace.post.back();
  detail::check_labels(logits, labels);
  const std::size_t n = labels.size();
  const std::size_t k = logits.cols();
  InputGradients out{std::vector<double>(n), logits, {}};
  Tensor g = Tensor::matrix(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    double* gr = g.row(r).data();
    out.losses[r] = detail::row_cross_entropy(logits.row(r), labels[r], gr);
    gr[labels[r]] -= 1.0;
  }
  out.grad = detail::backprop(net, inputs, trace, std::move(g), nullptr);
  return out;
}

/// Max over randomly sampled coordinates (parameters and inputs) of
/// |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const Network& net, const Batch& batch, double step,
                         std::uint64_t seed = 1, int n_coords = 100) {
  const Gradients g = backward(net, batch);
  Network probe = net;
  Tensor x = batch.inputs;
  auto loss_now = [&] { return cross_entropy_loss(forward(probe, x), batch.labels).loss; };

  std::vector<Tensor*> params = probe.parameters();
  std::size_t total = x.size();
  for (const Tensor* p : params) total += p->size();

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  double worst = 0.0;
  for (int c = 0; c < n_coords; ++c) {
    std::size_t idx = pick(rng);
    double* slot = nullptr;
    double analytic = 0.0;
    if (idx < x.size()) {
      slot = &x[idx];
      analytic = g.inputs[idx];
    } else {
      idx -= x.size();
      for (std::size_t t = 0; t < params.size(); ++t) {
        if (idx < params[t]->size()) {
          slot = &(*params[t])[idx];
          analytic = g.params[t][idx];
          break;
        }
        idx -= params[t]->size();
      }
    }
    const double saved = *slot;
    *slot = saved + step;
    const double up = loss_now();
    *slot = saved - step;
    const double down = loss_now();
    *slot = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

}  // namespace mnlab
