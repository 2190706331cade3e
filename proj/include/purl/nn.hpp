#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "purl/dataset.hpp"
#include "purl/errors.hpp"
#include "purl/matrix.hpp"

namespace purl {

enum class Activation { relu, identity };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

// Fully connected layer y = act(W x + b). `mask` has the shape of `weights`;
// a 0 entry marks a pruned weight, which is held at exactly 0.
struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Matrix mask;
  Activation activation = Activation::relu;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : weights(out, in), bias(out, 0.0), mask(out, in, 1.0), activation(act) {}

  std::size_t in() const noexcept { return weights.cols(); }
  std::size_t out() const noexcept { return weights.rows(); }

  bool is_masked(std::size_t flat) const { return mask[flat] == 0.0; }

  void enforce_mask() {
    auto w = weights.values();
    auto m = mask.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) w[i] = 0.0;
    }
  }

  void validate(std::size_t index) const {
    if (!weights.same_shape(mask) || bias.size() != weights.rows()) {
      throw DimensionError("layer " + std::to_string(index) + " has inconsistent shapes");
    }
    auto w = weights.values();
    auto m = mask.values();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] != 0.0 && m[i] != 1.0) {
        throw DimensionError("layer " + std::to_string(index) + " mask is not binary");
      }
      if (m[i] == 0.0 && w[i] != 0.0) {
        throw DimensionError("layer " + std::to_string(index) + " has a nonzero masked weight");
      }
    }
  }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Network {
  std::vector<DenseLayer> layers;

  std::size_t num_layers() const noexcept { return layers.size(); }
  // Every layer's weight matrix is prunable; biases never are.
  std::size_t num_prunable() const noexcept { return layers.size(); }
  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_size() const { return layers.empty() ? 0 : layers.back().out(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw DimensionError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].validate(i);
      if (i > 0 && layers[i].in() != layers[i - 1].out()) {
        throw DimensionError("layer " + std::to_string(i) + " input " +
                             std::to_string(layers[i].in()) + " does not match previous output " +
                             std::to_string(layers[i - 1].out()));
      }
    }
  }

  friend bool operator==(const Network&, const Network&) = default;
};

// He-initialised MLP; hidden layers use `hidden`, the last layer is Identity.
inline Network make_mlp(std::span<const std::size_t> sizes, std::mt19937_64& rng,
                        Activation hidden = Activation::relu) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
  Network net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    DenseLayer layer(sizes[i], sizes[i + 1], last ? Activation::identity : hidden);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(sizes[i])));
    for (double& w : layer.weights.values()) w = dist(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Network make_mlp(std::initializer_list<std::size_t> sizes, std::mt19937_64& rng,
                        Activation hidden = Activation::relu) {
  std::vector<std::size_t> v(sizes);
  return make_mlp(std::span<const std::size_t>(v), rng, hidden);
}

// FNV-1a over the raw bytes of every weight, bias and mask entry.
inline std::uint64_t checksum(const Network& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::span<const double> vals) {
    for (double v : vals) {
      const auto* p = reinterpret_cast<const unsigned char*>(&v);
      for (std::size_t i = 0; i < sizeof(double); ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& l : net.layers) {
    mix(l.weights.values());
    mix(l.bias);
    mix(l.mask.values());
  }
  return h;
}

namespace detail {

// out = x * W^T + b, applying the activation in place.
inline void dense_forward(const DenseLayer& layer, const Matrix& x, Matrix& out) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in();
  const std::size_t n_out = layer.out();
  out = Matrix(batch, n_out);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.row(b).data();
    double* yr = out.row(b).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* wr = layer.weights.row(o).data();
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = (layer.activation == Activation::relu && acc < 0.0) ? 0.0 : acc;
    }
  }
}

}  // namespace detail

// Activations of every layer for one batch: outputs[0] is the input batch,
// outputs[i+1] is the post-activation output of layer i.
struct ForwardCache {
  std::vector<Matrix> outputs;

  const Matrix& logits() const { return outputs.back(); }
};

inline void check_input(const Network& net, const Matrix& batch) {
  if (net.layers.empty()) throw DimensionError("network has no layers");
  if (batch.cols() != net.input_size()) {
    throw DimensionError("batch has " + std::to_string(batch.cols()) +
                         " features, network expects " + std::to_string(net.input_size()));
  }
}

inline ForwardCache forward_cached(const Network& net, const Matrix& batch) {
  check_input(net, batch);
  ForwardCache cache;
  cache.outputs.reserve(net.layers.size() + 1);
  cache.outputs.push_back(batch);
  for (const auto& layer : net.layers) {
    Matrix next;
    detail::dense_forward(layer, cache.outputs.back(), next);
    cache.outputs.push_back(std::move(next));
  }
  return cache;
}

inline Matrix forward(const Network& net, const Matrix& batch) {
  check_input(net, batch);
  Matrix current = batch;
  Matrix next;
  for (const auto& layer : net.layers) {
    detail::dense_forward(layer, current, next);
    std::swap(current, next);
  }
  return current;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      g.weights.emplace_back(l.out(), l.in());
      g.bias.emplace_back(l.out(), 0.0);
    }
    return g;
  }
};

// Backpropagates d(loss)/d(logits) through the cached activations.
// Gradients at masked positions are computed like any other; optimizers
// are responsible for ignoring them.
inline Gradients backward(const Network& net, const ForwardCache& cache, Matrix dout) {
  Gradients g = Gradients::zeros_like(net);
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    const Matrix& y = cache.outputs[li + 1];
    const Matrix& x = cache.outputs[li];
    const std::size_t batch = x.rows();
    if (layer.activation == Activation::relu) {
      auto d = dout.values();
      auto yv = y.values();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (yv[i] <= 0.0) d[i] = 0.0;
      }
    }
    Matrix& gw = g.weights[li];
    auto& gb = g.bias[li];
    Matrix dx(batch, layer.in());
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xr = x.row(b).data();
      const double* dr = dout.row(b).data();
      double* dxr = dx.row(b).data();
      for (std::size_t o = 0; o < layer.out(); ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwr = gw.row(o).data();
        const double* wr = layer.weights.row(o).data();
        for (std::size_t i = 0; i < layer.in(); ++i) {
          gwr[i] += d * xr[i];
          dxr[i] += d * wr[i];
        }
      }
    }
    dout = std::move(dx);
  }
  return g;
}

// Row-wise numerically stable softmax.
inline Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

namespace detail {

inline void check_finite(const ForwardCache& cache) {
  for (std::size_t i = 1; i < cache.outputs.size(); ++i) {
    if (!cache.outputs[i].all_finite()) throw NumericError("non-finite activation", i - 1);
  }
}

}  // namespace detail

// Mean softmax cross-entropy over the batch and its gradients.
inline LossAndGrads loss_and_grads(const Network& net, const Matrix& batch,
                                   std::span<const std::size_t> labels) {
  if (batch.rows() == 0) throw DimensionError("empty batch");
  if (labels.size() != batch.rows()) throw DimensionError("label count does not match batch rows");
  ForwardCache cache = forward_cached(net, batch);
  detail::check_finite(cache);
  const Matrix& logits = cache.logits();
  const std::size_t n = batch.rows();
  Matrix dlogits(n, logits.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto z = logits.row(r);
    if (labels[r] >= z.size()) throw DimensionError("label exceeds class count");
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_sum = mx + std::log(sum);
    loss += log_sum - z[labels[r]];
    auto d = dlogits.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) {
      d[c] = std::exp(z[c] - log_sum) / static_cast<double>(n);
    }
    d[labels[r]] -= 1.0 / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss", net.layers.size() - 1);
  return {loss, backward(net, cache, std::move(dlogits))};
}

// w <- w - lr * g on unmasked weights; masked weights stay exactly 0.
inline void sgd_step(Network& net, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    DenseLayer& layer = net.layers[li];
    auto w = layer.weights.values();
    auto m = layer.mask.values();
    auto g = grads.weights[li].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = m[i] == 0.0 ? 0.0 : w[i] - lr * g[i];
    }
    for (std::size_t o = 0; o < layer.bias.size(); ++o) layer.bias[o] -= lr * grads.bias[li][o];
  }
}

// Adam with the same mask discipline as sgd_step. Used for the Q-network.
class Adam {
 public:
  explicit Adam(const Network& net, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Gradients::zeros_like(net)), v_(Gradients::zeros_like(net)) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  }

  void step(Network& net, const Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](double& param, double g, double& m, double& v) {
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      param -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      DenseLayer& layer = net.layers[li];
      auto w = layer.weights.values();
      auto mask = layer.mask.values();
      auto g = grads.weights[li].values();
      auto mw = m_.weights[li].values();
      auto vw = v_.weights[li].values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (mask[i] == 0.0) {
          w[i] = 0.0;
          continue;
        }
        update(w[i], g[i], mw[i], vw[i]);
      }
      for (std::size_t o = 0; o < layer.bias.size(); ++o) {
        update(layer.bias[o], grads.bias[li][o], m_.bias[li][o], v_.bias[li][o]);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  Gradients m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

// `epochs` passes of shuffled minibatch SGD over `data`.
inline void retrain(Network& net, const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (data.empty()) throw ConfigError("cannot train on an empty split");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix xb = gather_rows(data.inputs, idx);
      std::vector<std::size_t> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(data.labels[i]);
      auto lg = loss_and_grads(net, xb, yb);
      sgd_step(net, lg.grads, cfg.lr);
    }
  }
}

inline void retrain(Network& net, const DataSplits& splits, Split split, const TrainConfig& cfg,
                    std::mt19937_64& rng) {
  const Dataset& data = splits.get(split);
  if (data.empty()) throw ConfigError(std::string("split '") + to_string(split) + "' is empty");
  retrain(net, data, cfg, rng);
}

// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
inline double evaluate_accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty split");
  constexpr std::size_t chunk = 512;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Matrix logits = forward(net, gather_rows(data.inputs, idx));
    if (!logits.all_finite()) throw NumericError("non-finite logits", net.layers.size() - 1);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      if (argmax(logits.row(r)) == data.labels[start + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline double evaluate_accuracy(const Network& net, const DataSplits& splits,
                                Split split = Split::test) {
  return evaluate_accuracy(net, splits.get(split));
}

}  // namespace purl
