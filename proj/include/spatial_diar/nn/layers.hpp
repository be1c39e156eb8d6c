#pragma once

#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/nn/ops.hpp"

namespace spatial_diar::nn {

/// Trainable tensor with a path-like name. Frozen parameters still pass gradients through
/// but are skipped by optimizers.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool frozen = false;
};

/// Owns every parameter of a model. Element addresses are stable (deque), so layers hold
/// references into the store.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Matrix<T> init) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name " + name);
    }
    params_.push_back({name, Var<T>(std::move(init), true), false});
    return params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  /// Sets the frozen flag on every parameter whose name starts with prefix.
  void set_frozen(const std::string& prefix, bool frozen) {
    for (auto& p : params_) {
      if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
    }
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  /// Flattened values of all parameters under prefix, in store order.
  std::vector<T> flatten(const std::string& prefix = "") const {
    std::vector<T> out;
    for (const auto& p : params_) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      out.insert(out.end(), p.var.value().data.begin(), p.var.value().data.end());
    }
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
};

using Rng = std::mt19937_64;

template <typename T>
Matrix<T> uniform_fan_in(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<T> m(fan_in, fan_out);
  for (auto& v : m.data) v = T(dist(rng));
  return m;
}

enum class Init { FanIn, Zero };
enum class Bias { With, Without };

template <typename T>
struct Linear {
  Parameter<T>* weight;
  Parameter<T>* bias;

  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::FanIn, Bias with_bias = Bias::With)
      : weight(&store.add(name + ".weight", init == Init::Zero ? Matrix<T>(in, out) : uniform_fan_in<T>(in, out, rng))),
        bias(with_bias == Bias::With ? &store.add(name + ".bias", Matrix<T>(1, out)) : nullptr) {}

  Var<T> operator()(const Var<T>& x) const { return bias ? linear(x, weight->var, bias->var) : matmul(x, weight->var); }
  std::size_t in() const { return weight->var.rows(); }
  std::size_t out() const { return weight->var.cols(); }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain;
  Parameter<T>* bias;

  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t d)
      : gain(&store.add(name + ".gain", Matrix<T>(1, d, T(1)))), bias(&store.add(name + ".bias", Matrix<T>(1, d))) {}

  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gain->var, bias->var, T(1e-5)); }
};

/// Pre-norm position-wise feed-forward: LN -> Linear(d, ff) -> SiLU -> Linear(ff, d).
template <typename T>
struct FeedForward {
  LayerNorm<T> norm;
  Linear<T> up, down;

  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
      : norm(store, name + ".norm", d), up(store, name + ".up", d, hidden, rng), down(store, name + ".down", hidden, d, rng) {}

  Var<T> operator()(const Var<T>& x) const { return down(silu(up(norm(x)))); }
};

template <typename T>
struct SelfAttention {
  Linear<T> wq, wk, wv, wo;
  int heads;

  SelfAttention(ParamStore<T>& store, const std::string& name, std::size_t d, int num_heads, Rng& rng)
      : wq(store, name + ".q", d, d, rng),
        // A key bias only shifts every score of a query row by the same amount, which the
        // softmax cancels, so keys are projected without one.
        wk(store, name + ".k", d, d, rng, Init::FanIn, Bias::Without),
        wv(store, name + ".v", d, d, rng),
        wo(store, name + ".out", d, d, rng),
        heads(num_heads) {
    if (num_heads <= 0 || d % std::size_t(num_heads) != 0) {
      throw std::invalid_argument("attention width must be divisible by the head count");
    }
  }

  Var<T> operator()(const Var<T>& x) const { return wo(attention(wq(x), wk(x), wv(x), heads)); }
};

/// Conformer convolution module: LN -> pointwise (d -> 2d) -> GLU -> depthwise conv ->
/// LN -> SiLU -> pointwise (d -> d). Layer norm stands in for batch norm.
template <typename T>
struct ConvModule {
  LayerNorm<T> norm_in;
  Linear<T> pointwise_in;
  Parameter<T>* depthwise_weight;
  Parameter<T>* depthwise_bias;
  LayerNorm<T> norm_mid;
  Linear<T> pointwise_out;

  ConvModule(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t kernel, Rng& rng)
      : norm_in(store, name + ".norm_in", d),
        pointwise_in(store, name + ".pointwise_in", d, 2 * d, rng),
        depthwise_weight(&store.add(name + ".depthwise.weight", uniform_fan_in<T>(kernel, d, rng))),
        depthwise_bias(&store.add(name + ".depthwise.bias", Matrix<T>(1, d))),
        norm_mid(store, name + ".norm_mid", d),
        pointwise_out(store, name + ".pointwise_out", d, d, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    auto h = glu(pointwise_in(norm_in(x)));
    h = depthwise_conv1d(h, depthwise_weight->var, depthwise_bias->var);
    return pointwise_out(silu(norm_mid(h)));
  }
};

/// Macaron Conformer block: x + FF/2, x + MHSA(LN x), x + Conv, x + FF/2, LN.
template <typename T>
struct ConformerBlock {
  FeedForward<T> ff1;
  LayerNorm<T> attn_norm;
  SelfAttention<T> attn;
  ConvModule<T> conv;
  FeedForward<T> ff2;
  LayerNorm<T> out_norm;

  ConformerBlock(ParamStore<T>& store, const std::string& name, std::size_t d, int heads, std::size_t ff_hidden,
                 std::size_t kernel, Rng& rng)
      : ff1(store, name + ".ff1", d, ff_hidden, rng),
        attn_norm(store, name + ".attn_norm", d),
        attn(store, name + ".attn", d, heads, rng),
        conv(store, name + ".conv", d, kernel, rng),
        ff2(store, name + ".ff2", d, ff_hidden, rng),
        out_norm(store, name + ".out_norm", d) {}

  Var<T> operator()(const Var<T>& x) const {
    auto h = add_scaled(x, ff1(x), T(0.5));
    h = add(h, attn(attn_norm(h)));
    h = add(h, conv(h));
    h = add_scaled(h, ff2(h), T(0.5));
    return out_norm(h);
  }
};

/// Pre-norm transformer layer used by the encoder stub.
template <typename T>
struct TransformerLayer {
  LayerNorm<T> attn_norm;
  SelfAttention<T> attn;
  FeedForward<T> ff;

  TransformerLayer(ParamStore<T>& store, const std::string& name, std::size_t d, int heads, std::size_t ff_hidden, Rng& rng)
      : attn_norm(store, name + ".attn_norm", d), attn(store, name + ".attn", d, heads, rng), ff(store, name + ".ff", d, ff_hidden, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    auto h = add(x, attn(attn_norm(x)));
    return add(h, ff(h));
  }
};

/// Single-hidden-layer map: Linear -> SiLU -> Linear.
template <typename T>
struct Mlp {
  Linear<T> hidden, out;

  Mlp(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t width, std::size_t out_dim, Rng& rng)
      : hidden(store, name + ".hidden", in, width, rng), out(store, name + ".out", width, out_dim, rng) {}

  Var<T> operator()(const Var<T>& x) const { return out(silu(hidden(x))); }
};

/// Transform-average-concatenate exchange across streams:
/// z_i = f(x_i), p = mean_i z_i, y_i = x_i + g([x_i ; p]). f and g are shared by all streams.
template <typename T>
struct Tac {
  Mlp<T> transform;
  Mlp<T> combine;

  Tac(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
      : transform(store, name + ".transform", d, hidden, d, rng), combine(store, name + ".combine", 2 * d, hidden, d, rng) {}

  std::vector<Var<T>> operator()(const std::vector<Var<T>>& streams) const {
    if (streams.empty()) throw std::invalid_argument("TAC needs at least one stream");
    std::vector<Var<T>> z;
    z.reserve(streams.size());
    for (const auto& x : streams) z.push_back(transform(x));
    auto pooled = mean_of(z);
    std::vector<Var<T>> out;
    out.reserve(streams.size());
    for (const auto& x : streams) out.push_back(add(x, combine(concat_cols(x, pooled))));
    return out;
  }
};

/// FiLM: y = (1 + gamma_hat(c)) * x + beta(c), both maps affine in the condition and
/// zero-initialized, so a fresh layer is an exact identity.
template <typename T>
struct Film {
  Linear<T> gamma_hat;
  Linear<T> beta;

  Film(ParamStore<T>& store, const std::string& name, std::size_t cond_dim, std::size_t d, Rng& rng)
      : gamma_hat(store, name + ".gamma", cond_dim, d, rng, Init::Zero), beta(store, name + ".beta", cond_dim, d, rng, Init::Zero) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& cond) const {
    if (cond.rows() != x.rows()) throw std::invalid_argument("FiLM condition is not frame-aligned with its input");
    return film_modulate(x, gamma_hat(cond), beta(cond));
  }
};

/// Absolute sinusoidal position table (rows x d).
template <typename T>
Matrix<T> sinusoidal_positions(std::size_t rows, std::size_t d) {
  Matrix<T> pe(rows, d);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(d));
      pe(t, i) = T(i % 2 == 0 ? std::sin(double(t) * rate) : std::cos(double(t) * rate));
    }
  }
  return pe;
}

}  // namespace spatial_diar::nn
