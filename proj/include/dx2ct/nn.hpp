#pragma once

// Named parameter store + small module wrappers over the tape.
//
// Every parameter is initialized from an RNG stream seeded by
// mix_seed(init_seed, name), so initial values depend only on the name and the
// global seed — never on construction order. Two networks sharing a parameter
// name therefore share its initial value exactly.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dx2ct/autodiff.hpp"
#include "dx2ct/rng.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::nn {

using ad::Act;
using ad::Tape;
using ad::Var;

template <typename T>
struct ParamStore {
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
  };

  std::uint64_t init_seed = 0;
  std::map<std::string, Entry> entries;  // ordered: serialization + Adam order

  explicit ParamStore(std::uint64_t seed = 0) : init_seed(seed) {}

  template <typename Init>
  void ensure(const std::string& name, const Shape& shape, Init&& init) {
    auto it = entries.find(name);
    if (it != entries.end()) {
      require_valid(it->second.value.shape() == shape,
                    "param '" + name + "' redeclared with shape " +
                        shape_str(shape) + " (was " +
                        shape_str(it->second.value.shape()) + ")");
      return;
    }
    Entry e{Tensor<T>(shape), Tensor<T>::zeros(shape)};
    Rng rng(mix_seed(init_seed, name));
    init(rng, e.value);
    entries.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries.find(name);
    require_valid(it != entries.end(), "unknown param '" + name + "'");
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries.find(name);
    require_valid(it != entries.end(), "unknown param '" + name + "'");
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, e] : entries)
      std::fill(e.grad.data(), e.grad.data() + e.grad.numel(), T(0));
  }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries) n += e.value.numel();
    return n;
  }
};

// Initializers ---------------------------------------------------------------

template <typename T>
inline auto init_zeros() {
  return [](Rng&, Tensor<T>& v) {
    std::fill(v.data(), v.data() + v.numel(), T(0));
  };
}

template <typename T>
inline auto init_ones() {
  return [](Rng&, Tensor<T>& v) {
    std::fill(v.data(), v.data() + v.numel(), T(1));
  };
}

template <typename T>
inline auto init_xavier(std::size_t fan_in, std::size_t fan_out) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return [limit](Rng& rng, Tensor<T>& v) {
    for (std::size_t i = 0; i < v.numel(); ++i)
      v[i] = static_cast<T>(rng.uniform(-limit, limit));
  };
}

template <typename T>
inline auto init_normal(double stddev) {
  return [stddev](Rng& rng, Tensor<T>& v) {
    for (std::size_t i = 0; i < v.numel(); ++i)
      v[i] = static_cast<T>(rng.normal() * stddev);
  };
}

// Tape integration ------------------------------------------------------------

template <typename T>
Var<T> use_param(Tape<T>& tape, ParamStore<T>& store, const std::string& name) {
  if (std::size_t* id = tape.find_param(name)) return {&tape, *id};
  Var<T> v = ad::leaf(tape, store.at(name).value, /*requires_grad=*/true);
  tape.remember_param(name, v.id);
  return v;
}

// Add tape gradients onto the store's accumulators.
template <typename T>
void flush_grads(Tape<T>& tape, ParamStore<T>& store) {
  for (const auto& [name, id] : tape.param_ids()) {
    const auto& node = tape.node(id);
    if (!node.requires_grad) continue;
    Tensor<T>& g = store.at(name).grad;
    require_valid(g.same_shape(node.grad), "flush_grads: shape drift on " + name);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += node.grad[i];
  }
}

// Modules ---------------------------------------------------------------------

template <typename T>
struct Linear {
  ParamStore<T>* store = nullptr;
  std::string w_name, b_name;
  std::size_t in = 0, out = 0;
  bool bias = true;

  Linear() = default;
  Linear(ParamStore<T>& s, const std::string& name, std::size_t in_,
         std::size_t out_, bool bias_ = true, bool zero_init = false)
      : store(&s), w_name(name + ".w"), b_name(name + ".b"), in(in_), out(out_),
        bias(bias_) {
    if (zero_init)
      s.ensure(w_name, {out, in}, init_zeros<T>());
    else
      s.ensure(w_name, {out, in}, init_xavier<T>(in, out));
    if (bias) s.ensure(b_name, {out}, init_zeros<T>());
  }

  // x (..., in) -> (..., out)
  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    Shape orig = x.shape();
    require_valid(orig.back() == in, "linear " + w_name + ": last dim " +
                                         std::to_string(orig.back()) + " != " +
                                         std::to_string(in));
    std::size_t rows = x.value().numel() / in;
    if (orig.size() != 2) x = ad::reshape(x, {rows, in});
    Var<T> w = use_param(tape, *store, w_name);
    Var<T> y = ad::matmul(x, w, false, true);
    if (bias) y = ad::add_bias_last(y, use_param(tape, *store, b_name));
    if (orig.size() != 2) {
      Shape s = orig;
      s.back() = out;
      y = ad::reshape(y, s);
    }
    return y;
  }
};

template <typename T>
struct Conv2d {
  ParamStore<T>* store = nullptr;
  std::string w_name, b_name;
  std::size_t ci = 0, co = 0, k = 1;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& s, const std::string& name, std::size_t ci_,
         std::size_t co_, std::size_t k_, int stride_, int pad_,
         bool zero_init = false)
      : store(&s), w_name(name + ".w"), b_name(name + ".b"), ci(ci_), co(co_),
        k(k_), stride(stride_), pad(pad_) {
    if (zero_init)
      s.ensure(w_name, {co, ci, k, k}, init_zeros<T>());
    else
      s.ensure(w_name, {co, ci, k, k}, init_xavier<T>(ci * k * k, co * k * k));
    s.ensure(b_name, {co}, init_zeros<T>());
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ad::conv2d(x, use_param(tape, *store, w_name),
                      use_param(tape, *store, b_name), stride, pad);
  }
};

// Layer norm over the last dim with learned per-channel affine.
template <typename T>
struct LayerNorm {
  ParamStore<T>* store = nullptr;
  std::string g_name, b_name;
  std::size_t c = 0;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& s, const std::string& name, std::size_t c_)
      : store(&s), g_name(name + ".g"), b_name(name + ".b"), c(c_) {
    s.ensure(g_name, {c}, init_ones<T>());
    s.ensure(b_name, {c}, init_zeros<T>());
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    Var<T> y = ad::layer_norm(x);
    y = ad::scale_last(y, use_param(tape, *store, g_name));
    return ad::add_bias_last(y, use_param(tape, *store, b_name));
  }
};

// Group norm over (N,C,H,W) with learned per-channel affine.
template <typename T>
struct GroupNorm {
  ParamStore<T>* store = nullptr;
  std::string g_name, b_name;
  std::size_t c = 0, groups = 8;

  GroupNorm() = default;
  GroupNorm(ParamStore<T>& s, const std::string& name, std::size_t c_,
            std::size_t groups_)
      : store(&s), g_name(name + ".g"), b_name(name + ".b"), c(c_),
        groups(groups_) {
    s.ensure(g_name, {c}, init_ones<T>());
    s.ensure(b_name, {c}, init_zeros<T>());
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    Var<T> y = ad::group_norm(x, groups);
    return ad::channel_affine(y, use_param(tape, *store, g_name),
                              use_param(tape, *store, b_name));
  }
};

// Fully connected stack: dims[0] -> ... -> dims.back(), `act` between layers
// (not after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Act act = Act::silu;

  Mlp() = default;
  Mlp(ParamStore<T>& s, const std::string& name, const std::vector<std::size_t>& dims,
      Act act_)
      : act(act_) {
    require_valid(dims.size() >= 2, "mlp needs at least one layer");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers.emplace_back(s, name + "." + std::to_string(i), dims[i], dims[i + 1]);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](tape, x);
      if (i + 1 < layers.size()) x = ad::activation(x, act);
    }
    return x;
  }
};

// Sinusoidal timestep embedding, (N, dim): first half sines, second half
// cosines of t scaled by log-spaced frequencies 10000^(-i/(half-1)).
template <typename T>
Tensor<T> timestep_embedding(const std::vector<int>& t, std::size_t dim) {
  require_valid(dim >= 2 && dim % 2 == 0, "timestep embedding dim must be even");
  std::size_t half = dim / 2;
  double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
  Tensor<T> e({t.size(), dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (std::size_t i = 0; i < half; ++i) {
      double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / denom);
      double a = static_cast<double>(t[n]) * f;
      e(n, i) = static_cast<T>(std::sin(a));
      e(n, half + i) = static_cast<T>(std::cos(a));
    }
  return e;
}

// Adam ------------------------------------------------------------------------

template <typename T>
struct Adam {
  struct Moments {
    Tensor<T> m, v;
  };

  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::map<std::string, Moments> state;

  Adam() = default;
  Adam(double lr_, double b1 = 0.9, double b2 = 0.999, double eps_ = 1e-8)
      : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {}

  void step(ParamStore<T>& store) {
    ++t;
    T c1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
    T c2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
    for (auto& [name, e] : store.entries) {
      auto it = state.find(name);
      if (it == state.end())
        it = state.emplace(name, Moments{Tensor<T>::zeros(e.value.shape()),
                                         Tensor<T>::zeros(e.value.shape())})
                 .first;
      Tensor<T>& m = it->second.m;
      Tensor<T>& v = it->second.v;
      for (std::size_t i = 0; i < e.value.numel(); ++i) {
        T g = e.grad[i];
        m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1 - beta1) * g;
        v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1 - beta2) * g * g;
        T mh = m[i] / c1;
        T vh = v[i] / c2;
        e.value[i] -= static_cast<T>(lr) * mh / (std::sqrt(vh) + static_cast<T>(eps));
      }
    }
  }
};

}  // namespace dx2ct::nn
