#pragma once

// Reverse-mode tape over Tensor<T>. Every op appends a node holding the
// forward value plus a closure that scatters the node's gradient into its
// inputs. backward() walks nodes in reverse creation order, which is a valid
// topological order of the DAG.

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dx2ct/ops.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::ad {

using ops::Act;

template <typename T>
struct TapeNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated only when requires_grad
  std::function<void()> pull;
  bool requires_grad = false;
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  std::size_t make_node(Tensor<T> value, bool requires_grad) {
    requires_grad = requires_grad && recording_;
    TapeNode<T> node;
    if (requires_grad) node.grad = Tensor<T>::zeros(value.shape());
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  TapeNode<T>& node(std::size_t id) { return nodes_[id]; }
  const TapeNode<T>& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Param leaves are created once per (tape, name); modules look them up here.
  std::size_t* find_param(const std::string& name) {
    auto it = param_ids_.find(name);
    return it == param_ids_.end() ? nullptr : &it->second;
  }
  void remember_param(const std::string& name, std::size_t id) {
    param_ids_.emplace(name, id);
  }
  const std::unordered_map<std::string, std::size_t>& param_ids() const {
    return param_ids_;
  }

  void backward(std::size_t loss_id) {
    require_valid(loss_id < nodes_.size(), "backward: bad node id");
    TapeNode<T>& loss = nodes_[loss_id];
    require_valid(loss.requires_grad, "backward: loss does not require grad");
    require_valid(loss.value.numel() == 1, "backward: loss must be scalar");
    loss.grad[0] = T(1);
    for (std::size_t i = loss_id + 1; i-- > 0;)
      if (nodes_[i].pull) nodes_[i].pull();
  }

 private:
  std::vector<TapeNode<T>> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool recording_;
};

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->node(id).value; }
  const Tensor<T>& grad() const { return tape->node(id).grad; }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const { return tape->node(id).requires_grad; }
};

template <typename T>
Var<T> constant(Tape<T>& tape, Tensor<T> v) {
  return {&tape, tape.make_node(std::move(v), false)};
}

template <typename T>
Var<T> leaf(Tape<T>& tape, Tensor<T> v, bool requires_grad = true) {
  return {&tape, tape.make_node(std::move(v), requires_grad)};
}

namespace detail {

// Allocates the output node and registers the pull closure when any input
// needs gradients. The closure receives (dy, tape).
template <typename T, typename Pull>
Var<T> unary_like(Tape<T>& tape, Tensor<T> out, std::initializer_list<Var<T>> ins,
                  Pull&& pull) {
  bool need = false;
  for (const Var<T>& v : ins) need = need || v.requires_grad();
  std::size_t id = tape.make_node(std::move(out), need);
  if (need) {
    Tape<T>* tp = &tape;
    tape.node(id).pull = [tp, id, pull = std::forward<Pull>(pull)]() {
      pull(tp->node(id).grad, *tp);
    };
  }
  return {&tape, id};
}

template <typename T>
Tensor<T>* grad_of(Tape<T>& tape, const Var<T>& v) {
  return tape.node(v.id).requires_grad ? &tape.node(v.id).grad : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(
      tape, ops::add(a.value(), b.value()), {a, b},
      [a, b](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* ga = detail::grad_of(tp, a)) ops::axpy(T(1), dy, *ga);
        if (auto* gb = detail::grad_of(tp, b)) ops::axpy(T(1), dy, *gb);
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(
      tape, ops::sub(a.value(), b.value()), {a, b},
      [a, b](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* ga = detail::grad_of(tp, a)) ops::axpy(T(1), dy, *ga);
        if (auto* gb = detail::grad_of(tp, b)) ops::axpy(T(-1), dy, *gb);
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(
      tape, ops::mul(a.value(), b.value()), {a, b},
      [a, b](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* ga = detail::grad_of(tp, a))
          for (std::size_t i = 0; i < dy.numel(); ++i)
            (*ga)[i] += dy[i] * b.value()[i];
        if (auto* gb = detail::grad_of(tp, b))
          for (std::size_t i = 0; i < dy.numel(); ++i)
            (*gb)[i] += dy[i] * a.value()[i];
      });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(tape, ops::scale(a.value(), s), {a},
                            [a, s](const Tensor<T>& dy, Tape<T>& tp) {
                              if (auto* ga = detail::grad_of(tp, a))
                                ops::axpy(s, dy, *ga);
                            });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(tape, ops::add_scalar(a.value(), s), {a},
                            [a](const Tensor<T>& dy, Tape<T>& tp) {
                              if (auto* ga = detail::grad_of(tp, a))
                                ops::axpy(T(1), dy, *ga);
                            });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(tape, ops::sum_all(a.value()), {a},
                            [a](const Tensor<T>& dy, Tape<T>& tp) {
                              if (auto* ga = detail::grad_of(tp, a)) {
                                T g = dy[0];
                                for (std::size_t i = 0; i < ga->numel(); ++i)
                                  (*ga)[i] += g;
                              }
                            });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(tape, ops::mean_all(a.value()), {a},
                            [a](const Tensor<T>& dy, Tape<T>& tp) {
                              if (auto* ga = detail::grad_of(tp, a)) {
                                T g = dy[0] / static_cast<T>(ga->numel());
                                for (std::size_t i = 0; i < ga->numel(); ++i)
                                  (*ga)[i] += g;
                              }
                            });
}

template <typename T>
Var<T> mse(Var<T> pred, Var<T> target) {
  Var<T> d = sub(pred, target);
  return mean_all(mul(d, d));
}

template <typename T>
Var<T> activation(Var<T> x, Act act) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::activation(x.value(), act), {x},
      [x, act](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::activation_backward(x.value(), dy, act, *gx);
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value().reshaped(s);
  return detail::unary_like(tape, std::move(out), {x},
                            [x](const Tensor<T>& dy, Tape<T>& tp) {
                              if (auto* gx = detail::grad_of(tp, x))
                                for (std::size_t i = 0; i < dy.numel(); ++i)
                                  (*gx)[i] += dy[i];
                            });
}

// ---------------------------------------------------------------------------
// Matmul / linear pieces
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  Tape<T>& tape = *a.tape;
  return detail::unary_like(
      tape, ops::matmul(a.value(), b.value(), trans_a, trans_b), {a, b},
      [a, b, trans_a, trans_b](const Tensor<T>& dy, Tape<T>& tp) {
        const Tensor<T>& A = a.value();
        const Tensor<T>& B = b.value();
        std::size_t m = trans_a ? A.dim(1) : A.dim(0);
        std::size_t k = trans_a ? A.dim(0) : A.dim(1);
        std::size_t n = trans_b ? B.dim(0) : B.dim(1);
        Tensor<T>* ga = detail::grad_of(tp, a);
        Tensor<T>* gb = detail::grad_of(tp, b);
        if (!trans_a && !trans_b) {
          if (ga) ops::gemm<T>(false, true, m, k, n, T(1), dy.data(), B.data(), T(1), ga->data());
          if (gb) ops::gemm<T>(true, false, k, n, m, T(1), A.data(), dy.data(), T(1), gb->data());
        } else if (trans_a && !trans_b) {
          if (ga) ops::gemm<T>(false, true, k, m, n, T(1), B.data(), dy.data(), T(1), ga->data());
          if (gb) ops::gemm<T>(false, false, k, n, m, T(1), A.data(), dy.data(), T(1), gb->data());
        } else if (!trans_a && trans_b) {
          if (ga) ops::gemm<T>(false, false, m, k, n, T(1), dy.data(), B.data(), T(1), ga->data());
          if (gb) ops::gemm<T>(true, false, n, k, m, T(1), dy.data(), A.data(), T(1), gb->data());
        } else {
          if (ga) ops::gemm<T>(true, true, k, m, n, T(1), B.data(), dy.data(), T(1), ga->data());
          if (gb) ops::gemm<T>(true, true, n, k, m, T(1), dy.data(), A.data(), T(1), gb->data());
        }
      });
}

// x (..., C) + b (C)
template <typename T>
Var<T> add_bias_last(Var<T> x, Var<T> b) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::add_bias_last(x.value(), b.value()), {x, b},
      [x, b](const Tensor<T>& dy, Tape<T>& tp) {
        std::size_t c = b.value().numel();
        std::size_t rows = dy.numel() / c;
        if (auto* gx = detail::grad_of(tp, x)) ops::axpy(T(1), dy, *gx);
        if (auto* gb = detail::grad_of(tp, b))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i) (*gb)[i] += dy[r * c + i];
      });
}

// x (..., C) * g (C), broadcast over leading dims
template <typename T>
Var<T> scale_last(Var<T> x, Var<T> g) {
  Tape<T>& tape = *x.tape;
  std::size_t c = g.value().numel();
  require_valid(x.dim(x.rank() - 1) == c, "scale_last: size mismatch");
  Tensor<T> out(x.shape());
  std::size_t rows = out.numel() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < c; ++i)
      out[r * c + i] = x.value()[r * c + i] * g.value()[i];
  return detail::unary_like(
      tape, std::move(out), {x, g},
      [x, g, c, rows](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i)
              (*gx)[r * c + i] += dy[r * c + i] * g.value()[i];
        if (auto* gg = detail::grad_of(tp, g))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i)
              (*gg)[i] += dy[r * c + i] * x.value()[r * c + i];
      });
}

// x (N,C,H,W) + v (N,C)
template <typename T>
Var<T> add_nc(Var<T> x, Var<T> v) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::add_nc(x.value(), v.value()), {x, v},
      [x, v](const Tensor<T>& dy, Tape<T>& tp) {
        std::size_t hw = x.dim(2) * x.dim(3);
        std::size_t nc = x.dim(0) * x.dim(1);
        if (auto* gx = detail::grad_of(tp, x)) ops::axpy(T(1), dy, *gx);
        if (auto* gv = detail::grad_of(tp, v))
          for (std::size_t i = 0; i < nc; ++i) {
            T s = T(0);
            const T* p = dy.data() + i * hw;
            for (std::size_t j = 0; j < hw; ++j) s += p[j];
            (*gv)[i] += s;
          }
      });
}

// x (N,C,H,W) * gamma (C) + beta (C)
template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::channel_affine(x.value(), gamma.value(), beta.value()),
      {x, gamma, beta}, [x, gamma, beta](const Tensor<T>& dy, Tape<T>& tp) {
        std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T>* gx = detail::grad_of(tp, x);
        Tensor<T>* gg = detail::grad_of(tp, gamma);
        Tensor<T>* gb = detail::grad_of(tp, beta);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t ci = 0; ci < c; ++ci) {
            std::size_t off = (ni * c + ci) * hw;
            T gsum = T(0), xsum = T(0);
            for (std::size_t i = 0; i < hw; ++i) {
              T d = dy[off + i];
              if (gx) (*gx)[off + i] += d * gamma.value()[ci];
              gsum += d;
              xsum += d * x.value()[off + i];
            }
            if (gg) (*gg)[ci] += xsum;
            if (gb) (*gb)[ci] += gsum;
          }
      });
}

// ---------------------------------------------------------------------------
// Convolution / pooling / resampling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::conv2d(x.value(), w.value(), &b.value(), stride, pad), {x, w, b},
      [x, w, b, stride, pad](const Tensor<T>& dy, Tape<T>& tp) {
        ops::conv2d_backward(x.value(), w.value(), dy, stride, pad,
                             detail::grad_of(tp, x), detail::grad_of(tp, w),
                             detail::grad_of(tp, b));
      });
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, std::size_t kh, std::size_t kw) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::avg_pool2d(x.value(), kh, kw), {x},
      [x, kh, kw](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::avg_pool2d_backward(x.value().shape(), dy, kh, kw, *gx);
      });
}

template <typename T>
Var<T> upsample_nearest2(Var<T> x) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::upsample_nearest2(x.value()), {x},
      [x](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::upsample_nearest2_backward(x.value().shape(), dy, *gx);
      });
}

template <typename T>
Var<T> pad_edge2d(Var<T> x, std::size_t p) {
  Tape<T>& tape = *x.tape;
  if (p == 0) return x;
  return detail::unary_like(
      tape, ops::pad_edge2d(x.value(), p), {x},
      [x, p](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::pad_edge2d_backward(x.value().shape(), p, dy, *gx);
      });
}

template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t ho, std::size_t wo) {
  Tape<T>& tape = *x.tape;
  if (x.dim(2) == ho && x.dim(3) == wo) return x;
  return detail::unary_like(
      tape, ops::bilinear_resize(x.value(), ho, wo), {x},
      [x](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::bilinear_resize_backward(x.value().shape(), dy, *gx);
      });
}

// ---------------------------------------------------------------------------
// Normalization / softmax
// ---------------------------------------------------------------------------

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, T eps = T(1e-5)) {
  Tape<T>& tape = *x.tape;
  ops::NormStats<T> stats;
  Tensor<T> out = ops::group_norm(x.value(), groups, eps, &stats);
  return detail::unary_like(
      tape, std::move(out), {x},
      [x, groups, stats = std::move(stats)](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::group_norm_backward(x.value(), stats, dy, groups, *gx);
      });
}

template <typename T>
Var<T> layer_norm(Var<T> x, T eps = T(1e-5)) {
  Tape<T>& tape = *x.tape;
  ops::NormStats<T> stats;
  Tensor<T> out = ops::layer_norm(x.value(), eps, &stats);
  return detail::unary_like(
      tape, std::move(out), {x},
      [x, stats = std::move(stats)](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::layer_norm_backward(x.value(), stats, dy, *gx);
      });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  Tape<T>& tape = *x.tape;
  std::size_t id;
  {
    Tensor<T> out = ops::softmax(x.value());
    Var<T> y = detail::unary_like(tape, std::move(out), {x},
                                  [](const Tensor<T>&, Tape<T>&) {});
    id = y.id;
  }
  // Closure reads the saved softmax output from its own node.
  if (tape.node(id).requires_grad) {
    Tape<T>* tp = &tape;
    std::size_t xid = x.id;
    tape.node(id).pull = [tp, id, xid]() {
      if (tp->node(xid).requires_grad)
        ops::softmax_backward(tp->node(id).value, tp->node(id).grad,
                              tp->node(xid).grad);
    };
  }
  return {&tape, id};
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> nchw_to_tokens(Var<T> x) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::nchw_to_tokens(x.value()), {x},
      [x](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x)) {
          Tensor<T> g = ops::tokens_to_nchw(dy, x.dim(2), x.dim(3));
          ops::axpy(T(1), g, *gx);
        }
      });
}

template <typename T>
Var<T> tokens_to_nchw(Var<T> x, std::size_t h, std::size_t w) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::tokens_to_nchw(x.value(), h, w), {x},
      [x](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x)) {
          Tensor<T> g = ops::nchw_to_tokens(dy);
          ops::axpy(T(1), g, *gx);
        }
      });
}

template <typename T>
Var<T> narrow_last(Var<T> x, std::size_t begin, std::size_t len) {
  Tape<T>& tape = *x.tape;
  return detail::unary_like(
      tape, ops::narrow_last(x.value(), begin, len), {x},
      [x, begin](const Tensor<T>& dy, Tape<T>& tp) {
        if (auto* gx = detail::grad_of(tp, x))
          ops::narrow_last_backward(x.value().shape(), dy, begin, *gx);
      });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require_valid(!parts.empty(), "concat_rows: no inputs");
  Tape<T>& tape = *parts[0].tape;
  std::vector<const Tensor<T>*> vals;
  bool need = false;
  for (const Var<T>& p : parts) {
    vals.push_back(&p.value());
    need = need || p.requires_grad();
  }
  Tensor<T> out = ops::concat_rows(std::span<const Tensor<T>* const>(vals));
  std::size_t id = tape.make_node(std::move(out), need);
  if (need && tape.recording()) {
    Tape<T>* tp = &tape;
    tape.node(id).pull = [tp, id, parts]() {
      const Tensor<T>& dy = tp->node(id).grad;
      std::size_t off = 0;
      for (const Var<T>& p : parts) {
        std::size_t n = p.value().numel();
        if (auto* gp = detail::grad_of(*tp, p))
          for (std::size_t i = 0; i < n; ++i) (*gp)[i] += dy[off + i];
        off += n;
      }
    };
  }
  return {&tape, id};
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require_valid(!parts.empty(), "concat_channels: no inputs");
  Tape<T>& tape = *parts[0].tape;
  std::vector<const Tensor<T>*> vals;
  bool need = false;
  for (const Var<T>& p : parts) {
    vals.push_back(&p.value());
    need = need || p.requires_grad();
  }
  Tensor<T> out = ops::concat_channels(std::span<const Tensor<T>* const>(vals));
  Shape out_shape = out.shape();
  std::size_t id = tape.make_node(std::move(out), need);
  if (need && tape.recording()) {
    Tape<T>* tp = &tape;
    tape.node(id).pull = [tp, id, parts, out_shape]() {
      const Tensor<T>& dy = tp->node(id).grad;
      std::size_t n = out_shape[0], ctot = out_shape[1],
                  hw = out_shape[2] * out_shape[3];
      for (std::size_t ni = 0; ni < n; ++ni) {
        std::size_t coff = 0;
        for (const Var<T>& p : parts) {
          std::size_t pc = p.dim(1);
          if (auto* gp = detail::grad_of(*tp, p)) {
            const T* src = dy.data() + (ni * ctot + coff) * hw;
            T* dst = gp->data() + ni * pc * hw;
            for (std::size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
          }
          coff += pc;
        }
      }
    };
  }
  return {&tape, id};
}

// Concatenate along the last dimension; leading dims must match.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  require_valid(!parts.empty(), "concat_last: no inputs");
  Tape<T>& tape = *parts[0].tape;
  std::size_t lead = parts[0].value().numel() / parts[0].dim(parts[0].rank() - 1);
  std::size_t ctot = 0;
  bool need = false;
  for (const Var<T>& p : parts) {
    std::size_t c = p.dim(p.rank() - 1);
    require_valid(p.value().numel() / c == lead,
                  "concat_last: leading dims must match");
    ctot += c;
    need = need || p.requires_grad();
  }
  Shape s = parts[0].shape();
  s.back() = ctot;
  Tensor<T> out(std::move(s));
  {
    std::size_t coff = 0;
    for (const Var<T>& p : parts) {
      std::size_t c = p.dim(p.rank() - 1);
      for (std::size_t r = 0; r < lead; ++r)
        std::copy(p.value().data() + r * c, p.value().data() + (r + 1) * c,
                  out.data() + r * ctot + coff);
      coff += c;
    }
  }
  std::size_t id = tape.make_node(std::move(out), need);
  if (need && tape.recording()) {
    Tape<T>* tp = &tape;
    tape.node(id).pull = [tp, id, parts, lead, ctot]() {
      const Tensor<T>& dy = tp->node(id).grad;
      std::size_t coff = 0;
      for (const Var<T>& p : parts) {
        std::size_t c = p.dim(p.rank() - 1);
        if (auto* gp = detail::grad_of(*tp, p))
          for (std::size_t r = 0; r < lead; ++r)
            for (std::size_t i = 0; i < c; ++i)
              (*gp)[r * c + i] += dy[r * ctot + coff + i];
        coff += c;
      }
    };
  }
  return {&tape, id};
}

}  // namespace dx2ct::ad
