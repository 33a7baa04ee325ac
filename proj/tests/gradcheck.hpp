#pragma once

// Central-difference gradient checking against the tape, at double precision.

#include <functional>
#include <map>
#include <vector>

#include "dx2ct/nn.hpp"
#include "dx2ct/rng.hpp"

namespace dx2ct::testing {

// make_loss builds a scalar Var from leaf Vars created over `inputs`.
// Returns the worst relative error between analytic and central-difference
// gradients across every element of every input.
template <typename MakeLoss>
double gradcheck(std::vector<Tensor<double>> inputs, MakeLoss&& make_loss,
                 double h = 1e-5) {
  auto eval = [&](bool record, std::vector<Tensor<double>>* grads) {
    ad::Tape<double> tape(record);
    std::vector<ad::Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(ad::leaf(tape, x, record));
    ad::Var<double> loss = make_loss(tape, vars);
    double f = loss.value()[0];
    if (record) {
      tape.backward(loss.id);
      grads->clear();
      for (const auto& v : vars) grads->push_back(v.grad());
    }
    return f;
  };

  std::vector<Tensor<double>> grads;
  eval(true, &grads);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      double keep = inputs[i][j];
      inputs[i][j] = keep + h;
      double fp = eval(false, nullptr);
      inputs[i][j] = keep - h;
      double fm = eval(false, nullptr);
      inputs[i][j] = keep;
      double fd = (fp - fm) / (2.0 * h);
      double g = grads[i][j];
      double denom = std::max({1e-6, std::abs(fd), std::abs(g)});
      worst = std::max(worst, std::abs(fd - g) / denom);
    }
  }
  return worst;
}

// FD-checks d(loss)/d(param) for up to `per_name` sampled elements of every
// store entry whose name passes `filter`. make_loss rebuilds the forward pass
// from the store on the given tape. Returns the worst relative error. The
// step and denominator floor are sized so that (f+ - f-) cancellation noise on
// O(10) losses stays well below the comparison floor.
template <typename MakeLoss, typename Filter>
double param_gradcheck(nn::ParamStore<double>& store, MakeLoss&& make_loss,
                       Filter&& filter, std::size_t per_name, std::uint64_t seed,
                       double h = 1e-4) {
  auto eval = [&](bool record) {
    ad::Tape<double> tape(record);
    ad::Var<double> loss = make_loss(tape);
    double f = loss.value()[0];
    if (record) {
      tape.backward(loss.id);
      nn::flush_grads(tape, store);
    }
    return f;
  };

  store.zero_grads();
  eval(true);
  std::map<std::string, Tensor<double>> analytic;
  for (const auto& [name, e] : store.entries) analytic.emplace(name, e.grad);

  Rng rng(seed);
  double worst = 0.0;
  for (auto& [name, e] : store.entries) {
    if (!filter(name)) continue;
    std::size_t n = e.value.numel();
    for (std::size_t s = 0; s < std::min(per_name, n); ++s) {
      std::size_t j = n <= per_name ? s : rng.uniform_int(0, n - 1);
      double keep = e.value[j];
      e.value[j] = keep + h;
      double fp = eval(false);
      e.value[j] = keep - h;
      double fm = eval(false);
      e.value[j] = keep;
      double fd = (fp - fm) / (2.0 * h);
      double g = analytic.at(name)[j];
      double denom = std::max({1e-5, std::abs(fd), std::abs(g)});
      worst = std::max(worst, std::abs(fd - g) / denom);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Scalar readout with fixed random weights so every output element matters.
template <typename T>
ad::Var<T> weighted_readout(ad::Tape<T>& tape, ad::Var<T> y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> w(y.shape());
  for (std::size_t i = 0; i < w.numel(); ++i)
    w[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return ad::sum_all(ad::mul(y, ad::constant(tape, std::move(w))));
}

}  // namespace dx2ct::testing
