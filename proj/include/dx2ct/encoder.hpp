#pragma once

// Multi-scale X-ray feature extractor: a small conv stack producing L maps at
// 1/4, 1/8, ..., 1/2^(L+1) of the input, mirroring the ResNet-50 tap layout.
// PA and Lat share this network's parameters.

#include <string>
#include <vector>

#include "dx2ct/nn.hpp"

namespace dx2ct::model {

using ad::Act;
using ad::Tape;
using ad::Var;
using nn::ParamStore;

// Largest divisor of c that is <= 8, so toy channel counts stay valid.
inline std::size_t norm_groups(std::size_t c) {
  for (std::size_t g = std::min<std::size_t>(8, c); g > 1; --g)
    if (c % g == 0) return g;
  return 1;
}

struct EncoderConfig {
  std::size_t levels = 3;
  std::vector<std::size_t> channels;  // C_l per level; default base << l
  std::size_t base_channels = 64;
  Act act = Act::silu;

  std::vector<std::size_t> channel_plan() const {
    if (!channels.empty()) {
      require_valid(channels.size() == levels,
                    "encoder: channel plan must list one entry per level");
      return channels;
    }
    std::vector<std::size_t> plan(levels);
    for (std::size_t l = 0; l < levels; ++l) plan[l] = base_channels << l;
    return plan;
  }
};

template <typename T>
struct Encoder {
  EncoderConfig cfg;
  std::vector<std::size_t> plan;
  nn::Conv2d<T> stem;
  nn::GroupNorm<T> stem_norm;
  // per level: strided conv, norm, same-res conv, norm
  std::vector<nn::Conv2d<T>> down, refine;
  std::vector<nn::GroupNorm<T>> down_norm, refine_norm;

  Encoder() = default;
  Encoder(ParamStore<T>& store, const std::string& prefix, const EncoderConfig& c)
      : cfg(c), plan(c.channel_plan()) {
    require_valid(cfg.levels >= 1, "encoder: need at least one level");
    for (std::size_t ch : plan) require_valid(ch >= 1, "encoder: channels >= 1");
    stem = nn::Conv2d<T>(store, prefix + ".stem", 1, plan[0], 3, 2, 1);
    stem_norm = nn::GroupNorm<T>(store, prefix + ".stem_n", plan[0],
                                 norm_groups(plan[0]));
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      std::size_t cin = l == 0 ? plan[0] : plan[l - 1];
      std::string sp = prefix + ".s" + std::to_string(l);
      down.emplace_back(store, sp + ".down", cin, plan[l], 3, 2, 1);
      down_norm.emplace_back(store, sp + ".down_n", plan[l], norm_groups(plan[l]));
      refine.emplace_back(store, sp + ".conv", plan[l], plan[l], 3, 1, 1);
      refine_norm.emplace_back(store, sp + ".conv_n", plan[l], norm_groups(plan[l]));
    }
  }

  // x: (N, 1, H, W) with H, W divisible by 2^(levels+1).
  std::vector<Var<T>> operator()(Tape<T>& tape, Var<T> x) const {
    require_valid(x.rank() == 4 && x.dim(1) == 1, "encoder: input must be (N,1,H,W)");
    std::size_t div = std::size_t(1) << (cfg.levels + 1);
    require_valid(x.dim(2) % div == 0 && x.dim(3) % div == 0,
                  "encoder: spatial size " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)) + " not divisible by " +
                      std::to_string(div));
    Var<T> h = ad::activation(stem_norm(tape, stem(tape, x)), cfg.act);
    std::vector<Var<T>> levels;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      h = ad::activation(down_norm[l](tape, down[l](tape, h)), cfg.act);
      h = ad::activation(refine_norm[l](tape, refine[l](tape, h)), cfg.act);
      levels.push_back(h);
    }
    return levels;
  }
};

}  // namespace dx2ct::model
