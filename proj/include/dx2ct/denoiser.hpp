#pragma once

// Conditional 2D U-Net noise predictor. Conditions enter at every block whose
// resolution matches a condition level: either through SPADE (param-free group
// norm modulated by conv-predicted gamma/beta) or by channel concatenation.
// Condition level l (resolution H/2^(l+2), 0-based) taps U-Net level l+2.

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "dx2ct/nn.hpp"

namespace dx2ct::model {

enum class CondMode { spade, concat, plain };

inline std::size_t norm_groups_unet(std::size_t c) {
  for (std::size_t g = std::min<std::size_t>(8, c); g > 1; --g)
    if (c % g == 0) return g;
  return 1;
}

struct UNetConfig {
  std::size_t base = 64;
  std::vector<std::size_t> mults = {1, 1, 2, 3, 4};
  std::size_t temb_dim = 0;  // 0: 4 * base
  std::size_t spade_hidden = 64;
  CondMode mode = CondMode::spade;
  std::size_t cond_channels = 64;  // C_P
  std::size_t cond_levels = 3;     // number of tapped resolutions (L)
  ad::Act act = ad::Act::silu;

  std::size_t levels() const { return mults.size(); }
  std::size_t tdim() const { return temb_dim ? temb_dim : 4 * base; }
  // Tap at U-Net level i iff some condition level sits at its resolution.
  bool tapped(std::size_t i) const {
    return mode != CondMode::plain && i >= 2 && i - 2 < cond_levels;
  }
};

// y = GN(h) * (1 + gamma(c)) + beta(c); gamma/beta share a hidden conv and are
// zero at initialization, so a fresh SPADE is exactly the param-free GN. The
// 3x3 convs use edge padding so constant conditions modulate constantly.
template <typename T>
struct Spade {
  nn::Conv2d<T> shared, gamma_head, beta_head;
  std::size_t groups = 1;
  ad::Act act = ad::Act::silu;

  Spade() = default;
  Spade(nn::ParamStore<T>& store, const std::string& prefix, std::size_t cond_ch,
        std::size_t out_ch, std::size_t hidden, ad::Act act_)
      : shared(store, prefix + ".shared", cond_ch, hidden, 3, 1, 0),
        gamma_head(store, prefix + ".gamma", hidden, out_ch, 3, 1, 0,
                   /*zero_init=*/true),
        beta_head(store, prefix + ".beta", hidden, out_ch, 3, 1, 0,
                  /*zero_init=*/true),
        groups(norm_groups_unet(out_ch)), act(act_) {}

  ad::Var<T> operator()(ad::Tape<T>& tape, ad::Var<T> h, ad::Var<T> c) const {
    require_valid(h.dim(0) == c.dim(0) && h.dim(2) == c.dim(2) &&
                      h.dim(3) == c.dim(3),
                  "spade: condition spatial size " + shape_str(c.shape()) +
                      " does not match features " + shape_str(h.shape()));
    ad::Var<T> gn = ad::group_norm(h, groups);
    ad::Var<T> hid =
        ad::activation(shared(tape, ad::pad_edge2d(c, 1)), act);
    hid = ad::pad_edge2d(hid, 1);
    ad::Var<T> g = gamma_head(tape, hid);
    ad::Var<T> b = beta_head(tape, hid);
    return ad::add(ad::mul(gn, ad::add_scalar(g, T(1))), b);
  }
};

template <typename T>
struct ResBlock {
  std::size_t cin = 0, cout = 0;
  bool use_spade = false, need_skip = false;
  nn::GroupNorm<T> n1, n2;
  Spade<T> sp1, sp2;
  nn::Conv2d<T> conv1, conv2, skip;
  nn::Linear<T> temb_proj;
  ad::Act act = ad::Act::silu;

  ResBlock() = default;
  ResBlock(nn::ParamStore<T>& store, const std::string& prefix, std::size_t cin_,
           std::size_t cout_, const UNetConfig& cfg, bool spade_on)
      : cin(cin_), cout(cout_), use_spade(spade_on), need_skip(cin_ != cout_),
        conv1(store, prefix + ".conv1", cin_, cout_, 3, 1, 1),
        conv2(store, prefix + ".conv2", cout_, cout_, 3, 1, 1),
        temb_proj(store, prefix + ".temb", cfg.tdim(), cout_), act(cfg.act) {
    if (spade_on) {
      sp1 = Spade<T>(store, prefix + ".sp1", cfg.cond_channels, cin_,
                     cfg.spade_hidden, cfg.act);
      sp2 = Spade<T>(store, prefix + ".sp2", cfg.cond_channels, cout_,
                     cfg.spade_hidden, cfg.act);
    } else {
      n1 = nn::GroupNorm<T>(store, prefix + ".n1", cin_, norm_groups_unet(cin_));
      n2 = nn::GroupNorm<T>(store, prefix + ".n2", cout_, norm_groups_unet(cout_));
    }
    if (need_skip) skip = nn::Conv2d<T>(store, prefix + ".skip", cin_, cout_, 1, 1, 0);
  }

  ad::Var<T> operator()(ad::Tape<T>& tape, ad::Var<T> x, ad::Var<T> temb,
                        const ad::Var<T>* cond) const {
    require_valid(!use_spade || cond, "resblock: spade tap without a condition");
    ad::Var<T> h = use_spade ? sp1(tape, x, *cond) : n1(tape, x);
    h = conv1(tape, ad::activation(h, act));
    h = ad::add_nc(h, temb_proj(tape, ad::activation(temb, act)));
    h = use_spade ? sp2(tape, h, *cond) : n2(tape, h);
    h = conv2(tape, ad::activation(h, act));
    ad::Var<T> s = need_skip ? skip(tape, x) : x;
    return ad::add(h, s);
  }
};

template <typename T>
struct UNet {
  UNetConfig cfg;
  std::vector<std::size_t> ch;
  nn::Conv2d<T> conv_in, conv_out;
  nn::Linear<T> temb_l0, temb_l1;
  nn::GroupNorm<T> out_norm;
  std::vector<nn::Conv2d<T>> downs, ups;  // downs[i]: into level i+1; ups[i]: out of level i+1
  std::vector<ResBlock<T>> enc, dec;
  ResBlock<T> mid;

  UNet() = default;
  UNet(nn::ParamStore<T>& store, const std::string& prefix, const UNetConfig& c)
      : cfg(c) {
    require_valid(cfg.levels() >= 2, "unet: need at least two levels");
    require_valid(cfg.base >= 1, "unet: base channels >= 1");
    if (cfg.mode != CondMode::plain && cfg.cond_levels > 0)
      require_valid(cfg.cond_levels + 2 <= cfg.levels(),
                    "unet: " + std::to_string(cfg.cond_levels) +
                        " condition levels need at least " +
                        std::to_string(cfg.cond_levels + 2) + " U-Net levels");
    for (std::size_t m : cfg.mults) ch.push_back(cfg.base * m);

    temb_l0 = nn::Linear<T>(store, prefix + ".temb.l0", cfg.base, cfg.tdim());
    temb_l1 = nn::Linear<T>(store, prefix + ".temb.l1", cfg.tdim(), cfg.tdim());
    conv_in = nn::Conv2d<T>(store, prefix + ".conv_in", 1, ch[0], 3, 1, 1);

    const std::size_t L = cfg.levels();
    for (std::size_t i = 0; i < L; ++i) {
      std::string ep = prefix + ".enc" + std::to_string(i);
      std::size_t cin = i == 0 ? ch[0] : ch[i - 1];
      bool spade_on = cfg.mode == CondMode::spade && cfg.tapped(i);
      if (cfg.mode == CondMode::concat && cfg.tapped(i)) cin += cfg.cond_channels;
      enc.emplace_back(store, ep, cin, ch[i], cfg, spade_on);
      if (i + 1 < L)
        downs.emplace_back(store, prefix + ".down" + std::to_string(i + 1),
                           ch[i], ch[i], 3, 2, 1);
    }
    {
      bool spade_on = cfg.mode == CondMode::spade && cfg.tapped(L - 1);
      std::size_t cin = ch[L - 1];
      if (cfg.mode == CondMode::concat && cfg.tapped(L - 1))
        cin += cfg.cond_channels;
      mid = ResBlock<T>(store, prefix + ".mid", cin, ch[L - 1], cfg, spade_on);
    }
    for (std::size_t i = 0; i < L; ++i) {
      std::string dp = prefix + ".dec" + std::to_string(i);
      bool spade_on = cfg.mode == CondMode::spade && cfg.tapped(i);
      std::size_t cin = 2 * ch[i];
      if (cfg.mode == CondMode::concat && cfg.tapped(i)) cin += cfg.cond_channels;
      dec.emplace_back(store, dp, cin, ch[i], cfg, spade_on);
      if (i > 0)
        ups.emplace_back(store, prefix + ".up" + std::to_string(i), ch[i],
                         ch[i - 1], 3, 1, 1);
    }
    out_norm = nn::GroupNorm<T>(store, prefix + ".out_n", ch[0],
                                norm_groups_unet(ch[0]));
    conv_out = nn::Conv2d<T>(store, prefix + ".out_c", ch[0], 1, 3, 1, 1);
  }

  // x: (N,1,H,W); t: one timestep per item; conds: per condition level,
  // (N, C_P, H/2^(l+2), W/2^(l+2)).
  ad::Var<T> operator()(ad::Tape<T>& tape, ad::Var<T> x, const std::vector<int>& t,
                        const std::vector<ad::Var<T>>& conds) const {
    const std::size_t L = cfg.levels();
    require_valid(x.rank() == 4 && x.dim(1) == 1, "unet: input must be (N,1,H,W)");
    require_valid(x.dim(0) == t.size(), "unet: one timestep per batch item");
    std::size_t div = std::size_t(1) << (L - 1);
    require_valid(x.dim(2) % div == 0 && x.dim(3) % div == 0,
                  "unet: spatial size not divisible by " + std::to_string(div));
    std::size_t want_conds = cfg.mode == CondMode::plain ? 0 : cfg.cond_levels;
    require_valid(conds.size() >= want_conds,
                  "unet: missing condition level for a tap (" +
                      std::to_string(conds.size()) + " provided, " +
                      std::to_string(want_conds) + " taps)");

    ad::Var<T> temb = ad::constant(
        tape, nn::timestep_embedding<T>(t, cfg.base));
    temb = temb_l1(tape, ad::activation(temb_l0(tape, temb), cfg.act));

    auto cond_for = [&](std::size_t i) -> const ad::Var<T>* {
      return cfg.tapped(i) ? &conds[i - 2] : nullptr;
    };
    auto prep = [&](ad::Var<T> h, std::size_t i) {
      // concat mode: resize condition to the block's resolution and append
      if (cfg.mode == CondMode::concat && cfg.tapped(i)) {
        ad::Var<T> c = ad::bilinear_resize(conds[i - 2], h.dim(2), h.dim(3));
        return ad::concat_channels<T>({h, c});
      }
      return h;
    };

    ad::Var<T> h = conv_in(tape, x);
    std::vector<ad::Var<T>> skips;
    for (std::size_t i = 0; i < L; ++i) {
      if (i > 0) h = downs[i - 1](tape, h);
      const ad::Var<T>* cd = cfg.mode == CondMode::spade ? cond_for(i) : nullptr;
      h = enc[i](tape, prep(h, i), temb, cd);
      skips.push_back(h);
    }
    {
      const ad::Var<T>* cd =
          cfg.mode == CondMode::spade ? cond_for(L - 1) : nullptr;
      h = mid(tape, prep(h, L - 1), temb, cd);
    }
    for (std::size_t i = L; i-- > 0;) {
      h = ad::concat_channels<T>({h, skips[i]});
      const ad::Var<T>* cd = cfg.mode == CondMode::spade ? cond_for(i) : nullptr;
      h = dec[i](tape, prep(h, i), temb, cd);
      if (i > 0) h = ups[i - 1](tape, ad::upsample_nearest2(h));
    }
    h = conv_out(tape, ad::activation(out_norm(tape, h), cfg.act));
    return h;
  }
};

// No-3DPQT ablation: per level, concatenate each view's raw features and
// project 1x1 to C_P, yielding drop-in condition maps.
template <typename T>
struct UncondInputs {
  std::vector<nn::Conv2d<T>> proj;

  UncondInputs() = default;
  UncondInputs(nn::ParamStore<T>& store, const std::string& prefix,
               const std::vector<std::size_t>& channel_plan, std::size_t views,
               std::size_t cp) {
    require_valid(views >= 1, "uncond: need at least one view");
    for (std::size_t l = 0; l < channel_plan.size(); ++l)
      proj.emplace_back(store, prefix + ".l" + std::to_string(l),
                        views * channel_plan[l], cp, 1, 1, 0);
  }

  std::vector<ad::Var<T>> operator()(
      ad::Tape<T>& tape, const std::vector<std::vector<ad::Var<T>>>& feats,
      const std::vector<std::pair<std::size_t, std::size_t>>& level_sizes) const {
    require_valid(feats.size() == proj.size(), "uncond: level count mismatch");
    std::vector<ad::Var<T>> out;
    for (std::size_t l = 0; l < feats.size(); ++l) {
      std::vector<ad::Var<T>> views;
      for (ad::Var<T> f : feats[l])
        views.push_back(
            ad::bilinear_resize(f, level_sizes[l].first, level_sizes[l].second));
      ad::Var<T> cat = views.size() == 1 ? views[0] : ad::concat_channels(views);
      out.push_back(proj[l](tape, cat));
    }
    return out;
  }
};

}  // namespace dx2ct::model
