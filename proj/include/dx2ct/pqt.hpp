#pragma once

// 3D positional query transformer: per feature scale, a stack of B pre-norm
// multi-head cross-attention blocks. Queries are the CT positional embeddings
// (width C_P, kept through the residual stream); keys/values come from
// position-augmented X-ray feature tokens (width C_l, projected per block).

#include <string>
#include <vector>

#include "dx2ct/nn.hpp"

namespace dx2ct::model {

struct PqtConfig {
  std::size_t blocks = 12;
  std::size_t heads = 4;
  std::size_t d_attn = 0;  // 0: use C_P
  std::size_t cp = 64;
  std::size_t mlp_mult = 4;
  ad::Act act = ad::Act::silu;

  std::size_t attn_width() const { return d_attn == 0 ? cp : d_attn; }
};

// f and q per view at one level, each (1, C_l, H_l, W_l) -> ((views)·H_l·W_l, C_l)
// token matrix, PA rows first.
template <typename T>
ad::Var<T> assemble_kv(const std::vector<ad::Var<T>>& feats,
                       const std::vector<ad::Var<T>>& pes) {
  require_valid(!feats.empty() && feats.size() == pes.size(),
                "assemble_kv: need matching feature / PE views");
  std::vector<ad::Var<T>> per_view;
  for (std::size_t v = 0; v < feats.size(); ++v) {
    require_valid(feats[v].shape() == pes[v].shape(),
                  "assemble_kv: feature and PE shapes differ at view " +
                      std::to_string(v));
    ad::Var<T> sum = ad::add(feats[v], pes[v]);
    std::size_t hw = sum.dim(2) * sum.dim(3), c = sum.dim(1);
    per_view.push_back(ad::reshape(ad::nchw_to_tokens(sum), {hw, c}));
  }
  return ad::concat_rows(per_view);
}

template <typename T>
struct PqtBlock {
  nn::LayerNorm<T> ln_q, ln_kv, ln_mlp;
  nn::Linear<T> wq, wk, wv, wo, fc0, fc1;
  std::size_t heads = 1, d = 1;
  ad::Act act = ad::Act::silu;

  PqtBlock() = default;
  PqtBlock(nn::ParamStore<T>& store, const std::string& prefix, std::size_t cp,
           std::size_t cl, const PqtConfig& cfg)
      : ln_q(store, prefix + ".ln_q", cp),
        ln_kv(store, prefix + ".ln_kv", cl),
        ln_mlp(store, prefix + ".ln_mlp", cp),
        wq(store, prefix + ".wq", cp, cfg.attn_width()),
        wk(store, prefix + ".wk", cl, cfg.attn_width()),
        wv(store, prefix + ".wv", cl, cfg.attn_width()),
        wo(store, prefix + ".wo", cfg.attn_width(), cp),
        fc0(store, prefix + ".fc0", cp, cfg.mlp_mult * cp),
        fc1(store, prefix + ".fc1", cfg.mlp_mult * cp, cp),
        heads(cfg.heads), d(cfg.attn_width()), act(cfg.act) {
    require_valid(heads >= 1 && d % heads == 0,
                  "pqt: attention width " + std::to_string(d) +
                      " must be divisible by heads " + std::to_string(heads));
  }

  // x: (Tq, C_P) queries; kv: (Tkv, C_l)
  ad::Var<T> operator()(ad::Tape<T>& tape, ad::Var<T> x, ad::Var<T> kv) const {
    ad::Var<T> q = wq(tape, ln_q(tape, x));
    ad::Var<T> kvn = ln_kv(tape, kv);
    ad::Var<T> k = wk(tape, kvn);
    ad::Var<T> v = wv(tape, kvn);
    std::size_t hd = d / heads;
    T scl = static_cast<T>(1.0 / std::sqrt(double(hd)));
    std::vector<ad::Var<T>> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
      ad::Var<T> qh = ad::narrow_last(q, h * hd, hd);
      ad::Var<T> kh = ad::narrow_last(k, h * hd, hd);
      ad::Var<T> vh = ad::narrow_last(v, h * hd, hd);
      ad::Var<T> scores = ad::scale(ad::matmul(qh, kh, false, true), scl);
      head_out.push_back(ad::matmul(ad::softmax(scores), vh));
    }
    ad::Var<T> attn = wo(tape, heads == 1 ? head_out[0] : ad::concat_last(head_out));
    x = ad::add(x, attn);
    ad::Var<T> m = fc1(tape, ad::activation(fc0(tape, ln_mlp(tape, x)), act));
    return ad::add(x, m);
  }
};

template <typename T>
struct PqtLevel {
  std::vector<PqtBlock<T>> blocks;
  nn::LayerNorm<T> ln_out;
  std::size_t level = 0;

  PqtLevel() = default;
  PqtLevel(nn::ParamStore<T>& store, const std::string& prefix, std::size_t level_,
           std::size_t cl, const PqtConfig& cfg)
      : ln_out(store, prefix + ".ln_out", cfg.cp), level(level_) {
    require_valid(cfg.blocks >= 1, "pqt: need at least one block");
    for (std::size_t b = 0; b < cfg.blocks; ++b)
      blocks.emplace_back(store, prefix + ".b" + std::to_string(b), cfg.cp, cl,
                          cfg);
  }

  // p: (1, C_P, H_l, W_l) queries; kv: (Tkv, C_l). Returns (1, C_P, H_l, W_l).
  ad::Var<T> operator()(ad::Tape<T>& tape, ad::Var<T> p, ad::Var<T> kv) const {
    std::size_t hl = p.dim(2), wl = p.dim(3), cp = p.dim(1);
    ad::Var<T> x = ad::reshape(ad::nchw_to_tokens(p), {hl * wl, cp});
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      x = blocks[b](tape, x, kv);
      require_numeric(x.value().all_finite(),
                      "pqt level " + std::to_string(level) + " block " +
                          std::to_string(b) + ": non-finite activations");
    }
    x = ln_out(tape, x);
    return ad::tokens_to_nchw(ad::reshape(x, {std::size_t(1), hl * wl, cp}), hl, wl);
  }
};

// One transformer stack per level ("L 3DPQTs"), independent parameters.
template <typename T>
struct Pqt {
  PqtConfig cfg;
  std::vector<PqtLevel<T>> levels;

  Pqt() = default;
  Pqt(nn::ParamStore<T>& store, const std::string& prefix, const PqtConfig& c,
      const std::vector<std::size_t>& channel_plan)
      : cfg(c) {
    for (std::size_t l = 0; l < channel_plan.size(); ++l)
      levels.emplace_back(store, prefix + ".l" + std::to_string(l), l,
                          channel_plan[l], c);
  }

  // feats/pes: per level, per view. ct_pe: per level (1, C_P, H_l, W_l).
  std::vector<ad::Var<T>> operator()(
      ad::Tape<T>& tape, const std::vector<std::vector<ad::Var<T>>>& feats,
      const std::vector<std::vector<ad::Var<T>>>& xray_pes,
      const std::vector<ad::Var<T>>& ct_pe) const {
    require_valid(feats.size() == levels.size() && ct_pe.size() == levels.size() &&
                      xray_pes.size() == levels.size(),
                  "pqt: level count mismatch");
    std::vector<ad::Var<T>> out;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      ad::Var<T> kv = assemble_kv(feats[l], xray_pes[l]);
      out.push_back(levels[l](tape, ct_pe[l], kv));
    }
    return out;
  }
};

}  // namespace dx2ct::model
