#pragma once

// Position-encoding networks. P turns a CT slice coordinate grid into L
// pooled embeddings of width C_P; Q does the same for X-ray planes but adapts
// each level to the feature pyramid's channel count through per-level linear
// heads. Both share the parameter-free Fourier encoder.

#include <string>
#include <vector>

#include "dx2ct/geometry.hpp"
#include "dx2ct/nn.hpp"

namespace dx2ct::model {

// (..., 3) coords in [-1,1] -> (..., 3*2F): per component, interleaved
// (sin(2^k pi x), cos(2^k pi x)) for k = 0..F-1, components concatenated.
template <typename T>
Tensor<T> fourier_encode(const Tensor<T>& coords, std::size_t num_freqs) {
  require_valid(num_freqs >= 1, "fourier: need F >= 1");
  require_valid(coords.rank() >= 1 && coords.dim(coords.rank() - 1) == 3,
                "fourier: last dim must be 3");
  std::size_t pts = coords.numel() / 3;
  Shape out_shape = coords.shape();
  out_shape.back() = 6 * num_freqs;
  Tensor<T> out(out_shape);
  for (std::size_t p = 0; p < pts; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      T x = coords[p * 3 + c];
      for (std::size_t k = 0; k < num_freqs; ++k) {
        T a = static_cast<T>(std::pow(2.0, double(k)) * M_PI) * x;
        out[p * 6 * num_freqs + c * 2 * num_freqs + 2 * k] = std::sin(a);
        out[p * 6 * num_freqs + c * 2 * num_freqs + 2 * k + 1] = std::cos(a);
      }
    }
  return out;
}

struct PosEncConfig {
  std::size_t num_freqs = 6;
  std::size_t cp = 64;  // embedding width C_P
  ad::Act act = ad::Act::silu;
};

namespace detail {

// encode -> trunk -> (1, C_P, H, W)
template <typename T>
ad::Var<T> embed_grid(ad::Tape<T>& tape, const nn::Mlp<T>& trunk,
                      const Tensor<T>& grid, const PosEncConfig& cfg) {
  require_valid(grid.rank() == 3 && grid.dim(2) == 3,
                "posenc: grid must be (H, W, 3)");
  std::size_t H = grid.dim(0), W = grid.dim(1);
  Tensor<T> enc = fourier_encode(grid, cfg.num_freqs).reshaped({H * W, 6 * cfg.num_freqs});
  ad::Var<T> tokens = trunk(tape, ad::constant(tape, std::move(enc)));
  return ad::tokens_to_nchw(ad::reshape(tokens, {std::size_t(1), H * W, cfg.cp}), H, W);
}

template <typename T>
ad::Var<T> pool_to(ad::Var<T> full, std::size_t hl, std::size_t wl) {
  std::size_t H = full.dim(2), W = full.dim(3);
  require_valid(hl >= 1 && wl >= 1 && H % hl == 0 && W % wl == 0,
                "posenc: level size " + std::to_string(hl) + "x" +
                    std::to_string(wl) + " must divide grid " + std::to_string(H) +
                    "x" + std::to_string(W));
  return ad::avg_pool2d(full, H / hl, W / wl);
}

}  // namespace detail

// Network P: multi-scale CT positional embeddings.
template <typename T>
struct CtPosEnc {
  PosEncConfig cfg;
  nn::Mlp<T> trunk;

  CtPosEnc() = default;
  CtPosEnc(nn::ParamStore<T>& store, const std::string& prefix,
           const PosEncConfig& c)
      : cfg(c),
        trunk(store, prefix + ".trunk",
              {6 * c.num_freqs, c.cp, c.cp, c.cp}, c.act) {}

  // grid: (H, W, 3); level_sizes: per-level (H_l, W_l).
  std::vector<ad::Var<T>> operator()(
      ad::Tape<T>& tape, const Tensor<T>& grid,
      const std::vector<std::pair<std::size_t, std::size_t>>& level_sizes) const {
    ad::Var<T> full = detail::embed_grid(tape, trunk, grid, cfg);
    std::vector<ad::Var<T>> levels;
    for (auto [hl, wl] : level_sizes)
      levels.push_back(detail::pool_to(full, hl, wl));
    return levels;
  }
};

// Network Q: X-ray positional embeddings with per-level channel adaptation.
template <typename T>
struct XrayPosEnc {
  PosEncConfig cfg;
  nn::Mlp<T> trunk;
  std::vector<nn::Linear<T>> heads;  // C_P -> C_l

  XrayPosEnc() = default;
  XrayPosEnc(nn::ParamStore<T>& store, const std::string& prefix,
             const PosEncConfig& c, const std::vector<std::size_t>& channel_plan)
      : cfg(c),
        trunk(store, prefix + ".trunk",
              {6 * c.num_freqs, c.cp, c.cp, c.cp}, c.act) {
    for (std::size_t l = 0; l < channel_plan.size(); ++l)
      heads.emplace_back(store, prefix + ".head" + std::to_string(l), c.cp,
                         channel_plan[l]);
  }

  // One (1, C_l, H_l, W_l) embedding per level for the given view's grid.
  std::vector<ad::Var<T>> operator()(
      ad::Tape<T>& tape, geom::View view, std::size_t H, std::size_t W,
      const std::vector<std::pair<std::size_t, std::size_t>>& level_sizes) const {
    require_valid(level_sizes.size() == heads.size(),
                  "posenc: level count mismatch with channel plan");
    Tensor<T> grid = geom::xray_coord_grid<T>(view, H, W);
    ad::Var<T> full = detail::embed_grid(tape, trunk, grid, cfg);
    std::vector<ad::Var<T>> levels;
    for (std::size_t l = 0; l < level_sizes.size(); ++l) {
      ad::Var<T> pooled = detail::pool_to(full, level_sizes[l].first,
                                          level_sizes[l].second);
      // linear head commutes with average pooling, so adapt channels after
      ad::Var<T> tokens = ad::nchw_to_tokens(pooled);
      tokens = heads[l](tape, tokens);
      levels.push_back(ad::tokens_to_nchw(tokens, level_sizes[l].first,
                                          level_sizes[l].second));
    }
    return levels;
  }
};

}  // namespace dx2ct::model
