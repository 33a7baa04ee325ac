#pragma once

// End-to-end slice pipeline: wires the X-ray encoder, positional encoders,
// and the cross-attention conditioner into the denoising U-Net, and builds
// the training objective, DDIM slice sampling, and volume reconstruction on
// top. Compute type is templated so gradients can be checked in double.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dx2ct/autodiff.hpp"
#include "dx2ct/common.hpp"
#include "dx2ct/denoiser.hpp"
#include "dx2ct/diffusion.hpp"
#include "dx2ct/encoder.hpp"
#include "dx2ct/geometry.hpp"
#include "dx2ct/nn.hpp"
#include "dx2ct/phantom.hpp"
#include "dx2ct/posenc.hpp"
#include "dx2ct/pqt.hpp"
#include "dx2ct/rng.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::pipeline {

struct PipelineConfig {
  model::EncoderConfig encoder;
  model::PosEncConfig posenc;
  model::PqtConfig pqt;
  model::UNetConfig unet;
  diffusion::ScheduleConfig schedule;
  bool use_pqt = true;  // false: learned 1x1 projections of raw features
  bool biplanar = true;

  // Propagates the shared widths (C_P, level count) into every stage.
  void finalize() {
    pqt.cp = posenc.cp;
    unet.cond_channels = posenc.cp;
    unet.cond_levels = encoder.levels;
  }
};

// Slice height/width for a plane of a (D, H, W) volume, matching the slice
// orientation conventions.
inline std::pair<std::size_t, std::size_t> slice_shape(
    geom::Plane plane, const std::array<std::size_t, 3>& dims) {
  switch (plane) {
    case geom::Plane::axial:
      return {dims[1], dims[2]};
    case geom::Plane::coronal:
      return {dims[0], dims[2]};
    default:
      return {dims[0], dims[1]};
  }
}

// All learnable stages under one parameter store. Group prefixes: "enc"
// (X-ray encoder), "ctpe"/"xpe" (CT and X-ray positional encoders), "pqt"
// (cross-attention conditioner), "unet" (denoiser), "uncond" (projection
// fallback when the conditioner is disabled).
template <typename T>
struct ModelSet {
  PipelineConfig cfg;
  nn::ParamStore<T>* store = nullptr;
  model::Encoder<T> encoder;
  model::CtPosEnc<T> ct_pe;
  model::XrayPosEnc<T> xray_pe;
  model::Pqt<T> pqt;
  model::UncondInputs<T> uncond;
  model::UNet<T> unet;

  ModelSet(nn::ParamStore<T>& s, PipelineConfig c) : cfg(std::move(c)), store(&s) {
    cfg.finalize();
    const std::vector<std::size_t> plan = cfg.encoder.channel_plan();
    encoder = model::Encoder<T>(s, "enc", cfg.encoder);
    if (cfg.use_pqt) {
      ct_pe = model::CtPosEnc<T>(s, "ctpe", cfg.posenc);
      xray_pe = model::XrayPosEnc<T>(s, "xpe", cfg.posenc, plan);
      pqt = model::Pqt<T>(s, "pqt", cfg.pqt, plan);
    } else {
      uncond = model::UncondInputs<T>(s, "uncond", plan,
                                      cfg.biplanar ? 2 : 1, cfg.posenc.cp);
    }
    unet = model::UNet<T>(s, "unet", cfg.unet);
  }

  // Condition-map sizes for an (h, w) slice: level l sits at h / 2^(l+2).
  std::vector<std::pair<std::size_t, std::size_t>> level_sizes(
      std::size_t h, std::size_t w) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t l = 0; l < cfg.encoder.levels; ++l) {
      const std::size_t f = std::size_t{4} << l;
      require_valid(h % f == 0 && w % f == 0,
                    "pipeline: slice size not divisible down to level " +
                        std::to_string(l));
      out.emplace_back(h / f, w / f);
    }
    return out;
  }

  // 3D position-aware condition maps for slice n (1-based) of `plane`, one
  // (1, C_P, H_l, W_l) map per level.
  std::vector<ad::Var<T>> conditions(ad::Tape<T>& tape, const Tensor<T>& pa,
                                     const Tensor<T>* lat, geom::Plane plane,
                                     std::size_t n,
                                     const std::array<std::size_t, 3>& dims) const {
    require_valid((lat != nullptr) == cfg.biplanar,
                  "pipeline: view count does not match config");
    const std::size_t N = dims[geom::plane_axis(plane)];
    require_valid(n >= 1 && n <= N, "pipeline: slice index out of range");
    const auto [sh, sw] = slice_shape(plane, dims);
    const auto sizes = level_sizes(sh, sw);
    const std::size_t L = cfg.encoder.levels;

    std::vector<const Tensor<T>*> views{&pa};
    if (lat) views.push_back(lat);

    // [level][view] feature maps and X-ray positional embeddings.
    std::vector<std::vector<ad::Var<T>>> feats(L), pes(L);
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Tensor<T>& img = *views[v];
      require_valid(img.rank() == 2, "pipeline: X-ray images must be rank 2");
      const std::size_t ih = img.shape()[0], iw = img.shape()[1];
      ad::Var<T> x = ad::constant(tape, img.reshaped({1, 1, ih, iw}));
      std::vector<ad::Var<T>> f = encoder(tape, x);
      for (std::size_t l = 0; l < L; ++l) feats[l].push_back(f[l]);
      if (cfg.use_pqt) {
        const geom::View view = v == 0 ? geom::View::PA : geom::View::Lat;
        std::vector<ad::Var<T>> p =
            xray_pe(tape, view, ih, iw, level_sizes(ih, iw));
        for (std::size_t l = 0; l < L; ++l) pes[l].push_back(p[l]);
      }
    }

    if (!cfg.use_pqt) return uncond(tape, feats, sizes);
    Tensor<T> grid = geom::slice_coord_grid<T>(plane, n, N, sh, sw);
    std::vector<ad::Var<T>> ct = ct_pe(tape, grid, sizes);
    return pqt(tape, feats, pes, ct);
  }

  // Same maps as plain tensors, computed on a scratch tape (for sampling).
  std::vector<Tensor<T>> conditions_values(
      const Tensor<T>& pa, const Tensor<T>* lat, geom::Plane plane,
      std::size_t n, const std::array<std::size_t, 3>& dims) const {
    ad::Tape<T> tape(false);
    std::vector<Tensor<T>> out;
    for (const ad::Var<T>& c : conditions(tape, pa, lat, plane, n, dims))
      out.push_back(c.value());
    return out;
  }

  // One gradient-free denoiser evaluation.
  Tensor<T> predict_eps(const Tensor<T>& x_t, int t,
                        const std::vector<Tensor<T>>& conds) const {
    ad::Tape<T> tape(false);
    std::vector<ad::Var<T>> cs;
    for (const Tensor<T>& c : conds) cs.push_back(ad::constant(tape, c));
    return unet(tape, ad::constant(tape, x_t), {t}, cs).value();
  }
};

// One training datum: a slice of one sample along one plane.
struct TrainItem {
  std::size_t sample = 0;  // index into the samples span
  geom::Plane plane = geom::Plane::axial;
  std::size_t n = 1;  // 1-based slice index
};

// Per-sample tensors cast once to the compute type. `src` is null when built
// from projections alone (sampling without ground truth).
template <typename T>
struct SampleTensors {
  const data::Sample* src = nullptr;
  Tensor<T> pa;
  std::optional<Tensor<T>> lat;
  std::array<std::size_t, 3> dims{};  // (D, H, W)

  const Tensor<T>* lat_ptr() const { return lat ? &*lat : nullptr; }
};

template <typename T>
SampleTensors<T> sample_tensors(const data::Sample& s) {
  require_valid(s.volume.rank() == 3, "pipeline: volumes must be rank 3");
  SampleTensors<T> out;
  out.src = &s;
  out.pa = tensor_cast<T>(s.xrays.pa);
  if (s.xrays.lat) out.lat = tensor_cast<T>(*s.xrays.lat);
  out.dims = {s.volume.shape()[0], s.volume.shape()[1], s.volume.shape()[2]};
  return out;
}

// Volume extents from projections alone: PA is (D, W), Lat is (D, H).
// Monoplanar input assumes H == W.
template <typename T>
SampleTensors<T> xray_tensors(const data::XRaySet& x) {
  require_valid(x.pa.rank() == 2, "pipeline: X-ray images must be rank 2");
  SampleTensors<T> out;
  out.pa = tensor_cast<T>(x.pa);
  const std::size_t D = x.pa.shape()[0], W = x.pa.shape()[1];
  std::size_t H = W;
  if (x.lat) {
    require_valid(x.lat->rank() == 2, "pipeline: X-ray images must be rank 2");
    require_valid(x.lat->shape()[0] == D,
                  "pipeline: PA/Lat row counts disagree");
    out.lat = tensor_cast<T>(*x.lat);
    H = x.lat->shape()[1];
  }
  out.dims = {D, H, W};
  return out;
}

// Per-item timestep and noise draw: a pure function of (seed, step, item
// identity), independent of batch position.
template <typename T>
std::pair<int, Tensor<T>> item_noise(const diffusion::NoiseSchedule& sched,
                                     const Shape& shape, const TrainItem& it,
                                     std::uint64_t step, std::uint64_t seed) {
  Rng rng(mix_seed(
      mix_seed(mix_seed(mix_seed(mix_seed(seed, "train"), step),
                        static_cast<std::uint64_t>(it.sample)),
               static_cast<std::uint64_t>(it.plane)),
      static_cast<std::uint64_t>(it.n)));
  const int t = static_cast<int>(rng.uniform_int(1, sched.timesteps()));
  Tensor<T> eps(shape);
  for (std::size_t j = 0; j < eps.numel(); ++j)
    eps[j] = static_cast<T>(rng.normal());
  return {t, std::move(eps)};
}

// Noise-estimate override for tests; given the item and its noised slice,
// returns eps_hat directly instead of running the conditioned denoiser.
template <typename T>
using StubPredictor =
    std::function<Tensor<T>(const TrainItem&, const Tensor<T>& x_t, int t)>;

// Mean over the batch of per-slice pixel-mean ||eps - eps_hat||^2. The
// timestep and noise draws depend only on (seed, step, item identity), so the
// loss is invariant to batch order up to summation rounding.
template <typename T>
ad::Var<T> training_loss(ad::Tape<T>& tape, const ModelSet<T>& models,
                         const diffusion::NoiseSchedule& sched,
                         const std::vector<SampleTensors<T>>& samples,
                         const std::vector<TrainItem>& items,
                         std::uint64_t step, std::uint64_t seed,
                         const StubPredictor<T>& stub = {}) {
  require_valid(!items.empty(), "training loss: empty batch");
  std::optional<ad::Var<T>> total;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const TrainItem& it = items[i];
    require_valid(it.sample < samples.size(),
                  "training loss: sample index out of range");
    const SampleTensors<T>& s = samples[it.sample];
    require_valid(s.src != nullptr, "training loss: sample has no volume");

    data::Image slice = data::slice_volume(s.src->volume, it.plane, it.n);
    const std::size_t sh = slice.shape()[0], sw = slice.shape()[1];
    Tensor<T> x0({1, 1, sh, sw});
    for (std::size_t j = 0; j < slice.numel(); ++j)
      x0[j] = static_cast<T>(2.0f * slice[j] - 1.0f);  // [0,1] -> [-1,1]
    auto [t, eps] = item_noise<T>(sched, x0.shape(), it, step, seed);

    Tensor<T> x_t = diffusion::forward_diffuse(x0, t, eps, sched);
    ad::Var<T> eps_hat;
    if (stub) {
      eps_hat = ad::constant(tape, stub(it, x_t, t));
    } else {
      std::vector<ad::Var<T>> conds =
          models.conditions(tape, s.pa, s.lat_ptr(), it.plane, it.n, s.dims);
      eps_hat = models.unet(tape, ad::constant(tape, x_t), {t}, conds);
    }
    ad::Var<T> item = ad::mse(eps_hat, ad::constant(tape, eps));
    require_numeric(std::isfinite(static_cast<double>(item.value()[0])),
                    "training loss: non-finite loss at batch item " +
                        std::to_string(i));
    total = total ? ad::add(*total, item) : item;
  }
  return ad::scale(*total, static_cast<T>(1.0 / static_cast<double>(items.size())));
}

// Invoked with the starting noise before each slice is sampled.
template <typename T>
using SliceObserver =
    std::function<void(geom::Plane, std::size_t, const Tensor<T>&)>;

// Deterministic DDIM sampling of one slice; returns (1, 1, sh, sw) values in
// model space (roughly [-1, 1]). x_T must match the slice shape.
template <typename T>
Tensor<T> sample_slice(const ModelSet<T>& models,
                       const diffusion::NoiseSchedule& sched,
                       const SampleTensors<T>& s, geom::Plane plane,
                       std::size_t n, const Tensor<T>& x_T,
                       const SliceObserver<T>& observe = {}) {
  const auto [sh, sw] = slice_shape(plane, s.dims);
  require_valid(x_T.shape() == Shape{1, 1, sh, sw},
                "sample: starting noise shape does not match slice");
  std::vector<Tensor<T>> conds =
      models.conditions_values(s.pa, s.lat_ptr(), plane, n, s.dims);
  if (observe) observe(plane, n, x_T);

  Tensor<T> x = x_T;
  const std::vector<int>& seq = sched.ddim_timesteps();
  for (std::size_t i = seq.size(); i-- > 0;) {
    const int t = seq[i];
    const int t_prev = i == 0 ? 0 : seq[i - 1];
    Tensor<T> eps_hat = models.predict_eps(x, t, conds);
    require_numeric(eps_hat.all_finite(),
                    "sample: non-finite noise estimate at t=" +
                        std::to_string(t));
    x = diffusion::ddim_step_clipped(x, eps_hat, t, t_prev, sched);
  }
  return x;
}

// Shared starting noise for every slice of a reconstruction.
template <typename T>
Tensor<T> starting_noise(std::uint64_t seed, std::size_t sh, std::size_t sw) {
  Rng rng(mix_seed(seed, "x_T"));
  Tensor<T> x({1, 1, sh, sw});
  for (std::size_t i = 0; i < x.numel(); ++i)
    x[i] = static_cast<T>(rng.normal());
  return x;
}

// Samples every slice of `plane` from the same x_T and stacks them back into
// a volume, mapped to [0, 1] with clamping.
template <typename T>
data::Volume reconstruct_volume(const ModelSet<T>& models,
                                const diffusion::NoiseSchedule& sched,
                                const SampleTensors<T>& s, geom::Plane plane,
                                const Tensor<T>& x_T,
                                const SliceObserver<T>& observe = {}) {
  const std::size_t N = s.dims[geom::plane_axis(plane)];
  const auto [sh, sw] = slice_shape(plane, s.dims);
  std::vector<data::Image> slices;
  for (std::size_t n = 1; n <= N; ++n) {
    Tensor<T> sl = sample_slice(models, sched, s, plane, n, x_T, observe);
    data::Image img({sh, sw});
    for (std::size_t i = 0; i < img.numel(); ++i) {
      const float v = (static_cast<float>(sl[i]) + 1.0f) / 2.0f;
      img[i] = std::min(1.0f, std::max(0.0f, v));
    }
    slices.push_back(std::move(img));
  }
  return data::stack_slices(slices, plane);
}

template <typename T>
data::Volume reconstruct_volume(const ModelSet<T>& models,
                                const diffusion::NoiseSchedule& sched,
                                const SampleTensors<T>& s, geom::Plane plane,
                                std::uint64_t seed,
                                const SliceObserver<T>& observe = {}) {
  const auto [sh, sw] = slice_shape(plane, s.dims);
  return reconstruct_volume(models, sched, s, plane,
                            starting_noise<T>(seed, sh, sw), observe);
}

// Axial, coronal, and sagittal reconstructions sharing one starting noise
// tensor, which requires cubic volumes.
template <typename T>
std::array<data::Volume, 3> reconstruct_all_planes(
    const ModelSet<T>& models, const diffusion::NoiseSchedule& sched,
    const SampleTensors<T>& s, std::uint64_t seed,
    const SliceObserver<T>& observe = {}) {
  require_valid(s.dims[0] == s.dims[1] && s.dims[1] == s.dims[2],
                "reconstruct: shared starting noise needs cubic volumes");
  Tensor<T> x_T = starting_noise<T>(seed, s.dims[1], s.dims[2]);
  return {reconstruct_volume(models, sched, s, geom::Plane::axial, x_T, observe),
          reconstruct_volume(models, sched, s, geom::Plane::coronal, x_T, observe),
          reconstruct_volume(models, sched, s, geom::Plane::sagittal, x_T, observe)};
}

}  // namespace dx2ct::pipeline
