#pragma once

// Reconstruction quality metrics (PSNR, slice-wise windowed SSIM), the
// per-plane evaluation report with a byte-deterministic JSON form, and a PGM
// montage writer for visual inspection.

#include <array>
#include <string>

#include "dx2ct/geometry.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::metrics {

// 10 * log10(data_range^2 / MSE); +infinity when the inputs are identical.
double psnr(const Tensor<float>& a, const Tensor<float>& b,
            double data_range = 1.0);

// Mean over 2D slices along the first axis of windowed SSIM with an 11x11
// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, data range 1. On images
// smaller than the window it shrinks to the largest odd size that fits.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

struct PlaneMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::array<PlaneMetrics, 3> per_plane{};  // axial, coronal, sagittal
  PlaneMetrics average{};
  std::string config_echo;  // JSON text, may be empty
  double runtime_seconds = 0.0;
};

// Both metrics for each plane's reconstruction against one ground truth,
// arithmetic-averaged. Fills per_plane and average; the caller sets the
// config echo and runtime.
MetricReport evaluate(const std::array<Tensor<float>, 3>& pred_volumes,
                      const Tensor<float>& gt);

// Deterministic serialization: keys sorted, floats at 6 significant digits,
// +infinity as the string "inf".
std::string report_json(const MetricReport& r);
void write_report(const MetricReport& r, const std::string& path);

// 8-bit binary PGM grid of rows x cols evenly spaced slices along the
// plane's normal, [0,1] mapped linearly to [0,255] with clamping.
void montage(const Tensor<float>& volume, geom::Plane plane, std::size_t rows,
             std::size_t cols, const std::string& path);

}  // namespace dx2ct::metrics
