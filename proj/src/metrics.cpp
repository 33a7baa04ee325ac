#include "dx2ct/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <vector>

#include "dx2ct/common.hpp"
#include "dx2ct/phantom.hpp"

namespace dx2ct::metrics {

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (K1 * data_range)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2 * data_range)^2

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode blur of an (h, w) image: output (h-k+1, w-k+1).
std::vector<double> blur_valid(const std::vector<double>& img, std::size_t h,
                               std::size_t w, const std::vector<double>& k) {
  const std::size_t ks = k.size();
  const std::size_t oh = h - ks + 1, ow = w - ks + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ks; ++i) acc += k[i] * img[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ks; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

double ssim_slice(const float* a, const float* b, std::size_t h, std::size_t w) {
  std::size_t win = std::min<std::size_t>(11, std::min(h, w));
  if (win % 2 == 0) --win;  // largest odd window that fits
  require_valid(win >= 3, "ssim: slices must be at least 3x3");
  const std::vector<double> k = gaussian_kernel(win, 1.5);

  const std::size_t n = h * w;
  std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
  for (std::size_t i = 0; i < n; ++i) {
    da[i] = a[i];
    db[i] = b[i];
    daa[i] = da[i] * da[i];
    dbb[i] = db[i] * db[i];
    dab[i] = da[i] * db[i];
  }
  const std::vector<double> mu1 = blur_valid(da, h, w, k);
  const std::vector<double> mu2 = blur_valid(db, h, w, k);
  const std::vector<double> m11 = blur_valid(daa, h, w, k);
  const std::vector<double> m22 = blur_valid(dbb, h, w, k);
  const std::vector<double> m12 = blur_valid(dab, h, w, k);

  double sum = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double u1 = mu1[i], u2 = mu2[i];
    const double s11 = m11[i] - u1 * u1;
    const double s22 = m22[i] - u2 * u2;
    const double s12 = m12[i] - u1 * u2;
    sum += ((2.0 * u1 * u2 + kC1) * (2.0 * s12 + kC2)) /
           ((u1 * u1 + u2 * u2 + kC1) * (s11 + s22 + kC2));
  }
  return sum / static_cast<double>(mu1.size());
}

std::string fmt6(double v) {
  if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string plane_json(const PlaneMetrics& m) {
  return "{\"psnr_db\":" + fmt6(m.psnr_db) + ",\"ssim\":" + fmt6(m.ssim) + "}";
}

}  // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b, double data_range) {
  require_valid(a.shape() == b.shape(), "psnr: shape mismatch " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  require_valid(a.numel() > 0, "psnr: empty input");
  require_valid(data_range > 0.0, "psnr: data_range must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  require_valid(a.rank() == 3 && b.rank() == 3, "ssim: volumes must be rank 3");
  require_valid(a.shape() == b.shape(), "ssim: shape mismatch " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const std::size_t d = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  double sum = 0.0;
  for (std::size_t s = 0; s < d; ++s)
    sum += ssim_slice(a.data() + s * h * w, b.data() + s * h * w, h, w);
  return sum / static_cast<double>(d);
}

MetricReport evaluate(const std::array<Tensor<float>, 3>& pred_volumes,
                      const Tensor<float>& gt) {
  MetricReport r;
  for (std::size_t p = 0; p < 3; ++p) {
    r.per_plane[p].psnr_db = psnr(pred_volumes[p], gt);
    r.per_plane[p].ssim = ssim(pred_volumes[p], gt);
  }
  r.average.psnr_db = (r.per_plane[0].psnr_db + r.per_plane[1].psnr_db +
                       r.per_plane[2].psnr_db) /
                      3.0;
  r.average.ssim =
      (r.per_plane[0].ssim + r.per_plane[1].ssim + r.per_plane[2].ssim) / 3.0;
  return r;
}

std::string report_json(const MetricReport& r) {
  std::string out = "{\"average\":" + plane_json(r.average);
  out += ",\"config\":";
  out += r.config_echo.empty() ? "null" : r.config_echo;
  out += ",\"planes\":{\"axial\":" + plane_json(r.per_plane[0]) +
         ",\"coronal\":" + plane_json(r.per_plane[1]) +
         ",\"sagittal\":" + plane_json(r.per_plane[2]) + "}";
  out += ",\"runtime_seconds\":" + fmt6(r.runtime_seconds) + "}";
  return out;
}

void write_report(const MetricReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << report_json(r) << '\n';
  if (!out) throw IoError(path + ": write failed");
}

void montage(const Tensor<float>& volume, geom::Plane plane, std::size_t rows,
             std::size_t cols, const std::string& path) {
  require_valid(volume.rank() == 3, "montage: volumes must be rank 3");
  require_valid(rows >= 1 && cols >= 1, "montage: grid must be at least 1x1");
  const std::size_t N = volume.shape()[geom::plane_axis(plane)];
  const std::size_t K = rows * cols;

  std::vector<data::Image> slices;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t n =
        K == 1 ? (N + 1) / 2
               : 1 + static_cast<std::size_t>(std::llround(
                         static_cast<double>(k) * (N - 1) / (K - 1)));
    slices.push_back(data::slice_volume(volume, plane, n));
  }
  const std::size_t sh = slices[0].shape()[0], sw = slices[0].shape()[1];

  std::vector<unsigned char> pixels(rows * sh * cols * sw, 0);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t r0 = (k / cols) * sh, c0 = (k % cols) * sw;
    for (std::size_t y = 0; y < sh; ++y)
      for (std::size_t x = 0; x < sw; ++x) {
        const double v = std::min(1.0, std::max(0.0, double(slices[k][y * sw + x])));
        pixels[(r0 + y) * cols * sw + c0 + x] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "P5\n" << cols * sw << " " << rows * sh << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace dx2ct::metrics
