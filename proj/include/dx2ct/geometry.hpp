#pragma once

// Normalized coordinate grids for CT slices and X-ray planes.
//
// Conventions (used by every module):
//   volume axes   (D, H, W) <-> world (z, y, x)
//   axial  fixes z: rows sweep y, cols sweep x
//   coronal fixes y: rows sweep z, cols sweep x
//   sagittal fixes x: rows sweep z, cols sweep y
//   PA view: y == 0, rows sweep z, cols sweep x
//   Lat view: x == 0, rows sweep z, cols sweep y
// Index -> coordinate is the endpoint-inclusive lerp -1 + 2(i-1)/(N-1), 1-based.

#include <string>

#include "dx2ct/common.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::geom {

enum class Plane { axial, coronal, sagittal };
enum class View { PA, Lat };

inline std::string to_string(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "?";
}

inline std::string to_string(View v) { return v == View::PA ? "pa" : "lat"; }

inline Plane plane_from_string(const std::string& s) {
  if (s == "axial") return Plane::axial;
  if (s == "coronal") return Plane::coronal;
  if (s == "sagittal") return Plane::sagittal;
  throw ValidationError("unknown plane '" + s + "'");
}

// Volume axis indexed by the plane normal: axial->D(z), coronal->H(y),
// sagittal->W(x).
inline std::size_t plane_axis(Plane p) {
  switch (p) {
    case Plane::axial: return 0;
    case Plane::coronal: return 1;
    case Plane::sagittal: return 2;
  }
  return 0;
}

// 1-based endpoint-inclusive lerp onto [-1, 1].
template <typename T>
T lerp_index(std::size_t i, std::size_t n) {
  require_valid(n >= 2, "lerp: need at least 2 samples, got " + std::to_string(n));
  require_valid(i >= 1 && i <= n, "lerp: index " + std::to_string(i) +
                                      " outside 1.." + std::to_string(n));
  return T(-1) + T(2) * static_cast<T>(i - 1) / static_cast<T>(n - 1);
}

// (H, W, 3) grid of (x, y, z) for one CT slice.
template <typename T>
Tensor<T> slice_coord_grid(Plane plane, std::size_t n, std::size_t N,
                           std::size_t H, std::size_t W) {
  require_valid(N >= 2, "slice grid: N must be >= 2, got " + std::to_string(N));
  require_valid(H >= 2 && W >= 2, "slice grid: H, W must be >= 2");
  require_valid(n >= 1 && n <= N, "slice grid: index " + std::to_string(n) +
                                      " outside 1.." + std::to_string(N));
  T fixed = lerp_index<T>(n, N);
  Tensor<T> g({H, W, 3});
  for (std::size_t i = 0; i < H; ++i) {
    T row = lerp_index<T>(i + 1, H);
    for (std::size_t j = 0; j < W; ++j) {
      T col = lerp_index<T>(j + 1, W);
      T x{}, y{}, z{};
      switch (plane) {
        case Plane::axial: x = col, y = row, z = fixed; break;
        case Plane::coronal: x = col, y = fixed, z = row; break;
        case Plane::sagittal: x = fixed, y = col, z = row; break;
      }
      g(i, j, 0) = x;
      g(i, j, 1) = y;
      g(i, j, 2) = z;
    }
  }
  return g;
}

// (H, W, 3) grid for an X-ray detector plane through the origin.
template <typename T>
Tensor<T> xray_coord_grid(View view, std::size_t H, std::size_t W) {
  require_valid(H >= 2 && W >= 2, "xray grid: H, W must be >= 2");
  Tensor<T> g({H, W, 3});
  for (std::size_t i = 0; i < H; ++i) {
    T z = lerp_index<T>(i + 1, H);
    for (std::size_t j = 0; j < W; ++j) {
      T col = lerp_index<T>(j + 1, W);
      g(i, j, 0) = view == View::PA ? col : T(0);
      g(i, j, 1) = view == View::PA ? T(0) : col;
      g(i, j, 2) = z;
    }
  }
  return g;
}

}  // namespace dx2ct::geom
