#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dx2ct/geometry.hpp"

using namespace dx2ct;
using geom::Plane;
using geom::View;

TEST_CASE("axial grid: fixed z, rows sweep y, cols sweep x") {
  auto g = geom::slice_coord_grid<double>(Plane::axial, 2, 3, 3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(g(i, j, 2) == 0.0);                       // z = lerp(2 of 3)
      CHECK(g(i, j, 0) == doctest::Approx(-1.0 + j)); // x along columns
      CHECK(g(i, j, 1) == doctest::Approx(-1.0 + i)); // y along rows
    }
}

TEST_CASE("sagittal slice 1 of 5 pins x to the left face") {
  auto g = geom::slice_coord_grid<double>(Plane::sagittal, 1, 5, 2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(g(i, j, 0) == -1.0);
}

TEST_CASE("coronal slice 4 of 5 fixes y = 0.5") {
  // hand-computed: -1 + 2*(4-1)/(5-1) = 0.5
  auto g = geom::slice_coord_grid<double>(Plane::coronal, 4, 5, 4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(g(i, j, 1) == 0.5);
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(g(i, j, c)) <= 1.0);
    }
}

TEST_CASE("xray grids per view") {
  auto pa = geom::xray_coord_grid<double>(View::PA, 2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(pa(i, j, 1) == 0.0);
      CHECK(std::abs(pa(i, j, 0)) == 1.0);
      CHECK(std::abs(pa(i, j, 2)) == 1.0);
    }

  auto lat = geom::xray_coord_grid<double>(View::Lat, 3, 3);
  CHECK(lat(1, 1, 0) == 0.0);
  CHECK(lat(1, 1, 1) == 0.0);
  CHECK(lat(1, 1, 2) == 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(lat(i, j, 0) == 0.0);

  // row 2 (1-based) of a 4-row PA grid: z = -1 + 2/3
  auto pa4 = geom::xray_coord_grid<double>(View::PA, 4, 4);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(pa4(1, j, 2) == doctest::Approx(-1.0 / 3.0));
}

TEST_CASE("all coordinates stay inside [-1, 1] exhaustively") {
  for (auto plane : {Plane::axial, Plane::coronal, Plane::sagittal})
    for (std::size_t N = 2; N <= 5; ++N)
      for (std::size_t n = 1; n <= N; ++n)
        for (std::size_t H = 2; H <= 4; ++H)
          for (std::size_t W = 2; W <= 4; ++W) {
            auto g = geom::slice_coord_grid<double>(plane, n, N, H, W);
            for (std::size_t i = 0; i < g.numel(); ++i)
              CHECK(std::abs(g[i]) <= 1.0 + 1e-15);
          }
}

TEST_CASE("mirrored slice indices flip only the normal component") {
  const std::size_t N = 7, H = 3, W = 4;
  const std::size_t normal_comp[3] = {2, 1, 0};  // axial->z, coronal->y, sagittal->x
  int pi = 0;
  for (auto plane : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    std::size_t nc = normal_comp[pi++];
    for (std::size_t n = 1; n <= N; ++n) {
      auto a = geom::slice_coord_grid<double>(plane, n, N, H, W);
      auto b = geom::slice_coord_grid<double>(plane, N + 1 - n, N, H, W);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t c = 0; c < 3; ++c) {
            if (c == nc)
              CHECK(a(i, j, c) == doctest::Approx(-b(i, j, c)));
            else
              CHECK(a(i, j, c) == b(i, j, c));
          }
    }
  }
}

TEST_CASE("cross-plane consistency on a 5^3 lattice") {
  // Lattice voxel (d, h, w) seen through each plane's slice grid must map to
  // one identical (x, y, z).
  const std::size_t R = 5;
  for (std::size_t d = 0; d < R; ++d)
    for (std::size_t h = 0; h < R; ++h)
      for (std::size_t w = 0; w < R; ++w) {
        auto ax = geom::slice_coord_grid<double>(Plane::axial, d + 1, R, R, R);
        auto co = geom::slice_coord_grid<double>(Plane::coronal, h + 1, R, R, R);
        auto sa = geom::slice_coord_grid<double>(Plane::sagittal, w + 1, R, R, R);
        for (std::size_t c = 0; c < 3; ++c) {
          double v_ax = ax(h, w, c);
          double v_co = co(d, w, c);
          double v_sa = sa(d, h, c);
          CHECK(v_ax == doctest::Approx(v_co));
          CHECK(v_ax == doctest::Approx(v_sa));
        }
      }
}

TEST_CASE("index and size validation") {
  CHECK_THROWS_AS(geom::slice_coord_grid<double>(Plane::axial, 0, 5, 4, 4),
                  ValidationError);
  CHECK_THROWS_AS(geom::slice_coord_grid<double>(Plane::axial, 6, 5, 4, 4),
                  ValidationError);
  CHECK_THROWS_AS(geom::slice_coord_grid<double>(Plane::axial, 1, 1, 4, 4),
                  ValidationError);
  CHECK_THROWS_AS(geom::xray_coord_grid<double>(View::PA, 1, 4), ValidationError);
  CHECK_THROWS_AS(geom::plane_from_string("oblique"), ValidationError);
}
