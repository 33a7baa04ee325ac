#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dx2ct/container.hpp"
#include "dx2ct/phantom.hpp"
#include "dx2ct/rng.hpp"

using namespace dx2ct;
using data::Image;
using data::Volume;
using geom::Plane;
using geom::View;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("dx2ct_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_raw(const fs::path& p, const std::string& header,
               const std::vector<float>& payload) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << header << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * 4));
}

}  // namespace

TEST_CASE("container round trip is bit-exact on 100 random arrays") {
  auto dir = temp_dir("roundtrip");
  Rng rng(2024);
  for (int c = 0; c < 100; ++c) {
    Shape shape;
    std::size_t rank = 2 + std::size_t(rng.uniform_int(0, 1));
    for (std::size_t r = 0; r < rank; ++r)
      shape.push_back(std::size_t(rng.uniform_int(2, 6)));
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = float(rng.uniform(-10.0, 10.0));
    fs::path p = dir / ("a" + std::to_string(c) + ".bin");
    io::write_array(p.string(), t);
    Tensor<float> u = io::read_array(p.string());
    REQUIRE(u.shape() == t.shape());
    REQUIRE(std::memcmp(u.data(), t.data(), t.numel() * 4) == 0);
  }
}

TEST_CASE("container rejects malformed headers with a byte offset") {
  auto dir = temp_dir("badheader");

  fs::path not_json = dir / "notjson.bin";
  write_raw(not_json, "hello world", {0, 0, 0, 0});
  CHECK_THROWS_WITH_AS(io::read_array(not_json.string()),
                       doctest::Contains("byte offset 0"), IoError);

  fs::path bad_dtype = dir / "dtype.bin";
  write_raw(bad_dtype, R"({"dtype":"f64le","order":"row-major","shape":[2,2]})",
            {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(io::read_array(bad_dtype.string()),
                       doctest::Contains("dtype"), IoError);

  fs::path extra_key = dir / "extra.bin";
  write_raw(extra_key,
            R"({"dtype":"f32le","order":"row-major","shape":[2,2],"x":1})",
            {1, 2, 3, 4});
  CHECK_THROWS_AS(io::read_array(extra_key.string()), IoError);

  fs::path no_newline = dir / "nonl.bin";
  std::ofstream(no_newline, std::ios::binary) << "{\"dtype\":\"f32le\"";
  CHECK_THROWS_AS(io::read_array(no_newline.string()), IoError);
}

TEST_CASE("container reports truncation, trailing bytes, and non-finite data") {
  auto dir = temp_dir("payload");
  const std::string header = R"({"dtype":"f32le","order":"row-major","shape":[2,2,2]})";
  const std::size_t payload_off = header.size() + 1;

  fs::path truncated = dir / "short.bin";
  write_raw(truncated, header, std::vector<float>(7, 1.0f));
  CHECK_THROWS_WITH_AS(
      io::read_array(truncated.string()),
      doctest::Contains(("byte offset " + std::to_string(payload_off + 28)).c_str()),
      IoError);

  fs::path trailing = dir / "long.bin";
  write_raw(trailing, header, std::vector<float>(9, 1.0f));
  CHECK_THROWS_WITH_AS(io::read_array(trailing.string()),
                       doctest::Contains("trailing"), IoError);

  fs::path nan_payload = dir / "nan.bin";
  std::vector<float> vals(8, 1.0f);
  vals[3] = std::nanf("");
  write_raw(nan_payload, header, vals);
  CHECK_THROWS_WITH_AS(
      io::read_array(nan_payload.string()),
      doctest::Contains(("byte offset " + std::to_string(payload_off + 12)).c_str()),
      IoError);
}

TEST_CASE("phantoms are deterministic, clamped, and vanish at the corners") {
  Volume a = data::generate_phantom(77, 16, 4);
  Volume b = data::generate_phantom(77, 16, 4);
  REQUIRE(a.shape() == Shape{16, 16, 16});
  CHECK(std::memcmp(a.data(), b.data(), a.numel() * 4) == 0);
  CHECK(max_abs_diff(a, data::generate_phantom(78, 16, 4)) > 0.0f);

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Volume v = data::generate_phantom(seed, 12, 8);
    float mn = 1e9f, mx = -1e9f;
    for (std::size_t i = 0; i < v.numel(); ++i) {
      mn = std::min(mn, v[i]);
      mx = std::max(mx, v[i]);
    }
    CHECK(mn >= 0.0f);
    CHECK(mx <= 1.0f);
    CHECK(mx > 0.0f);  // something was drawn
    // centers in [-0.6,0.6], semi-axes <= 0.5 -> corners are always outside
    for (std::size_t d : {std::size_t(0), std::size_t(11)})
      for (std::size_t h : {std::size_t(0), std::size_t(11)})
        for (std::size_t w : {std::size_t(0), std::size_t(11)})
          CHECK(v(d, h, w) == 0.0f);
  }

  CHECK_THROWS_AS(data::generate_phantom(1, 4, 1), ValidationError);
  CHECK_THROWS_AS(data::generate_phantom(1, 16, 0), ValidationError);
}

TEST_CASE("projection closed forms on constant volumes") {
  Volume zero = Volume::zeros({4, 4, 4});
  Image p0 = data::project(zero, View::PA);
  for (std::size_t i = 0; i < p0.numel(); ++i) CHECK(p0[i] == 0.0f);

  Volume u = Volume::full({4, 6, 8}, 0.3f);
  Image ppa = data::project(u, View::PA);
  REQUIRE(ppa.shape() == Shape{4, 8});  // rows z, cols x
  Image plat = data::project(u, View::Lat);
  REQUIRE(plat.shape() == Shape{4, 6});  // rows z, cols y
  float want = 1.0f - std::exp(-4.0f * 0.3f);
  for (std::size_t i = 0; i < ppa.numel(); ++i)
    CHECK(ppa[i] == doctest::Approx(want));
  for (std::size_t i = 0; i < plat.numel(); ++i)
    CHECK(plat[i] == doctest::Approx(want));
}

TEST_CASE("projection argmax sits at the phantom's center of mass") {
  // For a single ellipsoid the longest chord passes through its center, so the
  // projection peak must land on the centroid's in-plane coordinates.
  for (std::uint64_t seed : {11ull, 23ull, 59ull}) {
    Volume v = data::generate_phantom(seed, 32, 1);
    double mass = 0, cd = 0, ch = 0, cw = 0;
    for (std::size_t d = 0; d < 32; ++d)
      for (std::size_t h = 0; h < 32; ++h)
        for (std::size_t w = 0; w < 32; ++w) {
          double m = v(d, h, w);
          mass += m;
          cd += m * double(d);
          ch += m * double(h);
          cw += m * double(w);
        }
    REQUIRE(mass > 0);
    cd /= mass;
    ch /= mass;
    cw /= mass;

    // the peak is a tie plateau, so compare its centroid, not the first argmax
    auto peak = [](const Image& img) {
      float mx = 0;
      for (std::size_t i = 0; i < img.numel(); ++i) mx = std::max(mx, img[i]);
      double si = 0, sj = 0, cnt = 0;
      for (std::size_t i = 0; i < img.dim(0); ++i)
        for (std::size_t j = 0; j < img.dim(1); ++j)
          if (img(i, j) >= mx - 1e-6f) si += double(i), sj += double(j), ++cnt;
      return std::pair{si / cnt, sj / cnt};
    };

    auto [pz, px] = peak(data::project(v, View::PA));
    CHECK(std::abs(pz - cd) <= 1.5);  // rows sweep z (axis D)
    CHECK(std::abs(px - cw) <= 1.5);  // cols sweep x (axis W)

    auto [lz, ly] = peak(data::project(v, View::Lat));
    CHECK(std::abs(lz - cd) <= 1.5);  // rows sweep z
    CHECK(std::abs(ly - ch) <= 1.5);  // cols sweep y (axis H)
  }
}

TEST_CASE("adding material never darkens a projection") {
  Volume v = data::generate_phantom(5, 16, 3);
  Volume w = v;
  // add a ball of extra attenuation, clamped like the generator
  for (std::size_t d = 4; d < 9; ++d)
    for (std::size_t h = 4; h < 9; ++h)
      for (std::size_t x = 4; x < 9; ++x)
        w(d, h, x) = std::min(1.0f, w(d, h, x) + 0.25f);
  for (auto view : {View::PA, View::Lat}) {
    Image pv = data::project(v, view);
    Image pw = data::project(w, view);
    for (std::size_t i = 0; i < pv.numel(); ++i) CHECK(pw[i] >= pv[i]);
  }
}

TEST_CASE("slice/stack are inverse and orientation is pinned by a hot voxel") {
  Volume v = data::generate_phantom(9, 12, 5);
  for (auto plane : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    std::vector<Image> slices;
    for (std::size_t n = 1; n <= 12; ++n)
      slices.push_back(data::slice_volume(v, plane, n));
    Volume back = data::stack_slices(slices, plane);
    REQUIRE(back.shape() == v.shape());
    CHECK(std::memcmp(back.data(), v.data(), v.numel() * 4) == 0);
  }
  CHECK_THROWS_AS(data::slice_volume(v, Plane::axial, 0), ValidationError);
  CHECK_THROWS_AS(data::slice_volume(v, Plane::axial, 13), ValidationError);

  Volume hot = Volume::zeros({6, 7, 8});
  hot(2, 3, 4) = 1.0f;
  int axial_hits = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    Image s = data::slice_volume(hot, Plane::axial, n);
    if (s(3, 4) == 1.0f) {
      ++axial_hits;
      CHECK(n == 3);  // slice index is 1-based
    }
  }
  CHECK(axial_hits == 1);
  CHECK(data::slice_volume(hot, Plane::coronal, 4)(2, 4) == 1.0f);   // rows z, cols x
  CHECK(data::slice_volume(hot, Plane::sagittal, 5)(2, 3) == 1.0f);  // rows z, cols y
}

TEST_CASE("dataset build/load round trip") {
  auto dir = temp_dir("dataset");
  auto m = data::build_dataset(123, 3, 16, /*biplanar=*/true, dir.string());
  CHECK(m.entries.size() == 3);
  CHECK(m.biplanar());

  auto m2 = data::read_manifest((dir / "manifest.json").string());
  CHECK(m2.entries.size() == 3);
  CHECK(m2.resolution == 16);
  CHECK(m2.biplanar());

  auto samples = data::load_samples((dir / "manifest.json").string());
  REQUIRE(samples.size() == 3);
  for (const auto& s : samples) {
    CHECK(s.volume.shape() == Shape{16, 16, 16});
    CHECK(s.xrays.biplanar());
    Image want = data::project(s.volume, View::PA);
    CHECK(max_abs_diff(want, s.xrays.pa) == 0.0f);
  }

  // determinism across rebuilds
  auto dir2 = temp_dir("dataset2");
  data::build_dataset(123, 3, 16, true, dir2.string());
  auto again = data::load_samples((dir2 / "manifest.json").string());
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::memcmp(again[i].volume.data(), samples[i].volume.data(),
                      samples[i].volume.numel() * 4) == 0);

  // monoplanar has no lat
  auto dir3 = temp_dir("dataset3");
  auto m3 = data::build_dataset(5, 2, 16, false, dir3.string());
  CHECK(!m3.biplanar());
  auto mono = data::load_samples((dir3 / "manifest.json").string());
  CHECK(!mono[0].xrays.biplanar());

  // missing file surfaces as an I/O error
  fs::remove(dir3 / m3.entries[1].pa_path);
  CHECK_THROWS_AS(data::load_samples((dir3 / "manifest.json").string()), IoError);
}
