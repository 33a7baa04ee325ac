#include "dx2ct/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dx2ct/common.hpp"
#include "dx2ct/container.hpp"
#include "dx2ct/rng.hpp"

namespace dx2ct::data {

namespace fs = std::filesystem;

Volume generate_phantom(std::uint64_t seed, std::size_t resolution,
                        std::size_t num_shapes) {
  require_valid(resolution >= 8, "phantom: resolution must be >= 8, got " +
                                     std::to_string(resolution));
  require_valid(num_shapes >= 1, "phantom: need at least one shape");
  const std::size_t R = resolution;

  struct Ellipsoid {
    float cx, cy, cz, ax, ay, az, value;
  };
  Rng rng(mix_seed(seed, "phantom"));
  std::vector<Ellipsoid> shapes(num_shapes);
  for (auto& e : shapes) {
    e.cx = float(rng.uniform(-0.6, 0.6));
    e.cy = float(rng.uniform(-0.6, 0.6));
    e.cz = float(rng.uniform(-0.6, 0.6));
    e.ax = float(rng.uniform(0.1, 0.5));
    e.ay = float(rng.uniform(0.1, 0.5));
    e.az = float(rng.uniform(0.1, 0.5));
    e.value = float(rng.uniform(0.2, 0.8));
  }

  Volume v({R, R, R});
  for (std::size_t d = 0; d < R; ++d) {
    float z = -1.0f + 2.0f * float(d) / float(R - 1);
    for (std::size_t h = 0; h < R; ++h) {
      float y = -1.0f + 2.0f * float(h) / float(R - 1);
      for (std::size_t w = 0; w < R; ++w) {
        float x = -1.0f + 2.0f * float(w) / float(R - 1);
        float acc = 0.0f;
        for (const auto& e : shapes) {
          float dx = (x - e.cx) / e.ax;
          float dy = (y - e.cy) / e.ay;
          float dz = (z - e.cz) / e.az;
          if (dx * dx + dy * dy + dz * dz <= 1.0f) acc += e.value;
        }
        v(d, h, w) = std::min(1.0f, acc);
      }
    }
  }
  return v;
}

Image project(const Volume& v, geom::View view, float pathlen_scale) {
  require_valid(v.rank() == 3, "project: volume must be rank 3");
  const std::size_t D = v.dim(0), H = v.dim(1), W = v.dim(2);
  if (view == geom::View::PA) {
    // integrate along y; rows sweep z, cols sweep x
    Image img({D, W});
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t w = 0; w < W; ++w) {
        float s = 0.0f;
        for (std::size_t h = 0; h < H; ++h) s += v(d, h, w);
        img(d, w) = 1.0f - std::exp(-pathlen_scale * s / float(H));
      }
    return img;
  }
  // Lat: integrate along x; rows sweep z, cols sweep y
  Image img({D, H});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h) {
      float s = 0.0f;
      for (std::size_t w = 0; w < W; ++w) s += v(d, h, w);
      img(d, h) = 1.0f - std::exp(-pathlen_scale * s / float(W));
    }
  return img;
}

Image slice_volume(const Volume& v, geom::Plane plane, std::size_t n) {
  require_valid(v.rank() == 3, "slice: volume must be rank 3");
  const std::size_t D = v.dim(0), H = v.dim(1), W = v.dim(2);
  std::size_t N = v.dim(geom::plane_axis(plane));
  require_valid(n >= 1 && n <= N, "slice index " + std::to_string(n) +
                                      " outside 1.." + std::to_string(N));
  switch (plane) {
    case geom::Plane::axial: {  // rows y, cols x
      Image s({H, W});
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) s(h, w) = v(n - 1, h, w);
      return s;
    }
    case geom::Plane::coronal: {  // rows z, cols x
      Image s({D, W});
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t w = 0; w < W; ++w) s(d, w) = v(d, n - 1, w);
      return s;
    }
    case geom::Plane::sagittal: {  // rows z, cols y
      Image s({D, H});
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h) s(d, h) = v(d, h, n - 1);
      return s;
    }
  }
  throw ValidationError("slice: bad plane");
}

Volume stack_slices(const std::vector<Image>& slices, geom::Plane plane) {
  require_valid(!slices.empty(), "stack: no slices");
  const std::size_t N = slices.size();
  const std::size_t rows = slices[0].dim(0), cols = slices[0].dim(1);
  for (const auto& s : slices)
    require_valid(s.rank() == 2 && s.dim(0) == rows && s.dim(1) == cols,
                  "stack: slices must share one shape");
  Shape vs;
  switch (plane) {
    case geom::Plane::axial: vs = {N, rows, cols}; break;     // rows y, cols x
    case geom::Plane::coronal: vs = {rows, N, cols}; break;   // rows z, cols x
    case geom::Plane::sagittal: vs = {rows, cols, N}; break;  // rows z, cols y
  }
  Volume v(vs);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        switch (plane) {
          case geom::Plane::axial: v(n, i, j) = slices[n](i, j); break;
          case geom::Plane::coronal: v(i, n, j) = slices[n](i, j); break;
          case geom::Plane::sagittal: v(i, j, n) = slices[n](i, j); break;
        }
      }
  return v;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::json j;
  j["resolution"] = m.resolution;
  j["split"] = m.split;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["volume"] = e.volume_path;
    je["pa"] = e.pa_path;
    if (!e.lat_path.empty()) je["lat"] = e.lat_path;
    je["seed"] = e.seed;
    j["entries"].push_back(je);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(path + ": write failed");
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": manifest is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.resolution = j.at("resolution").get<std::size_t>();
    m.split = j.at("split").get<std::string>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.volume_path = je.at("volume").get<std::string>();
      e.pa_path = je.at("pa").get<std::string>();
      e.lat_path = je.value("lat", "");
      e.seed = je.at("seed").get<std::uint64_t>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": manifest missing required field: " + e.what());
  }
  require_valid(!m.entries.empty(), path + ": manifest has no entries");
  bool bi = !m.entries.front().lat_path.empty();
  for (const auto& e : m.entries)
    require_valid(e.lat_path.empty() != bi,
                  path + ": entries mix biplanar and monoplanar");
  return m;
}

DatasetManifest build_dataset(std::uint64_t seed, std::size_t count,
                              std::size_t resolution, bool biplanar,
                              const std::string& out_dir) {
  require_valid(count >= 1, "dataset: count must be >= 1");
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.resolution = resolution;
  Rng rng(mix_seed(seed, "dataset"));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t sample_seed = rng.next_u64();
    std::size_t num_shapes = 3 + std::size_t(rng.uniform_int(0, 5));
    Volume v = generate_phantom(sample_seed, resolution, num_shapes);
    char base[32];
    std::snprintf(base, sizeof(base), "sample_%04zu", i);
    ManifestEntry e;
    e.seed = sample_seed;
    e.volume_path = std::string(base) + ".vol";
    e.pa_path = std::string(base) + ".pa.img";
    io::write_array((fs::path(out_dir) / e.volume_path).string(), v);
    io::write_array((fs::path(out_dir) / e.pa_path).string(),
                    project(v, geom::View::PA));
    if (biplanar) {
      e.lat_path = std::string(base) + ".lat.img";
      io::write_array((fs::path(out_dir) / e.lat_path).string(),
                      project(v, geom::View::Lat));
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

std::vector<Sample> load_samples(const std::string& manifest_path) {
  DatasetManifest m = read_manifest(manifest_path);
  fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<Sample> samples;
  samples.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Sample s;
    s.volume = io::read_volume((dir / e.volume_path).string());
    for (float x : s.volume.vec())
      require_valid(x >= 0.0f && x <= 1.0f,
                    e.volume_path + ": volume values must lie in [0,1]");
    s.xrays.pa = io::read_image((dir / e.pa_path).string());
    if (!e.lat_path.empty()) {
      s.xrays.lat = io::read_image((dir / e.lat_path).string());
      require_valid(s.xrays.lat->same_shape(s.xrays.pa),
                    e.lat_path + ": pa and lat sizes differ");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace dx2ct::data
