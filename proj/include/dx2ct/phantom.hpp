#pragma once

// Synthetic paired (volume, projections) data: random ellipsoid phantoms, a
// parallel-beam projector, slice/stack helpers, and the on-disk dataset layout
// (per-sample containers + JSON manifest).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dx2ct/geometry.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::data {

using Volume = Tensor<float>;
using Image = Tensor<float>;

struct XRaySet {
  Image pa;
  std::optional<Image> lat;
  bool biplanar() const { return lat.has_value(); }
};

struct ManifestEntry {
  std::string volume_path;  // relative to the manifest's directory
  std::string pa_path;
  std::string lat_path;  // empty in monoplanar datasets
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::size_t resolution = 0;
  std::string split = "train";
  std::vector<ManifestEntry> entries;
  bool biplanar() const {
    return !entries.empty() && !entries.front().lat_path.empty();
  }
};

struct Sample {
  Volume volume;
  XRaySet xrays;
};

// Clamped sum of `num_shapes` random ellipsoids on an R^3 lattice; values in
// [0, 1], deterministic in seed.
Volume generate_phantom(std::uint64_t seed, std::size_t resolution,
                        std::size_t num_shapes);

// Parallel-beam projection: mean attenuation along the view normal, then
// I = 1 - exp(-mu * pathlen_scale). PA integrates over y -> (D, W) image;
// Lat integrates over x -> (D, H) image.
Image project(const Volume& v, geom::View view, float pathlen_scale = 4.0f);

// 1-based slice extraction / stacking along a plane normal, oriented per the
// geometry conventions.
Image slice_volume(const Volume& v, geom::Plane plane, std::size_t n);
Volume stack_slices(const std::vector<Image>& slices, geom::Plane plane);

// Writes `count` samples plus manifest.json into out_dir; returns the manifest.
DatasetManifest build_dataset(std::uint64_t seed, std::size_t count,
                              std::size_t resolution, bool biplanar,
                              const std::string& out_dir);

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

// Loads every entry (paths resolved relative to the manifest file).
std::vector<Sample> load_samples(const std::string& manifest_path);

}  // namespace dx2ct::data
