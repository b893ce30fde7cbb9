// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-domain segmentation data. Geometry (which pixels belong to
// which class) and appearance (how a "scanner" renders them) are drawn from
// separate generators, so one geometry can be rendered by several domains.
//
// Classes: 0 background, 1 outer ring, 2 inner pool enclosed by the ring,
// 3 detached blob.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nca/dataset.hpp"
#include "nca/rng.hpp"
#include "nca/sample.hpp"

namespace nca {

inline constexpr std::size_t kSyntheticClasses = 4;

struct DomainSpec {
  std::string name;
  double gamma = 1.0;
  double contrast = 1.0;
  double brightness = 0.0;
  double noise_sigma = 0.0;
  int blur_radius = 0;
  double texture_freq = 0.0;  // background sinusoid, cycles per image width

  void validate() const;
};

DomainSpec identity_domain(std::string name = "identity");

/// Three scanners with increasing shift from the first: mild, moderate,
/// severe.
std::vector<DomainSpec> default_domains();

/// Label map with 1-3 non-overlapping structures: always one ring enclosing a
/// pool, plus up to two detached blobs. Retries degenerate layouts up to 100
/// times, then throws ConfigError.
Tensor gen_geometry(Rng& geometry_rng, std::size_t rows, std::size_t cols);

/// Noise-free intensities for a label map, [1, I, J].
Tensor clean_render(const Tensor& mask);

/// gamma -> contrast/brightness -> box blur -> Gaussian noise -> clip to [0, 1].
/// The background texture is added to the clean render before the chain.
Tensor apply_appearance(const Tensor& clean, const Tensor& mask, const DomainSpec& spec,
                        Rng& appearance_rng);

Sample gen_sample(const DomainSpec& spec, Rng& geometry_rng, Rng& appearance_rng,
                  std::size_t rows, std::size_t cols, std::string sample_id = {});

struct GenDatasetOptions {
  std::vector<DomainSpec> domains = default_domains();
  std::size_t n_per_domain = 200;
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::uint64_t seed = 0;
};

/// Writes images/, masks/ and manifest.json under `out_dir`.
Manifest gen_dataset(const GenDatasetOptions& options, const std::filesystem::path& out_dir);

}  // namespace nca
