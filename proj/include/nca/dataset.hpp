// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout:
//
//   manifest.json   [{"sample_id", "domain", "image_path", "mask_path", "size": [I, J]}, ...]
//   images/*.ncat   [d_img, I, J] float images in [0, 1]
//   masks/*.ncat    [I, J] class ids stored as floats
//
// Paths in the manifest are relative to the directory. Real data (e.g. OCT or
// MRI slices converted offline, with their own cropping and intensity
// normalisation applied before export) plugs in by producing the same layout,
// or by implementing SampleSource directly.
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nca/sample.hpp"

namespace nca {

struct ManifestEntry {
  std::string sample_id;
  std::string domain;
  std::string image_path;
  std::string mask_path;
  std::size_t rows = 0;
  std::size_t cols = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

/// Domains in order of first appearance.
std::vector<std::string> manifest_domains(const Manifest& manifest);

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual const Manifest& manifest() const = 0;
  virtual Sample load(const ManifestEntry& entry) const = 0;
};

class DirectoryDataset final : public SampleSource {
 public:
  explicit DirectoryDataset(std::filesystem::path root);
  const Manifest& manifest() const override { return manifest_; }
  Sample load(const ManifestEntry& entry) const override;
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
  Manifest manifest_;
};

std::vector<Sample> load_samples(const SampleSource& source, const Manifest& entries);

}  // namespace nca
