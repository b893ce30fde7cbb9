// SPDX-License-Identifier: Apache-2.0
#include "nca/dataset.hpp"

#include <algorithm>
#include <fstream>
#include "json.hpp"

#include "nca/error.hpp"
#include "nca/tensor_io.hpp"

namespace nca {

using nlohmann::json;

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json arr = json::array();
  for (const auto& e : manifest) {
    arr.push_back(json{{"sample_id", e.sample_id},
                       {"domain", e.domain},
                       {"image_path", e.image_path},
                       {"mask_path", e.mask_path},
                       {"size", {e.rows, e.cols}}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Manifest manifest;
  try {
    const json arr = json::parse(in);
    if (!arr.is_array()) throw FormatError("manifest must be a JSON array");
    for (const auto& item : arr) {
      ManifestEntry e;
      e.sample_id = item.at("sample_id").get<std::string>();
      e.domain = item.at("domain").get<std::string>();
      e.image_path = item.at("image_path").get<std::string>();
      e.mask_path = item.at("mask_path").get<std::string>();
      const auto& size = item.at("size");
      e.rows = size.at(0).get<std::size_t>();
      e.cols = size.at(1).get<std::size_t>();
      manifest.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest;
}

std::vector<std::string> manifest_domains(const Manifest& manifest) {
  std::vector<std::string> domains;
  for (const auto& e : manifest)
    if (std::find(domains.begin(), domains.end(), e.domain) == domains.end())
      domains.push_back(e.domain);
  return domains;
}

DirectoryDataset::DirectoryDataset(std::filesystem::path root)
    : root_(std::move(root)), manifest_(load_manifest(root_ / "manifest.json")) {}

Sample DirectoryDataset::load(const ManifestEntry& entry) const {
  Sample s{io::load_tensor(root_ / entry.image_path), io::load_tensor(root_ / entry.mask_path),
           entry.domain, entry.sample_id};
  if (s.image.rank() == 2) s.image = Tensor({1, s.image.dim(0), s.image.dim(1)}, s.image.values());
  if (s.image.rank() != 3 || s.mask.rank() != 2 || s.image.dim(1) != entry.rows ||
      s.image.dim(2) != entry.cols || s.mask.dim(0) != entry.rows || s.mask.dim(1) != entry.cols)
    throw FormatError("sample " + entry.sample_id + " does not match its manifest size");
  return s;
}

std::vector<Sample> load_samples(const SampleSource& source, const Manifest& entries) {
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(source.load(e));
  return out;
}

}  // namespace nca
