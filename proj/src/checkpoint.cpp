// SPDX-License-Identifier: Apache-2.0
#include "nca/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "nca/error.hpp"
#include "nca/tensor_io.hpp"

namespace nca {

namespace {

const std::set<std::string> kRequired = {"w1", "b1", "w2", "fixed_kernels", "meta"};

std::size_t meta_count(float v, const char* what) {
  if (!(v >= 1.0f) || v != std::floor(v) || v > 1e6f)
    throw CheckpointError(std::string("checkpoint meta: bad ") + what);
  return static_cast<std::size_t>(v);
}

}  // namespace

void write_sections(std::ostream& out, const Sections& sections) {
  if (sections.size() > UINT16_MAX) throw FormatError("too many checkpoint sections");
  out.write(io::kMagic, 4);
  io::write_u8(out, io::kVersion);
  io::write_u8(out, kDtypeSectionTable);
  io::write_u16(out, static_cast<std::uint16_t>(sections.size()));
  for (const auto& [name, tensor] : sections) {
    if (name.empty() || name.size() > UINT16_MAX) throw FormatError("bad section name");
    io::write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_tensor(out, tensor);
  }
  if (!out) throw IoError("checkpoint write failed");
}

Sections read_sections(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, io::kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  if (io::read_u8(in) != io::kVersion) throw FormatError("checkpoint: unsupported version");
  if (io::read_u8(in) != kDtypeSectionTable)
    throw FormatError("checkpoint: not a section table");
  const std::uint16_t count = io::read_u16(in);
  Sections sections;
  std::set<std::string> seen;
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::uint16_t len = io::read_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in || len == 0) throw FormatError("checkpoint: bad section name");
    if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate section " + name);
    sections.emplace_back(std::move(name), io::read_tensor(in));
  }
  return sections;
}

const Tensor* find_section(const Sections& sections, const std::string& name) {
  for (const auto& [n, t] : sections)
    if (n == name) return &t;
  return nullptr;
}

Sections to_sections(const Checkpoint& ckpt) {
  const NcaConfig& c = ckpt.params.config;
  Tensor meta({5}, {static_cast<float>(c.state_dim), static_cast<float>(c.hidden),
                    static_cast<float>(c.d_img), static_cast<float>(c.n_cls),
                    std::round(c.fire_rate * 1e6f)});
  Sections s{{"meta", meta},
             {"w1", ckpt.params.w1},
             {"b1", ckpt.params.b1},
             {"w2", ckpt.params.w2},
             {"fixed_kernels", ckpt.params.fixed_kernels}};
  for (const auto& sec : ckpt.extra) {
    if (kRequired.count(sec.first)) throw FormatError("extra section shadows " + sec.first);
    s.push_back(sec);
  }
  return s;
}

Checkpoint from_sections(Sections sections) {
  for (const auto& name : kRequired)
    if (!find_section(sections, name))
      throw CheckpointError("checkpoint missing section '" + name + "'");

  const Tensor& meta = *find_section(sections, "meta");
  if (meta.shape() != Shape{5}) throw CheckpointError("checkpoint meta must have 5 entries");
  NcaConfig config;
  config.state_dim = meta_count(meta[0], "D");
  config.hidden = meta_count(meta[1], "H");
  config.d_img = meta_count(meta[2], "d_img");
  config.n_cls = meta_count(meta[3], "n_cls");
  config.fire_rate = meta[4] / 1e6f;
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint meta: ") + e.what());
  }

  const Tensor& kernels = *find_section(sections, "fixed_kernels");
  if (!bit_equal(kernels, perception_kernels()))
    throw CheckpointError("checkpoint fixed_kernels differ from the perception filter bank");

  Checkpoint ckpt{RuleParams{config, *find_section(sections, "w1"),
                             *find_section(sections, "b1"), *find_section(sections, "w2"),
                             kernels},
                  {}};
  try {
    ckpt.params.validate();
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  for (auto& sec : sections)
    if (!kRequired.count(sec.first)) ckpt.extra.push_back(std::move(sec));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_sections(out, to_sections(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sections sections;
  try {
    sections = read_sections(in);
  } catch (const FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return from_sections(std::move(sections));
}

}  // namespace nca
