// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints use the NCAT container with a section table:
//
//   "NCAT" | version u8 (=1) | dtype u8 (=0, section table) | count u16 LE |
//   count x ( name_len u16 LE | UTF-8 name | embedded NCAT tensor )
//
// Required sections: w1, b1, w2, fixed_kernels, meta where meta is
// [D, H, d_img, n_cls, round(fire_rate * 1e6)]. Additional sections (optimizer
// moments, training progress) are preserved in file order.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nca/nca.hpp"

namespace nca {

inline constexpr std::uint8_t kDtypeSectionTable = 0;

using Sections = std::vector<std::pair<std::string, Tensor>>;

void write_sections(std::ostream& out, const Sections& sections);
Sections read_sections(std::istream& in);

const Tensor* find_section(const Sections& sections, const std::string& name);

struct Checkpoint {
  RuleParams params;
  Sections extra;  // everything beyond the required sections
};

Sections to_sections(const Checkpoint& ckpt);
/// Validates required sections and the fixed kernels; throws CheckpointError.
Checkpoint from_sections(Sections sections);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nca
